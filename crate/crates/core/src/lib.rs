pub mod cli;
pub mod coloring;
pub mod colorset;
pub mod dsa;
pub mod gradients;
pub mod graph;
pub mod matching;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod sample;
