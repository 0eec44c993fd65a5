//! Scenario files and the four command-line operations.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! [graph]
//! edges = [[1, 2], [2, 1]]
//!
//! [[node]]
//! id = 1
//! x = 0.0
//! y = 0.0
//! budget = 1.0
//!
//! [channel]
//! noise = 0.01
//! path_loss_exponent = 4.0
//!
//! [[session]]
//! origin = 1
//! destination = 2
//! demand = 1.0
//! utility = { kind = "log", weight = 2.0 }
//! ```
//!
//! Optional sections are `[cost]`, `[optimizer]`, `[dsa]` and
//! `[allocation]`; every seed has a default of 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coloring::{q_min, ColorSetFamily, LinkColoring};
use crate::colorset::{ColorSet, MAX_BANDS};
use crate::dsa::{
    check_spectrum_feasibility, run_dsa_with, DsaConfig, DsaError, ProcessingOrder, SpectrumAllocation, TieBreak,
};
use crate::graph::{interference_stats, ConnectivityGraph, GraphError, NodeId};
use crate::model::{
    check_m_psd, cost_of, Channel, ControlState, CostParams, ModelError, NetworkScenario, PsdGrid, Session, Utility,
};
use crate::optimizer::{solve, OptimizerError, ScalingPolicy, SolveOutcome, SolverConfig, SweepOrder, TraceRecord};
use crate::oracle::{finite_diff_check, reference_solve_small, Block, CheckOptions, OracleError};
use crate::sample::random_interior_state;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Dsa(#[from] DsaError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Read { .. } => "read",
            CliError::Write { .. } => "write",
            CliError::Parse { .. } => "parse",
            CliError::Validation(_) => "validation",
            CliError::Dsa(_) => "dsa",
            CliError::Oracle(OracleError::TooLarge(_)) => "too-large",
            CliError::Oracle(_) => "oracle",
            CliError::Optimizer(_) => "optimizer",
        }
    }

    /// 1 for failures of a run on valid input, 2 for input errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Optimizer(_) | CliError::Write { .. } => 1,
            CliError::Oracle(OracleError::BoundaryTooClose(_)) => 1,
            _ => 2,
        }
    }

    /// Individual violations, one per entry.
    pub fn messages(&self) -> Vec<String> {
        match self {
            CliError::Validation(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }

    /// The error as a TOML record for stderr.
    pub fn record(&self) -> String {
        let rec = ErrorRecord {
            error: ErrorBody { kind: self.kind().to_string(), exit_code: self.exit_code(), messages: self.messages() },
        };
        toml::to_string(&rec).expect("error record serializes")
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Validation(vec![e.to_string()])
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Invalid(v) => CliError::Validation(v),
            other => CliError::Validation(vec![other.to_string()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorRecord {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub kind: String,
    pub exit_code: i32,
    pub messages: Vec<String>,
}

// ---------------------------------------------------------------------------
// scenario file schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub graph: GraphSection,
    #[serde(default, rename = "node", skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeEntry>,
    pub channel: ChannelSection,
    #[serde(default, rename = "session", skip_serializing_if = "Vec::is_empty")]
    pub sessions: Vec<SessionEntry>,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub dsa: DsaSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    /// Directed links; both directions must be listed.
    pub edges: Vec<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    /// Power budget, 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub noise: f64,
    /// Path-loss rule `gain = d^-α` over node coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_loss_exponent: Option<f64>,
    /// Gain of every pair not listed explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gain: Vec<GainEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub node_noise: Vec<NoiseEntry>,
}

/// Explicit gain from transmitter `from` to receiver `to`; all bands when
/// `band` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<usize>,
    pub from: i64,
    pub to: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<usize>,
    pub node: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub origin: i64,
    pub destination: i64,
    pub demand: f64,
    pub utility: Utility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderKind {
    #[default]
    RoundRobin,
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub tolerance: f64,
    pub max_iters: usize,
    pub order: OrderKind,
    pub seed: u64,
    /// Overflow fraction of the uniform starting state.
    pub initial_overflow: f64,
    pub policy: ScalingPolicy,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        OptimizerSection {
            tolerance: d.tolerance,
            max_iters: d.max_iters,
            order: OrderKind::RoundRobin,
            seed: 0,
            initial_overflow: 0.5,
            policy: d.policy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsaSection {
    /// Band count; `q_min(Δ+1)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_node: Option<i64>,
    pub seed: u64,
    pub order: ProcessingOrder,
    pub tie_break: TieBreak,
}

/// A spectrum allocation keyed by node and link labels. Link bands default
/// to `OC_i \ OC_j` when no `[[allocation.link]]` entries are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationFile {
    pub bands: usize,
    #[serde(default, rename = "node", skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeBands>,
    #[serde(default, rename = "link", skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkBands>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeBands {
    pub id: i64,
    pub bands: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBands {
    pub from: i64,
    pub to: i64,
    pub bands: Vec<usize>,
}

impl AllocationFile {
    pub fn from_allocation(g: &ConnectivityGraph, alloc: &SpectrumAllocation) -> Self {
        AllocationFile {
            bands: alloc.band_count(),
            nodes: (0..g.node_count())
                .map(|v| NodeBands { id: g.label(v), bands: alloc.node_bands(v).iter().collect() })
                .collect(),
            links: g
                .links()
                .iter()
                .enumerate()
                .map(|(l, &(i, j))| LinkBands {
                    from: g.label(i),
                    to: g.label(j),
                    bands: alloc.link_bands(l).iter().collect(),
                })
                .collect(),
        }
    }

    fn to_allocation(&self, g: &ConnectivityGraph, errors: &mut Vec<String>) -> Option<SpectrumAllocation> {
        let q = self.bands;
        if q == 0 || q > MAX_BANDS {
            errors.push(format!("allocation.bands = {q} is outside 1..={MAX_BANDS}"));
            return None;
        }
        let start = errors.len();
        let mut band_set = |what: String, bands: &[usize]| {
            let mut set = ColorSet::EMPTY;
            for &b in bands {
                if b >= q {
                    errors.push(format!("{what}: band {b} is not below {q}"));
                } else {
                    set = set.with(b);
                }
            }
            set
        };
        let mut node_sets = vec![None; g.node_count()];
        let mut pending = Vec::new();
        for e in &self.nodes {
            let set = band_set(format!("allocation node {}", e.id), &e.bands);
            pending.push((format!("allocation node {}", e.id), g.node_of_label(e.id), set));
        }
        let mut link_sets = vec![None; g.link_count()];
        let mut pending_links = Vec::new();
        for e in &self.links {
            let what = format!("allocation link {} -> {}", e.from, e.to);
            let set = band_set(what.clone(), &e.bands);
            let id = match (g.node_of_label(e.from), g.node_of_label(e.to)) {
                (Some(i), Some(j)) => g.link_id(i, j),
                _ => None,
            };
            pending_links.push((what, id, set));
        }
        for (what, v, set) in pending {
            match v {
                None => errors.push(format!("{what}: unknown node")),
                Some(v) if node_sets[v].is_some() => errors.push(format!("{what}: listed twice")),
                Some(v) => node_sets[v] = Some(set),
            }
        }
        for (what, l, set) in pending_links {
            match l {
                None => errors.push(format!("{what}: not a link of the graph")),
                Some(l) if link_sets[l].is_some() => errors.push(format!("{what}: listed twice")),
                Some(l) => link_sets[l] = Some(set),
            }
        }
        for (v, s) in node_sets.iter().enumerate() {
            if s.is_none() {
                errors.push(format!("allocation node {}: missing", g.label(v)));
            }
        }
        if !self.links.is_empty() {
            for (l, s) in link_sets.iter().enumerate() {
                if s.is_none() {
                    let (i, j) = g.link(l);
                    errors.push(format!("allocation link {} -> {}: missing", g.label(i), g.label(j)));
                }
            }
        }
        if errors.len() > start {
            return None;
        }
        let family = match ColorSetFamily::new(q, node_sets.into_iter().map(Option::unwrap).collect()) {
            Ok(f) => f,
            Err(e) => {
                errors.push(format!("allocation: {e}"));
                return None;
            }
        };
        if self.links.is_empty() {
            return match SpectrumAllocation::from_family(g, family) {
                Ok(a) => Some(a),
                Err(e) => {
                    errors.push(format!("allocation: {e}"));
                    None
                }
            };
        }
        match LinkColoring::new(q, link_sets.into_iter().map(Option::unwrap).collect()) {
            Ok(c) => Some(SpectrumAllocation::from_parts(family, c)),
            Err(e) => {
                errors.push(format!("allocation: {e}"));
                None
            }
        }
    }
}

/// A parsed and validated scenario file. The spectrum allocation is either
/// given inline or produced on demand by the distributed protocol.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub graph: ConnectivityGraph,
    pub channel: Channel,
    pub budgets: Vec<f64>,
    pub sessions: Vec<Session>,
    pub allocation: Option<SpectrumAllocation>,
    pub bands: usize,
}

pub fn parse_scenario(path: &Path) -> Result<LoadedScenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Read { path: path.display().to_string(), message: e.to_string() })?;
    parse_scenario_str(&text).map_err(|e| match e {
        CliError::Parse { message, .. } => CliError::Parse { path: path.display().to_string(), message },
        other => other,
    })
}

pub fn parse_scenario_str(text: &str) -> Result<LoadedScenario, CliError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| CliError::Parse { path: "<input>".into(), message: e.to_string() })?;
    file.load()
}

impl ScenarioFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Validates the file, collecting every violation.
    pub fn load(&self) -> Result<LoadedScenario, CliError> {
        let graph = ConnectivityGraph::build(&self.graph.edges)?;
        let n = graph.node_count();
        let mut errors = Vec::new();
        let node = |label: i64, what: &str, errors: &mut Vec<String>| {
            let v = graph.node_of_label(label);
            if v.is_none() {
                errors.push(format!("{what}: node {label} is not in the graph"));
            }
            v
        };

        let mut entries: Vec<Option<&NodeEntry>> = vec![None; n];
        for e in &self.nodes {
            if let Some(v) = node(e.id, "node", &mut errors) {
                if entries[v].is_some() {
                    errors.push(format!("node {}: listed twice", e.id));
                }
                entries[v] = Some(e);
            }
        }
        let budgets: Vec<f64> = entries.iter().map(|e| e.and_then(|e| e.budget).unwrap_or(1.0)).collect();

        let allocation = self.allocation.as_ref().and_then(|a| a.to_allocation(&graph, &mut errors));
        let bands = match (&self.allocation, self.dsa.bands) {
            (Some(a), _) => a.bands,
            (None, Some(q)) => q,
            (None, None) => q_min(graph.max_degree() + 1),
        };
        if let (Some(a), Some(q)) = (&self.allocation, self.dsa.bands) {
            if a.bands != q {
                errors.push(format!("dsa.bands = {q} disagrees with allocation.bands = {}", a.bands));
            }
        }
        if bands == 0 || bands > MAX_BANDS {
            errors.push(format!("band count {bands} is outside 1..={MAX_BANDS}"));
            return Err(CliError::Validation(errors));
        }
        let required = q_min(graph.max_degree() + 1);
        if self.allocation.is_none() && bands < required {
            errors.push(format!("dsa.bands = {bands} is below q_min(Δ(G)+1) = {required}"));
        }
        if let Some(first) = self.dsa.first_node {
            node(first, "dsa.first_node", &mut errors);
        }

        let ch = &self.channel;
        let mut explicit = vec![false; bands * n * n];
        let mut channel = match (ch.path_loss_exponent, ch.default_gain) {
            (Some(_), Some(_)) => {
                errors.push("channel: path_loss_exponent and default_gain are exclusive".into());
                Channel::new(bands, n, f64::NAN, ch.noise)
            }
            (Some(alpha), None) => {
                let mut pos = Vec::with_capacity(n);
                for (v, e) in entries.iter().enumerate() {
                    match e.and_then(|e| e.x.zip(e.y)) {
                        Some(p) => pos.push(p),
                        None => {
                            errors.push(format!("node {}: path-loss rule needs x and y", graph.label(v)));
                            pos.push((f64::NAN, f64::NAN));
                        }
                    }
                }
                Channel::from_positions(bands, &pos, alpha, ch.noise)
            }
            (None, Some(g)) => Channel::new(bands, n, g, ch.noise),
            (None, None) => Channel::new(bands, n, f64::NAN, ch.noise),
        };
        let band_range = |band: Option<usize>, what: &str, errors: &mut Vec<String>| match band {
            Some(b) if b >= bands => {
                errors.push(format!("{what}: band {b} is not below {bands}"));
                0..0
            }
            Some(b) => b..b + 1,
            None => 0..bands,
        };
        for e in &ch.gain {
            let what = format!("channel.gain {} -> {}", e.from, e.to);
            let (m, j) = (node(e.from, &what, &mut errors), node(e.to, &what, &mut errors));
            let range = band_range(e.band, &what, &mut errors);
            if let (Some(m), Some(j)) = (m, j) {
                if m == j {
                    errors.push(format!("{what}: transmitter and receiver coincide"));
                    continue;
                }
                for b in range {
                    channel.set_gain(b, m, j, e.value);
                    explicit[(b * n + m) * n + j] = true;
                }
            }
        }
        for e in &ch.node_noise {
            let what = format!("channel.node_noise {}", e.node);
            let v = node(e.node, &what, &mut errors);
            let range = band_range(e.band, &what, &mut errors);
            if let Some(v) = v {
                for b in range {
                    channel.set_noise(b, v, e.value);
                }
            }
        }
        if ch.path_loss_exponent.is_none() && ch.default_gain.is_none() {
            for b in 0..bands {
                for m in 0..n {
                    for j in 0..n {
                        if m != j && !explicit[(b * n + m) * n + j] {
                            errors.push(format!(
                                "channel: no gain for band {b} from {} to {} and no default rule",
                                graph.label(m),
                                graph.label(j)
                            ));
                        }
                    }
                }
            }
        }

        let mut sessions = Vec::with_capacity(self.sessions.len());
        for (w, s) in self.sessions.iter().enumerate() {
            let what = format!("session {w}");
            let o = node(s.origin, &what, &mut errors);
            let d = node(s.destination, &what, &mut errors);
            if let (Some(origin), Some(destination)) = (o, d) {
                sessions.push(Session { origin, destination, demand: s.demand, utility: s.utility });
            }
        }
        if self.optimizer.tolerance.is_nan() || self.optimizer.tolerance <= 0.0 {
            errors.push(format!("optimizer.tolerance = {} must be positive", self.optimizer.tolerance));
        }
        if !(0.0..=1.0).contains(&self.optimizer.initial_overflow) {
            errors.push(format!("optimizer.initial_overflow = {} is outside [0, 1]", self.optimizer.initial_overflow));
        }
        if !errors.is_empty() {
            return Err(CliError::Validation(errors));
        }

        let loaded = LoadedScenario { file: self.clone(), graph, channel, budgets, sessions, allocation, bands };
        // run the model's own checks now, against any valid allocation
        let probe = match &loaded.allocation {
            Some(a) => a.clone(),
            None => probe_allocation(&loaded.graph, bands),
        };
        loaded.scenario(probe)?;
        Ok(loaded)
    }
}

/// An allocation used only to validate non-spectrum fields when the real
/// one is produced later.
fn probe_allocation(g: &ConnectivityGraph, q: usize) -> SpectrumAllocation {
    let config = DsaConfig { first_node: None, order: ProcessingOrder::LowestIndex, tie_break: TieBreak::LowestBand };
    match run_dsa_with(g, q, 0, &config) {
        Ok((a, _)) => a,
        Err(_) => {
            let family = ColorSetFamily::new(q, vec![ColorSet::EMPTY; g.node_count()]).expect("bands in range");
            let coloring = LinkColoring::new(q, vec![ColorSet::full(q); g.link_count()]).expect("bands in range");
            SpectrumAllocation::from_parts(family, coloring)
        }
    }
}

impl LoadedScenario {
    pub fn dsa_config(&self) -> DsaConfig {
        DsaConfig {
            first_node: self.file.dsa.first_node.and_then(|l| self.graph.node_of_label(l)),
            order: self.file.dsa.order,
            tie_break: self.file.dsa.tie_break,
        }
    }

    /// The inline allocation, or the distributed protocol's result for `seed`
    /// with its processing order.
    pub fn allocate(&self, seed: u64) -> Result<(SpectrumAllocation, Option<Vec<NodeId>>), CliError> {
        match &self.allocation {
            Some(a) => Ok((a.clone(), None)),
            None => {
                let (a, order) = run_dsa_with(&self.graph, self.bands, seed, &self.dsa_config())?;
                Ok((a, Some(order)))
            }
        }
    }

    pub fn scenario(&self, alloc: SpectrumAllocation) -> Result<NetworkScenario, CliError> {
        Ok(NetworkScenario::new(
            self.graph.clone(),
            alloc,
            self.channel.clone(),
            self.budgets.clone(),
            self.sessions.clone(),
            self.file.cost,
        )?)
    }

    /// Allocation and model for `seed`.
    pub fn build(&self, seed: u64) -> Result<NetworkScenario, CliError> {
        let (alloc, _) = self.allocate(seed)?;
        self.scenario(alloc)
    }
}

// ---------------------------------------------------------------------------
// commands

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Spectrum { scenario: PathBuf, out: PathBuf, seed: Option<u64> },
    Optimize { scenario: PathBuf, out: PathBuf, tol: Option<f64>, max_iters: Option<usize>, seed: Option<u64> },
    Check { scenario: PathBuf },
    Oracle { scenario: PathBuf, restarts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    CheckFailed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::CheckFailed => 1,
        }
    }

    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Success
        } else {
            Status::CheckFailed
        }
    }
}

/// Runs a command, writing its report record to `out` and any artifacts
/// to the output directory.
pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<Status, CliError> {
    match cmd {
        Command::Spectrum { scenario, out: dir, seed } => {
            let loaded = parse_scenario(scenario)?;
            let (record, alloc) = spectrum(&loaded, seed.unwrap_or(loaded.file.dsa.seed))?;
            let alloc_file = AllocationFile::from_allocation(&loaded.graph, &alloc);
            write_artifact(dir, "allocation.toml", &toml_string(&alloc_file))?;
            let report = toml_string(&record);
            write_artifact(dir, "spectrum.toml", &report)?;
            emit(out, &report)?;
            Ok(Status::from_pass(record.feasible))
        }
        Command::Optimize { scenario, out: dir, tol, max_iters, seed } => {
            let loaded = parse_scenario(scenario)?;
            let seed = seed.unwrap_or(loaded.file.optimizer.seed);
            let scn = loaded.build(seed)?;
            let mut config = solver_config(&loaded.file.optimizer, seed);
            if let Some(t) = tol {
                config.tolerance = *t;
            }
            if let Some(m) = max_iters {
                config.max_iters = *m;
            }
            let (outcome, record) = optimize(&scn, loaded.file.optimizer.initial_overflow, &config)?;
            write_artifact(
                dir,
                "allocation.toml",
                &toml_string(&AllocationFile::from_allocation(scn.graph(), scn.allocation())),
            )?;
            write_artifact(dir, "trace.csv", &trace_csv(&outcome.trace))?;
            write_artifact(dir, "state.toml", &toml_string(&StateDump::new(&scn, &outcome.state)))?;
            let report = toml_string(&record);
            write_artifact(dir, "report.toml", &report)?;
            emit(out, &report)?;
            Ok(Status::from_pass(record.converged))
        }
        Command::Check { scenario } => {
            let loaded = parse_scenario(scenario)?;
            let scn = loaded.build(loaded.file.dsa.seed)?;
            let record = check(&scn, loaded.file.optimizer.seed)?;
            emit(out, &toml_string(&record))?;
            Ok(Status::from_pass(record.passed))
        }
        Command::Oracle { scenario, restarts } => {
            let loaded = parse_scenario(scenario)?;
            let scn = loaded.build(loaded.file.dsa.seed)?;
            let sol = reference_solve_small(&scn, *restarts, ORACLE_BUDGET)?;
            let record = OracleRecord { best: sol.best, restarts: sol.restarts };
            emit(out, &toml_string(&record))?;
            Ok(Status::Success)
        }
    }
}

/// Iteration budget of each reference-solver restart.
pub const ORACLE_BUDGET: usize = 20_000;

fn toml_string<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("record serializes")
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Write { path: "<stdout>".into(), message: e.to_string() })
}

fn write_artifact(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let wrap = |e: std::io::Error, p: &Path| CliError::Write { path: p.display().to_string(), message: e.to_string() };
    fs::create_dir_all(dir).map_err(|e| wrap(e, dir))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| wrap(e, &path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumRecord {
    pub bands: usize,
    pub feasible: bool,
    /// `Δ(G̃) + 1`, the band count of a link-coloring baseline.
    pub interference_bound: usize,
    /// `q_min(Δ(G) + 1)`.
    pub q_min_bound: usize,
    pub comparison: String,
    pub uncovered: Vec<(i64, i64)>,
    pub duplexing: Vec<DuplexViolation>,
    /// Processing order of the protocol, empty for an inline allocation.
    pub order: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuplexViolation {
    pub node: i64,
    pub band: usize,
}

pub fn spectrum(loaded: &LoadedScenario, seed: u64) -> Result<(SpectrumRecord, SpectrumAllocation), CliError> {
    let g = &loaded.graph;
    let (alloc, order) = loaded.allocate(seed)?;
    let report = check_spectrum_feasibility(g, &alloc);
    let interference_bound = interference_stats(g).max_degree + 1;
    let q_min_bound = q_min(g.max_degree() + 1);
    let record = SpectrumRecord {
        bands: alloc.band_count(),
        feasible: report.is_feasible(),
        interference_bound,
        q_min_bound,
        comparison: format!("{interference_bound} vs {q_min_bound}"),
        uncovered: report.uncovered.iter().map(|&(i, j)| (g.label(i), g.label(j))).collect(),
        duplexing: report.duplexing.iter().map(|&(v, band)| DuplexViolation { node: g.label(v), band }).collect(),
        order: order.unwrap_or_default().into_iter().map(|v| g.label(v)).collect(),
    };
    Ok((record, alloc))
}

pub fn solver_config(section: &OptimizerSection, seed: u64) -> SolverConfig {
    SolverConfig {
        tolerance: section.tolerance,
        max_iters: section.max_iters,
        order: match section.order {
            OrderKind::RoundRobin => SweepOrder::RoundRobin,
            OrderKind::Seeded => SweepOrder::Seeded(seed),
        },
        policy: section.policy,
        check_invariants: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRecord {
    pub converged: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub cost: f64,
    pub tolerance: f64,
    pub initial_overflow: f64,
    pub residuals: ResidualRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualRecord {
    pub routing: f64,
    pub overflow: f64,
    pub power_rho: f64,
    pub power_eta: f64,
    pub intra: f64,
    pub worst: f64,
}

/// Solves from the uniform state. When that state has infinite cost the
/// start rejects all traffic instead.
pub fn optimize(
    scn: &NetworkScenario,
    initial_overflow: f64,
    config: &SolverConfig,
) -> Result<(SolveOutcome, OptimizeRecord), CliError> {
    let mut start_overflow = initial_overflow;
    let mut st = ControlState::uniform(scn, start_overflow);
    if !cost_of(scn, &st).is_finite() {
        start_overflow = 1.0;
        st = ControlState::uniform(scn, start_overflow);
    }
    let outcome = match solve(scn, &st, config) {
        Ok(o) => o,
        Err(OptimizerError::BudgetExhausted(o)) => *o,
        Err(e) => return Err(e.into()),
    };
    let r = &outcome.report;
    let record = OptimizeRecord {
        converged: outcome.converged,
        iterations: outcome.trace.len() - 1,
        initial_cost: outcome.trace[0].cost,
        cost: outcome.cost(),
        tolerance: config.tolerance,
        initial_overflow: start_overflow,
        residuals: ResidualRecord {
            routing: r.routing,
            overflow: r.overflow,
            power_rho: r.power_rho,
            power_eta: r.power_eta,
            intra: r.intra,
            worst: r.worst,
        },
    };
    Ok((outcome, record))
}

pub const TRACE_HEADER: &str = "iteration,cost,worst_residual,step_mu,step_eta,step_rho,step_phi,step_overflow";

/// One line per sweep; floats in shortest round-trip scientific notation.
pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.iteration, r.cost, r.worst_residual, r.step_mu, r.step_eta, r.step_rho, r.step_phi, r.step_overflow
        )
        .expect("string write");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(TraceParseError { line: 1, message: "unexpected header".into() });
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let err = |message: String| TraceParseError { line: k + 2, message };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(err(format!("{} fields", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| err(format!("field {i}: {e}")));
            Ok(TraceRecord {
                iteration: f[0].parse().map_err(|e| err(format!("field 0: {e}")))?,
                cost: num(1)?,
                worst_residual: num(2)?,
                step_mu: num(3)?,
                step_eta: num(4)?,
                step_rho: num(5)?,
                step_phi: num(6)?,
                step_overflow: num(7)?,
            })
        })
        .collect()
}

/// Control variables keyed by node, link, band and session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDump {
    pub cost: f64,
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodePower>,
    #[serde(default, rename = "link")]
    pub links: Vec<LinkState>,
    #[serde(default, rename = "session")]
    pub sessions: Vec<SessionState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePower {
    pub id: i64,
    pub band: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkState {
    pub from: i64,
    pub to: i64,
    pub band: usize,
    pub eta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub index: usize,
    pub origin: i64,
    pub destination: i64,
    pub overflow: f64,
    /// Links with a positive routing fraction.
    #[serde(default)]
    pub route: Vec<RouteShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteShare {
    pub from: i64,
    pub to: i64,
    pub phi: f64,
}

impl StateDump {
    pub fn new(scn: &NetworkScenario, st: &ControlState) -> Self {
        let g = scn.graph();
        let nodes = (0..g.node_count())
            .flat_map(|v| {
                scn.used_bands(v).iter().map(move |band| NodePower {
                    id: g.label(v),
                    band,
                    rho: st.rho[scn.node_entry(v, band)],
                })
            })
            .collect();
        let links = g
            .links()
            .iter()
            .enumerate()
            .flat_map(|(l, &(i, j))| {
                scn.link_bands(l).iter().map(move |band| LinkState {
                    from: g.label(i),
                    to: g.label(j),
                    band,
                    eta: st.eta[scn.entry(l, band)],
                    mu: st.mu[scn.entry(l, band)],
                })
            })
            .collect();
        let sessions = scn
            .sessions()
            .iter()
            .enumerate()
            .map(|(w, s)| SessionState {
                index: w,
                origin: g.label(s.origin),
                destination: g.label(s.destination),
                overflow: st.overflow[w],
                route: g
                    .links()
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| st.phi[w][l] > 0.0)
                    .map(|(l, &(i, j))| RouteShare { from: g.label(i), to: g.label(j), phi: st.phi[w][l] })
                    .collect(),
            })
            .collect();
        StateDump { cost: cost_of(scn, st), nodes, links, sessions }
    }
}

/// Grid resolution and eigenvalue tolerance of the convexity check.
pub const PSD_POINTS: usize = 50;
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Random interior states examined by the gradient check.
pub const CHECK_STATES: usize = 5;
/// Steps tried in order on each state; the smaller one is used where
/// truncation error of the larger dominates near the capacity barrier.
pub const CHECK_STEPS: [f64; 2] = [1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckRecord {
    pub passed: bool,
    pub psd: PsdRecord,
    pub gradient: GradientRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdRecord {
    pub passed: bool,
    pub min_eigenvalue: f64,
    pub at_x: f64,
    pub at_flow: f64,
    pub points: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientRecord {
    pub passed: bool,
    /// Interior states actually checked.
    pub states: usize,
    /// Finite-difference step used on each state.
    pub steps: Vec<f64>,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub failing: usize,
    #[serde(default)]
    pub block: Vec<BlockRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub name: String,
    pub max_relative_error: f64,
    pub coordinates: usize,
}

fn block_name(b: Block) -> &'static str {
    match b {
        Block::Eta => "eta",
        Block::Rho => "rho",
        Block::Phi => "phi",
        Block::Overflow => "overflow",
        Block::Mu => "mu",
    }
}

/// Convexity check of the link cost and finite-difference check of the
/// gradients on seeded random interior states.
pub fn check(scn: &NetworkScenario, seed: u64) -> Result<CheckRecord, CliError> {
    let psd = check_m_psd(scn.cost(), &PsdGrid::for_params(scn.cost(), PSD_POINTS), PSD_TOLERANCE);
    let psd = PsdRecord {
        passed: psd.passed(),
        min_eigenvalue: psd.min_eigenvalue,
        at_x: psd.at.0,
        at_flow: psd.at.1,
        points: psd.points,
        tolerance: psd.tolerance,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks: BTreeMap<&'static str, (f64, usize)> = BTreeMap::new();
    let mut failing = 0;
    let mut steps = Vec::new();
    for _ in 0..CHECK_STATES {
        let Some(st) = random_interior_state(&mut rng, scn, 1e-3, 0.05, 500) else { continue };
        let mut best = None;
        for step in CHECK_STEPS {
            let report = finite_diff_check(scn, &st, &Block::ALL, &CheckOptions { step, ..CheckOptions::default() })?;
            let passed = report.passed();
            best = Some(report);
            if passed {
                break;
            }
        }
        let report = best.expect("at least one step");
        steps.push(report.step);
        failing += report.failing.len();
        for (b, err, count) in report.blocks {
            let e = blocks.entry(block_name(b)).or_insert((0.0, 0));
            e.0 = e.0.max(err);
            e.1 += count;
        }
    }
    let block: Vec<BlockRecord> = blocks
        .into_iter()
        .map(|(name, (max_relative_error, coordinates))| BlockRecord {
            name: name.into(),
            max_relative_error,
            coordinates,
        })
        .collect();
    let gradient = GradientRecord {
        passed: failing == 0 && !steps.is_empty(),
        states: steps.len(),
        steps,
        tolerance: CheckOptions::default().tolerance,
        max_relative_error: block.iter().map(|b| b.max_relative_error).fold(0.0, f64::max),
        failing,
        block,
    };
    Ok(CheckRecord { passed: psd.passed && gradient.passed, psd, gradient })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRecord {
    pub best: f64,
    pub restarts: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const TWO_NODES: &str = r#"
[graph]
edges = [[1, 2], [2, 1]]

[channel]
noise = 0.01
default_gain = 1.0

[[session]]
origin = 1
destination = 2
demand = 1.0
utility = { kind = "log", weight = 2.0 }
"#;

    #[test]
    fn minimal_two_node_file_is_valid() {
        let loaded = parse_scenario_str(TWO_NODES).unwrap();
        assert_eq!(loaded.graph.node_count(), 2);
        assert_eq!(loaded.bands, 2);
        assert_eq!(loaded.budgets, vec![1.0, 1.0]);
        let scn = loaded.build(0).unwrap();
        assert_eq!(scn.sessions().len(), 1);
    }

    #[test]
    fn missing_reverse_link_is_a_validation_error() {
        let text = TWO_NODES.replace("[[1, 2], [2, 1]]", "[[1, 2]]");
        let err = parse_scenario_str(&text).unwrap_err();
        assert_eq!(err.kind(), "validation");
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("has no reverse link"), "{err}");
    }

    #[test]
    fn unknown_keys_are_parse_errors_with_a_location() {
        let text = TWO_NODES.replace("noise = 0.01", "noise = 0.01\nnoize = 3");
        let err = parse_scenario_str(&text).unwrap_err();
        assert_eq!(err.kind(), "parse");
        let msg = err.to_string();
        assert!(msg.contains("line") && msg.contains("noize"), "{msg}");
    }

    #[test]
    fn every_violation_is_listed() {
        let text = r#"
[graph]
edges = [[1, 2], [2, 1]]

[channel]
noise = 0.01

[[session]]
origin = 1
destination = 9
demand = 1.0
utility = { kind = "log", weight = 2.0 }
"#;
        let CliError::Validation(v) = parse_scenario_str(text).unwrap_err() else { panic!() };
        // 2 bands x 2 ordered pairs of gains, plus the unknown destination
        assert_eq!(v.len(), 5, "{v:?}");
    }

    #[test]
    fn path_loss_rule_sets_gains() {
        let text = r#"
[graph]
edges = [[1, 2], [2, 1], [2, 3], [3, 2]]

[[node]]
id = 1
x = 0.0
y = 0.0

[[node]]
id = 2
x = 3.0
y = 4.0

[[node]]
id = 3
x = 3.0
y = 6.0
budget = 2.0

[channel]
noise = 0.01
path_loss_exponent = 4.0

[[channel.gain]]
band = 1
from = 1
to = 3
value = 0.5
"#;
        let loaded = parse_scenario_str(text).unwrap();
        let ch = &loaded.channel;
        let (a, b, c) = (0, 1, 2);
        let close = |x: f64, y: f64| assert!((x - y).abs() <= 1e-15 * y, "{x} vs {y}");
        close(ch.gain(0, a, b), 1.0 / 625.0);
        close(ch.gain(1, b, c), 1.0 / 16.0);
        close(ch.gain(0, a, c), 1.0 / 2025.0);
        assert_eq!(ch.gain(1, a, c), 0.5);
        assert_eq!(loaded.budgets, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn path_loss_without_coordinates_is_rejected() {
        let text = TWO_NODES.replace("default_gain = 1.0", "path_loss_exponent = 3.0");
        let CliError::Validation(v) = parse_scenario_str(&text).unwrap_err() else { panic!() };
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn files_round_trip() {
        let mut file: ScenarioFile = toml::from_str(TWO_NODES).unwrap();
        file.nodes.push(NodeEntry { id: 2, x: Some(1.0), y: None, budget: Some(0.5) });
        file.channel.gain.push(GainEntry { band: Some(1), from: 2, to: 1, value: 0.25 });
        file.dsa.bands = Some(3);
        let loaded = file.load().unwrap();
        let (alloc, _) = loaded.allocate(4).unwrap();
        file.allocation = Some(AllocationFile::from_allocation(&loaded.graph, &alloc));
        let text = file.to_toml();
        let back: ScenarioFile = toml::from_str(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_toml(), text);
        let reloaded = back.load().unwrap();
        assert_eq!(reloaded.allocation.as_ref(), Some(&alloc));
    }

    #[test]
    fn inline_allocation_is_validated() {
        let text = format!("{TWO_NODES}\n[allocation]\nbands = 2\n[[allocation.node]]\nid = 1\nbands = [0]\n[[allocation.node]]\nid = 2\nbands = [0, 5]\n");
        let CliError::Validation(v) = parse_scenario_str(&text).unwrap_err() else { panic!() };
        assert_eq!(v.len(), 1, "{v:?}");
        let text = format!("{TWO_NODES}\n[allocation]\nbands = 2\n[[allocation.node]]\nid = 1\nbands = [0]\n[[allocation.node]]\nid = 2\nbands = [0]\n");
        let err = parse_scenario_str(&text).unwrap_err();
        assert_eq!(err.kind(), "validation", "{err}");
    }

    #[test]
    fn k4_spectrum_compares_six_with_four() {
        let edges: Vec<(i64, i64)> =
            (0..4).flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        let file = ScenarioFile {
            graph: GraphSection { edges },
            nodes: vec![],
            channel: ChannelSection {
                noise: 0.1,
                path_loss_exponent: None,
                default_gain: Some(1.0),
                gain: vec![],
                node_noise: vec![],
            },
            sessions: vec![],
            cost: CostParams::default(),
            optimizer: OptimizerSection::default(),
            dsa: DsaSection::default(),
            allocation: None,
        };
        let loaded = file.load().unwrap();
        let (rec, alloc) = spectrum(&loaded, 0).unwrap();
        assert_eq!(rec.bands, 4);
        assert!(rec.feasible);
        assert_eq!(rec.comparison, "6 vs 4");
        assert_eq!(rec.order.len(), 4);
        let sets: BTreeSet<_> = (0..4).map(|v| alloc.node_bands(v)).collect();
        assert_eq!(sets.len(), 4);
    }

    #[test]
    fn trace_csv_round_trips() {
        let trace = vec![
            TraceRecord {
                iteration: 0,
                cost: 1.5,
                worst_residual: f64::INFINITY,
                step_mu: 0.0,
                step_eta: 0.0,
                step_rho: 0.0,
                step_phi: 0.0,
                step_overflow: 0.0,
            },
            TraceRecord {
                iteration: 1,
                cost: 0.1 + 0.2,
                worst_residual: 1e-300,
                step_mu: 3e-17,
                step_eta: 2.5,
                step_rho: 1.0 / 3.0,
                step_phi: 7.0,
                step_overflow: 1e10,
            },
        ];
        let text = trace_csv(&trace);
        assert!(text.starts_with(TRACE_HEADER));
        assert_eq!(parse_trace_csv(&text).unwrap(), trace);
        assert!(parse_trace_csv("a,b\n").is_err());
    }

    #[test]
    fn optimize_traces_descend_and_repeat_exactly() {
        let loaded = parse_scenario_str(TWO_NODES).unwrap();
        let scn = loaded.build(0).unwrap();
        let config = solver_config(&loaded.file.optimizer, 0);
        let (a, rec) = optimize(&scn, 0.5, &config).unwrap();
        assert!(rec.converged);
        for w in a.trace.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-12);
        }
        let (b, _) = optimize(&scn, 0.5, &config).unwrap();
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
        let dump = StateDump::new(&scn, &a.state);
        let back: StateDump = toml::from_str(&toml_string(&dump)).unwrap();
        assert_eq!(back, dump);
    }

    #[test]
    fn error_records_parse() {
        let err = parse_scenario_str("[graph]\nedges = []\n[channel]\nnoise = 1.0\n").unwrap_err();
        let rec: ErrorRecord = toml::from_str(&err.record()).unwrap();
        assert_eq!(rec.error.kind, "validation");
        assert_eq!(rec.error.exit_code, 2);
    }
}
