//! Maximum bipartite matching by augmenting paths.

/// Returns, for every left vertex, the right vertex it is matched to.
///
/// `adjacency[l]` lists the right vertices adjacent to left vertex `l`;
/// right vertices are `0..right_count`.
pub fn max_bipartite_matching(adjacency: &[Vec<usize>], right_count: usize) -> Vec<Option<usize>> {
    let mut match_right: Vec<Option<usize>> = vec![None; right_count];
    for left in 0..adjacency.len() {
        let mut visited = vec![false; right_count];
        augment(left, adjacency, &mut match_right, &mut visited);
    }
    let mut match_left = vec![None; adjacency.len()];
    for (r, l) in match_right.iter().enumerate() {
        if let Some(l) = *l {
            match_left[l] = Some(r);
        }
    }
    match_left
}

fn augment(left: usize, adjacency: &[Vec<usize>], match_right: &mut [Option<usize>], visited: &mut [bool]) -> bool {
    for &r in &adjacency[left] {
        if visited[r] {
            continue;
        }
        visited[r] = true;
        let free = match match_right[r] {
            None => true,
            Some(other) => augment(other, adjacency, match_right, visited),
        };
        if free {
            match_right[r] = Some(left);
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_perfect_matching_needing_augmentation() {
        // greedy order would match 0-0 and leave 1 stranded
        let adj = vec![vec![0, 1], vec![0]];
        let m = max_bipartite_matching(&adj, 2);
        assert_eq!(m, vec![Some(1), Some(0)]);
    }

    #[test]
    fn reports_unmatched_vertices() {
        let adj = vec![vec![0], vec![0], vec![1]];
        let m = max_bipartite_matching(&adj, 2);
        assert_eq!(m.iter().filter(|x| x.is_some()).count(), 2);
    }
}
