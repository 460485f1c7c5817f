//! Fill-reducing orderings for profile (envelope) factorizations.

use std::collections::VecDeque;

/// Reverse Cuthill–McKee ordering of the vertices `0..adj.len()` that are not
/// in `tail`; the `tail` vertices are appended last in the order given.
///
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>], tail: &[usize]) -> Vec<usize> {
    let n = adj.len();
    let mut excluded = vec![false; n];
    for &t in tail {
        excluded[t] = true;
    }
    let degree = |v: usize| adj[v].iter().filter(|&&u| !excluded[u]).count();

    let mut visited = excluded.clone();
    let mut order = Vec::with_capacity(n);
    loop {
        let Some(seed) = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree(v), v)) else {
            break;
        };
        let start = pseudo_peripheral(adj, &excluded, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_unstable_by_key(|&u| (degree(u), u));
            next.dedup();
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order.extend_from_slice(tail);
    order
}

/// Last vertex of a BFS level structure after a few eccentricity-increasing sweeps.
fn pseudo_peripheral(adj: &[Vec<usize>], excluded: &[bool], seed: usize) -> usize {
    let mut root = seed;
    let mut best_depth = 0;
    for _ in 0..4 {
        let (far, depth) = bfs_farthest(adj, excluded, root);
        if depth <= best_depth {
            break;
        }
        best_depth = depth;
        root = far;
    }
    root
}

fn bfs_farthest(adj: &[Vec<usize>], excluded: &[bool], root: usize) -> (usize, usize) {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut far = (root, 0);
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        if d > far.1 || (d == far.1 && adj[v].len() < adj[far.0].len()) {
            far = (v, d);
        }
        for &u in &adj[v] {
            if !excluded[u] && dist[u] == usize::MAX {
                dist[u] = d + 1;
                queue.push_back(u);
            }
        }
    }
    far
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_is_a_permutation_with_tail_last() {
        let adj = vec![vec![1, 4], vec![0, 2, 4], vec![1, 3, 4], vec![2, 4], vec![0, 1, 2, 3]];
        let perm = reverse_cuthill_mckee(&adj, &[4]);
        let mut sorted = perm.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        assert_eq!(*perm.last().unwrap(), 4);
    }

    #[test]
    fn path_gets_bandwidth_one() {
        let n = 10;
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            })
            .collect();
        // scramble labels
        let relabel: Vec<usize> = (0..n).map(|i| (i * 7) % n).collect();
        let mut adj2 = vec![Vec::new(); n];
        for (i, nb) in adj.iter().enumerate() {
            adj2[relabel[i]] = nb.iter().map(|&j| relabel[j]).collect();
        }
        let perm = reverse_cuthill_mckee(&adj2, &[]);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        for (i, nb) in adj2.iter().enumerate() {
            for &j in nb {
                assert!(iperm[i].abs_diff(iperm[j]) <= 1);
            }
        }
    }
}
