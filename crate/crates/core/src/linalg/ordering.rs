use std::collections::VecDeque;

use super::CsrMatrix;

/// Reverse Cuthill-McKee permutation of the symmetric sparsity graph of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).0.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut level = vec![0usize; n];
    while order.len() < n {
        // lowest-degree unvisited vertex seeds each component
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        let start = pseudo_peripheral(seed, &adj, &degree, &visited, &mut level);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_unstable_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// George-Liu search for a vertex of (nearly) maximal eccentricity.
fn pseudo_peripheral(
    seed: usize,
    adj: &[Vec<usize>],
    degree: &[usize],
    visited: &[bool],
    level: &mut [usize],
) -> usize {
    let mut root = seed;
    let mut depth = bfs_levels(root, adj, visited, level).0;
    loop {
        let (_, last) = bfs_levels(root, adj, visited, level);
        let candidate = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
        let (d, _) = bfs_levels(candidate, adj, visited, level);
        if d > depth {
            depth = d;
            root = candidate;
        } else {
            return root;
        }
    }
}

fn bfs_levels(
    root: usize,
    adj: &[Vec<usize>],
    visited: &[bool],
    level: &mut [usize],
) -> (usize, Vec<usize>) {
    let mut seen: Vec<usize> = vec![root];
    let mut mark = std::collections::HashSet::from([root]);
    level[root] = 0;
    let mut head = 0;
    while head < seen.len() {
        let v = seen[head];
        head += 1;
        for &w in &adj[v] {
            if !visited[w] && mark.insert(w) {
                level[w] = level[v] + 1;
                seen.push(w);
            }
        }
    }
    let depth = seen.iter().map(|&v| level[v]).max().unwrap_or(0);
    let last = seen.into_iter().filter(|&v| level[v] == depth).collect();
    (depth, last)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bandwidth(a: &CsrMatrix, perm: &[usize]) -> usize {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        a.triplets()
            .map(|(i, j, _)| inv[i].abs_diff(inv[j]))
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn is_a_permutation_and_shrinks_bandwidth() {
        // path graph numbered badly: 0-5-1-4-2-3
        let order = [0usize, 5, 1, 4, 2, 3];
        let mut trip = vec![];
        for w in order.windows(2) {
            trip.push((w[0], w[1], -1.0));
            trip.push((w[1], w[0], -1.0));
        }
        for i in 0..6 {
            trip.push((i, i, 2.0));
        }
        let a = CsrMatrix::from_triplets(6, 6, trip);
        let perm = reverse_cuthill_mckee(&a);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        assert_eq!(bandwidth(&a, &perm), 1);
    }

    #[test]
    fn handles_disconnected_graphs() {
        let a = CsrMatrix::identity(5);
        let perm = reverse_cuthill_mckee(&a);
        assert_eq!(perm.len(), 5);
    }
}
