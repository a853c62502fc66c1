//! Prüfer sequences: a bijection between sequences in `[0, n)^(n-2)` and
//! labeled trees on `n` nodes.

/// Decodes a sequence into the `n - 1` undirected edges of its tree.
///
/// Panics if any label is `>= n` or the length is not `n - 2`.
pub fn decode(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    decode_into(seq, n, &mut vec![0; n], &mut edges);
    edges
}

/// Allocation-free variant of [`decode`]; `degree` must have length `n`.
pub fn decode_into(seq: &[usize], n: usize, degree: &mut [usize], edges: &mut Vec<(usize, usize)>) {
    assert!(n >= 2 && seq.len() == n - 2, "sequence length must be n - 2");
    edges.clear();
    degree.fill(1);
    for &v in seq {
        assert!(v < n, "label {v} out of range");
        degree[v] += 1;
    }
    let mut ptr = 0;
    while degree[ptr] != 1 {
        ptr += 1;
    }
    let mut leaf = ptr;
    for &v in seq {
        edges.push((leaf, v));
        degree[leaf] -= 1;
        degree[v] -= 1;
        if degree[v] == 1 && v < ptr {
            leaf = v;
        } else {
            ptr += 1;
            while degree[ptr] != 1 {
                ptr += 1;
            }
            leaf = ptr;
        }
    }
    edges.push((leaf, n - 1));
}

/// Encodes a tree given as undirected edges over labels `0..n`.
pub fn encode(edges: &[(usize, usize)], n: usize) -> Vec<usize> {
    assert!(n >= 2 && edges.len() == n - 1);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut removed = vec![false; n];
    let mut seq = Vec::with_capacity(n - 2);
    for _ in 0..n - 2 {
        let leaf = (0..n)
            .find(|&v| !removed[v] && adj[v].iter().filter(|&&u| !removed[u]).count() == 1)
            .expect("a tree always has a leaf");
        let neighbour = *adj[leaf].iter().find(|&&u| !removed[u]).unwrap();
        seq.push(neighbour);
        removed[leaf] = true;
    }
    seq
}

/// Number of labeled trees on `n` nodes, `n^(n-2)`.
pub fn tree_count(n: usize) -> u64 {
    if n < 2 {
        return 0;
    }
    (n as u64).pow(n as u32 - 2)
}

/// Writes the `index`-th sequence (base-`n` digits, most significant first).
pub fn sequence_at(index: u64, n: usize, out: &mut [usize]) {
    let mut rest = index;
    for slot in out.iter_mut().rev() {
        *slot = (rest % n as u64) as usize;
        rest /= n as u64;
    }
}

/// Advances `seq` to the next sequence in lexicographic order; false on wrap-around.
pub fn advance(seq: &mut [usize], n: usize) -> bool {
    for slot in seq.iter_mut().rev() {
        *slot += 1;
        if *slot < n {
            return true;
        }
        *slot = 0;
    }
    false
}
