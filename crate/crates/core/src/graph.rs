//! Agent network topologies and the operators derived from them.
//!
//! A [`Graph`] is always undirected, simple and connected. From it we
//! derive the graph shift operator used by polynomial graph filters and
//! the Metropolis-Hastings mixing matrix used by consensus baselines.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Rejection-resampling cap for random graph generation.
const MAX_ATTEMPTS: u64 = 1000;

/// Undirected connected graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Array2<f64>,
}

impl Graph {
    /// Build from an edge list; validates simplicity and connectivity.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        if n == 0 {
            return Err(Error::parameter("graph must have at least one node"));
        }
        let mut adjacency = Array2::<f64>::zeros((n, n));
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::parameter(format!(
                    "edge ({a},{b}) out of range for n={n}"
                )));
            }
            if a == b {
                return Err(Error::parameter(format!("self-loop at node {a}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if adjacency[[i, j]] != 0.0 {
                return Err(Error::parameter(format!("duplicate edge ({i},{j})")));
            }
            adjacency[[i, j]] = 1.0;
            adjacency[[j, i]] = 1.0;
            canon.push((i, j));
        }
        canon.sort_unstable();
        let g = Graph { n, edges: canon, adjacency };
        if !g.is_connected() {
            return Err(Error::structure("graph is not connected"));
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).iter().filter(|&&v| v != 0.0).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    fn is_connected(&self) -> bool {
        if self.n == 1 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for v in 0..self.n {
                if self.adjacency[[u, v]] != 0.0 && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Write the edge-list format: first line `n m`, then one `i j` per edge.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.n, self.edges.len())?;
        for &(i, j) in &self.edges {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }

    /// Parse the edge-list format produced by [`Graph::write_edge_list`].
    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Graph> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(1, "empty edge list"))?;
        let header = header?;
        let mut it = header.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(1, "expected `n m` header"))?;
        let m: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(1, "expected `n m` header"))?;
        let mut edges = Vec::with_capacity(m);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::format(idx + 1, "expected `i j`"))
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            edges.push((i, j));
        }
        if edges.len() != m {
            return Err(Error::format(
                m + 1,
                format!("edge count mismatch: header says {m}, found {}", edges.len()),
            ));
        }
        Graph::from_edges(n, &edges)
    }
}

/// How the shift operator is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ShiftKind {
    /// Symmetric degree normalization `D^{-1/2} A D^{-1/2}`.
    NormalizedAdjacency,
    /// Row-normalized adjacency `D^{-1} A`; used by the server layer on stars.
    StarRow,
}

/// Graph shift operator: a matrix whose sparsity respects the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    s: Array2<f64>,
    kind: ShiftKind,
}

impl ShiftOperator {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }
}

/// Symmetric row-stochastic consensus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    a: Array2<f64>,
}

impl MixingMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Random `degree`-regular connected graph via stub pairing.
pub fn make_regular(n: usize, degree: usize, seed: u64) -> Result<Graph> {
    if degree >= n {
        return Err(Error::parameter(format!(
            "degree {degree} must be smaller than n={n}"
        )));
    }
    if (n * degree) % 2 != 0 {
        return Err(Error::parameter(format!(
            "n*degree must be even, got {n}*{degree}"
        )));
    }
    if degree == 0 {
        return Err(Error::parameter("degree 0 cannot be connected"));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::rng(seed, seed::Stream::GraphGen, attempt);
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, degree)).collect();
        stubs.shuffle(&mut rng);
        let mut adjacency = Array2::<f64>::zeros((n, n));
        let mut edges = Vec::with_capacity(n * degree / 2);
        let mut ok = true;
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            if a == b || adjacency[[a, b]] != 0.0 {
                ok = false;
                break;
            }
            adjacency[[a, b]] = 1.0;
            adjacency[[b, a]] = 1.0;
            edges.push(if a < b { (a, b) } else { (b, a) });
        }
        if !ok {
            continue;
        }
        edges.sort_unstable();
        let g = Graph { n, edges, adjacency };
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::structure(format!(
        "no connected {degree}-regular graph found in {MAX_ATTEMPTS} attempts"
    )))
}

/// Erdos-Renyi G(n, p), resampled until connected.
pub fn make_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::parameter(format!("p must be in (0,1], got {p}")));
    }
    if n == 0 {
        return Err(Error::parameter("n must be positive"));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::rng(seed, seed::Stream::GraphGen, attempt);
        let mut adjacency = Array2::<f64>::zeros((n, n));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    adjacency[[i, j]] = 1.0;
                    adjacency[[j, i]] = 1.0;
                    edges.push((i, j));
                }
            }
        }
        let g = Graph { n, edges, adjacency };
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::structure(format!(
        "no connected G({n},{p}) sample found in {MAX_ATTEMPTS} attempts"
    )))
}

/// Star graph: node 0 is the center, connected to every other node.
pub fn make_star(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::parameter(format!("star needs n >= 2, got {n}")));
    }
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (0, i)).collect();
    Graph::from_edges(n, &edges)
}

/// Derive the shift operator of the requested kind.
pub fn shift_operator(g: &Graph, kind: ShiftKind) -> Result<ShiftOperator> {
    let n = g.n();
    let degrees = g.degrees();
    if let Some(i) = degrees.iter().position(|&d| d == 0) {
        return Err(Error::structure(format!("node {i} is isolated")));
    }
    let a = g.adjacency();
    let mut s = Array2::<f64>::zeros((n, n));
    match kind {
        ShiftKind::NormalizedAdjacency => {
            let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
            for i in 0..n {
                for j in 0..n {
                    if a[[i, j]] != 0.0 {
                        s[[i, j]] = inv_sqrt[i] * inv_sqrt[j];
                    }
                }
            }
        }
        ShiftKind::StarRow => {
            for i in 0..n {
                let inv = 1.0 / degrees[i] as f64;
                for j in 0..n {
                    if a[[i, j]] != 0.0 {
                        s[[i, j]] = inv;
                    }
                }
            }
        }
    }
    Ok(ShiftOperator { s, kind })
}

/// Metropolis-Hastings weights: symmetric, doubly stochastic, graph-sparse.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    let n = g.n();
    let degrees = g.degrees();
    let adj = g.adjacency();
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut off_sum = 0.0;
        for j in 0..n {
            if adj[[i, j]] != 0.0 {
                let w = 1.0 / (1.0 + degrees[i].max(degrees[j]) as f64);
                a[[i, j]] = w;
                off_sum += w;
            }
        }
        a[[i, i]] = 1.0 - off_sum;
    }
    Ok(MixingMatrix { a })
}
