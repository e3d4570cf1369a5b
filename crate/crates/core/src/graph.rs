//! Undirected connected communication graphs.
//!
//! Node ids are 0-based in the API. The edge-list text format is 1-based:
//! the first non-empty line holds `n`, every further line one `i j` pair.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected, connected graph with closed neighbor sets `N_i = {i} ∪ adj(i)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct Graph {
    n: usize,
    /// Unordered edges stored as `(min, max)`, sorted.
    edges: Vec<(usize, usize)>,
    /// Closed neighbor sets, ascending.
    neighbors: Vec<Vec<usize>>,
}

/// Serialized form: 1-based edge pairs, matching the text format.
#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<GraphRepr> for Graph {
    type Error = Error;
    fn try_from(r: GraphRepr) -> Result<Self> {
        let zero_based = one_based_to_zero(r.n, &r.edges)?;
        Graph::new(r.n, &zero_based)
    }
}

impl From<Graph> for GraphRepr {
    fn from(g: Graph) -> Self {
        GraphRepr {
            n: g.n,
            edges: g.edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
        }
    }
}

fn one_based_to_zero(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    edges
        .iter()
        .map(|&(i, j)| {
            for v in [i, j] {
                if v == 0 || v > n {
                    return Err(Error::IndexOutOfRange { index: v, n });
                }
            }
            Ok((i - 1, j - 1))
        })
        .collect()
}

impl Graph {
    /// Builds a graph from 0-based edge pairs and verifies connectivity.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            for v in [i, j] {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoopInEdgeList(i));
            }
            let e = (i.min(j), i.max(j));
            if !set.insert(e) {
                return Err(Error::DuplicateEdge(e.0, e.1));
            }
        }
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(i, j) in &set {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let graph = Graph {
            n,
            edges: set.into_iter().collect(),
            neighbors,
        };
        let reached = graph.reachable_from(0);
        if reached != n {
            return Err(Error::DisconnectedGraph { n, reached });
        }
        Ok(graph)
    }

    fn reachable_from(&self, root: usize) -> usize {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Closed neighbor set `N_i` (contains `i`), ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `|N_i| - 1`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len() - 1
    }

    pub fn max_neighborhood_size(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(1)
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.n as f64
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Graph::path(n);
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Graph::new(n, &edges)
    }

    /// Random geometric graph on the unit square: nodes closer than `radius`
    /// are linked. Point sets are redrawn from the same stream until the graph
    /// is connected.
    pub fn random_geometric(n: usize, radius: f64, seed: u64) -> Result<Self> {
        const MAX_DRAWS: usize = 1000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_err = Error::EmptyGraph;
        for _ in 0..MAX_DRAWS {
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                    if dx * dx + dy * dy < radius * radius {
                        edges.push((i, j));
                    }
                }
            }
            match Graph::new(n, &edges) {
                Ok(g) => return Ok(g),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    /// Stand-in for a hand-drawn 50-node sensor-style topology: a seed-pinned
    /// random geometric graph with radius 0.2 (average degree around 5).
    pub fn geometric_default(n: usize, seed: u64) -> Result<Self> {
        let radius = 0.2 * (50.0 / n.max(1) as f64).sqrt();
        Graph::random_geometric(n, radius.min(1.5), seed)
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line_no, first) = lines.next().ok_or(Error::EdgeListParse {
            line: 1,
            reason: "missing node count".into(),
        })?;
        let n: usize = first.parse().map_err(|_| Error::EdgeListParse {
            line: line_no,
            reason: format!("expected node count, found `{first}`"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let parts: Vec<&str> = l.split_whitespace().collect();
            let parsed: Option<(usize, usize)> = match parts.as_slice() {
                [a, b] => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            let pair = parsed.ok_or_else(|| Error::EdgeListParse {
                line,
                reason: format!("expected `i j`, found `{l}`"),
            })?;
            edges.push(pair);
        }
        let zero_based = one_based_to_zero(n, &edges)?;
        Graph::new(n, &zero_based)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for &(i, j) in &self.edges {
            let _ = writeln!(s, "{} {}", i + 1, j + 1);
        }
        s
    }
}
