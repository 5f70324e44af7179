//! Directed communication graphs.
//!
//! Edge convention: the ordered pair `(j, i)` means agent `j` influences
//! agent `i`, so the adjacency entry `chi[i][j]` is one exactly when `(j, i)`
//! is an edge. Vertices are 0-indexed in the API and 1-indexed in JSON.
//! Every vertex carries a self-loop; constructors insert them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest vertex count; adjacency is stored densely.
pub const MAX_VERTICES: usize = 4096;

/// Tolerance on the sum of choice probabilities.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDigraph", into = "RawDigraph")]
pub struct Digraph {
    n: usize,
    /// Row-major `chi`, `chi[i * n + j]`.
    chi: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDigraph {
    n_vertices: usize,
    /// 1-indexed `[j, i]` pairs; self-loops may be omitted.
    edges: Vec<[usize; 2]>,
}

impl TryFrom<RawDigraph> for Digraph {
    type Error = Error;

    fn try_from(raw: RawDigraph) -> Result<Self> {
        Digraph::from_one_indexed(raw.n_vertices, &raw.edges)
    }
}

impl From<Digraph> for RawDigraph {
    fn from(g: Digraph) -> Self {
        let edges = g
            .edges()
            .filter(|(j, i)| j != i)
            .map(|(j, i)| [j + 1, i + 1])
            .collect();
        RawDigraph {
            n_vertices: g.n,
            edges,
        }
    }
}

impl Digraph {
    /// Builds a digraph from 0-indexed `(j, i)` pairs ("j influences i").
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("a digraph needs at least one vertex".into()));
        }
        if n > MAX_VERTICES {
            return Err(Error::InvalidGraph(format!("{n} vertices exceeds the limit of {MAX_VERTICES}")));
        }
        let mut g = Digraph::self_loops(n);
        for (j, i) in edges {
            if j >= n || i >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has an endpoint outside 1..={n}",
                    j + 1,
                    i + 1
                )));
            }
            g.chi[i * n + j] = true;
        }
        Ok(g)
    }

    /// Builds a digraph from 1-indexed `[j, i]` pairs as they appear in config files.
    pub fn from_one_indexed(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        if let Some([j, i]) = edges.iter().find(|[j, i]| *j == 0 || *i == 0) {
            return Err(Error::InvalidGraph(format!(
                "edge [{j}, {i}] uses vertex 0; vertices are numbered from 1"
            )));
        }
        Digraph::new(n, edges.iter().map(|[j, i]| (j - 1, i - 1)))
    }

    /// Graph with only the mandatory self-loops.
    ///
    /// # Panics
    /// Panics if `n == 0`.
    pub fn self_loops(n: usize) -> Self {
        assert!(n > 0, "a digraph needs at least one vertex");
        let mut chi = vec![false; n * n];
        for i in 0..n {
            chi[i * n + i] = true;
        }
        Digraph { n, chi }
    }

    /// # Panics
    /// Panics if `n == 0`.
    pub fn complete(n: usize) -> Self {
        assert!(n > 0, "a digraph needs at least one vertex");
        Digraph {
            n,
            chi: vec![true; n * n],
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    /// `chi_ij`: whether `j` influences `i`.
    #[inline]
    pub fn chi(&self, i: usize, j: usize) -> bool {
        self.chi[i * self.n + j]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.chi(to, from)
    }

    /// All edges as 0-indexed `(j, i)` pairs, self-loops included.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (0..n).filter(move |&j| self.chi(i, j)).map(move |j| (j, i)))
    }

    pub fn edge_count(&self) -> usize {
        self.chi.iter().filter(|&&b| b).count()
    }

    /// 0-1 adjacency matrix, row-major, entry `(i, j)` equal to `chi_ij`.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| u8::from(self.chi(i, j))).collect())
            .collect()
    }

    /// Vertices reachable from `root` along directed paths (root included).
    pub fn reachable_from(&self, root: usize) -> Vec<bool> {
        let n = self.n;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[root] = true;
        queue.push_back(root);
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if !seen[i] && self.chi(i, j) {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen
    }

    /// Whether some vertex reaches every other vertex.
    pub fn has_spanning_tree(&self) -> bool {
        self.roots().next().is_some()
    }

    /// Vertices from which every vertex is reachable.
    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&r| self.reachable_from(r).iter().all(|&b| b))
    }

    /// Adds every edge of `other` to `self`.
    pub fn union_with(&mut self, other: &Digraph) -> Result<()> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch(format!(
                "cannot unite digraphs on {} and {} vertices",
                self.n, other.n
            )));
        }
        for (a, b) in self.chi.iter_mut().zip(&other.chi) {
            *a |= *b;
        }
        Ok(())
    }
}

/// Digraph whose edge set is the union of the inputs' edge sets.
pub fn union_graph<'a>(graphs: impl IntoIterator<Item = &'a Digraph>) -> Result<Digraph> {
    let mut it = graphs.into_iter();
    let mut acc = it.next().ok_or(Error::EmptyWindow)?.clone();
    for g in it {
        acc.union_with(g)?;
    }
    Ok(acc)
}

/// The admissible topologies together with their choice probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnsemble")]
pub struct TopologyEnsemble {
    graphs: Vec<Digraph>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    graphs: Vec<Digraph>,
    probs: Vec<f64>,
}

impl TryFrom<RawEnsemble> for TopologyEnsemble {
    type Error = Error;

    fn try_from(raw: RawEnsemble) -> Result<Self> {
        TopologyEnsemble::new(raw.graphs, raw.probs)
    }
}

impl TopologyEnsemble {
    pub fn new(graphs: Vec<Digraph>, probs: Vec<f64>) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::InvalidEnsemble("no admissible graphs".into()))?;
        if graphs.len() != probs.len() {
            return Err(Error::InvalidEnsemble(format!(
                "{} graphs but {} probabilities",
                graphs.len(),
                probs.len()
            )));
        }
        let n = first.n_vertices();
        if let Some(k) = graphs.iter().position(|g| g.n_vertices() != n) {
            return Err(Error::InvalidEnsemble(format!(
                "graph {} has {} vertices, expected {n}",
                k + 1,
                graphs[k].n_vertices()
            )));
        }
        if let Some(k) = probs.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidEnsemble(format!(
                "choice probability p_{} = {} must be positive",
                k + 1,
                probs[k]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidEnsemble(format!(
                "choice probabilities sum to {total}, not 1"
            )));
        }
        Ok(TopologyEnsemble { graphs, probs })
    }

    /// Equal choice probabilities.
    pub fn uniform(graphs: Vec<Digraph>) -> Result<Self> {
        let k = graphs.len().max(1);
        let probs = vec![1.0 / k as f64; graphs.len()];
        // 1/k summed k times can miss 1 by a few ulps; still inside PROB_SUM_TOL.
        TopologyEnsemble::new(graphs, probs)
    }

    pub fn graphs(&self) -> &[Digraph] {
        &self.graphs
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.graphs[0].n_vertices()
    }

    /// 0-indexed topology lookup.
    pub fn graph(&self, k: usize) -> &Digraph {
        &self.graphs[k]
    }

    /// Union of every admissible graph.
    pub fn union(&self) -> Digraph {
        union_graph(&self.graphs).expect("ensemble is nonempty with a common vertex set")
    }

    /// `min_k log(1 / (1 - p_k))`, infinite when some `p_k == 1`.
    pub fn min_log_inverse_miss(&self) -> f64 {
        self.probs
            .iter()
            .map(|&p| -(-p).ln_1p())
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle3() -> Digraph {
        Digraph::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn adjacency_of_complete_graph_is_all_ones() {
        let a = Digraph::complete(3).adjacency_matrix();
        assert!(a.iter().flatten().all(|&x| x == 1));
    }

    #[test]
    fn adjacency_of_loops_only_is_identity() {
        let a = Digraph::self_loops(2).adjacency_matrix();
        assert_eq!(a, vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn adjacency_follows_j_influences_i() {
        // 1-indexed edges (1,2), (2,3): chi_21 = chi_32 = 1.
        let g = Digraph::from_one_indexed(3, &[[1, 2], [2, 3]]).unwrap();
        assert_eq!(
            g.adjacency_matrix(),
            vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 1]]
        );
    }

    #[test]
    fn spanning_tree_examples() {
        assert!(cycle3().has_spanning_tree());
        // {1} and {2,3}: 2 -> 3 only; 1 isolated.
        let split = Digraph::new(3, [(1, 2)]).unwrap();
        assert!(!split.has_spanning_tree());
        let star = Digraph::new(5, (1..5).map(|leaf| (0, leaf))).unwrap();
        assert!(star.has_spanning_tree());
        assert_eq!(star.roots().collect::<Vec<_>>(), vec![0]);
        let reversed_star = Digraph::new(3, [(1, 0), (2, 0)]).unwrap();
        assert!(!reversed_star.has_spanning_tree());
    }

    #[test]
    fn single_vertex_is_rooted() {
        assert!(Digraph::self_loops(1).has_spanning_tree());
    }

    #[test]
    fn union_examples() {
        let g = cycle3();
        assert_eq!(union_graph([&g, &g]).unwrap(), g);
        let a = Digraph::new(3, [(0, 1), (1, 2)]).unwrap();
        let b = Digraph::new(3, [(2, 0)]).unwrap();
        assert_eq!(union_graph([&a, &b]).unwrap(), g);
        let l = Digraph::self_loops(4);
        assert_eq!(union_graph([&l, &l, &l]).unwrap(), l);
        assert!(matches!(union_graph(std::iter::empty()), Err(Error::EmptyWindow)));
        assert!(union_graph([&l, &g]).is_err());
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Digraph::new(2, [(0, 2)]).is_err());
        assert!(Digraph::from_one_indexed(2, &[[0, 1]]).is_err());
        assert!(Digraph::new(0, []).is_err());
    }

    #[test]
    fn ensemble_validation() {
        let g = Digraph::complete(2);
        assert!(TopologyEnsemble::new(vec![g.clone()], vec![1.0]).is_ok());
        assert!(TopologyEnsemble::new(vec![g.clone(), g.clone()], vec![0.5, 0.6]).is_err());
        assert!(TopologyEnsemble::new(vec![g.clone(), g.clone()], vec![1.0, 0.0]).is_err());
        assert!(TopologyEnsemble::new(vec![g.clone(), Digraph::complete(3)], vec![0.5, 0.5]).is_err());
        assert!(TopologyEnsemble::new(vec![], vec![]).is_err());
        assert!(TopologyEnsemble::uniform(vec![g.clone(), g.clone(), g]).is_ok());
    }

    #[test]
    fn json_is_one_indexed_and_round_trips() {
        let g = Digraph::from_one_indexed(3, &[[1, 2], [2, 3]]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"n_vertices":3,"edges":[[1,2],[2,3]]}"#);
        let back: Digraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<Digraph>(r#"{"n_vertices":2,"edges":[[1,3]]}"#).is_err());
    }
}
