//! JSON problem files.
//!
//! Node ids inside files are 1-based, like the graph format.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::families::{matrix_from_rows, rows_of, FunctionSpec};
use super::{CoupledProblem, NodeProblem};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub family: String,
    pub graph: Graph,
    pub p: usize,
    pub m: usize,
    pub nodes: Vec<NodeFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFile {
    /// 1-based, ascending, contains the node itself.
    pub scope: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `m` rows of `Σ_{scope} d_j` entries.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub functions: FunctionSpec,
}

impl ProblemFile {
    pub fn from_problem(problem: &CoupledProblem, family: &str) -> Result<Self> {
        let nodes = problem
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, nd)| {
                let functions = nd.functions().spec().ok_or_else(|| {
                    Error::Serialization(format!("node {i} uses callbacks without a serializable form"))
                })?;
                Ok(NodeFile {
                    scope: nd.scope().iter().map(|j| j + 1).collect(),
                    lower: nd.lower().iter().cloned().collect(),
                    upper: nd.upper().iter().cloned().collect(),
                    a: rows_of(nd.a()),
                    b: nd.b().iter().cloned().collect(),
                    functions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProblemFile {
            family: family.to_string(),
            graph: problem.graph().clone(),
            p: problem.p(),
            m: problem.m(),
            nodes,
        })
    }

    pub fn into_problem(self) -> Result<CoupledProblem> {
        let n = self.graph.n();
        if self.nodes.len() != n {
            return Err(Error::ShapeMismatch(format!("{} node entries for {n} nodes", self.nodes.len())));
        }
        let dims: Vec<usize> = self.nodes.iter().map(|nd| nd.lower.len()).collect();
        let mut nodes = Vec::with_capacity(n);
        for nf in self.nodes {
            let scope = nf
                .scope
                .iter()
                .map(|&j| {
                    if j == 0 || j > n {
                        Err(Error::IndexOutOfRange { index: j, n })
                    } else {
                        Ok(j - 1)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let scope_dim: usize = scope.iter().map(|&j| dims[j]).sum();
            let functions = nf.functions.build(scope_dim, self.p)?;
            if nf.a.len() != self.m {
                return Err(Error::ShapeMismatch(format!("A must have {} rows", self.m)));
            }
            let a = matrix_from_rows(&nf.a, scope_dim, "A")?;
            nodes.push(NodeProblem::new(
                scope,
                DVector::from_vec(nf.lower),
                DVector::from_vec(nf.upper),
                functions,
                a,
                DVector::from_vec(nf.b),
            ));
        }
        CoupledProblem::new(self.graph, self.p, self.m, nodes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
