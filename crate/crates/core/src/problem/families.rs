//! Built-in local function families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::NodeFunctions;
use crate::error::{Error, Result};

/// `f = c·x`, `g = -d·log(1 + x) + offset` on a scalar own variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLogNode {
    pub c: f64,
    pub d: f64,
    pub offset: f64,
}

impl LinearLogNode {
    pub fn new(c: f64, d: f64, offset: f64) -> Self {
        LinearLogNode { c, d, offset }
    }
}

impl NodeFunctions for LinearLogNode {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        self.c * x[0]
    }

    fn objective_gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.c)
    }

    fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, -self.d * x[0].ln_1p() + self.offset)
    }

    fn constraint_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -self.d / (1.0 + x[0]))
    }

    fn spec(&self) -> Option<FunctionSpec> {
        Some(FunctionSpec::LinearLog {
            c: self.c,
            d: self.d,
            offset: self.offset,
        })
    }
}

/// `xᵀ M x + vᵀ x + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    /// Stored symmetrized.
    mat: DMatrix<f64>,
    lin: DVector<f64>,
    constant: f64,
}

impl QuadraticForm {
    pub fn new(mat: DMatrix<f64>, lin: DVector<f64>, constant: f64) -> Self {
        let sym = (&mat + mat.transpose()) * 0.5;
        QuadraticForm {
            mat: sym,
            lin,
            constant,
        }
    }

    pub fn linear(lin: DVector<f64>, constant: f64) -> Self {
        let n = lin.len();
        QuadraticForm::new(DMatrix::zeros(n, n), lin, constant)
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn lin(&self) -> &DVector<f64> {
        &self.lin
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (&self.mat * x).dot(x) + self.lin.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mat * x * 2.0 + &self.lin
    }
}

/// Quadratic objective with quadratic constraints, one form per row of `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticNode {
    objective: QuadraticForm,
    constraints: Vec<QuadraticForm>,
}

impl QuadraticNode {
    pub fn new(objective: QuadraticForm, constraints: Vec<QuadraticForm>) -> Self {
        QuadraticNode {
            objective,
            constraints,
        }
    }

    pub fn objective_form(&self) -> &QuadraticForm {
        &self.objective
    }

    pub fn constraint_forms(&self) -> &[QuadraticForm] {
        &self.constraints
    }
}

impl NodeFunctions for QuadraticNode {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        self.objective.value(x)
    }

    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.objective.gradient(x)
    }

    fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|q| q.value(x)))
    }

    fn constraint_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.constraints.len(), x.len());
        for (l, q) in self.constraints.iter().enumerate() {
            jac.row_mut(l).copy_from(&q.gradient(x).transpose());
        }
        jac
    }

    fn spec(&self) -> Option<FunctionSpec> {
        let form = |q: &QuadraticForm| FormSpec {
            mat: rows_of(&q.mat),
            lin: q.lin.iter().cloned().collect(),
            constant: q.constant,
        };
        Some(FunctionSpec::Quadratic {
            objective: form(&self.objective),
            constraints: self.constraints.iter().map(form).collect(),
        })
    }
}

/// JSON description of a built-in family instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    LinearLog {
        c: f64,
        d: f64,
        offset: f64,
    },
    Quadratic {
        objective: FormSpec,
        constraints: Vec<FormSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormSpec {
    /// Row-major.
    pub mat: Vec<Vec<f64>>,
    pub lin: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().cloned().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::ShapeMismatch(format!("{what}: every row must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl FunctionSpec {
    /// Instantiates the functions for a scope of dimension `scope_dim` and
    /// `p` inequality rows.
    pub fn build(&self, scope_dim: usize, p: usize) -> Result<std::sync::Arc<dyn NodeFunctions>> {
        match self {
            FunctionSpec::LinearLog { c, d, offset } => {
                if scope_dim != 1 || p != 1 {
                    return Err(Error::ShapeMismatch(
                        "linear_log needs a scalar scope and p = 1".into(),
                    ));
                }
                Ok(std::sync::Arc::new(LinearLogNode::new(*c, *d, *offset)))
            }
            FunctionSpec::Quadratic {
                objective,
                constraints,
            } => {
                if constraints.len() != p {
                    return Err(Error::ShapeMismatch(format!(
                        "quadratic node has {} constraint forms, p = {p}",
                        constraints.len()
                    )));
                }
                let form = |f: &FormSpec| -> Result<QuadraticForm> {
                    if f.mat.len() != scope_dim || f.lin.len() != scope_dim {
                        return Err(Error::ShapeMismatch(format!(
                            "quadratic form must be {scope_dim}-dimensional"
                        )));
                    }
                    let mat = matrix_from_rows(&f.mat, scope_dim, "quadratic form")?;
                    Ok(QuadraticForm::new(mat, DVector::from_vec(f.lin.clone()), f.constant))
                };
                let obj = form(objective)?;
                let cons = constraints.iter().map(form).collect::<Result<Vec<_>>>()?;
                Ok(std::sync::Arc::new(QuadraticNode::new(obj, cons)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_log_values() {
        let f = LinearLogNode::new(2.0, 3.0, 0.5);
        let x = DVector::from_element(1, 1.0);
        assert_eq!(f.objective(&x), 2.0);
        assert!((f.constraint(&x)[0] - (0.5 - 3.0 * 2f64.ln())).abs() < 1e-15);
        assert!((f.constraint_jacobian(&x)[(0, 0)] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_spec_round_trip() {
        let obj = QuadraticForm::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            0.0,
        );
        let con = QuadraticForm::linear(DVector::from_vec(vec![1.0, 1.0]), -1.0);
        let node = QuadraticNode::new(obj, vec![con]);
        let spec = node.spec().unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: FunctionSpec = serde_json::from_str(&json).unwrap();
        let rebuilt = back.build(2, 1).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        assert!((rebuilt.objective(&x) - node.objective(&x)).abs() < 1e-15);
        assert_eq!(rebuilt.constraint(&x), node.constraint(&x));
        assert!(back.build(3, 1).is_err());
        assert!(back.build(2, 2).is_err());
    }
}
