//! Dense LP front end over `microlp`.

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `min c'x  s.t.  A_in x <= b_in, A_eq x = b_eq, lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    pub fn new(c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

pub fn solve_lp(p: &LpProblem) -> Result<LpOutcome> {
    let n = p.c.len();
    let mut prob = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..n)
        .map(|i| prob.add_var(p.c[i], (p.lower[i], p.upper[i])))
        .collect();
    let mut add_rows = |a: &DMatrix<f64>, b: &DVector<f64>, op: ComparisonOp| {
        for r in 0..a.nrows() {
            let terms: Vec<_> = (0..n)
                .filter(|&c| a[(r, c)] != 0.0)
                .map(|c| (vars[c], a[(r, c)]))
                .collect();
            if terms.is_empty() {
                let ok = match op {
                    ComparisonOp::Le => b[r] >= 0.0,
                    _ => b[r] == 0.0,
                };
                if !ok {
                    return false;
                }
                continue;
            }
            prob.add_constraint(terms.as_slice(), op, b[r]);
        }
        true
    };
    if !add_rows(&p.a_in, &p.b_in, ComparisonOp::Le) || !add_rows(&p.a_eq, &p.b_eq, ComparisonOp::Eq) {
        return Ok(LpOutcome::Infeasible);
    }
    match prob.solve() {
        Ok(SolveOutcome::Solution(sol)) => {
            let x = DVector::from_iterator(n, vars.iter().map(|v| sol.var_value_raw(*v)));
            Ok(LpOutcome::Optimal {
                objective: sol.objective(),
                x,
            })
        }
        Ok(SolveOutcome::Interrupted(_)) => Err(Error::Solver("LP solve interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(e) => Err(Error::Solver(format!("LP backend: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp() {
        // max x + y  s.t. x + 2y <= 4, 3x + y <= 6
        let mut p = LpProblem::new(DVector::from_vec(vec![-1.0, -1.0]));
        p.a_in = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
        p.b_in = DVector::from_vec(vec![4.0, 6.0]);
        p.lower = vec![0.0, 0.0];
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 1.6).abs() < 1e-9 && (x[1] - 1.2).abs() < 1e-9);
                assert!((objective + 2.8).abs() < 1e-9);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut p = LpProblem::new(DVector::from_vec(vec![1.0]));
        p.lower = vec![0.0];
        p.a_in = DMatrix::from_row_slice(1, 1, &[1.0]);
        p.b_in = DVector::from_vec(vec![-1.0]);
        assert_eq!(solve_lp(&p).unwrap(), LpOutcome::Infeasible);
        let p = LpProblem::new(DVector::from_vec(vec![-1.0]));
        assert_eq!(solve_lp(&p).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn equality_rows() {
        let mut p = LpProblem::new(DVector::from_vec(vec![1.0, 2.0]));
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_vec(vec![3.0]);
        p.lower = vec![0.0, 0.0];
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { x, .. } => assert!((x[0] - 3.0).abs() < 1e-9),
            o => panic!("{o:?}"),
        }
    }
}
