//! Thin dense front-end over `minilp`.
//!
//! Every program solved in this crate has at most a few dozen variables, so
//! constraints are passed as dense rows and zero coefficients are dropped
//! before they reach the solver.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Goal {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { objective: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub(crate) fn optimal(&self) -> Option<(f64, &[f64])> {
        match self {
            LpOutcome::Optimal { objective, x } => Some((*objective, x.as_slice())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LinearProgram {
    goal: Goal,
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<f64>, Sense, f64)>,
}

impl LinearProgram {
    pub(crate) fn new(goal: Goal) -> Self {
        LinearProgram {
            goal,
            objective: Vec::new(),
            bounds: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Adds a variable and returns its column index.
    pub(crate) fn add_var(&mut self, cost: f64, lo: f64, hi: f64) -> usize {
        self.objective.push(cost);
        self.bounds.push((lo, hi));
        self.objective.len() - 1
    }

    pub(crate) fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds `row · x  (sense)  rhs`. Rows shorter than the variable count are
    /// zero-padded.
    pub(crate) fn add_row(&mut self, row: &[f64], sense: Sense, rhs: f64) {
        debug_assert!(row.len() <= self.num_vars());
        self.rows.push((row.to_vec(), sense, rhs));
    }

    pub(crate) fn solve(&self) -> LpOutcome {
        let direction = match self.goal {
            Goal::Minimize => OptimizationDirection::Minimize,
            Goal::Maximize => OptimizationDirection::Maximize,
        };
        let mut problem = Problem::new(direction);
        let vars: Vec<_> = self
            .objective
            .iter()
            .zip(&self.bounds)
            .map(|(&c, &b)| problem.add_var(c, b))
            .collect();
        for (row, sense, rhs) in &self.rows {
            let terms: Vec<_> = row
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(i, &c)| (vars[i], c))
                .collect();
            let op = match sense {
                Sense::Le => ComparisonOp::Le,
                Sense::Ge => ComparisonOp::Ge,
                Sense::Eq => ComparisonOp::Eq,
            };
            if terms.is_empty() {
                // 0 (op) rhs: decide here, minilp rejects empty expressions.
                let ok = match sense {
                    Sense::Le => 0.0 <= *rhs + 1e-12,
                    Sense::Ge => 0.0 >= *rhs - 1e-12,
                    Sense::Eq => rhs.abs() <= 1e-12,
                };
                if !ok {
                    return LpOutcome::Infeasible;
                }
                continue;
            }
            problem.add_constraint(terms.as_slice(), op, *rhs);
        }
        match problem.solve() {
            Ok(sol) => LpOutcome::Optimal {
                objective: sol.objective(),
                x: vars.iter().map(|v| *sol.var_value(*v)).collect(),
            },
            Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
            Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
        }
    }
}
