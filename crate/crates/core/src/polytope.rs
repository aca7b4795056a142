//! Exact vertex enumeration for small polytopes in halfspace form.
//!
//! A vertex is a feasible point where the equalities together with some
//! `dim - rank(eq)` inequalities are tight and linearly independent. With at
//! most a couple of dozen constraints in dimension ≤ 8 the subsets can simply
//! be enumerated.

use nalgebra::{DMatrix, DVector};

use crate::lp::{Goal, LinearProgram, Sense};

const RANK_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const SNAP_TOL: f64 = 1e-12;

/// `{u : eq_rows·u = eq_rhs, ineq_rows·u <= ineq_rhs}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspaces {
    dim: usize,
    eq: Vec<(Vec<f64>, f64)>,
    le: Vec<(Vec<f64>, f64)>,
}

impl Halfspaces {
    pub fn new(dim: usize) -> Self {
        Halfspaces {
            dim,
            eq: Vec::new(),
            le: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn equal(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        assert_eq!(row.len(), self.dim);
        self.eq.push((row, rhs));
        self
    }

    pub fn at_most(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        assert_eq!(row.len(), self.dim);
        self.le.push((row, rhs));
        self
    }

    pub fn at_least(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.at_most(row.into_iter().map(|a| -a).collect(), -rhs)
    }

    /// Adds `u_i >= 0` for every coordinate.
    pub fn nonnegative(&mut self) -> &mut Self {
        for i in 0..self.dim {
            let mut row = vec![0.0; self.dim];
            row[i] = -1.0;
            self.le.push((row, 0.0));
        }
        self
    }

    /// Smallest slack over all constraints (negative means violated).
    pub fn min_slack(&self, u: &[f64]) -> f64 {
        let eq = self.eq.iter().map(|(r, b)| -(dot(r, u) - b).abs());
        let le = self.le.iter().map(|(r, b)| b - dot(r, u));
        eq.chain(le).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.min_slack(u) >= -tol
    }

    /// All vertices, deduplicated and sorted lexicographically.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim;
        if n == 0 {
            return if self.min_slack(&[]) >= -FEAS_TOL {
                vec![DVector::zeros(0)]
            } else {
                Vec::new()
            };
        }
        let basis = independent_rows(&self.eq, n);
        if basis.len() < self.eq.len() {
            // redundant equalities must be consistent with the basis
            let a = rows_matrix(basis.iter().map(|(r, _)| r.as_slice()), n);
            let b = DVector::from_iterator(basis.len(), basis.iter().map(|(_, b)| *b));
            if let Some(x) = a.clone().svd(true, true).solve(&b, RANK_TOL).ok() {
                if self.eq.iter().any(|(r, rhs)| (dot(r, x.as_slice()) - rhs).abs() > FEAS_TOL) {
                    return Vec::new();
                }
            }
        }
        let pick = n - basis.len();
        let mut out: Vec<DVector<f64>> = Vec::new();
        for subset in Combinations::new(self.le.len(), pick) {
            let rows = basis
                .iter()
                .copied()
                .chain(subset.iter().map(|&i| &self.le[i]))
                .collect::<Vec<_>>();
            let a = rows_matrix(rows.iter().map(|(r, _)| r.as_slice()), n);
            let b = DVector::from_iterator(rows.len(), rows.iter().map(|(_, b)| *b));
            let Some(x) = solve_square(a, &b) else {
                continue;
            };
            let x = x.map(|v| if v.abs() < SNAP_TOL { 0.0 } else { v });
            if !self.contains(x.as_slice(), FEAS_TOL) {
                continue;
            }
            if !out.iter().any(|v| (v - &x).amax() <= 1e-9) {
                out.push(x);
            }
        }
        out.sort_by(|a, b| lex_cmp(a.as_slice(), b.as_slice()));
        out
    }
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn rows_matrix<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> DMatrix<f64> {
    let rows: Vec<&[f64]> = rows.collect();
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

fn dot(row: &[f64], u: &[f64]) -> f64 {
    row.iter().zip(u).map(|(a, b)| a * b).sum()
}

fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    svd.singular_values
        .iter()
        .filter(|s| **s > RANK_TOL * smax.max(1.0))
        .count()
}

/// Greedy maximal linearly independent subset of `rows`, in order.
fn independent_rows(rows: &[(Vec<f64>, f64)], n: usize) -> Vec<&(Vec<f64>, f64)> {
    let mut basis: Vec<&(Vec<f64>, f64)> = Vec::new();
    for r in rows {
        let mut trial: Vec<&[f64]> = basis.iter().map(|(v, _)| v.as_slice()).collect();
        trial.push(&r.0);
        if rank(&rows_matrix(trial.into_iter(), n)) > basis.len() {
            basis.push(r);
        }
    }
    basis
}

/// Solves a square system, rejecting (near-)singular matrices.
fn solve_square(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax().max(1.0);
    let lu = a.full_piv_lu();
    let u = lu.u();
    let min_pivot = (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > RANK_TOL * scale) {
        return None;
    }
    lu.solve(b)
}

/// k-subsets of `0..n` in lexicographic order.
pub(crate) struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let current = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(current)
    }
}

/// Whether `point` lies in the convex hull of `vertices` (to `tol` in the
/// max-norm), decided by a feasibility LP over barycentric weights.
pub fn in_convex_hull(vertices: &[DVector<f64>], point: &DVector<f64>, tol: f64) -> bool {
    if vertices.is_empty() {
        return false;
    }
    let n = point.len();
    let mut lp = LinearProgram::new(Goal::Minimize);
    for _ in vertices {
        lp.add_var(0.0, 0.0, f64::INFINITY);
    }
    let m = vertices.len();
    lp.add_row(&vec![1.0; m], Sense::Eq, 1.0);
    for i in 0..n {
        let row: Vec<f64> = vertices.iter().map(|v| v[i]).collect();
        lp.add_row(&row, Sense::Le, point[i] + tol);
        lp.add_row(&row, Sense::Ge, point[i] - tol);
    }
    lp.solve().optimal().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn as_vecs(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
        v.iter().map(|x| x.as_slice().to_vec()).collect()
    }

    #[test]
    fn combinations_enumerate_all() {
        let all: Vec<_> = Combinations::new(4, 2).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 1]);
        assert_eq!(all[5], vec![2, 3]);
        assert_eq!(Combinations::new(3, 0).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
    }

    #[test]
    fn unit_square() {
        let mut h = Halfspaces::new(2);
        h.nonnegative()
            .at_most(vec![1.0, 0.0], 1.0)
            .at_most(vec![0.0, 1.0], 1.0);
        assert_eq!(
            as_vecs(&h.vertices()),
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        );
    }

    #[test]
    fn simplex_face_with_redundant_equalities() {
        let mut h = Halfspaces::new(2);
        h.nonnegative()
            .equal(vec![1.0, 1.0], 1.0)
            .equal(vec![2.0, 2.0], 2.0);
        assert_eq!(as_vecs(&h.vertices()), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn inconsistent_equalities_have_no_vertices() {
        let mut h = Halfspaces::new(1);
        h.nonnegative().equal(vec![1.0], 1.0).equal(vec![1.0], 2.0);
        assert!(h.vertices().is_empty());
    }

    #[test]
    fn hull_membership() {
        let v = vec![DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![1.0, 0.0])];
        assert!(in_convex_hull(&v, &DVector::from_vec(vec![0.5, 0.5]), 1e-10));
        assert!(!in_convex_hull(&v, &DVector::from_vec(vec![0.5, 0.6]), 1e-10));
    }
}
