//! Linear Skorokhod problems `Z = Z₀ + θt + RY`, `Z ≥ 0`, `Y` nondecreasing
//! and increasing only when the matching component of `Z` is zero.
//!
//! A solution exists for every `θ` and `Z₀` exactly when `R` is completely-S.
//! The solver is a fixed-step projected scheme: each step applies the drift
//! and then the smallest push, supported on the components at or heading
//! for the boundary, that keeps the state nonnegative.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lp::{Goal, LinearProgram, Sense};
use crate::model::{matrix_norm_l1, norm_l1};
use crate::polytope::Combinations;
use crate::trajectory::{fmt17, Trajectory};

/// Largest dimension for which all principal submatrices are enumerated.
pub const MAX_COMPLETELY_S_DIM: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkorokhodError {
    #[error("reflection matrix is not completely-S")]
    NotCompletelyS,
    #[error("required push exceeds the control bound {bound} at t={time}")]
    PushBoundExceeded { bound: f64, time: f64 },
    #[error("completely-S check limited to dimension {MAX_COMPLETELY_S_DIM}, got {0}")]
    DimensionTooLarge(usize),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

/// Whether some `x ≥ 0` has `Rx > 0`.
pub fn is_s_matrix(r: &DMatrix<f64>) -> bool {
    let n = r.nrows();
    if n == 0 || r.ncols() != n {
        return false;
    }
    let scale = r.amax();
    if scale == 0.0 {
        return false;
    }
    let r = r / scale;
    // maximize t subject to Rx ≥ t e, x ≥ 0, Σx ≤ 1; with |R_ij| ≤ 1 the
    // optimum lies in [-1, 1], and a loose bound there invites round-off
    let mut lp = LinearProgram::new(Goal::Maximize);
    for _ in 0..n {
        lp.add_var(0.0, 0.0, f64::INFINITY);
    }
    let t = lp.add_var(1.0, -1.0, 1.0);
    for i in 0..n {
        let mut row: Vec<f64> = r.row(i).iter().copied().collect();
        row.push(-1.0);
        lp.add_row(&row, Sense::Ge, 0.0);
    }
    let mut sum = vec![1.0; n];
    sum.push(0.0);
    lp.add_row(&sum, Sense::Le, 1.0);
    // trust the returned point, not the reported objective
    lp.solve().optimal().map_or(false, |(_, x)| {
        x[t] > 1e-10 && (&r * DVector::from_column_slice(&x[..n])).min() > 1e-10
    })
}

/// Principal submatrix on the index set `idx`.
pub fn principal_submatrix(r: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| r[(idx[i], idx[j])])
}

/// Whether every nonempty principal submatrix of `R` is an S-matrix.
pub fn is_completely_s(r: &DMatrix<f64>) -> Result<bool, SkorokhodError> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(SkorokhodError::InvalidInstance(format!("matrix is {}×{}", n, r.ncols())));
    }
    if n > MAX_COMPLETELY_S_DIM {
        return Err(SkorokhodError::DimensionTooLarge(n));
    }
    for size in 1..=n {
        for idx in Combinations::new(n, size) {
            if !is_s_matrix(&principal_submatrix(r, &idx)) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Drift, reflection matrix and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LspInstance {
    pub theta: DVector<f64>,
    pub r: DMatrix<f64>,
    pub z0: DVector<f64>,
    /// Cap on the push rate; defaults to [`LspInstance::default_push_bound`].
    pub push_bound: Option<f64>,
}

impl LspInstance {
    pub fn new(theta: DVector<f64>, r: DMatrix<f64>, z0: DVector<f64>) -> Result<Self, SkorokhodError> {
        let j = theta.len();
        if r.nrows() != j || r.ncols() != j || z0.len() != j {
            return Err(SkorokhodError::InvalidInstance(format!(
                "θ has {j} entries, R is {}×{}, Z₀ has {}",
                r.nrows(),
                r.ncols(),
                z0.len()
            )));
        }
        if z0.iter().any(|z| *z < 0.0 || !z.is_finite()) {
            return Err(SkorokhodError::InvalidInstance("Z₀ must be nonnegative".into()));
        }
        if theta.iter().chain(r.iter()).any(|x| !x.is_finite()) {
            return Err(SkorokhodError::InvalidInstance("θ and R must be finite".into()));
        }
        Ok(LspInstance {
            theta,
            r,
            z0,
            push_bound: None,
        })
    }

    pub fn with_push_bound(mut self, bound: f64) -> Result<Self, SkorokhodError> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(SkorokhodError::InvalidInstance(format!("push bound must be positive, got {bound}")));
        }
        self.push_bound = Some(bound);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `10 (1 + ‖θ‖₁) κ(R)` with `κ` the ℓ₁ condition number, or `κ = 1000`
    /// when `R` is singular.
    pub fn default_push_bound(&self) -> f64 {
        let kappa = self
            .r
            .clone()
            .try_inverse()
            .map(|inv| matrix_norm_l1(&self.r) * matrix_norm_l1(&inv))
            .filter(|k| k.is_finite())
            .unwrap_or(1e3);
        10.0 * (1.0 + norm_l1(&self.theta)) * kappa
    }

    pub fn control_bound(&self) -> f64 {
        self.push_bound.unwrap_or_else(|| self.default_push_bound())
    }
}

/// `‖θ‖₁ + ‖R‖₁ M_u`, the a-priori slope bound of solver paths.
pub fn lipschitz_bound(inst: &LspInstance) -> f64 {
    norm_l1(&inst.theta) + matrix_norm_l1(&inst.r) * inst.control_bound()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LspSolution {
    pub times: Vec<f64>,
    pub z: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl LspSolution {
    /// `max ‖Z(t) - Z₀ - θt - RY(t)‖₁` over the grid.
    pub fn residual(&self, inst: &LspInstance) -> f64 {
        self.times
            .iter()
            .zip(self.z.iter().zip(&self.y))
            .map(|(t, (z, y))| norm_l1(&(z - &inst.z0 - &inst.theta * *t - &inst.r * y)))
            .fold(0.0, f64::max)
    }

    /// `Σ_j Σ_i Z_j(t_i) (Y_j(t_{i+1}) - Y_j(t_i))`.
    pub fn complementarity(&self) -> f64 {
        (1..self.times.len())
            .map(|i| self.z[i - 1].dot(&(&self.y[i] - &self.y[i - 1])))
            .sum()
    }

    pub fn is_monotone(&self) -> bool {
        self.y.windows(2).all(|w| (&w[1] - &w[0]).min() >= -1e-12)
    }

    pub fn min_level(&self) -> f64 {
        self.z.iter().map(|z| z.min()).fold(f64::INFINITY, f64::min)
    }

    /// Largest `‖ΔZ‖₁ / Δt` on the grid.
    pub fn observed_slope(&self) -> f64 {
        (1..self.times.len())
            .map(|i| norm_l1(&(&self.z[i] - &self.z[i - 1])) / (self.times[i] - self.times[i - 1]))
            .fold(0.0, f64::max)
    }

    /// `Z` as a fluid path.
    pub fn to_trajectory(&self) -> Trajectory {
        let mut t = Trajectory::from_samples(self.times.clone(), self.z.clone());
        if t.drained_at.is_some() {
            // a reflected path may leave zero again; only the grid is known
            t.drained_at = None;
        }
        t
    }

    /// Writes `t,Z1..ZJ,Y1..YJ`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let j = self.z.first().map_or(0, |z| z.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=j).map(|i| format!("Z{i}")));
        header.extend((1..=j).map(|i| format!("Y{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.times.len() {
            let row: Vec<String> = std::iter::once(self.times[i])
                .chain(self.z[i].iter().copied())
                .chain(self.y[i].iter().copied())
                .map(fmt17)
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// Solves `LSP(θ, R)` on `[0, horizon]` with step `h`.
pub fn solve_lsp(inst: &LspInstance, horizon: f64, h: f64) -> Result<LspSolution, SkorokhodError> {
    if !(h > 0.0) || !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(SkorokhodError::InvalidInstance(format!(
            "need h > 0 and a finite horizon ≥ 0, got h={h}, horizon={horizon}"
        )));
    }
    if !is_completely_s(&inst.r)? {
        return Err(SkorokhodError::NotCompletelyS);
    }
    let j = inst.dim();
    let bound = inst.control_bound();
    let eps = 1e-9 * (1.0 + norm_l1(&inst.z0));
    let steps = ((horizon / h) - 1e-9).ceil().max(0.0) as usize;
    let mut sol = LspSolution {
        times: vec![0.0],
        z: vec![inst.z0.clone()],
        y: vec![DVector::zeros(j)],
    };
    let mut z = inst.z0.clone();
    let mut y = DVector::zeros(j);
    for n in 1..=steps {
        let t0 = sol.times[n - 1];
        let t1 = if n == steps { horizon } else { n as f64 * h };
        let dt = t1 - t0;
        let free = &z + &inst.theta * dt;
        let u = minimal_push(&inst.r, &z, &free, dt, eps, bound).ok_or(SkorokhodError::PushBoundExceeded { bound, time: t0 })?;
        z = free + &inst.r * &u * dt;
        // round-off below zero on pushed or boundary components
        z.iter_mut().for_each(|v| {
            if *v < 0.0 && *v > -eps {
                *v = 0.0
            }
        });
        y += &u * dt;
        sol.times.push(t1);
        sol.z.push(z.clone());
        sol.y.push(y.clone());
    }
    Ok(sol)
}

/// Smallest push rate (ℓ₁, ties to lower indices) supported on the
/// components that are empty or would become negative, keeping
/// `free + R u dt ≥ 0`. The support grows to every component if needed.
fn minimal_push(r: &DMatrix<f64>, z: &DVector<f64>, free: &DVector<f64>, dt: f64, eps: f64, bound: f64) -> Option<DVector<f64>> {
    let j = z.len();
    if free.iter().all(|v| *v >= 0.0) {
        return Some(DVector::zeros(j));
    }
    let mut active: Vec<bool> = (0..j).map(|i| z[i] < eps || free[i] < 0.0).collect();
    loop {
        let mut lp = LinearProgram::new(Goal::Minimize);
        for i in 0..j {
            let hi = if active[i] { bound } else { 0.0 };
            lp.add_var(1.0 + 1e-9 * i as f64, 0.0, hi);
        }
        for i in 0..j {
            let row: Vec<f64> = r.row(i).iter().map(|a| a * dt).collect();
            lp.add_row(&row, Sense::Ge, -free[i]);
        }
        if let Some((_, u)) = lp.solve().optimal() {
            return Some(DVector::from_column_slice(u));
        }
        if active.iter().all(|a| *a) {
            return None;
        }
        active = vec![true; j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn s_matrix_examples() {
        assert!(is_s_matrix(&DMatrix::identity(3, 3)));
        assert!(!is_s_matrix(&m(&[&[-1.0]])));
        assert!(is_s_matrix(&m(&[&[2.0, -1.0], &[-1.0, 2.0]])));
        assert!(is_completely_s(&DMatrix::identity(6, 6)).unwrap());
        assert!(!is_completely_s(&m(&[&[1.0, 0.0], &[0.0, -1.0]])).unwrap());
        assert_eq!(
            is_completely_s(&DMatrix::identity(21, 21)),
            Err(SkorokhodError::DimensionTooLarge(21))
        );
        // S but not completely-S: a negative diagonal entry
        let r = m(&[&[-1.0, 2.0], &[0.0, 1.0]]);
        assert!(is_s_matrix(&r));
        assert!(!is_completely_s(&r).unwrap());
    }

    #[test]
    fn near_degenerate_non_s_matrix() {
        // row 1 needs x₁ > 9.86 x₂, row 2 needs x₁ < 5.56 x₂
        let r = m(&[&[0.058792892034490896, -0.5798426312410854], &[-0.24422485234628732, 1.3587102338951373]]);
        assert!(!is_s_matrix(&r));
        assert!(!is_s_matrix(&(r * 1e4)));
    }

    #[test]
    fn reflected_drain() {
        let inst = LspInstance::new(v(&[-1.0]), m(&[&[1.0]]), v(&[1.0])).unwrap();
        let h = 0.01;
        let sol = solve_lsp(&inst, 3.0, h).unwrap();
        for (t, (z, y)) in sol.times.iter().zip(sol.z.iter().zip(&sol.y)) {
            assert!((z[0] - (1.0 - t).max(0.0)).abs() <= 2.0 * h);
            assert!((y[0] - (t - 1.0).max(0.0)).abs() <= 2.0 * h);
        }
        assert!(sol.residual(&inst) < 1e-12);
        assert!(sol.is_monotone());
        assert!(sol.complementarity().abs() <= 1e-6 * 3.0);
    }

    #[test]
    fn free_motion_never_pushes() {
        let inst = LspInstance::new(v(&[1.0]), m(&[&[1.0]]), v(&[1.0])).unwrap();
        let sol = solve_lsp(&inst, 2.0, 0.1).unwrap();
        assert!(sol.y.iter().all(|y| y[0] == 0.0));
        assert!((sol.z.last().unwrap()[0] - 3.0).abs() < 1e-12);
        assert!((sol.observed_slope() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decoupled_pair() {
        let inst = LspInstance::new(v(&[-1.0, -2.0]), DMatrix::identity(2, 2), v(&[1.0, 1.0])).unwrap();
        let h = 0.02;
        let sol = solve_lsp(&inst, 2.0, h).unwrap();
        for (t, (z, y)) in sol.times.iter().zip(sol.z.iter().zip(&sol.y)) {
            assert!((z[0] - (1.0 - t).max(0.0)).abs() <= 2.0 * h);
            assert!((z[1] - (1.0 - 2.0 * t).max(0.0)).abs() <= 2.0 * h);
            assert!((y[0] - (t - 1.0).max(0.0)).abs() <= 2.0 * h);
            assert!((y[1] - 2.0 * (t - 0.5).max(0.0)).abs() <= 2.0 * h);
        }
        assert!(sol.observed_slope() <= lipschitz_bound(&inst));
    }

    #[test]
    fn lipschitz_bound_example() {
        let inst = LspInstance::new(v(&[-1.0]), m(&[&[1.0]]), v(&[1.0]))
            .unwrap()
            .with_push_bound(2.0)
            .unwrap();
        assert_eq!(lipschitz_bound(&inst), 3.0);
        let sol = solve_lsp(&inst, 2.0, 0.1).unwrap();
        assert!((sol.observed_slope() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_bad_reflection_and_small_bounds() {
        let inst = LspInstance::new(v(&[-1.0]), m(&[&[-1.0]]), v(&[1.0])).unwrap();
        assert_eq!(solve_lsp(&inst, 1.0, 0.1), Err(SkorokhodError::NotCompletelyS));
        let inst = LspInstance::new(v(&[-5.0]), m(&[&[1.0]]), v(&[0.0]))
            .unwrap()
            .with_push_bound(1.0)
            .unwrap();
        assert!(matches!(
            solve_lsp(&inst, 1.0, 0.1),
            Err(SkorokhodError::PushBoundExceeded { .. })
        ));
        assert!(LspInstance::new(v(&[1.0]), m(&[&[1.0]]), v(&[-1.0])).is_err());
    }

    #[test]
    fn coupled_reflection_keeps_invariants() {
        let r = m(&[&[1.0, -0.5], &[-0.4, 1.0]]);
        let inst = LspInstance::new(v(&[-1.0, 0.3]), r, v(&[0.5, 0.2])).unwrap();
        let sol = solve_lsp(&inst, 4.0, 0.01).unwrap();
        assert!(sol.residual(&inst) <= 1e-7 * (1.0 + 0.7));
        assert!(sol.min_level() >= 0.0);
        assert!(sol.is_monotone());
        assert!(sol.complementarity().abs() <= 1e-6 * 4.0);
    }

    #[test]
    fn csv_layout() {
        let inst = LspInstance::new(v(&[-1.0, 1.0]), DMatrix::identity(2, 2), v(&[1.0, 0.0])).unwrap();
        let csv = solve_lsp(&inst, 0.2, 0.1).unwrap().to_csv_string();
        assert_eq!(csv.lines().next(), Some("t,Z1,Z2,Y1,Y2"));
        assert_eq!(csv.lines().count(), 4);
    }
}
