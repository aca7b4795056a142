//! Sampled fluid paths.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::model::norm_l1;

/// Cumulative allocation `T`, its idle/unused-capacity companion and the
/// piecewise-constant rates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// `T(t)` at every stamp.
    pub cumulative: Vec<DVector<f64>>,
    /// `I(t) = e t - C T(t)` (work-conserving, length J) or
    /// `Y_k(t) = t - Σ_{l∈Π_k} T_l(t)` (priority, length K).
    pub idle: Vec<DVector<f64>>,
    /// Control on `[t_i, t_{i+1})`; one fewer entry than stamps.
    pub controls: Vec<DVector<f64>>,
}

/// A fluid path sampled on a strictly increasing grid starting at 0.
///
/// Between stamps the path is linear. Past the last stamp a drained path is
/// zero and any other path holds its last value.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    pub times: Vec<f64>,
    pub levels: Vec<DVector<f64>>,
    pub allocation: Option<Allocation>,
    /// First time from which the path is identically zero, if it drained.
    pub drained_at: Option<f64>,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Trajectory {
            dim,
            times: Vec::new(),
            levels: Vec::new(),
            allocation: None,
            drained_at: None,
        }
    }

    /// Path from explicit samples; `drained_at` is inferred when the last
    /// sample is zero.
    pub fn from_samples(times: Vec<f64>, levels: Vec<DVector<f64>>) -> Self {
        assert_eq!(times.len(), levels.len());
        assert!(!levels.is_empty());
        let dim = levels[0].len();
        let mut traj = Trajectory {
            dim,
            times,
            levels,
            allocation: None,
            drained_at: None,
        };
        traj.drained_at = traj.infer_drain_time(0.0);
        traj
    }

    /// Earliest stamp from which every later level has ℓ₁ norm ≤ `tol`.
    pub fn infer_drain_time(&self, tol: f64) -> Option<f64> {
        let last = self.levels.last()?;
        if norm_l1(last) > tol {
            return None;
        }
        let mut idx = self.levels.len() - 1;
        while idx > 0 && norm_l1(&self.levels[idx - 1]) <= tol {
            idx -= 1;
        }
        Some(self.times[idx])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.levels[0]
    }

    pub fn is_drained(&self) -> bool {
        self.drained_at.is_some()
    }

    /// Index `i` with `times[i] <= t < times[i+1]`, clamped to the grid.
    fn segment(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.times.len().saturating_sub(2)),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.times.len().saturating_sub(2)),
        }
    }

    fn interpolate(&self, series: &[DVector<f64>], t: f64) -> DVector<f64> {
        if series.len() == 1 {
            return series[0].clone();
        }
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        &series[i] * (1.0 - w) + &series[i + 1] * w
    }

    /// `Q(t)` with linear interpolation and the extension rule above.
    pub fn level_at(&self, t: f64) -> DVector<f64> {
        if t > self.horizon() {
            return if self.is_drained() {
                DVector::zeros(self.dim)
            } else {
                self.levels.last().cloned().unwrap_or_else(|| DVector::zeros(self.dim))
            };
        }
        self.interpolate(&self.levels, t.max(0.0))
    }

    /// `T(t)` with linear interpolation. Past the horizon the last control
    /// keeps running.
    pub fn cumulative_at(&self, t: f64) -> Option<DVector<f64>> {
        let a = self.allocation.as_ref()?;
        if t > self.horizon() {
            let last = a.cumulative.last()?.clone();
            let rate = a.controls.last().cloned().unwrap_or_else(|| DVector::zeros(self.dim));
            return Some(last + rate * (t - self.horizon()));
        }
        Some(self.interpolate(&a.cumulative, t.max(0.0)))
    }

    pub fn idle_at(&self, t: f64) -> Option<DVector<f64>> {
        let a = self.allocation.as_ref()?;
        if a.idle.is_empty() {
            return None;
        }
        if t >= self.horizon() {
            return a.idle.last().cloned();
        }
        Some(self.interpolate(&a.idle, t.max(0.0)))
    }

    /// ℓ₁ norms of the levels, stamp by stamp.
    pub fn norms(&self) -> Vec<f64> {
        self.levels.iter().map(norm_l1).collect()
    }

    /// Writes `t,Q1..QK[,T1..TK,u1..uK]` with 17 significant digits. Row `i`
    /// carries the control used from stamp `i` on; the last row repeats it.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let k = self.dim;
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|i| format!("Q{i}")));
        if self.allocation.is_some() {
            header.extend((1..=k).map(|i| format!("T{i}")));
            header.extend((1..=k).map(|i| format!("u{i}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.times[i])];
            row.extend(self.levels[i].iter().map(|v| fmt17(*v)));
            if let Some(a) = &self.allocation {
                row.extend(a.cumulative[i].iter().map(|v| fmt17(*v)));
                let u = a
                    .controls
                    .get(i)
                    .or(a.controls.last())
                    .cloned()
                    .unwrap_or_else(|| DVector::zeros(k));
                row.extend(u.iter().map(|v| fmt17(*v)));
            }
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

/// Float with 17 significant digits, so values round-trip exactly.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain() -> Trajectory {
        Trajectory::from_samples(
            vec![0.0, 1.0],
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0])],
        )
    }

    #[test]
    fn interpolation_and_zero_extension() {
        let t = drain();
        assert_eq!(t.drained_at, Some(1.0));
        assert!((t.level_at(0.25)[0] - 0.75).abs() < 1e-15);
        assert_eq!(t.level_at(3.0)[0], 0.0);
        assert_eq!(t.level_at(0.0)[0], 1.0);
    }

    #[test]
    fn csv_layout() {
        let csv = drain().to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,Q1"));
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(first, vec![0.0, 1.0]);
        assert_eq!(Trajectory::new(2).to_csv_string(), "t,Q1,Q2\n");
    }

    #[test]
    fn fmt17_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 123456.789] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }
}
