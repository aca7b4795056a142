//! Path algebra for generic fluid network models.
//!
//! Paths are finite samples; equality and u.o.c. convergence are judged on
//! `[0, T]` with zero extension after drain. Closedness of a family cannot
//! be decided from samples, so only finite witnesses are checked here.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{flow_balance_residual, ControlSelector, Dynamics, DynamicsError};
use crate::model::{norm_l1, NetworkSpec};
use crate::trajectory::{Allocation, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GfnError {
    #[error("scale factor must be positive, got {0}")]
    NonpositiveScale(f64),
    #[error("time {time} lies beyond the path horizon {horizon}")]
    ShiftBeyondHorizon { time: f64, horizon: f64 },
    #[error("paths do not meet: ‖Q₁(t*) - Q₂(0)‖₁ = {gap:e}")]
    EndpointMismatch { gap: f64 },
    #[error("unknown fixture family `{0}`")]
    UnknownFixture(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// `t ↦ Q(rt)/r`, with `T` and the idle process rescaled the same way.
pub fn scale(traj: &Trajectory, r: f64) -> Result<Trajectory, GfnError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(GfnError::NonpositiveScale(r));
    }
    let mut out = traj.clone();
    out.times.iter_mut().for_each(|t| *t /= r);
    out.levels.iter_mut().for_each(|q| *q /= r);
    if let Some(a) = out.allocation.as_mut() {
        a.cumulative.iter_mut().for_each(|x| *x /= r);
        a.idle.iter_mut().for_each(|x| *x /= r);
    }
    out.drained_at = traj.drained_at.map(|d| d / r);
    Ok(out)
}

/// Grid points strictly after `s` (by more than a relative 1e-12).
fn first_after(times: &[f64], s: f64) -> usize {
    let tol = 1e-12 * (1.0 + s.abs());
    times.partition_point(|t| *t <= s + tol)
}

/// `t ↦ Q(s + t)`, with `T` and the idle process restarted at zero.
pub fn shift(traj: &Trajectory, s: f64) -> Result<Trajectory, GfnError> {
    let horizon = traj.horizon();
    if !(s >= 0.0) || s > horizon * (1.0 + 1e-12) + 1e-12 {
        return Err(GfnError::ShiftBeyondHorizon { time: s, horizon });
    }
    let s = s.min(horizon);
    let start = first_after(&traj.times, s);
    let mut out = Trajectory::new(traj.dim());
    out.times.push(0.0);
    out.levels.push(traj.level_at(s));
    for i in start..traj.len() {
        out.times.push(traj.times[i] - s);
        out.levels.push(traj.levels[i].clone());
    }
    if let Some(a) = &traj.allocation {
        let t0 = traj.cumulative_at(s).expect("allocation present");
        let i0 = traj.idle_at(s);
        let mut cumulative = vec![DVector::zeros(traj.dim())];
        let mut idle = Vec::new();
        if let Some(i0) = &i0 {
            idle.push(DVector::zeros(i0.len()));
        }
        let mut controls = Vec::new();
        if start > 0 && start <= a.controls.len() {
            controls.push(a.controls[start - 1].clone());
        }
        for i in start..traj.len() {
            cumulative.push(&a.cumulative[i] - &t0);
            if let Some(i0) = &i0 {
                idle.push(&a.idle[i] - i0);
            }
            if i < a.controls.len() {
                controls.push(a.controls[i].clone());
            }
        }
        controls.truncate(out.times.len().saturating_sub(1));
        out.allocation = Some(Allocation {
            cumulative,
            idle,
            controls,
        });
    }
    out.drained_at = traj.drained_at.map(|d| (d - s).max(0.0));
    Ok(out)
}

/// `Q₁ ⋄_{t*} Q₂`: `Q₁` up to `t*`, then `Q₂(· - t*)`.
pub fn concatenate(first: &Trajectory, t_star: f64, second: &Trajectory) -> Result<Trajectory, GfnError> {
    let horizon = first.horizon();
    if !(t_star >= 0.0) || t_star > horizon * (1.0 + 1e-12) + 1e-12 {
        return Err(GfnError::ShiftBeyondHorizon { time: t_star, horizon });
    }
    let t_star = t_star.min(horizon);
    let meet = first.level_at(t_star);
    let gap = norm_l1(&(&meet - second.initial()));
    if gap > 1e-8 * (1.0 + norm_l1(&meet)) {
        return Err(GfnError::EndpointMismatch { gap });
    }
    let cut = first_after(&first.times, t_star);
    let keep = cut.min(first.len());
    // stamps of `first` strictly before t*, then t* itself
    let before = first.times[..keep]
        .iter()
        .take_while(|t| **t < t_star - 1e-12 * (1.0 + t_star))
        .count();
    let mut out = Trajectory::new(first.dim());
    out.times.extend_from_slice(&first.times[..before]);
    out.levels.extend(first.levels[..before].iter().cloned());
    out.times.push(t_star);
    out.levels.push(meet);
    for i in 1..second.len() {
        out.times.push(t_star + second.times[i]);
        out.levels.push(second.levels[i].clone());
    }
    if let (Some(a1), Some(a2)) = (&first.allocation, &second.allocation) {
        let t_cut = first.cumulative_at(t_star).expect("allocation present");
        let i_cut = first.idle_at(t_star);
        let mut cumulative: Vec<DVector<f64>> = a1.cumulative[..before].to_vec();
        cumulative.push(t_cut.clone());
        let mut idle: Vec<DVector<f64>> = a1.idle[..before.min(a1.idle.len())].to_vec();
        if let Some(ic) = &i_cut {
            idle.push(ic.clone());
        }
        let mut controls: Vec<DVector<f64>> = a1.controls[..before.min(a1.controls.len())].to_vec();
        for i in 1..second.len() {
            cumulative.push(&t_cut + &a2.cumulative[i]);
            if let (Some(ic), Some(y)) = (&i_cut, a2.idle.get(i)) {
                idle.push(ic + y);
            }
        }
        controls.extend(a2.controls.iter().cloned());
        controls.truncate(out.times.len().saturating_sub(1));
        out.allocation = Some(Allocation {
            cumulative,
            idle,
            controls,
        });
    }
    out.drained_at = second.drained_at.map(|d| t_star + d);
    Ok(out)
}

/// `sup_{t∈[0,T]} ‖Q₁(t) - Q₂(t)‖₁`, exact for piecewise-linear paths.
pub fn uoc_distance(a: &Trajectory, b: &Trajectory, horizon: f64) -> f64 {
    let mut grid: Vec<f64> = a
        .times
        .iter()
        .chain(&b.times)
        .copied()
        .chain(a.drained_at)
        .chain(b.drained_at)
        .filter(|t| *t <= horizon)
        .collect();
    grid.push(0.0);
    grid.push(horizon);
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup();
    grid.iter()
        .map(|&t| norm_l1(&(a.level_at(t) - b.level_at(t))))
        .fold(0.0, f64::max)
}

/// `max ‖ΔQ‖₁ / Δt` over consecutive stamps.
pub fn lipschitz_estimate(traj: &Trajectory) -> f64 {
    (1..traj.len())
        .filter_map(|i| {
            let dt = traj.times[i] - traj.times[i - 1];
            (dt > 0.0).then(|| norm_l1(&(&traj.levels[i] - &traj.levels[i - 1])) / dt)
        })
        .fold(0.0, f64::max)
}

/// The two closed-form families that show where the general framework
/// breaks down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExplicitFamily {
    /// Coordinatewise drains `(x_i - t)⁺` plus diagonal paths
    /// `(c - t/2)⁺·(1, 1)`; the total-fluid functional is not lower
    /// semicontinuous at the diagonal.
    LscCounterexample,
    /// Exchange paths that move fluid from one class to the other before
    /// draining; no two of them concatenate inside the family.
    ConcatCounterexample,
}

impl ExplicitFamily {
    pub fn from_name(name: &str) -> Result<Self, GfnError> {
        match name {
            "lsc_counterexample" => Ok(ExplicitFamily::LscCounterexample),
            "concat_counterexample" => Ok(ExplicitFamily::ConcatCounterexample),
            other => Err(GfnError::UnknownFixture(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExplicitFamily::LscCounterexample => "lsc_counterexample",
            ExplicitFamily::ConcatCounterexample => "concat_counterexample",
        }
    }

    /// Common Lipschitz constant (ℓ₁) of every path in the family.
    pub fn lipschitz_bound(&self) -> f64 {
        2.0
    }

    /// Every family path through `x` (the family is defined on ℝ²₊).
    pub fn paths_from(&self, x: &DVector<f64>) -> Vec<Trajectory> {
        assert_eq!(x.len(), 2, "explicit families live in two dimensions");
        let (x1, x2) = (x[0].max(0.0), x[1].max(0.0));
        let mut out: Vec<Trajectory> = match self {
            ExplicitFamily::LscCounterexample => {
                let mut v = vec![sample_closed_form(&[x1, x2, x1.max(x2)], |t| {
                    [(x1 - t).max(0.0), (x2 - t).max(0.0)]
                })];
                if (x1 - x2).abs() <= 1e-12 * (1.0 + x1) {
                    let c = 0.5 * (x1 + x2);
                    v.push(sample_closed_form(&[2.0 * c], |t| {
                        let y = (c - 0.5 * t).max(0.0);
                        [y, y]
                    }));
                }
                v
            }
            ExplicitFamily::ConcatCounterexample => {
                let end = x1 + x2;
                vec![
                    sample_closed_form(&[x1, end], |t| {
                        if t <= x1 {
                            [x1 - t, x2 + t]
                        } else {
                            [0.0, (end - t).max(0.0)]
                        }
                    }),
                    sample_closed_form(&[x2, end], |t| {
                        if t <= x2 {
                            [x1 + t, x2 - t]
                        } else {
                            [(end - t).max(0.0), 0.0]
                        }
                    }),
                ]
            }
        };
        // identical paths collapse (e.g. at the origin)
        let mut unique: Vec<Trajectory> = Vec::new();
        for p in out.drain(..) {
            let h = p.horizon().max(1.0);
            if !unique.iter().any(|u| uoc_distance(u, &p, h.max(u.horizon())) <= 1e-12) {
                unique.push(p);
            }
        }
        unique
    }

    /// Whether `traj` coincides on its horizon with a family path from its
    /// own initial state.
    pub fn contains(&self, traj: &Trajectory, tol: f64) -> bool {
        self.paths_from(traj.initial()).iter().any(|p| {
            let h = traj.horizon().max(p.horizon());
            uoc_distance(p, traj, h) <= tol
        })
    }
}

/// Samples a piecewise-linear closed form at 0 and its breakpoints.
fn sample_closed_form<F: Fn(f64) -> [f64; 2]>(breaks: &[f64], f: F) -> Trajectory {
    let mut times: Vec<f64> = std::iter::once(0.0)
        .chain(breaks.iter().copied().filter(|t| *t > 0.0))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let levels = times.iter().map(|&t| DVector::from_row_slice(&f(t))).collect();
    Trajectory::from_samples(times, levels)
}

/// How a family produces paths.
#[derive(Debug, Clone)]
pub enum FamilyKind {
    NetworkGenerated {
        dynamics: Arc<Dynamics>,
        selectors: Vec<ControlSelector>,
        horizon: f64,
        step: f64,
    },
    Explicit(ExplicitFamily),
}

/// A set of paths indexed by initial state.
#[derive(Debug, Clone)]
pub struct PathFamily {
    pub kind: FamilyKind,
    /// Common Lipschitz constant of the family.
    pub lipschitz: f64,
}

impl PathFamily {
    pub fn network(spec: NetworkSpec, selectors: Vec<ControlSelector>, horizon: f64, step: f64) -> Self {
        let lipschitz = spec.lipschitz_constant();
        PathFamily {
            kind: FamilyKind::NetworkGenerated {
                dynamics: Arc::new(Dynamics::new(spec)),
                selectors,
                horizon,
                step,
            },
            lipschitz,
        }
    }

    pub fn explicit(family: ExplicitFamily) -> Self {
        PathFamily {
            lipschitz: family.lipschitz_bound(),
            kind: FamilyKind::Explicit(family),
        }
    }

    pub fn paths_from(&self, x: &DVector<f64>) -> Result<Vec<Trajectory>, GfnError> {
        match &self.kind {
            FamilyKind::Explicit(f) => Ok(f.paths_from(x)),
            FamilyKind::NetworkGenerated {
                dynamics,
                selectors,
                horizon,
                step,
            } => selectors
                .iter()
                .map(|s| dynamics.simulate(x, s, *horizon, *step).map_err(GfnError::from))
                .collect(),
        }
    }
}

/// Looks up a closed-form fixture family by name.
pub fn example_family(name: &str) -> Result<PathFamily, GfnError> {
    ExplicitFamily::from_name(name).map(PathFamily::explicit)
}

/// Result of splicing family paths at interior meeting points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConcatenationReport {
    /// Splices tried (second path distinct from the first one's own tail).
    pub candidates: usize,
    /// Splices that turned out to be family members.
    pub members: usize,
    /// Splices of a path with its own continuation (always members).
    pub trivial: usize,
}

/// For every start, family path and cut time with an interior meeting state
/// `z`, splices the path with every *other* family path from `z` and checks
/// membership of the result.
pub fn concatenation_search(
    family: ExplicitFamily,
    starts: &[DVector<f64>],
    cut_fractions: &[f64],
    tol: f64,
) -> ConcatenationReport {
    let mut report = ConcatenationReport::default();
    for x in starts {
        for path in family.paths_from(x) {
            let end = path.drained_at.unwrap_or(path.horizon());
            for &frac in cut_fractions {
                let t_star = frac * end;
                let z = path.level_at(t_star);
                if z.iter().any(|v| *v <= tol) {
                    continue;
                }
                let tail = shift(&path, t_star).expect("cut inside the horizon");
                for other in family.paths_from(&z) {
                    let h = tail.horizon().max(other.horizon());
                    let spliced = concatenate(&path, t_star, &other).expect("paths meet at z");
                    if uoc_distance(&other, &tail, h) <= tol {
                        report.trivial += 1;
                        debug_assert!(family.contains(&spliced, tol));
                        continue;
                    }
                    report.candidates += 1;
                    if family.contains(&spliced, tol) {
                        report.members += 1;
                    }
                }
            }
        }
    }
    report
}

/// One randomized closure check for a network-generated path.
#[derive(Debug, Clone, PartialEq)]
pub enum AxiomCase {
    Scale(f64),
    Shift(f64),
    /// Splice at `t_star` with a fresh path from `Q(t_star)`.
    Concatenate { t_star: f64, selector: ControlSelector },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomOutcome {
    pub flow_balance: f64,
    pub lipschitz: f64,
    pub min_level: f64,
}

/// Applies `case` to `traj` and measures the result against the network
/// equations.
pub fn check_axiom(
    dynamics: &Dynamics,
    traj: &Trajectory,
    case: &AxiomCase,
    horizon: f64,
    step: f64,
) -> Result<AxiomOutcome, GfnError> {
    let spec = dynamics.spec();
    let out = match case {
        AxiomCase::Scale(r) => scale(traj, *r)?,
        AxiomCase::Shift(s) => shift(traj, *s)?,
        AxiomCase::Concatenate { t_star, selector } => {
            let z = traj.level_at(*t_star);
            let second = dynamics.simulate(&z, selector, horizon, step)?;
            concatenate(traj, *t_star, &second)?
        }
    };
    let min_level = out
        .levels
        .iter()
        .map(|q| q.min())
        .fold(f64::INFINITY, f64::min);
    Ok(AxiomOutcome {
        flow_balance: flow_balance_residual(spec, &out)?,
        lipschitz: lipschitz_estimate(&out),
        min_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::check_trajectory;
    use crate::fixtures;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn ramp(x0: f64, slope: f64) -> Trajectory {
        let end = x0 / slope;
        Trajectory::from_samples(vec![0.0, end], vec![v(&[x0]), v(&[0.0])])
    }

    #[test]
    fn scale_examples() {
        let q = ramp(1.0, 1.0);
        let s = scale(&q, 2.0).unwrap();
        for t in [0.0, 0.1, 0.25, 0.5, 1.0] {
            assert!((s.level_at(t)[0] - (0.5 - t).max(0.0)).abs() < 1e-15);
        }
        assert_eq!(scale(&q, 1.0).unwrap(), q);
        let q = ramp(2.0, 0.5);
        let s = scale(&q, 0.5).unwrap();
        // Q_r(t) = Q(t/2)·2 = 2·(2 - t/4)⁺
        for t in [0.0, 2.0, 4.0, 6.0, 8.0] {
            assert!((s.level_at(t)[0] - 2.0 * (2.0 - 0.25 * t).max(0.0)).abs() < 1e-12);
        }
        assert_eq!(s.level_at(0.0)[0], 4.0);
        assert_eq!(s.drained_at, Some(8.0));
        assert!(matches!(scale(&q, 0.0), Err(GfnError::NonpositiveScale(_))));
    }

    #[test]
    fn shift_examples() {
        let q = ramp(1.0, 1.0);
        assert_eq!(shift(&q, 0.0).unwrap().levels, q.levels);
        let s = shift(&q, 0.5).unwrap();
        for t in [0.0, 0.25, 0.5, 0.75] {
            assert!((s.level_at(t)[0] - (0.5 - t).max(0.0)).abs() < 1e-15);
        }
        let s = shift(&q, 1.0).unwrap();
        assert_eq!(s.level_at(0.0)[0], 0.0);
        assert_eq!(s.level_at(2.0)[0], 0.0);
        assert!(matches!(shift(&q, 1.5), Err(GfnError::ShiftBeyondHorizon { .. })));
    }

    #[test]
    fn concatenate_examples() {
        let zero = Trajectory::from_samples(vec![0.0, 2.0], vec![v(&[0.0]), v(&[0.0])]);
        let z = concatenate(&zero, 1.0, &zero).unwrap();
        assert!(z.levels.iter().all(|q| q[0] == 0.0));

        let q1 = ramp(1.0, 1.0);
        let q2 = ramp(0.5, 1.0);
        let c = concatenate(&q1, 0.5, &q2).unwrap();
        assert!(uoc_distance(&c, &q1, 2.0) < 1e-15);
        assert!(matches!(
            concatenate(&q1, 0.2, &q2),
            Err(GfnError::EndpointMismatch { .. })
        ));
    }

    #[test]
    fn exchange_paths_splice_at_the_meeting_state() {
        let fam = ExplicitFamily::ConcatCounterexample;
        let q1 = fam.paths_from(&v(&[1.0, 1.0])).remove(0);
        assert_eq!(q1.level_at(1.0), v(&[0.0, 2.0]));
        let from = fam.paths_from(&v(&[0.0, 2.0]));
        let c = concatenate(&q1, 1.0, &from[1]).unwrap();
        assert!(c.levels.iter().all(|q| q.min() >= 0.0));
        assert!(lipschitz_estimate(&c) <= 2.0 + 1e-12);
    }

    #[test]
    fn uoc_distance_examples() {
        let a = ramp(1.0, 1.0);
        assert_eq!(uoc_distance(&a, &a, 2.0), 0.0);
        let b = ramp(1.1, 1.0);
        assert!((uoc_distance(&a, &b, 2.0) - 0.1).abs() < 1e-12);

        // coordinatewise path from x_n vs diagonal path from x_0, n = 10
        let fam = ExplicitFamily::LscCounterexample;
        let diag = fam.paths_from(&v(&[1.0, 1.0]))[1].clone();
        let coord = fam.paths_from(&v(&[1.1, 0.9]))[0].clone();
        // oracle on a fine grid
        let mut oracle: f64 = 0.0;
        for i in 0..=20_000 {
            let t = 2.0 * i as f64 / 20_000.0;
            let d = (1.0 - 0.5 * t).max(0.0);
            oracle = oracle.max(((1.1 - t).max(0.0) - d).abs() + ((0.9 - t).max(0.0) - d).abs());
        }
        let d = uoc_distance(&coord, &diag, 2.0);
        assert!((d - oracle).abs() < 1e-9);
        // coordinatewise paths from x_0 and x_n differ by 0.1·2 at t=0... but
        // the displayed sup is between the coordinatewise paths:
        let c0 = fam.paths_from(&v(&[1.0, 1.0]))[0].clone();
        assert!((uoc_distance(&coord, &c0, 2.0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_examples() {
        assert!((lipschitz_estimate(&ramp(1.0, 1.0)) - 1.0).abs() < 1e-15);
        let zero = Trajectory::from_samples(vec![0.0, 1.0], vec![v(&[0.0]), v(&[0.0])]);
        assert_eq!(lipschitz_estimate(&zero), 0.0);
        let both = Trajectory::from_samples(vec![0.0, 1.0], vec![v(&[1.0, 1.0]), v(&[0.0, 0.0])]);
        assert_eq!(lipschitz_estimate(&both), 2.0);
    }

    #[test]
    fn lsc_family_membership() {
        let fam = ExplicitFamily::LscCounterexample;
        let at_diag = fam.paths_from(&v(&[1.0, 1.0]));
        assert_eq!(at_diag.len(), 2);
        assert!((at_diag[1].level_at(1.0) - v(&[0.5, 0.5])).amax() < 1e-15);
        let off = fam.paths_from(&v(&[1.5, 0.5]));
        assert_eq!(off.len(), 1);
        assert!((off[0].level_at(0.25) - v(&[1.25, 0.25])).amax() < 1e-15);
        assert!(example_family("nope").is_err());
        assert!(example_family("lsc_counterexample").is_ok());
    }

    #[test]
    fn network_paths_are_closed_under_the_axioms() {
        let d = Dynamics::new(fixtures::reentrant_line());
        let traj = d.simulate(&v(&[0.5, 0.3, 0.2]), &ControlSelector::MinDrain, 10.0, 0.05).unwrap();
        let cases = [
            AxiomCase::Scale(0.3),
            AxiomCase::Scale(4.0),
            AxiomCase::Shift(0.77),
            AxiomCase::Concatenate {
                t_star: 0.61,
                selector: ControlSelector::RandomVertex(5),
            },
        ];
        let l = d.spec().lipschitz_constant();
        for case in &cases {
            let o = check_axiom(&d, &traj, case, 10.0, 0.05).unwrap();
            assert!(o.flow_balance < 1e-9, "{case:?}: {}", o.flow_balance);
            assert!(o.lipschitz <= l + 1e-9);
            assert!(o.min_level >= -1e-12);
        }
        let spliced = {
            let z = traj.level_at(0.61);
            let second = d.simulate(&z, &ControlSelector::MaxDrain, 10.0, 0.05).unwrap();
            concatenate(&traj, 0.61, &second).unwrap()
        };
        check_trajectory(d.spec(), &spliced).unwrap();
        check_trajectory(d.spec(), &shift(&traj, 1.3).unwrap()).unwrap();
        check_trajectory(d.spec(), &scale(&traj, 2.5).unwrap()).unwrap();
    }
}
