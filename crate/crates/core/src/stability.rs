//! Stability verdicts from sampled draining times, and instability
//! witnesses.
//!
//! A network is stable when every path starting on the unit sphere is
//! identically zero after a common time `τ`. Only finitely many starts and
//! selectors can be tried, so `Stable` is evidence unless a verified linear
//! certificate comes with it.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{extreme_drain, ControlOption, ControlSelector, Dynamics, DynamicsError, FluidState};
use crate::lyapunov::linear_certificate_search;
use crate::model::{emptiness_threshold, norm_l1, NetworkSpec};
use crate::rng;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerdictStatus {
    Stable { tau: f64 },
    Unstable { inf_norm: f64, final_norm: f64 },
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub starts: usize,
    pub selectors: Vec<String>,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    /// Runs that did not drain within the horizon.
    pub undrained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub status: VerdictStatus,
    /// `Stable` backed by a verified linear certificate.
    pub certified: bool,
    pub evidence: Evidence,
    #[serde(skip)]
    pub witness: Option<Trajectory>,
}

impl Verdict {
    pub fn tau(&self) -> Option<f64> {
        match self.status {
            VerdictStatus::Stable { tau } => Some(tau),
            _ => None,
        }
    }

    pub fn is_unstable(&self) -> bool {
        matches!(self.status, VerdictStatus::Unstable { .. })
    }
}

/// The `K` unit vectors followed by `samples` uniform points on the unit ℓ₁
/// sphere of the orthant.
pub fn unit_sphere_starts(k: usize, samples: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..k)
        .map(|i| {
            let mut e = DVector::zeros(k);
            e[i] = 1.0;
            e
        })
        .collect();
    let support = vec![true; k];
    out.extend((0..samples).map(|i| {
        let mut r = rng::stream(seed, i as u64);
        rng::simplex_point(&mut r, &support)
    }));
    out
}

/// Budget for the instability witness search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessBudget {
    pub step: f64,
    /// Random unit-sphere starts on top of the unit vectors.
    pub samples: usize,
    /// Steps of greedy rollout used to score each vertex.
    pub lookahead: usize,
    pub seed: u64,
}

impl Default for WitnessBudget {
    fn default() -> Self {
        WitnessBudget {
            step: 0.05,
            samples: 8,
            lookahead: 20,
            seed: rng::DEFAULT_SEED,
        }
    }
}

/// Simulates from unit-sphere starts and returns `Stable` with the largest
/// drain time when everything drains, `Unstable` when an instability
/// witness is found, and `Inconclusive` otherwise.
pub fn draining_time(
    spec: &NetworkSpec,
    selectors: &[ControlSelector],
    samples: usize,
    horizon: f64,
    h: f64,
    seed: u64,
) -> Result<Verdict, DynamicsError> {
    if selectors.is_empty() {
        return Err(DynamicsError::InvalidArgument("need at least one selector".into()));
    }
    let dynamics = Dynamics::new(spec.clone());
    let starts = unit_sphere_starts(spec.num_classes(), samples, seed);
    let jobs: Vec<(&DVector<f64>, &ControlSelector)> =
        starts.iter().flat_map(|x| selectors.iter().map(move |s| (x, s))).collect();
    let drains: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|(x, s)| dynamics.simulate(x, s, horizon, h).map(|t| t.drained_at))
        .collect::<Result<_, _>>()?;
    let undrained = drains.iter().filter(|d| d.is_none()).count();
    let evidence = Evidence {
        starts: starts.len(),
        selectors: selectors.iter().map(|s| s.label()).collect(),
        horizon,
        step: h,
        seed,
        undrained,
    };
    if undrained == 0 {
        let tau = drains.iter().flatten().copied().fold(0.0, f64::max);
        log::debug!("all {} runs drained, τ = {tau}", drains.len());
        return Ok(Verdict {
            status: VerdictStatus::Stable { tau },
            certified: linear_certificate_search(spec).is_verified(),
            evidence,
            witness: None,
        });
    }
    let budget = WitnessBudget {
        step: h,
        samples,
        seed,
        ..Default::default()
    };
    match instability_witness(spec, horizon, &budget)? {
        Some(w) => {
            let norms = w.norms();
            Ok(Verdict {
                status: VerdictStatus::Unstable {
                    inf_norm: norms.iter().copied().fold(f64::INFINITY, f64::min),
                    final_norm: *norms.last().expect("nonempty witness"),
                },
                certified: false,
                evidence,
                witness: Some(w),
            })
        }
        None => Ok(Verdict {
            status: VerdictStatus::Inconclusive,
            certified: false,
            evidence,
            witness: None,
        }),
    }
}

fn inf_norm(traj: &Trajectory) -> f64 {
    traj.norms().into_iter().fold(f64::INFINITY, f64::min)
}

/// Searches for a path from the unit sphere whose norm never drops below its
/// initial value 1 on `[0, horizon]`.
///
/// Each start is tried with the fixed selectors and with a receding-horizon
/// policy that picks the vertex whose greedy slowest-drain continuation keeps
/// the norm highest over the next `lookahead` steps.
pub fn instability_witness(spec: &NetworkSpec, horizon: f64, budget: &WitnessBudget) -> Result<Option<Trajectory>, DynamicsError> {
    let dynamics = Dynamics::new(spec.clone());
    let selectors = [
        ControlSelector::MinDrain,
        ControlSelector::FirstVertex,
        ControlSelector::MaxDrain,
    ];
    for x in unit_sphere_starts(spec.num_classes(), budget.samples, budget.seed) {
        let mut best: Option<(f64, Trajectory)> = None;
        let mut consider = |traj: Trajectory| {
            let inf = inf_norm(&traj);
            if best.as_ref().map_or(true, |(b, _)| inf > *b) {
                best = Some((inf, traj));
            }
        };
        for s in &selectors {
            consider(dynamics.simulate(&x, s, horizon, budget.step)?);
        }
        consider(keep_high_policy(&dynamics, &x, horizon, budget)?);
        if let Some((inf, traj)) = best {
            if inf >= 1.0 - 1e-6 {
                return Ok(Some(traj));
            }
        }
    }
    Ok(None)
}

fn keep_high_policy(dynamics: &Dynamics, x: &DVector<f64>, horizon: f64, budget: &WitnessBudget) -> Result<Trajectory, DynamicsError> {
    let eps = emptiness_threshold(x);
    let mut failure = None;
    let traj = dynamics.run(FluidState::at(x.clone()), eps, horizon, budget.step, |state, options| {
        if options.len() == 1 {
            return 0;
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, opt) in options.iter().enumerate() {
            match lookahead_min(dynamics, &state.q, opt, budget, eps) {
                Ok(s) if s > best_score + 1e-12 => {
                    best = i;
                    best_score = s;
                }
                Ok(_) => {}
                Err(e) => failure = Some(e),
            }
        }
        best
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Smallest norm over one step of `opt` and a greedy continuation.
fn lookahead_min(dynamics: &Dynamics, q: &DVector<f64>, opt: &ControlOption, budget: &WitnessBudget, eps: f64) -> Result<f64, DynamicsError> {
    let mut state = FluidState::at(q.clone());
    dynamics.step(&mut state, opt, budget.step, eps);
    let mut low = norm_l1(&state.q);
    for _ in 0..budget.lookahead {
        let empty = dynamics.spec().empty_classes(&state.q, eps);
        let options = dynamics.options(&empty)?;
        let o = &options[extreme_drain(&options, false)];
        dynamics.step(&mut state, o, budget.step, eps);
        low = low.min(norm_l1(&state.q));
    }
    Ok(low)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCheck {
    pub selector: String,
    pub start: Vec<f64>,
    pub r: f64,
    pub base_drain: f64,
    pub scaled_drain: f64,
    pub passed: bool,
}

/// For each unit vector, deterministic selector of the verdict and `r`,
/// checks that the drain time from `r·x` is `r` times the drain time from
/// `x`, within `2h`.
pub fn scale_invariance_check(verdict: &Verdict, spec: &NetworkSpec, r_list: &[f64]) -> Result<Vec<ScaleCheck>, DynamicsError> {
    if verdict.tau().is_none() {
        return Err(DynamicsError::InvalidArgument("scale check needs a stable verdict".into()));
    }
    let h = verdict.evidence.step;
    let dynamics = Dynamics::new(spec.clone());
    let selectors: Vec<ControlSelector> = verdict
        .evidence
        .selectors
        .iter()
        .filter_map(|s| ControlSelector::parse(s))
        .filter(|s| !matches!(s, ControlSelector::RandomVertex(_)))
        .collect();
    let mut out = Vec::new();
    for x in unit_sphere_starts(spec.num_classes(), 0, 0) {
        for s in &selectors {
            let horizon = verdict.evidence.horizon;
            let base = dynamics.simulate(&x, s, horizon, h)?.drained_at;
            for &r in r_list {
                let scaled = dynamics.simulate(&(&x * r), s, horizon * r.max(1.0), h)?.drained_at;
                let (b, sc) = (base.unwrap_or(f64::INFINITY), scaled.unwrap_or(f64::INFINITY));
                out.push(ScaleCheck {
                    selector: s.label(),
                    start: x.as_slice().to_vec(),
                    r,
                    base_drain: b,
                    scaled_drain: sc,
                    passed: (sc - r * b).abs() <= 2.0 * h,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ensemble() -> Vec<ControlSelector> {
        ControlSelector::ensemble(1, 2)
    }

    #[test]
    fn single_queue_verdicts() {
        let v = draining_time(&fixtures::single_queue(0.0), &ensemble(), 4, 20.0, 0.05, 1).unwrap();
        assert!((v.tau().unwrap() - 1.0).abs() < 1e-9);
        assert!(v.certified);
        let v = draining_time(&fixtures::single_queue(0.5), &ensemble(), 4, 20.0, 0.05, 1).unwrap();
        assert!((v.tau().unwrap() - 2.0).abs() < 1e-9);
        let v = draining_time(&fixtures::single_queue(2.0), &ensemble(), 4, 20.0, 0.05, 1).unwrap();
        assert!(v.is_unstable());
        let w = v.witness.unwrap();
        // grows linearly: ‖Q(t)‖ = 1 + t
        assert!((w.levels.last().unwrap()[0] - 21.0).abs() < 1e-9);
    }

    #[test]
    fn witness_search_examples() {
        let b = WitnessBudget::default();
        assert!(instability_witness(&fixtures::single_queue(2.0), 10.0, &b).unwrap().is_some());
        assert!(instability_witness(&fixtures::single_queue(0.0), 10.0, &b).unwrap().is_none());
    }

    #[test]
    fn scale_invariance() {
        let spec = fixtures::tandem();
        let v = draining_time(&spec, &ensemble(), 4, 50.0, 0.05, 1).unwrap();
        let checks = scale_invariance_check(&v, &spec, &[0.5, 1.0, 2.0]).unwrap();
        assert!(!checks.is_empty());
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
        let q = fixtures::single_queue(0.0);
        let v = draining_time(&q, &ensemble(), 0, 10.0, 0.05, 1).unwrap();
        let c = scale_invariance_check(&v, &q, &[2.0]).unwrap();
        assert!((c[0].scaled_drain - 2.0).abs() < 1e-9);
    }

    #[test]
    fn verdict_json_is_flat() {
        let v = draining_time(&fixtures::single_queue(0.0), &ensemble(), 1, 5.0, 0.1, 7).unwrap();
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["status"], "stable");
        assert_eq!(json["tau"], 1.0);
        assert_eq!(json["evidence"]["seed"], 7);
    }
}
