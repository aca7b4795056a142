//! The converse Lyapunov function `V(x) = sup ∫₀^∞ ‖Q(s)‖₁ ds`, its
//! comparison functions, and linear, piecewise-linear and quadratic drift
//! certificates.
//!
//! `V` is a supremum over all paths and cannot be computed in general. For
//! network-generated families [`approximate_v`] returns the best value found
//! by a receding-horizon search, which is a lower bound.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{extreme_drain, ControlOption, Dynamics, DynamicsError, FluidState};
use crate::gfn::{concatenate, FamilyKind, GfnError, PathFamily};
use crate::lp::{Goal, LinearProgram, Sense};
use crate::model::{emptiness_threshold, norm_l1, NetworkSpec};
use crate::rng;
use crate::trajectory::Trajectory;

/// Lower bound on the entries of a linear certificate and on a verified
/// drift margin.
pub const CERT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("invalid search budget: {0}")]
    InvalidBudget(String),
    #[error("invalid certificate candidate: {0}")]
    InvalidCandidate(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Gfn(#[from] GfnError),
}

/// `∫ ‖Q‖₁` over a sampled path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidIntegral {
    pub value: f64,
    /// The path did not drain, so `value` only covers the horizon and is a
    /// lower bound.
    pub truncated: bool,
}

/// `∫₀^∞ ‖Q(s)‖₁ ds`, exact for piecewise-linear nonnegative paths.
pub fn total_fluid(traj: &Trajectory) -> FluidIntegral {
    v_functional(traj, 0.0)
}

/// `v(t) = ∫_t^∞ ‖Q(s)‖₁ ds`.
pub fn v_functional(traj: &Trajectory, t: f64) -> FluidIntegral {
    let truncated = !traj.is_drained();
    if t >= traj.horizon() {
        return FluidIntegral { value: 0.0, truncated };
    }
    let start = traj.times.partition_point(|s| *s <= t);
    let mut prev_t = t;
    let mut prev = norm_l1(&traj.level_at(t));
    let mut value = 0.0;
    for i in start..traj.len() {
        let n = norm_l1(&traj.levels[i]);
        value += 0.5 * (prev + n) * (traj.times[i] - prev_t);
        prev_t = traj.times[i];
        prev = n;
    }
    FluidIntegral { value, truncated }
}

/// A class-𝒦 function of the norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComparisonFn {
    /// `r ↦ c r²`.
    Quadratic(f64),
    /// `r ↦ c r`.
    Linear(f64),
    /// Piecewise-linear interpolation of `(r, w)` pairs starting at `(0, 0)`,
    /// extended linearly past the last pair.
    Table(Vec<(f64, f64)>),
}

impl ComparisonFn {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            ComparisonFn::Quadratic(c) => c * r * r,
            ComparisonFn::Linear(c) => c * r,
            ComparisonFn::Table(pts) => {
                let mut prev = (0.0, 0.0);
                for &(x, y) in pts {
                    if r <= x {
                        return prev.1 + (y - prev.1) * (r - prev.0) / (x - prev.0);
                    }
                    prev = (x, y);
                }
                match pts.len() {
                    0 => 0.0,
                    1 => prev.1 * r / prev.0,
                    n => {
                        let (x0, y0) = pts[n - 2];
                        prev.1 + (prev.1 - y0) / (prev.0 - x0) * (r - prev.0)
                    }
                }
            }
        }
    }

    /// Continuity, strict monotonicity and `w(0) = 0` on `grid`.
    pub fn is_class_k(&self, grid: &[f64]) -> bool {
        if self.eval(0.0) != 0.0 {
            return false;
        }
        let mut pts: Vec<f64> = grid.iter().copied().filter(|r| *r >= 0.0).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts.windows(2).all(|w| self.eval(w[1]) > self.eval(w[0]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTriple {
    pub w1: ComparisonFn,
    pub w2: ComparisonFn,
    pub w3: ComparisonFn,
}

/// `w₁(r) = r²/(2L)`, `w₂(r) = r²(1 + Lτ)τ`, `w₃(r) = r`.
pub fn comparison_functions(l: f64, tau: f64) -> Result<ComparisonTriple, LyapunovError> {
    if !(l > 0.0) || !(tau > 0.0) {
        return Err(LyapunovError::InvalidBudget(format!(
            "comparison functions need L > 0 and τ > 0, got L={l}, τ={tau}"
        )));
    }
    Ok(ComparisonTriple {
        w1: ComparisonFn::Quadratic(1.0 / (2.0 * l)),
        w2: ComparisonFn::Quadratic((1.0 + l * tau) * tau),
        w3: ComparisonFn::Linear(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichViolation {
    pub state: Vec<f64>,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub checked: usize,
    pub violations: Vec<SandwichViolation>,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `w₁(‖x‖₁) ≤ V(x) ≤ w₂(‖x‖₁)` for every `(x, V(x))` pair.
pub fn check_sandwich(values: &[(DVector<f64>, f64)], triple: &ComparisonTriple) -> SandwichReport {
    let violations = values
        .iter()
        .filter_map(|(x, v)| {
            let r = norm_l1(x);
            let (lower, upper) = (triple.w1.eval(r), triple.w2.eval(r));
            let slack = 1e-9 * (1.0 + v.abs());
            (*v < lower - slack || *v > upper + slack).then(|| SandwichViolation {
                state: x.as_slice().to_vec(),
                value: *v,
                lower,
                upper,
            })
        })
        .collect();
    SandwichReport {
        checked: values.len(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub pairs: usize,
    /// `max_{s<t} V(Q(t)) - V(Q(s)) + ∫_s^t w₃(‖Q‖)`; nonpositive when the
    /// inequality holds.
    pub worst_margin: f64,
    pub tolerance: f64,
    /// Stamp pair `(s, t)` attaining the worst margin.
    pub worst_pair: Option<(f64, f64)>,
}

impl DecreaseReport {
    pub fn passed(&self) -> bool {
        self.worst_margin <= self.tolerance
    }
}

/// Checks `V(Q(t)) - V(Q(s)) ≤ -∫_s^t w₃(‖Q(r)‖) dr` over all stamp pairs.
pub fn check_decrease<F>(mut v_fn: F, traj: &Trajectory, w3: &ComparisonFn) -> DecreaseReport
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let n = traj.len();
    let values: Vec<f64> = traj.levels.iter().map(&mut v_fn).collect();
    // prefix integrals of w₃(‖Q‖), trapezoidal
    let w: Vec<f64> = traj.levels.iter().map(|q| w3.eval(norm_l1(q))).collect();
    let mut prefix = vec![0.0; n];
    for i in 1..n {
        prefix[i] = prefix[i - 1] + 0.5 * (w[i] + w[i - 1]) * (traj.times[i] - traj.times[i - 1]);
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = None;
    let mut best_s = 0usize;
    for t in 1..n {
        if values[t - 1] + prefix[t - 1] < values[best_s] + prefix[best_s] {
            best_s = t - 1;
        }
        let margin = (values[t] + prefix[t]) - (values[best_s] + prefix[best_s]);
        if margin > worst {
            worst = margin;
            worst_pair = Some((traj.times[best_s], traj.times[t]));
        }
    }
    DecreaseReport {
        pairs: n * n.saturating_sub(1) / 2,
        worst_margin: if n > 1 { worst } else { 0.0 },
        tolerance: 1e-4 * (1.0 + values.first().copied().unwrap_or(0.0)),
        worst_pair,
    }
}

/// Limits for the value search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub horizon: f64,
    pub step: f64,
    /// Branching depth of the lookahead; 0 is a pure greedy rollout.
    pub depth: usize,
    /// Randomized restarts on top of the deterministic search.
    pub multistarts: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            horizon: 100.0,
            step: 0.05,
            depth: 1,
            multistarts: 2,
            seed: rng::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueStatus {
    /// Every path through the state was enumerated.
    Exact,
    /// Best value found by search; `V` may be larger.
    LowerBound,
    /// The best path did not drain within the horizon.
    NotDrained,
    /// The best path did not decrease at all; `V` is taken to be infinite.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    pub status: ValueStatus,
    pub trajectory: Trajectory,
}

/// `V(x)` for a path family: exact for explicit families, a searched lower
/// bound for network-generated ones.
pub fn approximate_v(family: &PathFamily, x: &DVector<f64>, budget: &SearchBudget) -> Result<ValueEstimate, LyapunovError> {
    match &family.kind {
        FamilyKind::Explicit(f) => {
            let mut best: Option<(f64, Trajectory)> = None;
            for p in f.paths_from(x) {
                let v = total_fluid(&p).value;
                if best.as_ref().map_or(true, |(b, _)| v > *b) {
                    best = Some((v, p));
                }
            }
            let (value, trajectory) = best.expect("explicit families have a path through every state");
            Ok(ValueEstimate {
                value,
                status: ValueStatus::Exact,
                trajectory,
            })
        }
        FamilyKind::NetworkGenerated { dynamics, selectors, .. } => {
            let search = ValueSearch::new(dynamics, budget)?;
            let mut best = search.search(x)?;
            // the family's own selectors are paths too
            for s in selectors {
                let traj = dynamics.simulate(x, s, budget.horizon, budget.step)?;
                let v = total_fluid(&traj).value;
                if better(v, &traj, &best) {
                    best = Candidate {
                        value: v,
                        trajectory: traj,
                        branched: best.branched,
                    };
                }
            }
            Ok(best.into_estimate(x))
        }
    }
}

struct Candidate {
    value: f64,
    trajectory: Trajectory,
    /// Some decision point offered more than one control.
    branched: bool,
}

impl Candidate {
    fn into_estimate(self, x: &DVector<f64>) -> ValueEstimate {
        let status = if !self.trajectory.is_drained() {
            let end = self.trajectory.levels.last().map(norm_l1).unwrap_or(0.0);
            if end >= norm_l1(x) {
                ValueStatus::Diverged
            } else {
                ValueStatus::NotDrained
            }
        } else if self.branched {
            ValueStatus::LowerBound
        } else {
            ValueStatus::Exact
        };
        ValueEstimate {
            value: self.value,
            status,
            trajectory: self.trajectory,
        }
    }
}

/// Drained paths beat undrained ones; then larger values win.
fn better(v: f64, traj: &Trajectory, than: &Candidate) -> bool {
    match (traj.is_drained(), than.trajectory.is_drained()) {
        (true, false) => true,
        (false, true) => false,
        _ => v > than.value + 1e-12 * (1.0 + than.value.abs()),
    }
}

/// Receding-horizon search for the path with the most fluid.
///
/// At every decision point each admissible vertex is scored by running it
/// for one step, branching over vertices for `depth - 1` more steps and
/// finishing with a greedy slowest-drain rollout. The best-scoring vertex is
/// applied. Restart `i ≥ 1` replaces the decision by a random vertex with
/// probability 1/4. The result is the best path over all restarts and all
/// depths up to `depth`.
pub struct ValueSearch<'a> {
    dynamics: &'a Dynamics,
    budget: SearchBudget,
}

impl<'a> ValueSearch<'a> {
    pub fn new(dynamics: &'a Dynamics, budget: &SearchBudget) -> Result<Self, LyapunovError> {
        if !(budget.step > 0.0) || !(budget.horizon > 0.0) {
            return Err(LyapunovError::InvalidBudget(format!(
                "step and horizon must be positive, got {} and {}",
                budget.step, budget.horizon
            )));
        }
        Ok(ValueSearch {
            dynamics,
            budget: *budget,
        })
    }

    fn search(&self, x: &DVector<f64>) -> Result<Candidate, LyapunovError> {
        let runs: Vec<(usize, usize)> = (0..=self.budget.depth)
            .flat_map(|d| (0..=self.budget.multistarts).map(move |r| (d, r)))
            .filter(|&(d, r)| d == self.budget.depth || r == 0)
            .collect();
        let results: Vec<Result<(Trajectory, bool), LyapunovError>> =
            runs.par_iter().map(|&(d, r)| self.policy_run(x, d, r)).collect();
        let mut best: Option<Candidate> = None;
        let mut branched = false;
        for res in results {
            let (traj, b) = res?;
            branched |= b;
            let v = total_fluid(&traj).value;
            match &best {
                Some(c) if !better(v, &traj, c) => {}
                _ => {
                    best = Some(Candidate {
                        value: v,
                        trajectory: traj,
                        branched: false,
                    })
                }
            }
        }
        let mut best = best.expect("at least one run");
        best.branched = branched;
        Ok(best)
    }

    fn policy_run(&self, x: &DVector<f64>, depth: usize, restart: usize) -> Result<(Trajectory, bool), LyapunovError> {
        let eps = emptiness_threshold(x);
        let mut rng = rng::stream(rng::child_seed(self.budget.seed, restart as u64), 0);
        let mut branched = false;
        let mut failure: Option<DynamicsError> = None;
        let traj = self.dynamics.run(
            FluidState::at(x.clone()),
            eps,
            self.budget.horizon,
            self.budget.step,
            |state, options| {
                if options.len() == 1 {
                    return 0;
                }
                branched = true;
                if restart > 0 && rng.gen_bool(0.25) {
                    return rng.gen_range(0..options.len());
                }
                if depth == 0 {
                    return extreme_drain(options, false);
                }
                let remaining = self.budget.horizon - state.t;
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for (i, opt) in options.iter().enumerate() {
                    match self.score(&state.q, opt, depth, remaining, eps) {
                        Ok(s) if s > best_score + 1e-12 * (1.0 + best_score.abs()) => {
                            best = i;
                            best_score = s;
                        }
                        Ok(_) => {}
                        Err(e) => failure = Some(e),
                    }
                }
                best
            },
        )?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        Ok((traj, branched))
    }

    /// Fluid collected by applying `opt` for one step, then branching.
    fn score(&self, q: &DVector<f64>, opt: &ControlOption, depth: usize, remaining: f64, eps: f64) -> Result<f64, DynamicsError> {
        let mut state = FluidState::at(q.clone());
        let before = norm_l1(q);
        let s = self.dynamics.step(&mut state, opt, self.budget.step.min(remaining), eps);
        let gained = 0.5 * (before + norm_l1(&state.q)) * s.dt;
        let remaining = remaining - s.dt;
        if depth <= 1 {
            return Ok(gained + self.greedy_tail(&state.q, remaining, eps)?);
        }
        let empty = self.dynamics.spec().empty_classes(&state.q, eps);
        let options = self.dynamics.options(&empty)?;
        let mut best = f64::NEG_INFINITY;
        for o in options.iter() {
            best = best.max(self.score(&state.q, o, depth - 1, remaining, eps)?);
        }
        Ok(gained + best)
    }

    /// Fluid collected by the slowest-drain rollout from `q`.
    fn greedy_tail(&self, q: &DVector<f64>, mut remaining: f64, eps: f64) -> Result<f64, DynamicsError> {
        let mut state = FluidState::at(q.clone());
        let mut total = 0.0;
        let mut steps = 0usize;
        let mut norm = norm_l1(q);
        while remaining > 0.0 && norm >= eps {
            let empty = self.dynamics.spec().empty_classes(&state.q, eps);
            let options = self.dynamics.options(&empty)?;
            let opt = &options[extreme_drain(&options, false)];
            let s = self.dynamics.step(&mut state, opt, self.budget.step.min(remaining), eps);
            let next = norm_l1(&state.q);
            total += 0.5 * (norm + next) * s.dt;
            norm = next;
            remaining -= s.dt;
            steps += 1;
            if steps > crate::dynamics::MAX_SUBSTEPS {
                return Err(DynamicsError::StepTooLarge);
            }
        }
        Ok(total)
    }
}

/// Memoized value search with extra lower bounds learned from known paths.
pub struct ValueOracle<'a> {
    family: &'a PathFamily,
    budget: SearchBudget,
    memo: Mutex<HashMap<Vec<u64>, f64>>,
    known: Mutex<HashMap<Vec<u64>, f64>>,
}

fn key(x: &DVector<f64>) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl<'a> ValueOracle<'a> {
    pub fn new(family: &'a PathFamily, budget: SearchBudget) -> Self {
        ValueOracle {
            family,
            budget,
            memo: Mutex::new(HashMap::new()),
            known: Mutex::new(HashMap::new()),
        }
    }

    fn searched(&self, x: &DVector<f64>) -> Result<f64, LyapunovError> {
        if let Some(v) = self.memo.lock().expect("memo lock").get(&key(x)) {
            return Ok(*v);
        }
        let v = approximate_v(self.family, x, &self.budget)?.value;
        self.memo.lock().expect("memo lock").insert(key(x), v);
        Ok(v)
    }

    /// Records that some family path from `x` collects `value`.
    pub fn record(&self, x: &DVector<f64>, value: f64) {
        let mut known = self.known.lock().expect("known lock");
        let e = known.entry(key(x)).or_insert(value);
        *e = e.max(value);
    }

    /// Records the tail integrals of `traj` at each of its stamps.
    pub fn record_path(&self, traj: &Trajectory) {
        for (t, q) in traj.times.iter().zip(&traj.levels) {
            self.record(q, v_functional(traj, *t).value);
        }
    }

    /// Best known lower bound on `V(x)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64, LyapunovError> {
        let s = self.searched(x)?;
        let k = self.known.lock().expect("known lock").get(&key(x)).copied();
        Ok(k.map_or(s, |k| k.max(s)))
    }

    /// Searches from every stamp of `traj` and splices in any better tail,
    /// until the path's tail integrals dominate the search everywhere on it
    /// or `passes` rounds are used. Returns the improved path and how many
    /// splices were made.
    pub fn refine(&self, mut traj: Trajectory, passes: usize) -> Result<(Trajectory, usize), LyapunovError> {
        if let FamilyKind::Explicit(_) = self.family.kind {
            return Ok((traj, 0));
        }
        let mut splices = 0;
        for _ in 0..passes {
            let values: Vec<f64> = traj
                .levels
                .par_iter()
                .map(|q| self.searched(q))
                .collect::<Result<_, _>>()?;
            let scale = 1.0 + total_fluid(&traj).value;
            let improvable = (0..traj.len()).find(|&i| values[i] > v_functional(&traj, traj.times[i]).value + 1e-9 * scale);
            let Some(i) = improvable else {
                break;
            };
            let t = traj.times[i];
            let z = traj.levels[i].clone();
            let tail = approximate_v(self.family, &z, &self.budget)?.trajectory;
            traj = concatenate(&traj, t, &tail)?;
            splices += 1;
        }
        self.record_path(&traj);
        Ok((traj, splices))
    }
}

/// Certificate family and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertificateKind {
    Linear { h: Vec<f64> },
    PiecewiseLinear { h: Vec<Vec<f64>> },
    Quadratic { a: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CertificateStatus {
    Verified,
    Falsified { state: Vec<f64>, control: Vec<f64> },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub certificate: CertificateKind,
    /// Drift margin: `d/dt V(Q) ≤ -ε ‖Q‖₁` was established (or observed)
    /// with this `ε`.
    pub epsilon: f64,
    pub result: CertificateStatus,
    pub samples: usize,
    pub seed: Option<u64>,
}

impl Certificate {
    pub fn is_verified(&self) -> bool {
        self.result == CertificateStatus::Verified
    }
}

/// Every emptiness pattern with at least one nonempty class, together with
/// its consistent controls. Patterns with no consistent control are skipped.
fn drift_patterns(dynamics: &Dynamics) -> Vec<(Vec<bool>, std::sync::Arc<Vec<ControlOption>>)> {
    let k = dynamics.spec().num_classes();
    (0u64..(1u64 << k) - 1)
        .filter_map(|mask| {
            let empty: Vec<bool> = (0..k).map(|c| mask & (1 << c) != 0).collect();
            dynamics.options(&empty).ok().map(|o| (empty, o))
        })
        .collect()
}

/// Finds `h ∈ [δ, 1]ᴷ` maximizing `ε` subject to `hᵀ f(u) + ε ≤ 0` for every
/// consistent control at every pattern with some nonempty class.
pub fn linear_certificate_search(spec: &NetworkSpec) -> Certificate {
    let dynamics = Dynamics::new(spec.clone());
    let k = spec.num_classes();
    let mut lp = LinearProgram::new(Goal::Maximize);
    for _ in 0..k {
        lp.add_var(0.0, CERT_FLOOR, 1.0);
    }
    let eps = lp.add_var(1.0, -1e6, 1e6);
    let mut rows = 0;
    for (_, options) in drift_patterns(&dynamics) {
        for o in options.iter() {
            let mut row: Vec<f64> = o.velocity.iter().copied().collect();
            row.push(1.0);
            lp.add_row(&row, Sense::Le, 0.0);
            rows += 1;
        }
    }
    let unknown = |h: Vec<f64>| Certificate {
        certificate: CertificateKind::Linear { h },
        epsilon: 0.0,
        result: CertificateStatus::Unknown,
        samples: rows,
        seed: None,
    };
    let outcome = lp.solve();
    let Some((_, x)) = outcome.optimal() else {
        return unknown(vec![1.0; k]);
    };
    let h = x[..k].to_vec();
    let margin = x[eps];
    if margin >= CERT_FLOOR {
        Certificate {
            certificate: CertificateKind::Linear { h },
            epsilon: margin,
            result: CertificateStatus::Verified,
            samples: rows,
            seed: None,
        }
    } else {
        Certificate {
            epsilon: margin,
            ..unknown(h)
        }
    }
}

/// Sampling plan for drift verification of nonlinear candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSampling {
    /// Random states per emptiness pattern.
    pub per_pattern: usize,
    pub seed: u64,
    /// Required margin; at least [`CERT_FLOOR`].
    pub epsilon: f64,
}

impl Default for DriftSampling {
    fn default() -> Self {
        DriftSampling {
            per_pattern: 1000,
            seed: rng::DEFAULT_SEED,
            epsilon: CERT_FLOOR,
        }
    }
}

/// Samples the unit ℓ₁ sphere pattern by pattern and records the smallest
/// margin `-D(x)` where `D(x)` is the worst directional derivative over the
/// consistent controls at `x`.
fn sampled_drift<D>(spec: &NetworkSpec, plan: &DriftSampling, kind: CertificateKind, derivative: D) -> Certificate
where
    D: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync,
{
    let dynamics = Dynamics::new(spec.clone());
    let patterns = drift_patterns(&dynamics);
    let per_pattern: Vec<(f64, Vec<f64>, Vec<f64>, usize)> = patterns
        .par_iter()
        .enumerate()
        .map(|(pi, (empty, options))| {
            let support: Vec<bool> = empty.iter().map(|e| !e).collect();
            let mut r = rng::stream(plan.seed, pi as u64);
            let mut worst = (f64::INFINITY, Vec::new(), Vec::new(), 0usize);
            for _ in 0..plan.per_pattern.max(1) {
                let x = rng::simplex_point(&mut r, &support);
                for o in options.iter() {
                    let margin = -derivative(&x, &o.velocity);
                    if margin < worst.0 {
                        worst = (margin, x.as_slice().to_vec(), o.control.as_slice().to_vec(), 0);
                    }
                }
                worst.3 += 1;
            }
            worst
        })
        .collect();
    let samples = per_pattern.iter().map(|w| w.3).sum();
    let worst = per_pattern
        .into_iter()
        .fold((f64::INFINITY, Vec::new(), Vec::new()), |acc, w| {
            if w.0 < acc.0 {
                (w.0, w.1, w.2)
            } else {
                acc
            }
        });
    let required = plan.epsilon.max(CERT_FLOOR);
    let result = if worst.0 >= required {
        CertificateStatus::Verified
    } else {
        CertificateStatus::Falsified {
            state: worst.1,
            control: worst.2,
        }
    };
    Certificate {
        certificate: kind,
        epsilon: worst.0,
        result,
        samples,
        seed: Some(plan.seed),
    }
}

/// Sampled drift check of `V(x) = max_j h_jᵀ x`. At kinks the largest
/// derivative over the active pieces is used.
pub fn piecewise_linear_check(spec: &NetworkSpec, h: &[DVector<f64>], plan: &DriftSampling) -> Result<Certificate, LyapunovError> {
    let k = spec.num_classes();
    if h.is_empty() || h.iter().any(|v| v.len() != k) {
        return Err(LyapunovError::InvalidCandidate(format!("need at least one vector of length {k}")));
    }
    if h.iter().any(|v| v.min() < 0.0) {
        return Err(LyapunovError::InvalidCandidate("pieces must be nonnegative".into()));
    }
    if (0..k).any(|c| h.iter().all(|v| v[c] <= 0.0)) {
        return Err(LyapunovError::InvalidCandidate("max of the pieces vanishes on a nonzero state".into()));
    }
    let kind = CertificateKind::PiecewiseLinear {
        h: h.iter().map(|v| v.as_slice().to_vec()).collect(),
    };
    Ok(sampled_drift(spec, plan, kind, |x, f| {
        let vals: Vec<f64> = h.iter().map(|v| v.dot(x)).collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        h.iter()
            .zip(&vals)
            .filter(|(_, v)| **v >= top - 1e-12 * (1.0 + top.abs()))
            .map(|(hj, _)| hj.dot(f))
            .fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// Sampled drift check of `V(x) = xᵀ A x`, with derivative `2 xᵀ A f`.
pub fn quadratic_check(spec: &NetworkSpec, a: &DMatrix<f64>, plan: &DriftSampling) -> Result<Certificate, LyapunovError> {
    let k = spec.num_classes();
    if a.nrows() != k || a.ncols() != k {
        return Err(LyapunovError::InvalidCandidate(format!("matrix must be {k}×{k}")));
    }
    if (a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
        return Err(LyapunovError::InvalidCandidate("matrix must be symmetric".into()));
    }
    // copositivity on sampled rays
    let mut r = rng::stream(plan.seed, u64::MAX);
    let all = vec![true; k];
    for i in 0..k {
        let mut e = DVector::zeros(k);
        e[i] = 1.0;
        if e.dot(&(a * &e)) <= 0.0 {
            return Err(LyapunovError::InvalidCandidate("matrix is not strictly copositive".into()));
        }
    }
    for _ in 0..plan.per_pattern.max(1) {
        let x = rng::simplex_point(&mut r, &all);
        if x.dot(&(a * &x)) <= 0.0 {
            return Err(LyapunovError::InvalidCandidate("matrix is not strictly copositive".into()));
        }
    }
    let kind = CertificateKind::Quadratic {
        a: a.row_iter().map(|row| row.iter().copied().collect()).collect(),
    };
    Ok(sampled_drift(spec, plan, kind, |x, f| 2.0 * x.dot(&(a * f))))
}
