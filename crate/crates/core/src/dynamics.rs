//! Closed-loop fluid dynamics `Q̇ ∈ F(Q)` with exact boundary handling.
//!
//! Between events the control is constant and the dynamics are affine, so
//! a step is integrated exactly and cut at the first time a nonempty class
//! reaches zero. Controls are re-selected at every event and at every
//! checkpoint on the `h`-grid.
//!
//! At a boundary state the admissible set from the control polytope is
//! intersected with what a fluid path can actually do there: each empty
//! class either stays empty (zero net inflow) or leaves the boundary, in
//! which case the control must already be admissible for the state where
//! that class is nonempty. The union of these pieces is what selectors
//! choose from.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{Goal, LinearProgram, Sense};
use crate::model::{emptiness_threshold, norm_l1, Discipline, ModelError, NetworkSpec};
use crate::polytope::lex_cmp;
use crate::rng;
pub use crate::trajectory::{Allocation, Trajectory};

/// Cap on integration sub-steps per run.
pub const MAX_SUBSTEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("event splitting exceeded {MAX_SUBSTEPS} sub-steps")]
    StepTooLarge,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Net velocity `α - (I - Pᵀ) M u`.
pub fn rhs(spec: &NetworkSpec, u: &DVector<f64>) -> DVector<f64> {
    spec.alpha() - spec.transfer() * u
}

/// An admissible control together with the velocity it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOption {
    pub control: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl ControlOption {
    fn total_velocity(&self) -> f64 {
        self.velocity.sum()
    }
}

/// How a control is picked from the admissible vertices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlSelector {
    FirstVertex,
    RandomVertex(u64),
    /// Fastest decrease of total fluid.
    MaxDrain,
    /// Slowest decrease of total fluid.
    MinDrain,
    /// Vertex indices used in turn, cycling, each taken modulo the number of
    /// vertices available.
    FixedSequence(Vec<usize>),
}

impl ControlSelector {
    /// Parses `first`, `max_drain`, `min_drain`, `random:<seed>` or
    /// `fixed:<i>,<j>,...`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s {
            "first" | "first_vertex" => return Some(ControlSelector::FirstVertex),
            "max_drain" => return Some(ControlSelector::MaxDrain),
            "min_drain" => return Some(ControlSelector::MinDrain),
            _ => {}
        }
        if let Some(seed) = s.strip_prefix("random:") {
            return seed.trim().parse().ok().map(ControlSelector::RandomVertex);
        }
        if let Some(list) = s.strip_prefix("fixed:") {
            let idx: Option<Vec<usize>> = list.split(',').map(|x| x.trim().parse().ok()).collect();
            return idx.filter(|v| !v.is_empty()).map(ControlSelector::FixedSequence);
        }
        None
    }

    pub fn label(&self) -> String {
        match self {
            ControlSelector::FirstVertex => "first".into(),
            ControlSelector::RandomVertex(s) => format!("random:{s}"),
            ControlSelector::MaxDrain => "max_drain".into(),
            ControlSelector::MinDrain => "min_drain".into(),
            ControlSelector::FixedSequence(v) => format!(
                "fixed:{}",
                v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }

    /// The selector ensemble used when fluid solutions are non-unique.
    pub fn ensemble(seed: u64, randoms: usize) -> Vec<ControlSelector> {
        let mut v = vec![
            ControlSelector::MaxDrain,
            ControlSelector::MinDrain,
            ControlSelector::FirstVertex,
        ];
        v.extend((0..randoms as u64).map(|i| ControlSelector::RandomVertex(rng::child_seed(seed, i))));
        v
    }

    pub(crate) fn start(&self) -> SelectorState<'_> {
        let rng = match self {
            ControlSelector::RandomVertex(seed) => Some(rng::stream(*seed, 0)),
            _ => None,
        };
        SelectorState {
            selector: self,
            rng,
            counter: 0,
        }
    }
}

pub(crate) struct SelectorState<'a> {
    selector: &'a ControlSelector,
    rng: Option<rng::Rng>,
    counter: usize,
}

/// Index of the extreme total velocity; options are lexicographically
/// sorted, so the first optimum is the lexicographically smallest vertex.
pub(crate) fn extreme_drain(options: &[ControlOption], fastest: bool) -> usize {
    let mut best = 0;
    let mut best_val = options[0].total_velocity();
    for (i, o) in options.iter().enumerate().skip(1) {
        let v = o.total_velocity();
        let better = if fastest { v < best_val - 1e-12 } else { v > best_val + 1e-12 };
        if better {
            best = i;
            best_val = v;
        }
    }
    best
}

impl SelectorState<'_> {
    pub(crate) fn choose(&mut self, options: &[ControlOption]) -> usize {
        let n = options.len();
        match self.selector {
            ControlSelector::FirstVertex => 0,
            ControlSelector::RandomVertex(_) => self.rng.as_mut().expect("seeded").gen_range(0..n),
            ControlSelector::MaxDrain => extreme_drain(options, true),
            ControlSelector::MinDrain => extreme_drain(options, false),
            ControlSelector::FixedSequence(seq) => {
                let i = seq[self.counter % seq.len()] % n;
                self.counter += 1;
                i
            }
        }
    }
}

/// Mutable integration state: time, levels and cumulative allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub t: f64,
    pub q: DVector<f64>,
    pub cumulative: DVector<f64>,
}

impl FluidState {
    pub fn at(q: DVector<f64>) -> Self {
        let k = q.len();
        FluidState {
            t: 0.0,
            q,
            cumulative: DVector::zeros(k),
        }
    }
}

/// Outcome of one exact sub-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub dt: f64,
    /// A class hit zero before the step's time budget ran out.
    pub event: bool,
}

/// A network with memoized admissible control sets.
#[derive(Debug)]
pub struct Dynamics {
    spec: NetworkSpec,
    cache: Mutex<HashMap<Vec<bool>, Arc<Vec<ControlOption>>>>,
}

impl Clone for Dynamics {
    fn clone(&self) -> Self {
        Dynamics::new(self.spec.clone())
    }
}

impl Dynamics {
    pub fn new(spec: NetworkSpec) -> Self {
        Dynamics {
            spec,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn option(&self, u: DVector<f64>) -> ControlOption {
        let scale = 1.0 + self.spec.alpha().amax() + self.spec.transfer().amax();
        let velocity = rhs(&self.spec, &u).map(|v| if v.abs() < 1e-13 * scale { 0.0 } else { v });
        ControlOption { control: u, velocity }
    }

    /// Vertices of the piece where the classes in `leaving` move off the
    /// boundary and the rest of `empty` stays at zero.
    fn piece(&self, empty: &[bool], leaving: &[bool]) -> Vec<DVector<f64>> {
        let k = self.spec.num_classes();
        let pattern: Vec<bool> = (0..k).map(|c| empty[c] && !leaving[c]).collect();
        let mut h = self.spec.control_halfspaces(&pattern);
        let transfer = self.spec.transfer();
        let alpha = self.spec.alpha();
        for c in 0..k {
            if !empty[c] {
                continue;
            }
            // velocity_c = α_c - row_c · u
            let row: Vec<f64> = transfer.row(c).iter().copied().collect();
            if leaving[c] {
                h.at_most(row, alpha[c]);
            } else {
                h.equal(row, alpha[c]);
            }
        }
        h.vertices()
    }

    /// Admissible controls (vertices) for the emptiness pattern `empty`.
    pub fn options(&self, empty: &[bool]) -> Result<Arc<Vec<ControlOption>>, DynamicsError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(empty) {
            return Ok(hit.clone());
        }
        let k = self.spec.num_classes();
        if empty.len() != k {
            return Err(DynamicsError::DimensionMismatch(format!(
                "pattern has {} entries, network has {k} classes",
                empty.len()
            )));
        }
        let empties: Vec<usize> = (0..k).filter(|&c| empty[c]).collect();
        let mut vertices: Vec<DVector<f64>> = Vec::new();
        for mask in 0u64..(1u64 << empties.len()) {
            let mut leaving = vec![false; k];
            for (bit, &c) in empties.iter().enumerate() {
                leaving[c] = mask & (1 << bit) != 0;
            }
            for v in self.piece(empty, &leaving) {
                if !vertices.iter().any(|w| (w - &v).amax() <= 1e-9) {
                    vertices.push(v);
                }
            }
        }
        if vertices.is_empty() {
            return Err(ModelError::InfeasibleActiveSet.into());
        }
        vertices.sort_by(|a, b| lex_cmp(a.as_slice(), b.as_slice()));
        let opts = Arc::new(vertices.into_iter().map(|u| self.option(u)).collect::<Vec<_>>());
        self.cache
            .lock()
            .expect("cache lock")
            .insert(empty.to_vec(), opts.clone());
        Ok(opts)
    }

    /// Whether every empty class can be held at zero.
    pub fn can_stay(&self, empty: &[bool]) -> bool {
        !self.piece(empty, &vec![false; empty.len()]).is_empty()
    }

    /// Advances `state` under `opt` for at most `max_dt`, stopping early
    /// when a class with level ≥ `eps` reaches zero.
    pub fn step(&self, state: &mut FluidState, opt: &ControlOption, max_dt: f64, eps: f64) -> Step {
        let k = state.q.len();
        let crossing: Vec<f64> = (0..k)
            .map(|c| {
                let v = opt.velocity[c];
                if state.q[c] >= eps && v < 0.0 {
                    state.q[c] / -v
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let first = crossing.iter().copied().fold(f64::INFINITY, f64::min);
        let event = first < max_dt * (1.0 - 1e-12);
        let dt = if event { first } else { max_dt };
        state.q += &opt.velocity * dt;
        state.cumulative += &opt.control * dt;
        state.t += dt;
        for c in 0..k {
            if crossing[c] <= dt * (1.0 + 1e-12) || state.q[c] < 0.0 {
                state.q[c] = 0.0;
            }
        }
        Step { dt, event }
    }

    /// Idle (work-conserving) or unused-capacity (priority) process.
    pub fn idle(&self, t: f64, cumulative: &DVector<f64>) -> DVector<f64> {
        match self.spec.discipline() {
            Discipline::WorkConserving => {
                DVector::from_element(self.spec.num_stations(), t) - self.spec.constituency() * cumulative
            }
            Discipline::Priority(_) => DVector::from_iterator(
                self.spec.num_classes(),
                (0..self.spec.num_classes())
                    .map(|c| t - self.spec.priority_set(c).iter().map(|&l| cumulative[l]).sum::<f64>()),
            ),
        }
    }

    /// Runs from `start` until `t_end` or drain, asking `chooser` for a
    /// vertex index at every decision point.
    pub fn run<C>(&self, start: FluidState, eps: f64, t_end: f64, h: f64, mut chooser: C) -> Result<Trajectory, DynamicsError>
    where
        C: FnMut(&FluidState, &[ControlOption]) -> usize,
    {
        if !(h > 0.0) || !h.is_finite() {
            return Err(DynamicsError::InvalidArgument(format!("step must be positive, got {h}")));
        }
        if start.q.len() != self.spec.num_classes() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "state has {} entries, network has {} classes",
                start.q.len(),
                self.spec.num_classes()
            )));
        }
        if start.q.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(DynamicsError::InvalidArgument("initial state must be nonnegative".into()));
        }
        let k = self.spec.num_classes();
        let t0 = start.t;
        let mut state = start;
        let mut traj = Trajectory::new(k);
        traj.times.push(state.t);
        traj.levels.push(state.q.clone());
        let mut alloc = Allocation {
            cumulative: vec![state.cumulative.clone()],
            idle: vec![self.idle(state.t, &state.cumulative)],
            controls: Vec::new(),
        };
        let all_empty = vec![true; k];
        let zero_stays = self.can_stay(&all_empty);
        let mut drain_since: Option<f64> = None;
        let mut checkpoint = 1usize;
        let mut substeps = 0usize;
        let time_tol = 1e-12 * (1.0 + t_end.abs());

        if norm_l1(&state.q) < eps && zero_stays {
            drain_since = Some(state.t);
        }
        while state.t < t_end - time_tol {
            let empty = self.spec.empty_classes(&state.q, eps);
            let options = self.options(&empty)?;
            let idx = chooser(&state, &options).min(options.len() - 1);
            let opt = &options[idx];
            let next_cp = (t0 + checkpoint as f64 * h).min(t_end);
            let budget = next_cp - state.t;
            let s = self.step(&mut state, opt, budget, eps);
            substeps += 1;
            if substeps > MAX_SUBSTEPS {
                return Err(DynamicsError::StepTooLarge);
            }
            let at_checkpoint = !s.event;
            if at_checkpoint {
                // absorb round-off so the grid does not drift
                state.t = next_cp;
                checkpoint += 1;
            }
            traj.times.push(state.t);
            traj.levels.push(state.q.clone());
            alloc.cumulative.push(state.cumulative.clone());
            alloc.idle.push(self.idle(state.t, &state.cumulative));
            alloc.controls.push(opt.control.clone());

            if norm_l1(&state.q) < eps && zero_stays {
                match drain_since {
                    Some(since) if at_checkpoint && state.t > since => {
                        traj.drained_at = Some(since);
                        break;
                    }
                    None => drain_since = Some(state.t),
                    _ => {}
                }
            } else {
                drain_since = None;
            }
        }
        traj.allocation = Some(alloc);
        Ok(traj)
    }

    pub fn simulate(
        &self,
        x0: &DVector<f64>,
        selector: &ControlSelector,
        horizon: f64,
        h: f64,
    ) -> Result<Trajectory, DynamicsError> {
        if !(horizon >= 0.0) {
            return Err(DynamicsError::InvalidArgument(format!("horizon must be nonnegative, got {horizon}")));
        }
        let eps = emptiness_threshold(x0);
        let mut sel = selector.start();
        self.run(FluidState::at(x0.clone()), eps, horizon, h, |_, opts| sel.choose(opts))
    }

    /// Whether some admissible velocity at `x` points into the orthant.
    pub fn viability_check(&self, x: &DVector<f64>) -> bool {
        let eps = emptiness_threshold(x);
        let empty = self.spec.empty_classes(x, eps);
        if !empty.iter().any(|e| *e) {
            return true;
        }
        let vertices = self.spec.control_halfspaces(&empty).vertices();
        if vertices.is_empty() {
            return false;
        }
        let velocities: Vec<DVector<f64>> = vertices.into_iter().map(|u| rhs(&self.spec, &u)).collect();
        let mut lp = LinearProgram::new(Goal::Minimize);
        for _ in &velocities {
            lp.add_var(0.0, 0.0, f64::INFINITY);
        }
        lp.add_row(&vec![1.0; velocities.len()], Sense::Eq, 1.0);
        for (c, _) in empty.iter().enumerate().filter(|(_, e)| **e) {
            let row: Vec<f64> = velocities.iter().map(|v| v[c]).collect();
            lp.add_row(&row, Sense::Ge, 0.0);
        }
        lp.solve().optimal().is_some()
    }
}

/// Convenience wrapper around [`Dynamics::simulate`].
pub fn simulate(
    spec: &NetworkSpec,
    x0: &DVector<f64>,
    selector: &ControlSelector,
    horizon: f64,
    h: f64,
) -> Result<Trajectory, DynamicsError> {
    Dynamics::new(spec.clone()).simulate(x0, selector, horizon, h)
}

pub fn viability_check(spec: &NetworkSpec, x: &DVector<f64>) -> bool {
    Dynamics::new(spec.clone()).viability_check(x)
}

fn allocation<'a>(spec: &NetworkSpec, traj: &'a Trajectory) -> Result<&'a Allocation, DynamicsError> {
    let a = traj
        .allocation
        .as_ref()
        .ok_or_else(|| DynamicsError::DimensionMismatch("trajectory carries no allocation".into()))?;
    if traj.dim() != spec.num_classes() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "trajectory has {} classes, network has {}",
            traj.dim(),
            spec.num_classes()
        )));
    }
    Ok(a)
}

/// Largest ℓ₁ deviation from `Q(t) = Q(0) + αt - (I-Pᵀ) M T(t)`.
pub fn flow_balance_residual(spec: &NetworkSpec, traj: &Trajectory) -> Result<f64, DynamicsError> {
    let a = allocation(spec, traj)?;
    let q0 = traj.initial();
    let mut worst: f64 = 0.0;
    for i in 0..traj.len() {
        let t = traj.times[i];
        let predicted = q0 + spec.alpha() * t - spec.transfer() * &a.cumulative[i];
        worst = worst.max(norm_l1(&(&traj.levels[i] - predicted)));
    }
    Ok(worst)
}

/// Discrete complementarity: `Σ (CQ)ᵀ(e - Cu) Δt` for work-conserving and
/// `Σ_k Q_k ΔY_k` for priority networks, with left-point levels.
pub fn complementarity_residual(spec: &NetworkSpec, traj: &Trajectory) -> Result<f64, DynamicsError> {
    let a = allocation(spec, traj)?;
    let mut total = 0.0;
    for i in 0..a.controls.len() {
        let dt = traj.times[i + 1] - traj.times[i];
        let q = &traj.levels[i];
        match spec.discipline() {
            Discipline::WorkConserving => {
                let cq = spec.constituency() * q;
                let slack = DVector::from_element(spec.num_stations(), 1.0) - spec.constituency() * &a.controls[i];
                total += cq.dot(&slack) * dt;
            }
            Discipline::Priority(_) => {
                let dy = &a.idle[i + 1] - &a.idle[i];
                total += q.dot(&dy);
            }
        }
    }
    Ok(total)
}

/// Checks the trajectory invariants and returns the first violation.
pub fn check_trajectory(spec: &NetworkSpec, traj: &Trajectory) -> Result<(), String> {
    let a = allocation(spec, traj).map_err(|e| e.to_string())?;
    for w in traj.times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(format!("grid not strictly increasing at t={}", w[0]));
        }
    }
    for (i, q) in traj.levels.iter().enumerate() {
        if q.iter().any(|x| *x < -1e-9) {
            return Err(format!("negative level at stamp {i}"));
        }
    }
    if a.cumulative[0].amax() != 0.0 {
        return Err("T(0) != 0".into());
    }
    for i in 1..traj.len() {
        if (&a.cumulative[i] - &a.cumulative[i - 1]).min() < -1e-12 {
            return Err(format!("T decreases at stamp {i}"));
        }
        if (&a.idle[i] - &a.idle[i - 1]).min() < -1e-9 {
            return Err(format!("idle process decreases at stamp {i}"));
        }
    }
    let q0 = norm_l1(traj.initial());
    let fb = flow_balance_residual(spec, traj).map_err(|e| e.to_string())?;
    if fb > 1e-7 * (1.0 + q0) {
        return Err(format!("flow-balance residual {fb:e}"));
    }
    let comp = complementarity_residual(spec, traj).map_err(|e| e.to_string())?;
    if comp.abs() > 1e-6 * traj.horizon().max(1.0) {
        return Err(format!("complementarity residual {comp:e}"));
    }
    Ok(())
}
