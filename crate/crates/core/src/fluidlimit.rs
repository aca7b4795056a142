//! Discrete-event simulation of multiclass queueing networks and the fluid
//! scaling `t ↦ Q(rt)/r`.
//!
//! Service is head-of-line per class. Priority stations serve their highest
//! ranked nonempty class (preemptive resume); work-conserving stations split
//! capacity equally among their nonempty classes. Every random primitive has
//! its own seeded stream, so a run depends only on the seed.

use std::io::{self, Write};

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlSelector, Dynamics, DynamicsError};
use crate::model::{norm_l1, Discipline, NetworkSpec};
use crate::rng;
use crate::trajectory::{fmt17, Trajectory};

/// Cap on processed events per run.
pub const MAX_EVENTS: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidLimitError {
    #[error("event budget of {MAX_EVENTS} exceeded")]
    EventBudgetExceeded,
    #[error("invalid queueing input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Distribution family of an interarrival or service time; the mean is
/// fixed by the network rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Exponential,
    Deterministic,
}

impl Law {
    fn sample<R: rand::Rng>(self, rate: f64, rng: &mut R) -> f64 {
        match self {
            Law::Deterministic => 1.0 / rate,
            Law::Exponential => Exp::new(rate).expect("positive rate").sample(rng),
        }
    }
}

/// A network with its random primitives. Classes with `α_k = 0` have no
/// exogenous arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueingSpec {
    pub network: NetworkSpec,
    pub interarrival: Vec<Law>,
    pub service: Vec<Law>,
}

impl QueueingSpec {
    pub fn new(network: NetworkSpec, interarrival: Vec<Law>, service: Vec<Law>) -> Result<Self, FluidLimitError> {
        let k = network.num_classes();
        if interarrival.len() != k || service.len() != k {
            return Err(FluidLimitError::Invalid(format!("need one law per class ({k})")));
        }
        if network.mu().iter().any(|m| *m <= 0.0) {
            return Err(FluidLimitError::Invalid("service rates must be positive".into()));
        }
        Ok(QueueingSpec {
            network,
            interarrival,
            service,
        })
    }

    /// The same law for every primitive.
    pub fn uniform(network: NetworkSpec, law: Law) -> Self {
        let k = network.num_classes();
        QueueingSpec {
            network,
            interarrival: vec![law; k],
            service: vec![law; k],
        }
    }

    fn has_arrivals(&self, k: usize) -> bool {
        self.network.alpha()[k] > 0.0
    }
}

/// `x = (q, u, v)`: queue lengths, residual interarrival times and residual
/// service times of the head-of-line customers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub q: Vec<u64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl InitialState {
    /// Queue lengths `q` with residuals drawn fresh from the laws.
    pub fn fresh(qspec: &QueueingSpec, q: Vec<u64>, seed: u64) -> Self {
        let k = qspec.network.num_classes();
        let mut r = rng::stream(seed, u64::MAX);
        let u = (0..k)
            .map(|c| {
                if qspec.has_arrivals(c) {
                    qspec.interarrival[c].sample(qspec.network.alpha()[c], &mut r)
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let v = (0..k)
            .map(|c| qspec.service[c].sample(qspec.network.mu()[c], &mut r))
            .collect();
        InitialState { q, u, v }
    }
}

/// Event-stamped queue lengths and cumulative busy times.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub q: Vec<Vec<u64>>,
    pub busy: Vec<DVector<f64>>,
    pub events: u64,
}

impl SamplePath {
    /// Queue lengths in force at `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &[u64] {
        let i = self.times.partition_point(|s| *s <= t).max(1) - 1;
        &self.q[i]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let k = self.q.first().map_or(0, |q| q.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|i| format!("Q{i}")));
        header.extend((1..=k).map(|i| format!("T{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.times.len() {
            let mut row = vec![fmt17(self.times[i])];
            row.extend(self.q[i].iter().map(|x| x.to_string()));
            row.extend(self.busy[i].iter().map(|x| fmt17(*x)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Service rates granted to each class given which classes are nonempty.
fn allocation(spec: &NetworkSpec, q: &[u64]) -> Vec<f64> {
    let k = spec.num_classes();
    let mut rate = vec![0.0; k];
    for s in 0..spec.num_stations() {
        let classes = spec.classes_at(s);
        let busy: Vec<usize> = classes.iter().copied().filter(|&c| q[c] > 0).collect();
        if busy.is_empty() {
            continue;
        }
        match spec.discipline() {
            Discipline::WorkConserving => {
                for &c in &busy {
                    rate[c] = 1.0 / busy.len() as f64;
                }
            }
            Discipline::Priority(_) => {
                // the smallest priority set belongs to the top-ranked class
                let top = *busy
                    .iter()
                    .min_by_key(|&&c| spec.priority_set(c).len())
                    .expect("nonempty");
                rate[top] = 1.0;
            }
        }
    }
    rate
}

/// Event-driven simulation up to `horizon`.
pub fn simulate_queueing(qspec: &QueueingSpec, x: &InitialState, horizon: f64, seed: u64) -> Result<SamplePath, FluidLimitError> {
    let spec = &qspec.network;
    let k = spec.num_classes();
    if x.q.len() != k || x.u.len() != k || x.v.len() != k {
        return Err(FluidLimitError::Invalid(format!("initial state must have {k} entries per component")));
    }
    if x.v.iter().any(|v| !(*v > 0.0)) {
        return Err(FluidLimitError::Invalid("residual service times must be positive".into()));
    }
    let mut arrivals: Vec<rng::Rng> = (0..k).map(|c| rng::stream(seed, 3 * c as u64)).collect();
    let mut services: Vec<rng::Rng> = (0..k).map(|c| rng::stream(seed, 3 * c as u64 + 1)).collect();
    let mut routes: Vec<rng::Rng> = (0..k).map(|c| rng::stream(seed, 3 * c as u64 + 2)).collect();
    let mut q = x.q.clone();
    let mut next_arrival: Vec<f64> = (0..k)
        .map(|c| if qspec.has_arrivals(c) { x.u[c] } else { f64::INFINITY })
        .collect();
    // remaining work of each head-of-line customer
    let mut work = x.v.clone();
    let mut busy = DVector::zeros(k);
    let mut t = 0.0;
    let mut path = SamplePath {
        times: vec![0.0],
        q: vec![q.clone()],
        busy: vec![busy.clone()],
        events: 0,
    };
    loop {
        let rate = allocation(spec, &q);
        let completion = (0..k)
            .filter(|&c| rate[c] > 0.0)
            .map(|c| (t + work[c] / rate[c], c))
            .fold((f64::INFINITY, usize::MAX), |a, b| if b.0 < a.0 { b } else { a });
        let arrival = (0..k)
            .map(|c| (next_arrival[c], c))
            .fold((f64::INFINITY, usize::MAX), |a, b| if b.0 < a.0 { b } else { a });
        let next = completion.0.min(arrival.0);
        if next > horizon {
            let dt = horizon - t;
            for c in 0..k {
                busy[c] += rate[c] * dt;
            }
            if horizon > t {
                path.times.push(horizon);
                path.q.push(q.clone());
                path.busy.push(busy.clone());
            }
            return Ok(path);
        }
        let dt = next - t;
        for c in 0..k {
            if rate[c] > 0.0 {
                work[c] -= rate[c] * dt;
                busy[c] += rate[c] * dt;
            }
        }
        t = next;
        path.events += 1;
        if path.events > MAX_EVENTS {
            return Err(FluidLimitError::EventBudgetExceeded);
        }
        // completions win ties so a deterministic queue never shows a
        // phantom extra customer
        if completion.0 <= arrival.0 {
            let c = completion.1;
            q[c] -= 1;
            if q[c] > 0 {
                work[c] = qspec.service[c].sample(spec.mu()[c], &mut services[c]);
            }
            let u: f64 = routes[c].gen();
            let mut acc = 0.0;
            for l in 0..k {
                acc += spec.routing()[(c, l)];
                if u < acc {
                    join(qspec, &mut q, &mut work, &mut services, l);
                    break;
                }
            }
        } else {
            let c = arrival.1;
            join(qspec, &mut q, &mut work, &mut services, c);
            next_arrival[c] = t + qspec.interarrival[c].sample(spec.alpha()[c], &mut arrivals[c]);
        }
        path.times.push(t);
        path.q.push(q.clone());
        path.busy.push(busy.clone());
    }
}

fn join(qspec: &QueueingSpec, q: &mut [u64], work: &mut [f64], services: &mut [rng::Rng], c: usize) {
    if q[c] == 0 {
        work[c] = qspec.service[c].sample(qspec.network.mu()[c], &mut services[c]);
    }
    q[c] += 1;
}

/// A piecewise-constant (right-continuous) path on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    pub times: Vec<f64>,
    pub levels: Vec<DVector<f64>>,
}

impl StepPath {
    pub fn level_at(&self, t: f64) -> &DVector<f64> {
        let i = self.times.partition_point(|s| *s <= t).max(1) - 1;
        &self.levels[i]
    }
}

/// `t ↦ Q(rt)/r` at every scaled event time up to `horizon`.
pub fn scale_path(path: &SamplePath, r: f64, horizon: f64) -> Result<StepPath, FluidLimitError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(FluidLimitError::Invalid(format!("scale must be positive, got {r}")));
    }
    let mut out = StepPath {
        times: Vec::new(),
        levels: Vec::new(),
    };
    for (t, q) in path.times.iter().zip(&path.q) {
        let s = t / r;
        if s > horizon {
            break;
        }
        out.times.push(s);
        out.levels.push(DVector::from_iterator(q.len(), q.iter().map(|x| *x as f64 / r)));
    }
    Ok(out)
}

/// `t ↦ Q(rt)/r` sampled on `grid`.
pub fn scale_path_on(path: &SamplePath, r: f64, grid: &[f64]) -> Result<StepPath, FluidLimitError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(FluidLimitError::Invalid(format!("scale must be positive, got {r}")));
    }
    Ok(StepPath {
        times: grid.to_vec(),
        levels: grid
            .iter()
            .map(|&t| {
                let q = path.state_at(r * t);
                DVector::from_iterator(q.len(), q.iter().map(|x| *x as f64 / r))
            })
            .collect(),
    })
}

/// Exact `sup_{[0,H]} ‖step(t) - fluid(t)‖₁`, counting left limits at the
/// jumps of the step path, and the time average of the same distance.
pub fn step_to_fluid_distance(step: &StepPath, fluid: &Trajectory, horizon: f64) -> (f64, f64) {
    let mut sup: f64 = 0.0;
    let mut area = 0.0;
    for (i, &a) in step.times.iter().enumerate() {
        if a > horizon {
            break;
        }
        let b = step.times.get(i + 1).copied().unwrap_or(horizon).min(horizon);
        let c = &step.levels[i];
        let mut pts: Vec<f64> = vec![a];
        let lo = fluid.times.partition_point(|s| *s <= a);
        pts.extend(fluid.times[lo..].iter().copied().take_while(|s| *s < b));
        pts.extend(fluid.drained_at.filter(|d| *d > a && *d < b));
        pts.push(b);
        pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let d: Vec<f64> = pts.iter().map(|&t| norm_l1(&(c - fluid.level_at(t)))).collect();
        for j in 0..pts.len() {
            sup = sup.max(d[j]);
            if j > 0 {
                // ‖c - f‖₁ is convex on each piece; the trapezoid is an upper
                // estimate that is exact when no coordinate crosses zero
                area += 0.5 * (d[j] + d[j - 1]) * (pts[j] - pts[j - 1]);
            }
        }
    }
    (sup, if horizon > 0.0 { area / horizon } else { 0.0 })
}

/// One row of the distance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub r: f64,
    pub seed: u64,
    /// Time average of the distance over `[0, H]`.
    pub mean_dist: f64,
    /// u.o.c. distance on `[0, H]`.
    pub max_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    pub rows: Vec<DistanceRow>,
}

impl DistanceTable {
    /// Mean of the u.o.c. distance over seeds, per scale, in input order.
    pub fn mean_by_scale(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|(r, _, _)| *r == row.r) {
                Some(e) => {
                    e.1 += row.max_dist;
                    e.2 += 1;
                }
                None => out.push((row.r, row.max_dist, 1)),
            }
        }
        out.into_iter().map(|(r, s, n)| (r, s / n as f64)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "r,seed,mean_dist,max_dist")?;
        for row in &self.rows {
            writeln!(w, "{},{},{},{}", fmt17(row.r), row.seed, fmt17(row.mean_dist), fmt17(row.max_dist))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// Settings for [`fluid_limit_compare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub r_list: Vec<f64>,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    /// Fluid integration step.
    pub step: f64,
    pub selectors: Vec<ControlSelector>,
}

/// For each `r` and seed: start from `round(r·q_direction)` with fresh
/// residuals, simulate, scale by `r`, and measure the distance to the
/// closest fluid path of the selector ensemble from the same scaled state.
pub fn fluid_limit_compare(qspec: &QueueingSpec, q_direction: &DVector<f64>, config: &CompareConfig) -> Result<DistanceTable, FluidLimitError> {
    let k = qspec.network.num_classes();
    if q_direction.len() != k || q_direction.iter().any(|x| *x < 0.0) {
        return Err(FluidLimitError::Invalid("direction must be a nonnegative vector over the classes".into()));
    }
    if config.selectors.is_empty() {
        return Err(FluidLimitError::Invalid("need at least one fluid selector".into()));
    }
    let dynamics = Dynamics::new(qspec.network.clone());
    let mut rows = Vec::new();
    for &r in &config.r_list {
        let q: Vec<u64> = q_direction.iter().map(|x| (r * x).round() as u64).collect();
        let start = DVector::from_iterator(k, q.iter().map(|x| *x as f64 / r));
        let fluids: Vec<Trajectory> = config
            .selectors
            .iter()
            .map(|s| dynamics.simulate(&start, s, config.horizon, config.step))
            .collect::<Result<_, _>>()?;
        let per_seed: Vec<DistanceRow> = config
            .seeds
            .par_iter()
            .map(|&seed| {
                let run_seed = rng::child_seed(seed, r.to_bits());
                let x = InitialState::fresh(qspec, q.clone(), run_seed);
                let path = simulate_queueing(qspec, &x, r * config.horizon, run_seed)?;
                let scaled = scale_path(&path, r, config.horizon)?;
                let best = fluids
                    .iter()
                    .map(|f| step_to_fluid_distance(&scaled, f, config.horizon))
                    .fold((f64::INFINITY, f64::INFINITY), |a, b| if b.0 < a.0 { b } else { a });
                Ok(DistanceRow {
                    r,
                    seed,
                    mean_dist: best.1,
                    max_dist: best.0,
                })
            })
            .collect::<Result<_, FluidLimitError>>()?;
        rows.extend(per_seed);
    }
    Ok(DistanceTable { rows })
}

/// `q`-th quantile of `|ΔQ|₁/Δt` over consecutive grid points of a scaled
/// path.
pub fn slope_quantile(path: &StepPath, quantile: f64) -> f64 {
    let mut slopes: Vec<f64> = (1..path.times.len())
        .map(|i| norm_l1(&(&path.levels[i] - &path.levels[i - 1])) / (path.times[i] - path.times[i - 1]))
        .collect();
    if slopes.is_empty() {
        return 0.0;
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((slopes.len() as f64 - 1.0) * quantile.clamp(0.0, 1.0)).round() as usize;
    slopes[idx]
}

/// Evidence for splicing scaled sample paths: the scaled path from
/// `round(r·q_direction)` is cut at `t_star`, a fresh simulation restarts
/// from the state found there, and the u.o.c. distance between the old tail
/// and the restarted path is returned. Small values mean the spliced path
/// looks like another scaled sample path from the same state.
pub fn concatenation_evidence(
    qspec: &QueueingSpec,
    q_direction: &DVector<f64>,
    r: f64,
    t_star: f64,
    horizon: f64,
    seed: u64,
) -> Result<f64, FluidLimitError> {
    let q: Vec<u64> = q_direction.iter().map(|x| (r * x).round() as u64).collect();
    let x = InitialState::fresh(qspec, q, seed);
    let first = simulate_queueing(qspec, &x, r * (t_star + horizon), seed)?;
    let mid = first.state_at(r * t_star).to_vec();
    let restart = InitialState::fresh(qspec, mid, rng::child_seed(seed, 1));
    let second = simulate_queueing(qspec, &restart, r * horizon, rng::child_seed(seed, 2))?;
    let grid: Vec<f64> = (0..=200).map(|i| horizon * i as f64 / 200.0).collect();
    let shifted: Vec<f64> = grid.iter().map(|t| t + t_star).collect();
    let tail = scale_path_on(&first, r, &shifted)?;
    let fresh = scale_path_on(&second, r, &grid)?;
    Ok(tail
        .levels
        .iter()
        .zip(&fresh.levels)
        .map(|(a, b)| norm_l1(&(a - b)))
        .fold(0.0, f64::max))
}
