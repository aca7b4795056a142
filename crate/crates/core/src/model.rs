//! Static network data and admissible-control polytopes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polytope::Halfspaces;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("routing matrix has spectral radius {rho:.6} (must be < 1)")]
    SpectralRadiusTooLarge { rho: f64 },
    #[error("constituency matrix is not a partition of classes: {0}")]
    ConstituencyNotPartition(String),
    #[error("negative or invalid rate: {0}")]
    NegativeRate(String),
    #[error("priority order is not a permutation of the classes")]
    BadPermutation,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index {index} out of range (size {size})")]
    InvalidIndex { index: usize, size: usize },
    #[error("active set admits no feasible control")]
    InfeasibleActiveSet,
    #[error("operation requires the {0} discipline")]
    WrongDiscipline(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Discipline {
    WorkConserving,
    /// Classes listed from highest to lowest priority; only the relative
    /// order of classes sharing a station matters.
    Priority(Vec<usize>),
}

/// Unvalidated network data, dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNetwork {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub routing: Vec<Vec<f64>>,
    pub constituency: Vec<Vec<f64>>,
    pub discipline: Discipline,
}

/// A validated fluid network `(α, μ, P, C)` together with its discipline.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    alpha: DVector<f64>,
    mu: DVector<f64>,
    routing: DMatrix<f64>,
    constituency: DMatrix<f64>,
    station_of: Vec<usize>,
    discipline: Discipline,
    /// rank[k] = position of class k in the priority list (0 = highest).
    rank: Vec<usize>,
    /// (I - Pᵀ) M
    transfer: DMatrix<f64>,
    spectral_radius: f64,
}

/// Which part of the boundary a polytope was built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveSet {
    EmptyStations(Vec<usize>),
    EmptyClasses(Vec<usize>),
}

/// Vertex representation of a set of allocation rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolytope {
    pub vertices: Vec<DVector<f64>>,
    pub active_set: ActiveSet,
}

impl ControlPolytope {
    pub fn dim(&self) -> usize {
        self.vertices.first().map_or(0, |v| v.len())
    }
}

const POWER_ITERATION_CAP: usize = 10_000;
const POWER_ITERATION_RTOL: f64 = 1e-10;

/// Perron root of a nonnegative square matrix.
///
/// Power iteration runs on `I + P`, which is primitive whenever `P` is
/// irreducible, and stops once the Collatz–Wielandt bounds agree to a
/// relative 1e-10. If the cap is hit the upper bound is returned, and it is
/// never larger than the Gershgorin row-sum bound.
pub fn spectral_radius(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    if n == 0 {
        return 0.0;
    }
    let shifted = DMatrix::identity(n, n) + p;
    let mut x = DVector::from_element(n, 1.0);
    let mut upper = f64::INFINITY;
    for _ in 0..POWER_ITERATION_CAP {
        let y = &shifted * &x;
        let ratios = y.iter().zip(x.iter()).map(|(a, b)| a / b);
        let (lo, hi) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r), hi.max(r))
        });
        upper = upper.min(hi);
        if hi - lo <= POWER_ITERATION_RTOL * hi {
            return (0.5 * (lo + hi) - 1.0).max(0.0);
        }
        let norm = y.max();
        x = y / norm;
    }
    let gershgorin = (0..n)
        .map(|i| p.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    (upper - 1.0).clamp(0.0, gershgorin)
}

fn check_rate(name: &str, v: &[f64], strict: bool) -> Result<(), ModelError> {
    for (k, &x) in v.iter().enumerate() {
        let bad = !x.is_finite() || x < 0.0 || (strict && x <= 0.0);
        if bad {
            return Err(ModelError::NegativeRate(format!("{name}[{}] = {x}", k + 1)));
        }
    }
    Ok(())
}

impl NetworkSpec {
    /// Validates raw data: shapes, rates, routing, constituency and the
    /// priority permutation.
    pub fn validate(raw: RawNetwork) -> Result<Self, ModelError> {
        let k = raw.alpha.len();
        if raw.mu.len() != k {
            return Err(ModelError::DimensionMismatch(format!(
                "alpha has {k} entries, mu has {}",
                raw.mu.len()
            )));
        }
        if raw.routing.len() != k || raw.routing.iter().any(|r| r.len() != k) {
            return Err(ModelError::DimensionMismatch(format!("routing must be {k}x{k}")));
        }
        let j = raw.constituency.len();
        if j == 0 || raw.constituency.iter().any(|r| r.len() != k) {
            return Err(ModelError::DimensionMismatch(format!(
                "constituency must be Jx{k} with J >= 1"
            )));
        }
        check_rate("alpha", &raw.alpha, false)?;
        check_rate("mu", &raw.mu, true)?;

        let constituency = DMatrix::from_fn(j, k, |r, c| raw.constituency[r][c]);
        let mut station_of = vec![usize::MAX; k];
        for c in 0..k {
            for r in 0..j {
                let v = constituency[(r, c)];
                if v != 0.0 && v != 1.0 {
                    return Err(ModelError::ConstituencyNotPartition(format!(
                        "entry ({}, {}) is {v}, expected 0 or 1",
                        r + 1,
                        c + 1
                    )));
                }
                if v == 1.0 {
                    if station_of[c] != usize::MAX {
                        return Err(ModelError::ConstituencyNotPartition(format!(
                            "class {} is served at more than one station",
                            c + 1
                        )));
                    }
                    station_of[c] = r;
                }
            }
            if station_of[c] == usize::MAX {
                return Err(ModelError::ConstituencyNotPartition(format!(
                    "class {} is served at no station",
                    c + 1
                )));
            }
        }
        for r in 0..j {
            if !station_of.contains(&r) {
                return Err(ModelError::ConstituencyNotPartition(format!(
                    "station {} serves no class",
                    r + 1
                )));
            }
        }

        let routing = DMatrix::from_fn(k, k, |r, c| raw.routing[r][c]);
        for r in 0..k {
            let row = routing.row(r);
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ModelError::NegativeRate(format!(
                    "routing row {} has a negative entry",
                    r + 1
                )));
            }
            if row.sum() > 1.0 + 1e-12 {
                return Err(ModelError::SpectralRadiusTooLarge { rho: row.sum() });
            }
        }
        let rho = spectral_radius(&routing);
        if rho >= 1.0 - 1e-12 {
            return Err(ModelError::SpectralRadiusTooLarge { rho });
        }

        let rank = match &raw.discipline {
            Discipline::WorkConserving => vec![0; k],
            Discipline::Priority(order) => {
                let mut rank = vec![usize::MAX; k];
                if order.len() != k {
                    return Err(ModelError::BadPermutation);
                }
                for (pos, &c) in order.iter().enumerate() {
                    if c >= k || rank[c] != usize::MAX {
                        return Err(ModelError::BadPermutation);
                    }
                    rank[c] = pos;
                }
                rank
            }
        };

        let mu = DVector::from_vec(raw.mu);
        let transfer = (DMatrix::identity(k, k) - routing.transpose()) * DMatrix::from_diagonal(&mu);
        Ok(NetworkSpec {
            alpha: DVector::from_vec(raw.alpha),
            mu,
            routing,
            constituency,
            station_of,
            discipline: raw.discipline,
            rank,
            transfer,
            spectral_radius: rho,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_stations(&self) -> usize {
        self.constituency.nrows()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn routing(&self) -> &DMatrix<f64> {
        &self.routing
    }

    pub fn constituency(&self) -> &DMatrix<f64> {
        &self.constituency
    }

    pub fn discipline(&self) -> &Discipline {
        &self.discipline
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// `(I - Pᵀ) M`, the map from allocation rates to net outflow.
    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.transfer
    }

    pub fn station_of(&self, class: usize) -> usize {
        self.station_of[class]
    }

    /// Classes served at `station`, in index order.
    pub fn classes_at(&self, station: usize) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&c| self.station_of[c] == station)
            .collect()
    }

    /// Same-station classes with priority at least that of `class`
    /// (including `class` itself). For work-conserving networks this is
    /// every class at the station.
    pub fn priority_set(&self, class: usize) -> Vec<usize> {
        let s = self.station_of[class];
        (0..self.num_classes())
            .filter(|&l| self.station_of[l] == s && self.rank[l] <= self.rank[class])
            .collect()
    }

    pub fn to_raw(&self) -> RawNetwork {
        let k = self.num_classes();
        RawNetwork {
            alpha: self.alpha.as_slice().to_vec(),
            mu: self.mu.as_slice().to_vec(),
            routing: (0..k).map(|r| self.routing.row(r).iter().copied().collect()).collect(),
            constituency: (0..self.num_stations())
                .map(|r| self.constituency.row(r).iter().copied().collect())
                .collect(),
            discipline: self.discipline.clone(),
        }
    }

    /// Nominal station loads `ρ = C M⁻¹ (I - Pᵀ)⁻¹ α`.
    pub fn traffic_intensity(&self) -> DVector<f64> {
        let k = self.num_classes();
        let lhs = DMatrix::identity(k, k) - self.routing.transpose();
        let lambda = lhs
            .lu()
            .solve(&self.alpha)
            .expect("I - Pᵀ is invertible when the spectral radius is below one");
        let work = lambda.component_div(&self.mu);
        &self.constituency * work
    }

    /// Emptiness pattern of a state under threshold `eps`.
    pub fn empty_classes(&self, q: &DVector<f64>, eps: f64) -> Vec<bool> {
        q.iter().map(|&x| x < eps).collect()
    }

    /// Halfspace description of the admissible controls when the classes
    /// flagged in `empty` hold no fluid.
    pub fn control_halfspaces(&self, empty: &[bool]) -> Halfspaces {
        let k = self.num_classes();
        let mut h = Halfspaces::new(k);
        h.nonnegative();
        match self.discipline {
            Discipline::WorkConserving => {
                for s in 0..self.num_stations() {
                    let classes = self.classes_at(s);
                    let mut row = vec![0.0; k];
                    for &c in &classes {
                        row[c] = 1.0;
                    }
                    if classes.iter().all(|&c| empty[c]) {
                        h.at_most(row, 1.0);
                    } else {
                        h.equal(row, 1.0);
                    }
                }
            }
            Discipline::Priority(_) => {
                for c in 0..k {
                    let mut row = vec![0.0; k];
                    for l in self.priority_set(c) {
                        row[l] = 1.0;
                    }
                    if empty[c] {
                        h.at_most(row, 1.0);
                    } else {
                        h.equal(row, 1.0);
                    }
                }
            }
        }
        h
    }

    /// Admissible work-conserving allocations when exactly the stations in
    /// `empty_stations` are empty.
    pub fn work_conserving_polytope(
        &self,
        empty_stations: &[usize],
    ) -> Result<ControlPolytope, ModelError> {
        if self.discipline != Discipline::WorkConserving {
            return Err(ModelError::WrongDiscipline("work-conserving"));
        }
        let j = self.num_stations();
        let mut empty = vec![false; self.num_classes()];
        for &s in empty_stations {
            if s >= j {
                return Err(ModelError::InvalidIndex { index: s, size: j });
            }
            for c in self.classes_at(s) {
                empty[c] = true;
            }
        }
        let vertices = self.control_halfspaces(&empty).vertices();
        if vertices.is_empty() {
            return Err(ModelError::InfeasibleActiveSet);
        }
        let mut set = empty_stations.to_vec();
        set.sort_unstable();
        set.dedup();
        Ok(ControlPolytope {
            vertices,
            active_set: ActiveSet::EmptyStations(set),
        })
    }

    /// Admissible priority allocations when exactly the classes in
    /// `empty_classes` are empty.
    pub fn priority_polytope(&self, empty_classes: &[usize]) -> Result<ControlPolytope, ModelError> {
        if !matches!(self.discipline, Discipline::Priority(_)) {
            return Err(ModelError::WrongDiscipline("priority"));
        }
        let k = self.num_classes();
        let mut empty = vec![false; k];
        for &c in empty_classes {
            if c >= k {
                return Err(ModelError::InvalidIndex { index: c, size: k });
            }
            empty[c] = true;
        }
        let vertices = self.control_halfspaces(&empty).vertices();
        if vertices.is_empty() {
            return Err(ModelError::InfeasibleActiveSet);
        }
        let mut set = empty_classes.to_vec();
        set.sort_unstable();
        set.dedup();
        Ok(ControlPolytope {
            vertices,
            active_set: ActiveSet::EmptyClasses(set),
        })
    }

    /// Largest ‖u‖₁ over every admissible control of every boundary
    /// configuration. The all-empty polytope contains all the others.
    pub fn max_control_norm(&self) -> f64 {
        let empty = vec![true; self.num_classes()];
        self.control_halfspaces(&empty)
            .vertices()
            .iter()
            .map(|v| v.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Lipschitz constant `‖α‖₁ + ‖(I-Pᵀ)M‖₁ · u_max` of every fluid path.
    pub fn lipschitz_constant(&self) -> f64 {
        let alpha_norm: f64 = self.alpha.iter().map(|x| x.abs()).sum();
        alpha_norm + matrix_norm_l1(&self.transfer) * self.max_control_norm()
    }
}

/// Induced ℓ₁ norm: the largest absolute column sum.
pub fn matrix_norm_l1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Threshold below which a fluid level counts as empty.
pub fn emptiness_threshold(q0: &DVector<f64>) -> f64 {
    1e-9 * (1.0 + norm_l1(q0))
}

/// Single-station network with `k` classes and no routing.
pub fn single_station(alpha: Vec<f64>, mu: Vec<f64>, discipline: Discipline) -> RawNetwork {
    let k = alpha.len();
    RawNetwork {
        alpha,
        mu,
        routing: vec![vec![0.0; k]; k],
        constituency: vec![vec![1.0; k]],
        discipline,
    }
}
