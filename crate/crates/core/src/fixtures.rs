//! Reference networks used throughout the tests, benches and examples.

use crate::model::{single_station, Discipline, NetworkSpec, RawNetwork};

fn build(raw: RawNetwork) -> NetworkSpec {
    NetworkSpec::validate(raw).expect("fixture networks are valid")
}

/// One station, one class, `μ = 1`.
pub fn single_queue(alpha: f64) -> NetworkSpec {
    build(single_station(vec![alpha], vec![1.0], Discipline::WorkConserving))
}

/// Two stations in series, `α = (1, 0)`, `μ = (2, 3)`.
pub fn tandem() -> NetworkSpec {
    build(RawNetwork {
        alpha: vec![1.0, 0.0],
        mu: vec![2.0, 3.0],
        routing: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        constituency: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        discipline: Discipline::WorkConserving,
    })
}

/// Station 1 serves classes 1 and 2, station 2 serves class 3; class 1
/// feeds class 3 and class 2 leaves. Allocation at station 1 is free.
pub fn two_station_work_conserving() -> NetworkSpec {
    build(RawNetwork {
        alpha: vec![0.3, 0.3, 0.0],
        mu: vec![1.0, 1.0, 1.0],
        routing: vec![vec![0.0, 0.0, 1.0], vec![0.0; 3], vec![0.0; 3]],
        constituency: vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        discipline: Discipline::WorkConserving,
    })
}

/// One station, two classes, class 1 preempts class 2, `μ = (1, 1)` and
/// `α = (a, a)`.
pub fn priority_two_class(a: f64) -> NetworkSpec {
    build(single_station(vec![a, a], vec![1.0, 1.0], Discipline::Priority(vec![0, 1])))
}

/// Re-entrant line 1 → 2 → 3 with classes 1 and 3 at station 1, class 2 at
/// station 2, work-conserving, loads (0.4, 0.2).
pub fn reentrant_line() -> NetworkSpec {
    build(RawNetwork {
        alpha: vec![0.2, 0.0, 0.0],
        mu: vec![1.0, 1.0, 1.0],
        routing: vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0; 3]],
        constituency: vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
        discipline: Discipline::WorkConserving,
    })
}

/// Mean service times of the Lu–Kumar fixture, classes 1..4.
pub const LU_KUMAR_MEANS: [f64; 4] = [0.1, 0.6, 0.1, 0.6];

/// Lu–Kumar network: route 1 → 2 → 3 → 4, station 1 = {1, 4},
/// station 2 = {2, 3}, classes 4 and 2 have priority, `α₁ = 1`.
pub fn lu_kumar() -> NetworkSpec {
    let mu = LU_KUMAR_MEANS.iter().map(|m| 1.0 / m).collect();
    let mut routing = vec![vec![0.0; 4]; 4];
    routing[0][1] = 1.0;
    routing[1][2] = 1.0;
    routing[2][3] = 1.0;
    build(RawNetwork {
        alpha: vec![1.0, 0.0, 0.0, 0.0],
        mu,
        routing,
        constituency: vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
        discipline: Discipline::Priority(vec![3, 1, 0, 2]),
    })
}

/// The five stable networks used for the Lyapunov sandwich and decrease
/// checks, with display names.
pub fn stable_suite() -> Vec<(&'static str, NetworkSpec)> {
    vec![
        ("single_queue", single_queue(0.5)),
        ("tandem", tandem()),
        ("two_station_wc", two_station_work_conserving()),
        ("priority_two_class", priority_two_class(0.25)),
        ("reentrant_line", reentrant_line()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_kumar_loads_are_below_one() {
        let rho = lu_kumar().traffic_intensity();
        assert!((rho[0] - 0.7).abs() < 1e-12);
        assert!((rho[1] - 0.7).abs() < 1e-12);
        assert!(LU_KUMAR_MEANS[1] + LU_KUMAR_MEANS[3] > 1.0);
    }

    #[test]
    fn stable_suite_is_underloaded() {
        for (name, spec) in stable_suite() {
            assert!(spec.traffic_intensity().max() < 1.0, "{name}");
        }
    }
}
