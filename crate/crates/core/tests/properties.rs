use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use fluidnet::dynamics::{check_trajectory, ControlSelector, Dynamics};
use fluidnet::fixtures;
use fluidnet::gfn::{concatenate, scale, shift, PathFamily};
use fluidnet::lyapunov::{approximate_v, total_fluid, v_functional, SearchBudget};
use fluidnet::model::{norm_l1, NetworkSpec};
use fluidnet::skorokhod::{is_completely_s, solve_lsp, LspInstance};
use fluidnet::specfile::{network_to_toml, SpecFile};
use fluidnet::stability::unit_sphere_starts;

fn fixture(i: usize) -> NetworkSpec {
    match i % 6 {
        0 => fixtures::single_queue(0.5),
        1 => fixtures::tandem(),
        2 => fixtures::two_station_work_conserving(),
        3 => fixtures::priority_two_class(0.25),
        4 => fixtures::reentrant_line(),
        _ => fixtures::lu_kumar(),
    }
}

fn start(weights: &[f64], k: usize, radius: f64) -> DVector<f64> {
    let w: Vec<f64> = (0..k).map(|i| weights[i % weights.len()]).collect();
    let s: f64 = w.iter().sum();
    DVector::from_vec(w.into_iter().map(|x| radius * x / s).collect())
}

fn selector(i: u64) -> ControlSelector {
    match i % 4 {
        0 => ControlSelector::MaxDrain,
        1 => ControlSelector::MinDrain,
        2 => ControlSelector::FirstVertex,
        _ => ControlSelector::RandomVertex(i),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn path_operations_stay_in_the_network(
        net in 0usize..6,
        weights in prop::collection::vec(0.05f64..1.0, 4),
        radius in 0.1f64..3.0,
        sel in 0u64..1000,
        r in 0.2f64..5.0,
        frac in 0.0f64..1.0,
    ) {
        let spec = fixture(net);
        let d = Dynamics::new(spec.clone());
        let x = start(&weights, spec.num_classes(), radius);
        let traj = d.simulate(&x, &selector(sel), 15.0, 0.05).unwrap();
        prop_assert!(check_trajectory(&spec, &traj).is_ok());
        let scaled = scale(&traj, r).unwrap();
        prop_assert!(check_trajectory(&spec, &scaled).is_ok());
        let t = frac * traj.horizon();
        let shifted = shift(&traj, t).unwrap();
        prop_assert!(check_trajectory(&spec, &shifted).is_ok());
        let tail = d.simulate(&traj.level_at(t), &selector(sel + 1), 15.0, 0.05).unwrap();
        let spliced = concatenate(&traj, t, &tail).unwrap();
        prop_assert!(check_trajectory(&spec, &spliced).is_ok());
    }

    #[test]
    fn fluid_integral_identities(
        net in 0usize..5,
        weights in prop::collection::vec(0.05f64..1.0, 4),
        r in 0.25f64..4.0,
        fracs in prop::collection::vec(0.0f64..1.0, 5),
    ) {
        let spec = fixture(net);
        let x = start(&weights, spec.num_classes(), 1.0);
        let traj = Dynamics::new(spec).simulate(&x, &ControlSelector::MinDrain, 50.0, 0.05).unwrap();
        prop_assert!(traj.is_drained());
        let total = total_fluid(&traj).value;
        let scaled = total_fluid(&scale(&traj, r).unwrap()).value;
        prop_assert!((scaled - total / (r * r)).abs() <= 1e-8 * total.max(1e-12) / (r * r) + 1e-12);
        let mut times: Vec<f64> = fracs.iter().map(|f| f * traj.horizon()).collect();
        times.sort_by(f64::total_cmp);
        let mut last = f64::INFINITY;
        for t in times {
            let v = v_functional(&traj, t).value;
            prop_assert!(v <= last + 1e-12);
            let direct = total_fluid(&shift(&traj, t).unwrap()).value;
            prop_assert!((v - direct).abs() <= 1e-10);
            last = v;
        }
    }

    #[test]
    fn lsp_scaling(
        theta in prop::collection::vec(-1.0f64..1.0, 2),
        z0 in prop::collection::vec(0.0f64..2.0, 2),
        off in prop::collection::vec(-0.4f64..0.4, 2),
        r in 0.5f64..4.0,
    ) {
        let reflection = DMatrix::from_row_slice(2, 2, &[1.0, off[0], off[1], 1.0]);
        let inst = LspInstance::new(DVector::from_vec(theta.clone()), reflection.clone(), DVector::from_vec(z0.clone())).unwrap();
        let sol = solve_lsp(&inst, 4.0, 0.01).unwrap();
        prop_assert!(sol.is_monotone());
        prop_assert!(sol.min_level() >= 0.0);
        prop_assert!(sol.residual(&inst) <= 1e-7 * (1.0 + norm_l1(&inst.z0)));
        // Z(r·)/r with Y(r·)/r solves the problem from Z₀/r
        let small = LspInstance::new(DVector::from_vec(theta), reflection, DVector::from_vec(z0) / r).unwrap();
        let mut scaled = sol.clone();
        scaled.times.iter_mut().for_each(|t| *t /= r);
        scaled.z.iter_mut().for_each(|z| *z /= r);
        scaled.y.iter_mut().for_each(|y| *y /= r);
        prop_assert!(scaled.residual(&small) <= 1e-7);
    }

    #[test]
    fn diagonally_dominant_matrices_are_completely_s(
        n in 1usize..6,
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        margin in 0.01f64..1.0,
    ) {
        let mut r = DMatrix::from_fn(n, n, |i, j| entries[i * 6 + j]);
        for i in 0..n {
            let off: f64 = (0..n).filter(|j| *j != i).map(|j| r[(i, j)].abs()).sum();
            r[(i, i)] = off + margin;
        }
        prop_assert!(is_completely_s(&r).unwrap());
        // a negative diagonal entry is a 1×1 principal submatrix that fails
        r[(0, 0)] = -margin;
        prop_assert!(!is_completely_s(&r).unwrap());
    }

    #[test]
    fn unit_sphere_starts_lie_on_the_simplex(k in 1usize..7, samples in 0usize..20, seed in any::<u64>()) {
        let starts = unit_sphere_starts(k, samples, seed);
        prop_assert_eq!(starts.len(), k + samples);
        for x in starts {
            prop_assert!(x.iter().all(|v| *v >= 0.0));
            prop_assert!((norm_l1(&x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_files_round_trip(
        alpha in prop::collection::vec(0.0f64..0.3, 3),
        mu in prop::collection::vec(0.5f64..3.0, 3),
        p01 in 0.0f64..0.9,
        priority in any::<bool>(),
    ) {
        use fluidnet::model::{Discipline, RawNetwork};
        let raw = RawNetwork {
            alpha,
            mu,
            routing: vec![vec![0.0, p01, 0.0], vec![0.0, 0.0, 1.0], vec![0.0; 3]],
            constituency: vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
            discipline: if priority { Discipline::Priority(vec![2, 1, 0]) } else { Discipline::WorkConserving },
        };
        let spec = NetworkSpec::validate(raw).unwrap();
        let back = SpecFile::parse(&network_to_toml(&spec)).unwrap().require_network().unwrap();
        prop_assert_eq!(back, spec);
    }
}

#[test]
fn value_search_is_monotone_in_budget() {
    let spec = fixtures::reentrant_line();
    let fam = PathFamily::network(spec, vec![ControlSelector::MinDrain], 60.0, 0.1);
    let x = DVector::from_row_slice(&[0.2, 0.5, 0.3]);
    let mut last = 0.0;
    for (depth, multistarts) in [(0, 0), (1, 0), (1, 2), (2, 2), (2, 4)] {
        let budget = SearchBudget {
            horizon: 60.0,
            step: 0.1,
            depth,
            multistarts,
            seed: 5,
        };
        let v = approximate_v(&fam, &x, &budget).unwrap().value;
        assert!(v >= last - 1e-12, "depth {depth}, multistarts {multistarts}: {v} < {last}");
        last = v;
    }
}

#[test]
fn scaled_drain_times_scale_linearly() {
    let d = Dynamics::new(fixtures::tandem());
    let x = DVector::from_row_slice(&[0.4, 0.6]);
    let base = d.simulate(&x, &ControlSelector::MaxDrain, 50.0, 0.05).unwrap().drained_at.unwrap();
    for r in [0.5, 2.0, 3.0] {
        let t = d
            .simulate(&(&x * r), &ControlSelector::MaxDrain, 50.0, 0.05)
            .unwrap()
            .drained_at
            .unwrap();
        assert!((t - r * base).abs() <= 2.0 * 0.05, "r={r}: {t} vs {}", r * base);
    }
}
