use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};

use fluidnet::dynamics::{ControlSelector, Dynamics};
use fluidnet::fixtures;
use fluidnet::skorokhod::{is_completely_s, solve_lsp, LspInstance};

fn lu_kumar_simulation(c: &mut Criterion) {
    let dynamics = Dynamics::new(fixtures::lu_kumar());
    let x0 = DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]);
    c.bench_function("lu_kumar_simulate_50", |b| {
        b.iter(|| {
            dynamics
                .simulate(black_box(&x0), &ControlSelector::MinDrain, 50.0, 0.05)
                .unwrap()
        })
    });
}

fn vertex_enumeration(c: &mut Criterion) {
    let spec = fixtures::reentrant_line();
    let k = spec.num_classes();
    c.bench_function("reentrant_control_vertices", |b| {
        b.iter(|| {
            let mut n = 0;
            for mask in 0u32..(1 << k) {
                let empty: Vec<bool> = (0..k).map(|i| mask & (1 << i) != 0).collect();
                n += spec.control_halfspaces(black_box(&empty)).vertices().len();
            }
            n
        })
    });
}

fn lsp(c: &mut Criterion) {
    let r = DMatrix::from_row_slice(3, 3, &[1.0, -0.2, -0.3, -0.4, 1.0, -0.1, -0.2, -0.3, 1.0]);
    let inst = LspInstance::new(
        DVector::from_row_slice(&[-1.0, 0.5, -0.3]),
        r,
        DVector::from_row_slice(&[1.0, 0.5, 0.2]),
    )
    .unwrap();
    c.bench_function("lsp_3d_h0.01", |b| b.iter(|| solve_lsp(black_box(&inst), 5.0, 0.01).unwrap()));
}

fn completely_s(c: &mut Criterion) {
    let r = DMatrix::from_fn(8, 8, |i, j| if i == j { 2.0 } else { -0.2 });
    c.bench_function("completely_s_8x8", |b| b.iter(|| is_completely_s(black_box(&r)).unwrap()));
}

criterion_group!(benches, lu_kumar_simulation, vertex_enumeration, lsp, completely_s);
criterion_main!(benches);
