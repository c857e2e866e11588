use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{Matrix3, Matrix3x2};
use thinlimit::density::{dist2_so3_grad, w0_3x2_grad, DensitySpec};
use thinlimit::discretization::{
    apply_boundary_conditions, extrude_bulk_mesh, triangulate_chart, BoundaryData, BulkEnergy, MembraneDensity, MembraneEnergy, MeshRef,
};
use thinlimit::geometry::{ChartDomain, FrameKind, MetricField};
use thinlimit::optimize::EnergyFunction;
use thinlimit::relaxation::{build_envelope_table, LaminationParams};

fn pointwise(c: &mut Criterion) {
    let f = Matrix3::new(1.1, 0.2, -0.1, 0.05, 0.9, 0.3, -0.2, 0.1, 1.3);
    c.bench_function("dist2_so3_grad", |b| b.iter(|| dist2_so3_grad(black_box(&f))));
    let q = Matrix3x2::new(1.2, 0.1, -0.3, 0.8, 0.2, 0.4);
    c.bench_function("w0_3x2_grad", |b| b.iter(|| w0_3x2_grad(black_box(&q))));

    let p = LaminationParams { n_directions: 16, n_t: 7, n_amplitudes: 8, grid_n: 31, depth: 2, ..Default::default() };
    let table = build_envelope_table(&DensitySpec::dist2_so(2), &p).unwrap();
    c.bench_function("envelope_smoothed_3x2", |b| b.iter(|| table.smoothed_3x2(black_box(&q))));
}

fn assembly(c: &mut Criterion) {
    let domain = ChartDomain::unit_square();
    let metric = MetricField::spherical_cap(2.0, domain.clone(), 0.2).unwrap();
    let spec = DensitySpec::dist2_so(2);
    let bc = BoundaryData::Affine {
        a: nalgebra::DMatrix::from_row_slice(3, 2, &[1.2, 0.0, 0.0, 1.0, 0.0, 0.0]),
        c: vec![0.0; 3],
        b: vec![0.0, 0.0, 0.95],
    };
    let surface = triangulate_chart(&domain, 12).unwrap();
    let bulk = extrude_bulk_mesh(&surface, 0.1, 4).unwrap();

    let fm = apply_boundary_conditions(MeshRef::Surface(&surface), &bc, 3).unwrap();
    let em = MembraneEnergy::new(&metric, &spec, MembraneDensity::Unrelaxed, &surface, &fm).unwrap();
    let mut gm = vec![0.0; fm.values.len()];
    c.bench_function("membrane_energy_grad_12", |b| b.iter(|| em.evaluate(black_box(&fm.values), Some(&mut gm)).unwrap()));

    let fb = apply_boundary_conditions(MeshRef::Bulk(&bulk), &bc, 3).unwrap();
    let eb = BulkEnergy::new(&metric, &spec, &bulk, &fb, FrameKind::Transported).unwrap();
    let mut gb = vec![0.0; fb.values.len()];
    c.bench_function("bulk_energy_grad_12x4", |b| b.iter(|| eb.evaluate(black_box(&fb.values), Some(&mut gb)).unwrap()));
}

criterion_group!(benches, pointwise, assembly);
criterion_main!(benches);
