use criterion::{criterion_group, criterion_main, Criterion};
use effectop::media::sample_ensemble;
use effectop::pde::{solve_elliptic, DirichletMesh, MediumLaw};
use effectop::{
    helmholtz_split, CellProblem, DiscreteField, MediumKind, MediumSpec, MonotoneLaw, Orientation, PeriodicGrid,
    RepFunction, SolverKnobs,
};
use std::f64::consts::PI;

fn checkerboard() -> MediumSpec {
    MediumSpec::new(
        MediumKind::Checkerboard {
            values: [1.0, 4.0],
            probs: [0.5, 0.5],
        },
        2,
    )
    .unwrap()
}

fn helmholtz(c: &mut Criterion) {
    for n in [64, 256] {
        let grid = PeriodicGrid::new(2, n).unwrap();
        let field = DiscreteField::from_fn(grid, 2, |x| {
            vec![(2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos(), (2.0 * PI * x[1]).cos()]
        });
        c.bench_function(&format!("helmholtz_split 2d n={n}"), |b| {
            b.iter(|| helmholtz_split(&field).unwrap())
        });
    }
}

fn cell_problem(c: &mut Criterion) {
    let grid = PeriodicGrid::new(2, 32).unwrap();
    let ens = sample_ensemble(&checkerboard(), &[1, 2], grid).unwrap();
    let rep = RepFunction::two_phase(
        RepFunction::closed_identity_scaled(2, 1.0).unwrap(),
        RepFunction::closed_identity_scaled(2, 4.0).unwrap(),
    )
    .unwrap();
    let p = CellProblem::new(rep, ens, Orientation::GradientToFlux, SolverKnobs::default()).unwrap();
    let mut group = c.benchmark_group("alpha0");
    group.sample_size(10);
    group.bench_function("checkerboard n=32 m=2", |b| b.iter(|| p.alpha0_report(&[1.0, 0.0]).unwrap()));
    group.finish();
}

fn elliptic(c: &mut Criterion) {
    let mesh = DirichletMesh::new(2, 64).unwrap();
    let law = MediumLaw::homogeneous(MonotoneLaw::power(2, 1.0, 3.0).unwrap()).unwrap();
    let mut group = c.benchmark_group("elliptic");
    group.sample_size(10);
    group.bench_function("power p=3 mesh 64", |b| {
        b.iter(|| solve_elliptic(mesh, &law, |x| vec![(PI * x[0]).sin() * (PI * x[1]).sin()]).unwrap())
    });
    group.finish();
}

criterion_group!(benches, helmholtz, cell_problem, elliptic);
criterion_main!(benches);
