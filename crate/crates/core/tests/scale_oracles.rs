use effectop::media::sample_ensemble;
use effectop::scale::{disintegrate, effective_tensor, integrate_check, strict_mono_probe};
use effectop::{
    CellProblem, DiscreteField, EffectiveGraph, MediumKind, MediumSpec, MonotoneLaw, Orientation, PeriodicGrid,
    Realization, RepFunction, SolverKnobs,
};

fn tight() -> SolverKnobs {
    SolverKnobs {
        rel_decrease: 0.0,
        ..SolverKnobs::default()
    }
}

fn layered(d: usize) -> MediumSpec {
    MediumSpec::new(
        MediumKind::Layered {
            axis: 0,
            values: [1.0, 4.0],
            probs: [0.5, 0.5],
        },
        d,
    )
    .unwrap()
}

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

fn fitzpatrick(d: usize) -> RepFunction {
    RepFunction::two_phase(
        RepFunction::closed_identity_scaled(d, 1.0).unwrap(),
        RepFunction::closed_identity_scaled(d, 4.0).unwrap(),
    )
    .unwrap()
}

fn conjugate_sum(d: usize) -> RepFunction {
    RepFunction::two_phase(
        RepFunction::conjugate_sum(&MonotoneLaw::power(d, 1.0, 2.0).unwrap()).unwrap(),
        RepFunction::conjugate_sum(&MonotoneLaw::power(d, 4.0, 2.0).unwrap()).unwrap(),
    )
    .unwrap()
}

fn ensemble(spec: &MediumSpec, n: usize, seeds: std::ops::Range<u64>) -> Vec<Realization> {
    let grid = PeriodicGrid::new(spec.d, n).unwrap();
    let seeds: Vec<u64> = seeds.collect();
    sample_ensemble(spec, &seeds, grid).unwrap()
}

fn problem(rep: RepFunction, ens: Vec<Realization>, knobs: SolverKnobs) -> CellProblem {
    CellProblem::new(rep, ens, Orientation::GradientToFlux, knobs).unwrap()
}

/// Harmonic mean of the layer values crossed along axis 0.
fn harmonic_across(r: &Realization) -> f64 {
    let grid = r.grid;
    let n = grid.n_side();
    let mut inv = 0.0;
    for i in 0..n {
        let mut coords = [0; 3];
        coords[0] = i;
        inv += 1.0 / r.value(grid.index(&coords[..grid.d()]));
    }
    n as f64 / inv
}

#[test]
fn layered_f0_gap_vanishes_at_the_harmonic_mean() {
    let p = problem(fitzpatrick(1), ensemble(&layered(1), 4096, 0..16), SolverKnobs::default());
    let s = p.f0_eval(&[1.0], &[1.6]).unwrap();
    assert!(s.gap >= -1e-9);
    assert!(s.gap <= 1e-3, "gap {}", s.gap);
    // off the graph the gap is bounded away from zero
    let off = p.f0_eval(&[1.0], &[2.5]).unwrap();
    assert!(off.gap > 0.1, "gap {}", off.gap);
}

#[test]
fn layered_alpha0_and_disintegration() {
    let p = problem(fitzpatrick(1), ensemble(&layered(1), 4096, 0..16), tight());
    let s = p.alpha0_eval(&[1.0]).unwrap();
    assert!((s.eta[0] - 1.6).abs() <= 0.016, "eta {}", s.eta[0]);
    let oracle = p.ensemble().iter().map(harmonic_across).sum::<f64>() / 16.0;
    assert!((s.eta[0] - oracle).abs() < 1e-8);
    let rep = disintegrate(&p, &s, 1e-4).unwrap();
    assert!(rep.mean_residual <= 1e-6, "mean {}", rep.mean_residual);
    assert!(rep.max_residual <= 1e-4, "max {}", rep.max_residual);
    assert!(!rep.flagged);
}

#[test]
fn layered_closed_form_correctors_integrate() {
    // constant flux H_m per realization, gradient H_m / a(x) with mean 1
    let p = problem(fitzpatrick(1), ensemble(&layered(1), 1024, 0..4), tight());
    let mut input = Vec::new();
    let mut output = Vec::new();
    for r in p.ensemble() {
        let h = harmonic_across(r);
        let grad: Vec<f64> = r.field.values().iter().map(|a| h / a).collect();
        input.push(DiscreteField::from_values(r.grid, 1, grad).unwrap());
        output.push(DiscreteField::constant(r.grid, &[h]));
    }
    let rep = integrate_check(&p, &input, &output, 1e-10).unwrap();
    assert!(rep.precondition_ok);
    assert!((rep.xi[0] - 1.0).abs() < 1e-12);
    assert!(rep.gap <= 1e-3, "gap {}", rep.gap);
}

#[test]
fn refinement_stability_of_the_layered_oracle() {
    // RMS error over independent ensembles of 16 realizations each
    let replicates = 8u64;
    let mut rms = Vec::new();
    for n in [512usize, 1024, 2048, 4096] {
        let mut sq = 0.0;
        for k in 0..replicates {
            let start = 1000 * n as u64 + 16 * k;
            let p = problem(fitzpatrick(1), ensemble(&layered(1), n, start..start + 16), tight());
            let eta = p.alpha0_eval(&[1.0]).unwrap().eta[0];
            sq += (eta - 1.6).powi(2);
        }
        rms.push((sq / replicates as f64).sqrt());
    }
    for w in rms.windows(2) {
        assert!(w[1] <= 1.5 * w[0], "rms errors {rms:?}");
    }
}

#[test]
fn representative_choice_does_not_move_the_layered_law() {
    let ens = ensemble(&layered(1), 1024, 40..48);
    let a = problem(fitzpatrick(1), ens.clone(), tight()).alpha0_eval(&[1.0]).unwrap();
    let b = problem(conjugate_sum(1), ens, tight()).alpha0_eval(&[1.0]).unwrap();
    assert!(a.certified && b.certified);
    assert!((a.eta[0] - b.eta[0]).abs() < 1e-6, "{} vs {}", a.eta[0], b.eta[0]);
}

#[test]
fn representative_choice_does_not_move_the_checkerboard_law() {
    let ens = ensemble(&checkerboard(), 64, 0..4);
    let a = problem(fitzpatrick(2), ens.clone(), tight()).alpha0_eval(&[1.0, 0.0]).unwrap();
    let b = problem(conjugate_sum(2), ens, tight()).alpha0_eval(&[1.0, 0.0]).unwrap();
    for i in 0..2 {
        assert!((a.eta[i] - b.eta[i]).abs() < 1e-4, "{:?} vs {:?}", a.eta, b.eta);
    }
}

#[test]
fn laminate_tensor_matches_the_sampled_layers() {
    let p = problem(fitzpatrick(2), ensemble(&layered(2), 64, 0..16), tight());
    let t = effective_tensor(&p).unwrap();
    let m = p.ensemble().len() as f64;
    let across = p.ensemble().iter().map(harmonic_across).sum::<f64>() / m;
    let along = p.ensemble().iter().map(|r| r.field.mean()[0]).sum::<f64>() / m;
    assert!((t.matrix[(0, 0)] - across).abs() < 1e-6, "{} vs {across}", t.matrix[(0, 0)]);
    assert!((t.matrix[(1, 1)] - along).abs() < 1e-6, "{} vs {along}", t.matrix[(1, 1)]);
    assert!(t.matrix[(0, 1)].abs() < 1e-6 && t.matrix[(1, 0)].abs() < 1e-6);
}

#[test]
fn laminate_tensor_matches_the_population_values() {
    // 64 × 512 independent layers: standard error about 0.23% for both entries
    let p = problem(fitzpatrick(2), ensemble(&layered(2), 64, 0..512), tight());
    let t = effective_tensor(&p).unwrap();
    assert!((t.matrix[(0, 0)] / 1.6 - 1.0).abs() <= 0.01, "{}", t.matrix);
    assert!((t.matrix[(1, 1)] / 2.5 - 1.0).abs() <= 0.01, "{}", t.matrix);
    assert!(t.symmetry_defect < 1e-6);
}

#[test]
fn checkerboard_tensor_is_isotropic() {
    let p = problem(fitzpatrick(2), ensemble(&checkerboard(), 64, 0..8), tight());
    let t = effective_tensor(&p).unwrap();
    for i in 0..2 {
        assert!((t.matrix[(i, i)] / 2.0 - 1.0).abs() <= 0.03, "{}", t.matrix);
    }
    assert!(t.matrix[(0, 1)].abs() <= 0.05 && t.matrix[(1, 0)].abs() <= 0.05, "{}", t.matrix);
}

#[test]
fn effective_graphs_are_monotone_and_strict() {
    let p = problem(fitzpatrick(2), ensemble(&checkerboard(), 32, 0..4), tight());
    let axes = vec![vec![-1.0, 0.0, 1.0], vec![-1.0, 0.0, 1.0]];
    let graph = EffectiveGraph::tabulate_tensor(&p, axes).unwrap();
    assert!(graph.min_pairing() >= -1e-8);
    let probe = strict_mono_probe(&graph, 1.0, 0.1).unwrap();
    assert!(probe.holds, "theta_eff {}", probe.theta_eff);

    let p1 = problem(fitzpatrick(1), ensemble(&layered(1), 1024, 0..8), tight());
    let graph = EffectiveGraph::tabulate(&p1, &[vec![-1.0], vec![0.5], vec![2.0]]).unwrap();
    let probe = strict_mono_probe(&graph, 1.0, 0.1).unwrap();
    assert!(probe.holds && probe.theta_eff >= 1.0);
    assert!((probe.theta_eff - 1.6).abs() < 0.05, "theta_eff {}", probe.theta_eff);
}
