use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdaudit::audit::*;
use rdaudit::grid::{Boundary, Field, Grid, State};
use rdaudit::integrate::{run, run_observed, Source, StepControls, Trajectory};
use rdaudit::systems::{GrowthClass, MassClass, Monomial, ReactionSpec, SystemSpec, TruncationLevel};

fn unit(cells: usize, bc: Boundary) -> Grid {
    Grid::uniform_1d(1.0, cells, bc).unwrap()
}

fn random_state(grid: Grid, m: usize, max: f64, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let species = (0..m)
        .map(|_| Field::new(grid, (0..grid.cell_count()).map(|_| rng.gen_range(0.0..max)).collect()).unwrap())
        .collect();
    State::new(0.0, species).unwrap()
}

fn lv_skew() -> ReactionSpec {
    ReactionSpec::lotka_volterra(vec![-1.0, -1.0], vec![vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap()
}

fn heat_run(cells: usize, dt: f64) -> Trajectory {
    let g = unit(cells, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::inert(1).unwrap(), vec![1.0]).unwrap();
    let u0 = State::new(0.0, vec![Field::from_fn(g, |x, _| 1.0 + (PI * x).cos())]).unwrap();
    run(&spec, TruncationLevel::none(), &u0, &StepControls::fixed(dt, 1.0).with_stride(1)).unwrap()
}

fn stride1(spec: &SystemSpec, n: f64, u0: &State, dt: f64, t: f64) -> Trajectory {
    run(spec, TruncationLevel::new(n).unwrap(), u0, &StepControls::fixed(dt, t).with_stride(1)).unwrap()
}

#[test]
fn heat_key_estimate_is_an_equality() {
    let traj = heat_run(128, 1e-4);
    let reg = UVRegistration::for_system(&traj.spec);
    let key = key_estimate_audit(&traj, &reg).unwrap();
    assert!(key.passed(), "{key:?}");
    assert!((key.lhs - key.rhs).abs() <= 1e-6 * key.rhs, "{key:?}");
    let exact = 1.0 + 1.0 / (4.0 * PI * PI);
    assert!((key.rhs - exact).abs() < 1e-3 * exact);
}

#[test]
fn heat_pierre_and_mass() {
    let traj = heat_run(128, 1e-3);
    let reg = UVRegistration::for_system(&traj.spec);
    let p = pierre_l2_audit(&traj, &reg).unwrap();
    assert!(p.passed(), "{p:?}");
    assert!((p.rhs - 1.5).abs() < 1e-9 * 1.5 + 1e-3, "{p:?}");
    assert!((p.lhs - 1.0253).abs() < 2e-3, "{p:?}");
    assert_eq!(p.constants["A_min"], 1.0);
    assert_eq!(p.constants["A_max"], 1.0);

    let mass = mass_audit(&traj, &reg).unwrap();
    assert!(mass.audits.iter().all(EstimateAudit::passed), "{:?}", mass.audits);
}

#[test]
fn zero_initial_data_gives_trivial_audits() {
    let g = unit(32, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 1.0).unwrap(), vec![1.0, 2.0, 3.0])
        .unwrap();
    let u0 = State::new(0.0, vec![Field::zeros(g); 3]).unwrap();
    let traj = stride1(&spec, 10.0, &u0, 0.01, 0.2);
    let reg = UVRegistration::for_system(&spec);
    let key = key_estimate_audit(&traj, &reg).unwrap();
    assert!(key.passed() && key.lhs == 0.0, "{key:?}");
    let p = pierre_l2_audit(&traj, &reg).unwrap();
    assert!(p.passed() && p.lhs == 0.0 && p.rhs == 0.0);
    for a in conservation_audit(&traj, &spec.reaction.conservation_combos()).unwrap() {
        assert!(a.passed());
    }
    let budget = reaction_l1_budget(&traj).unwrap();
    assert!(budget.per_species.iter().all(|&b| b == 0.0));
}

#[test]
fn s112_key_estimate_is_tight_when_mass_is_conserved() {
    let g = unit(64, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 2.0).unwrap(), vec![1.0, 2.0, 3.0])
        .unwrap();
    let u0 = random_state(g, 3, 5.0, 11);
    let traj = stride1(&spec, 100.0, &u0, 1e-3, 1.0);
    let key = key_estimate_audit(&traj, &UVRegistration::for_system(&spec)).unwrap();
    assert!(key.passed(), "{key:?}");
    assert_eq!(key.constants["B"], 0.0);
    assert!(key.margin.abs() <= key.tol, "{key:?}");
}

#[test]
fn pierre_weights_stay_between_diffusivities() {
    let g = unit(64, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 1.0).unwrap(), vec![1.0, 2.0, 3.0])
        .unwrap();
    let u0 = random_state(g, 3, 3.0, 12);
    let traj = stride1(&spec, 100.0, &u0, 1e-3, 0.5);
    let p = pierre_l2_audit(&traj, &UVRegistration::for_system(&spec)).unwrap();
    assert!(p.passed(), "{p:?}");
    assert!(p.constants["A_min"] >= 1.0 && p.constants["A_max"] <= 3.0);
}

#[test]
fn mass_examples() {
    let g = unit(64, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::s_alpha_beta_gamma(2.0, 1.0, 2.0).unwrap(), vec![1.0, 2.0, 3.0])
        .unwrap();
    let u0 = random_state(g, 3, 3.0, 13);
    let traj = stride1(&spec, 100.0, &u0, 1e-3, 1.0);
    let report = mass_audit(&traj, &UVRegistration::for_system(&spec)).unwrap();
    assert!(report.audits.iter().all(EstimateAudit::passed), "{:?}", report.audits);
    let m0 = report.series[0].1;
    assert!(report.series.iter().all(|&(_, m)| (m - m0).abs() <= 1e-10 * m0));

    let spec = SystemSpec::semilinear(lv_skew(), vec![1.0, 1.0]).unwrap();
    let u0 = random_state(g, 2, 3.0, 14);
    let traj = stride1(&spec, 100.0, &u0, 1e-3, 0.5);
    let report = mass_audit(&traj, &UVRegistration::for_system(&spec)).unwrap();
    assert!(report.audits.iter().all(EstimateAudit::passed));
    assert!(report.series.windows(2).all(|w| w[1].1 < w[0].1));
}

#[test]
fn conservation_combos_of_builtins() {
    let g = unit(64, Boundary::Neumann);
    for (reaction, d) in [
        (ReactionSpec::s_alpha_beta_gamma(2.0, 1.0, 3.0).unwrap(), vec![1.0, 10.0, 0.1]),
        (ReactionSpec::s_alpha_beta_gamma_delta(1.0, 2.0, 1.0, 3.0).unwrap(), vec![1.0, 10.0, 0.1, 1.0]),
    ] {
        let m = reaction.m();
        let spec = SystemSpec::semilinear(reaction, d).unwrap();
        let u0 = random_state(g, m, 2.0, 15);
        let traj = stride1(&spec, 100.0, &u0, 1e-3, 1.0);
        let audits = conservation_audit(&traj, &spec.reaction.conservation_combos()).unwrap();
        assert_eq!(audits.len(), 2);
        assert!(audits.iter().all(EstimateAudit::passed), "{audits:?}");
    }
}

#[test]
fn third_equation_identity_for_s113() {
    let g = unit(64, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 3.0).unwrap(), vec![1.0, 2.0, 3.0])
        .unwrap();
    let u0 = random_state(g, 3, 3.0, 16);
    let traj = stride1(&spec, 100.0, &u0, 1e-3, 1.0);
    let budget = reaction_l1_budget(&traj).unwrap();
    let balance = budget.audits.iter().find(|a| a.name == "species_balance[2]").unwrap();
    assert!(balance.passed(), "{balance:?}");
    assert!(balance.lhs.is_finite() && balance.lhs > 0.0);
}

#[test]
fn lv_budget_is_stable_in_n() {
    let g = unit(64, Boundary::Neumann);
    let spec = SystemSpec::semilinear(lv_skew(), vec![1.0, 2.0]).unwrap();
    let u0 = random_state(g, 2, 5.0, 17);
    let b1 = reaction_l1_budget(&stride1(&spec, 100.0, &u0, 1e-3, 1.0)).unwrap();
    let b2 = reaction_l1_budget(&stride1(&spec, 200.0, &u0, 1e-3, 1.0)).unwrap();
    for a in budget_stability(&b1, &b2) {
        assert!(a.passed(), "{a:?}");
    }
}

#[test]
fn porous_theta_bound_and_two_species_budgets() {
    let g = unit(128, Boundary::Dirichlet);
    let spec = SystemSpec::new(ReactionSpec::inert(1).unwrap(), vec![1.0], vec![2.0], Boundary::Dirichlet).unwrap();
    let bump = Field::from_fn(g, |x, _| if (x - 0.5).abs() < 0.25 { 2.0 } else { 0.0 });
    let u0 = State::new(0.0, vec![bump]).unwrap();
    let traj = run(&spec, TruncationLevel::none(), &u0, &StepControls::cfl_only(0.9, 1.0).with_stride(1)).unwrap();
    let budgets = porous_audit(&traj, &UVRegistration::for_system(&spec)).unwrap();
    let theta = &budgets.audits[0];
    assert!(theta.passed(), "{theta:?}");
    assert!(theta.rhs <= 0.125 * 1.005 && theta.rhs >= 0.125 * 0.995);

    let uv = [(0, 1.0), (1, 1.0)];
    let reaction = ReactionSpec::custom(
        vec![vec![Monomial::new(-1.0, &uv)], vec![Monomial::new(1.0, &uv)]],
        vec![1.0, 1.0],
        MassClass::Dissipative,
        GrowthClass::SuperQuadratic { c: 1.0, eps: 0.5, exponents: vec![2.0, 3.0] },
    )
    .unwrap();
    let spec = SystemSpec::new(reaction, vec![1.0, 0.5], vec![2.0, 3.0], Boundary::Dirichlet).unwrap();
    let u0 = random_state(g, 2, 2.0, 18);
    let mut out = Vec::new();
    for n in [100.0, 200.0] {
        let traj = run(
            &spec,
            TruncationLevel::new(n).unwrap(),
            &u0,
            &StepControls { dt: Some(1e-3), ..StepControls::cfl_only(0.9, 0.2) }.with_stride(1),
        )
        .unwrap();
        let b = porous_audit(&traj, &UVRegistration::for_system(&spec)).unwrap();
        assert!(b.audits[0].passed(), "{:?}", b.audits[0]);
        let rb = reaction_l1_budget(&traj).unwrap();
        let ui = rb.audits.iter().find(|a| a.name == "uniform_integrability").unwrap();
        assert!(ui.passed(), "{ui:?}");
        out.push(b);
    }
    for a in porous_stability(&out[0], &out[1]) {
        assert!(a.passed(), "{a:?}");
    }
}

fn no_sign_run(cells: usize, scale: f64) -> NoSignReport {
    let g = unit(cells, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::inert(1).unwrap(), vec![1.0]).unwrap();
    let u0 = State::new(0.0, vec![Field::constant(g, 1.0)]).unwrap();
    let src = Source::new(move |_, t, x| scale * (2.0 * PI * x[0]).sin() * t.cos());
    let reg = UVRegistration::for_system(&spec);
    let mut acc = NoSignAccumulator::new(reg);
    run_observed(&spec, TruncationLevel::none(), Some(&src), &u0, &StepControls::fixed(1e-3, 1.0), &mut [&mut acc])
        .unwrap();
    acc.finish()
}

#[test]
fn no_sign_example_and_scaling() {
    let r = no_sign_run(128, 1.0);
    assert!(r.bound.passed(), "{:?}", r.bound);
    assert!(r.companion.passed(), "{:?}", r.companion);
    assert!(r.bound.constants["observed_C"] <= r.bound.constants["C"] * (1.0 + 1e-9));
    let lhs = [0.0, 1.0, 2.0, 4.0].map(|s| no_sign_run(64, s).bound.lhs);
    let probe = no_sign_scaling_probe(lhs);
    assert!(probe.passed(), "{probe:?}");
}

#[test]
fn no_sign_constant_is_grid_stable() {
    let a = no_sign_constant(&unit(128, Boundary::Neumann)).unwrap();
    let b = no_sign_constant(&unit(256, Boundary::Neumann)).unwrap();
    assert!((a - b).abs() / a < 0.1);
}

#[test]
fn gronwall_bound_for_linear_growth_class() {
    // f1 = 1 + u1 - u1 u2, f2 = u1 u2 - u2: Σ f = 1 + u1 - u2 ≤ 1 + u1 + u2
    let reaction = ReactionSpec::custom(
        vec![
            vec![Monomial::constant(1.0), Monomial::new(1.0, &[(0, 1.0)]), Monomial::new(-1.0, &[(0, 1.0), (1, 1.0)])],
            vec![Monomial::new(1.0, &[(0, 1.0), (1, 1.0)]), Monomial::new(-1.0, &[(1, 1.0)])],
        ],
        vec![1.0, 1.0],
        MassClass::LinearGrowth { c0: 1.0 },
        GrowthClass::Quadratic { c: 3.0 },
    )
    .unwrap();
    let spec = SystemSpec::semilinear(reaction, vec![1.0, 0.5]).unwrap();
    let g = unit(64, Boundary::Neumann);
    let u0 = random_state(g, 2, 2.0, 19);
    let traj = stride1(&spec, 1e3, &u0, 1e-3, 1.0);
    let reg = UVRegistration::for_system(&spec);
    let mass = mass_audit(&traj, &reg).unwrap();
    assert!(mass.audits.iter().all(EstimateAudit::passed), "{:?}", mass.audits);
    let key = key_estimate_audit(&traj, &reg).unwrap();
    assert!(key.passed(), "{key:?}");
}

#[test]
fn truncation_study_decreases() {
    let g = unit(32, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 2.0).unwrap(), vec![1.0, 2.0, 3.0])
        .unwrap();
    let u0 = random_state(g, 3, 50.0, 20);
    let rep =
        truncation_convergence_study(&spec, &u0, &StepControls::fixed(1e-3, 0.5), &[16.0, 64.0, 256.0, 1024.0], None)
            .unwrap();
    assert!(rep.audit.passed(), "{:?}", rep.d);
    assert!(truncation_convergence_study(&spec, &u0, &StepControls::fixed(1e-3, 0.5), &[16.0, 64.0], None).is_err());
}

#[test]
fn audits_are_reproducible_and_match_live_runs() {
    let g = unit(32, Boundary::Neumann);
    let spec = SystemSpec::semilinear(ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 2.0).unwrap(), vec![1.0, 10.0, 0.1])
        .unwrap();
    let u0 = random_state(g, 3, 4.0, 21);
    let reg = UVRegistration::for_system(&spec);
    let mut live = KeyEstimateAccumulator::new(reg.clone());
    let controls = StepControls::fixed(1e-3, 0.3).with_stride(1);
    let traj =
        run_observed(&spec, TruncationLevel::new(50.0).unwrap(), None, &u0, &controls, &mut [&mut live]).unwrap();
    let a = key_estimate_audit(&traj, &reg).unwrap();
    let b = key_estimate_audit(&traj, &reg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, live.finish());
}

#[test]
fn dirichlet_runs_mark_key_estimate_inapplicable() {
    let g = unit(32, Boundary::Dirichlet);
    let spec = SystemSpec::new(ReactionSpec::inert(1).unwrap(), vec![1.0], vec![1.0], Boundary::Dirichlet).unwrap();
    let u0 = random_state(g, 1, 1.0, 22);
    let traj = stride1(&spec, 10.0, &u0, 1e-3, 0.1);
    let key = key_estimate_audit(&traj, &UVRegistration::for_system(&spec)).unwrap();
    assert_eq!(key.status, AuditStatus::Inapplicable);
}
