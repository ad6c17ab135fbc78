use std::f64::consts::TAU;

use qsmfg::coupling::{
    ergodic_drive, gamma_iterate, gamma_iterate_from, kset_report, psi_iterate, psi_iterate_from, run,
    solution_distance, solve_mu, CouplingConfig, ErgodicSchedule, InitialGuess, PastMeasures, Strategy,
};
use qsmfg::grid::{Grid, GridField, Point, VectorField};
use qsmfg::measure::{pushforward, wasserstein1_joint, ControlField, DensityField, JointMeasure, OtOptions};
use qsmfg::model::examples::{
    ConstantModel, Example1, Example1Params, MemoryModel, MemoryParams, SeparatedModel, SeparatedParams,
};
use qsmfg::model::{optimal_control, Coefficients, ControlSet, Kernel, ModelConstants, ModelSpec, MuContext};
use qsmfg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> Grid {
    Grid::new(1, 32).unwrap()
}

fn m0() -> DensityField {
    DensityField::von_mises(grid(), Point::new(0.3, 0.0), 2.0)
}

fn cfg() -> CouplingConfig {
    CouplingConfig {
        dt: 0.05,
        t_final: 0.5,
        ..Default::default()
    }
}

fn weak() -> Example1 {
    Example1::new(Example1Params {
        epsilon: 0.1,
        kappa: 0.2,
        potential: 0.5,
        ..Default::default()
    })
    .unwrap()
}

fn random_gradient(grid: Grid, rng: &mut ChaCha8Rng) -> VectorField {
    let amp = rng.gen_range(0.5..6.0);
    let phase = rng.gen_range(0.0..1.0);
    let u = GridField::from_fn(grid, |x| amp * (TAU * (x[0] - phase)).sin() / TAU);
    qsmfg::grid::gradient_central(&u)
}

fn random_density(grid: Grid, rng: &mut ChaCha8Rng) -> DensityField {
    DensityField::normalized(grid, (0..grid.len()).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap()
}

#[test]
fn uncoupled_measure_equation_is_solved_in_one_step() {
    let spec = Example1::new(Example1Params { epsilon: 0.0, potential: 0.3, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let du = random_gradient(grid(), &mut rng);
    let s = solve_mu(&spec, &m0(), &du, None, 1e-12, 50, &OtOptions::default()).unwrap();
    assert_eq!(s.iterations, 1);
    assert!(s.residual <= 1e-15);
    assert!(s.converged && !s.damped);
    assert_eq!(s.rate, 0.0);
}

#[test]
fn picard_ratio_respects_the_contraction_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (epsilon, bound) in [(0.25, 0.55), (0.05, 0.15)] {
        let params = Example1Params { epsilon, delta: 0.5, kappa: 0.3, ..Default::default() };
        let spec = Example1::new(params).unwrap();
        let mut measured = 0;
        for _ in 0..10 {
            let m = random_density(grid(), &mut rng);
            let du = random_gradient(grid(), &mut rng);
            let s = solve_mu(&spec, &m, &du, None, 1e-12, 200, &OtOptions::default()).unwrap();
            assert!(s.converged && !s.damped);
            assert!(s.rate <= bound, "lambda0={} rate={}", params.lambda0(), s.rate);
            for w in s.steps.windows(2) {
                if w[1] > 1e-11 {
                    assert!(w[1] <= bound * w[0]);
                    measured += 1;
                }
            }
        }
        assert!(measured > 0);
    }
}

#[test]
fn measure_solution_is_a_fixed_point() {
    let spec = weak();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_density(grid(), &mut rng);
    let du = random_gradient(grid(), &mut rng);
    let s = solve_mu(&spec, &m, &du, None, 1e-12, 200, &OtOptions::default()).unwrap();
    assert_eq!(s.mu, pushforward(&m, &s.policy).unwrap());
    // Independent recomputation of alpha* against the returned measure.
    let ctx = MuContext::Instant(&s.mu);
    let set = spec.control_set();
    let fresh: Vec<Point> = (0..grid().len())
        .map(|i| set.project(&optimal_control(&spec, &grid().coords(i), &du.values()[i], &ctx).unwrap().control))
        .collect();
    let fresh = pushforward(&m, &ControlField::new(grid(), fresh, set).unwrap()).unwrap();
    let r = wasserstein1_joint(&s.mu, &fresh).unwrap();
    assert!((r - s.residual).abs() < 1e-14 && r <= 1e-12);
}

#[test]
fn zero_iteration_budget_is_an_error() {
    let spec = weak();
    assert!(solve_mu(&spec, &m0(), &VectorField::zeros(grid()), None, 1e-10, 0, &OtOptions::default()).is_err());
}

/// `b = 0`, `l = |a - (0.3 - 2 abar)|^2 / 2` with `abar` the mean control of
/// the measure: the undamped measure map doubles deviations from the fixed
/// point `abar = 0.1`.
#[derive(Debug)]
struct Overshoot {
    set: ControlSet,
}

struct OvershootCoefficients {
    target: f64,
}

impl Coefficients for OvershootCoefficients {
    fn drift(&self, _x: &Point, _a: &Point) -> Point {
        Point::zeros()
    }
    fn cost(&self, _x: &Point, a: &Point) -> f64 {
        (a[0] - self.target).powi(2) / 2.0
    }
    fn closed_form_control(&self, _x: &Point, _p: &Point) -> Option<Point> {
        Some(Point::new(self.target.clamp(-1.0, 1.0), 0.0))
    }
    fn closed_form_hamiltonian(&self, x: &Point, p: &Point) -> Option<f64> {
        let a = self.closed_form_control(x, p)?;
        Some(-self.cost(x, &a))
    }
}

impl ModelSpec for Overshoot {
    fn name(&self) -> &str {
        "overshoot"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn control_set(&self) -> &ControlSet {
        &self.set
    }
    fn constants(&self) -> ModelConstants {
        ModelConstants { k: 4.0, lambda0: 2.0, ..Default::default() }
    }
    fn coefficients(&self, ctx: &MuContext<'_>) -> Result<Box<dyn Coefficients>> {
        let MuContext::Instant(nu) = ctx else { unreachable!() };
        Ok(Box::new(OvershootCoefficients { target: 0.3 - 2.0 * nu.control_moment()[0] / nu.mass() }))
    }
}

#[test]
fn oscillating_measure_map_falls_back_to_damping() {
    let spec = Overshoot { set: ControlSet::ball(1, 1.0) };
    let s = solve_mu(&spec, &m0(), &VectorField::zeros(grid()), None, 1e-10, 40, &OtOptions::default()).unwrap();
    assert!(s.damped);
    assert!(s.converged);
    assert!((s.mu.control_moment()[0] - 0.1).abs() < 1e-9);
}

#[test]
fn decoupled_model_converges_at_the_second_outer_step() {
    let spec = Example1::new(Example1Params { epsilon: 0.0, kappa: 0.0, potential: 0.5, ..Default::default() }).unwrap();
    let sol = gamma_iterate(&spec, &m0(), &cfg()).unwrap();
    assert!(sol.converged);
    assert_eq!(sol.outer_iterations(), 2);
    assert!(sol.log[1].error < 1e-12);
}

#[test]
fn separated_cost_fixes_the_gradient_after_one_step() {
    let spec = SeparatedModel::new(SeparatedParams::default()).unwrap();
    let sol = gamma_iterate(&spec, &m0(), &cfg()).unwrap();
    assert!(sol.converged);
    for r in &sol.log[1..] {
        assert!(r.du_error.unwrap() < 1e-9, "{r:?}");
    }
}

#[test]
fn converged_solution_satisfies_all_equations() {
    let spec = weak();
    let c = cfg();
    let sol = gamma_iterate(&spec, &m0(), &c).unwrap();
    assert!(sol.converged);
    assert!(sol.max_hjb_residual() <= c.hjb.tol);
    assert!(sol.max_mu_residual() <= c.inner_tol);
    assert!(sol.max_fp_residual() < 1e-12);
    assert!(sol.max_mass_error() <= 1e-12);
    assert_eq!(sol.slices.len(), c.steps() + 1);
    assert_eq!(sol.slices[0].m, m0());
    for s in &sol.slices {
        assert_eq!(s.mu, pushforward(&s.m, &s.policy).unwrap());
    }
}

#[test]
fn two_initializations_agree_under_weak_coupling() {
    let spec = weak();
    let c = cfg();
    let a = gamma_iterate(&spec, &m0(), &c).unwrap();
    let steps = c.steps() + 1;
    let u: Vec<GridField> = (0..steps).map(|_| GridField::from_fn(grid(), |x| 0.8 * (TAU * x[0]).sin())).collect();
    let guess = InitialGuess::from_values(&u, vec![DensityField::uniform(grid()); steps]);
    let b = gamma_iterate_from(&spec, &m0(), &c, &guess).unwrap();
    assert!(a.converged && b.converged);
    assert!(solution_distance(&a, &b, &c.ot).unwrap() <= 10.0 * c.outer_tol);
}

#[test]
fn gamma_and_psi_agree() {
    let spec = weak();
    let c = cfg();
    let g = gamma_iterate(&spec, &m0(), &c).unwrap();
    let p = psi_iterate(&spec, &m0(), &c).unwrap();
    assert!(g.converged && p.converged);
    assert_eq!(p.strategy, Strategy::Psi);
    assert!(p.log.iter().all(|r| r.mu_error.is_some()));
    assert!(solution_distance(&g, &p, &c.ot).unwrap() <= 10.0 * c.outer_tol);
    let via_run = run(&spec, &m0(), &CouplingConfig { strategy: Strategy::Psi, ..c }, &InitialGuess::Stationary).unwrap();
    assert_eq!(via_run.outer_iterations(), p.outer_iterations());
}

#[test]
fn warm_started_rerun_stops_immediately() {
    let spec = weak();
    let c = cfg();
    let first = gamma_iterate(&spec, &m0(), &c).unwrap();
    let again = gamma_iterate_from(&spec, &m0(), &c, &InitialGuess::FromSolution(&first)).unwrap();
    assert!(again.converged);
    assert!(again.outer_iterations() <= 2);
    assert!(solution_distance(&first, &again, &c.ot).unwrap() <= 10.0 * c.outer_tol);
}

fn memory(kernel: Kernel) -> MemoryModel {
    MemoryModel::new(MemoryParams {
        base: Example1Params { epsilon: 0.1, kappa: 0.2, potential: 0.5, ..Default::default() },
        kernel,
    })
    .unwrap()
}

#[test]
fn history_models_need_the_psi_strategy() {
    assert!(gamma_iterate(&memory(Kernel::Zero), &m0(), &cfg()).is_err());
}

#[test]
fn zero_kernel_reduces_to_the_uncoupled_model() {
    let c = cfg();
    let with_memory = psi_iterate(&memory(Kernel::Zero), &m0(), &c).unwrap();
    let plain = Example1::new(Example1Params { epsilon: 0.0, kappa: 0.0, potential: 0.5, ..Default::default() }).unwrap();
    let reference = gamma_iterate(&plain, &m0(), &c).unwrap();
    assert!(with_memory.converged && reference.converged);
    assert!(solution_distance(&with_memory, &reference, &c.ot).unwrap() < 1e-8);
}

#[test]
fn memory_model_converges_with_small_residuals() {
    let c = cfg();
    let spec = memory(Kernel::Exponential { scale: 1.0, rate: 1.0 });
    let sol = psi_iterate(&spec, &m0(), &c).unwrap();
    assert!(sol.converged);
    assert!(sol.max_hjb_residual() <= c.hjb.tol);
    assert!(sol.max_mu_residual() <= c.inner_tol);
    assert!(sol.max_fp_residual() < 1e-12);
    let again = psi_iterate_from(&spec, &m0(), &c, &InitialGuess::FromSolution(&sol)).unwrap();
    assert!(solution_distance(&sol, &again, &c.ot).unwrap() <= 10.0 * c.outer_tol);

    // Past measures feed the measure equation at later slices.
    let mus: Vec<JointMeasure> = sol.slices.iter().map(|s| s.mu.clone()).collect();
    let j = sol.slices.len() - 1;
    let past = PastMeasures { times: &sol.times, past: &mus[..j] };
    let s = &sol.slices[j];
    let fresh = solve_mu(&spec, &s.m, &s.hjb.gradient(), Some(&past), 1e-12, 200, &c.ot).unwrap();
    assert!(wasserstein1_joint(&fresh.mu, &s.mu).unwrap() < 1e-9);
}

#[test]
fn ergodic_constant_model() {
    let spec = ConstantModel::new(1, 0.4);
    let c = CouplingConfig { ergodic: ErgodicSchedule { max_levels: 6, ..Default::default() }, ..cfg() };
    let drive = ergodic_drive(&spec, &m0(), &c, &InitialGuess::Stationary).unwrap();
    assert!(drive.converged);
    assert!(drive.solution.rho.is_none());
    for l in drive.solution.lambdas() {
        assert!((l - 0.4).abs() < 1e-11);
    }
    assert!(drive.direct_lambda_gap < 1e-11);
}

#[test]
fn ergodic_separated_constants_track_the_interaction() {
    let params = SeparatedParams::default();
    let spec = SeparatedModel::new(params).unwrap();
    let base = SeparatedModel::new(SeparatedParams { gamma: 0.0, ..params }).unwrap();
    let nu = JointMeasure::dirac(Point::zeros(), Point::zeros());
    let h0 = qsmfg::hjb::solve_ergodic(
        &base,
        &MuContext::Instant(&nu),
        grid(),
        1e-10,
        qsmfg::hjb::ErgodicMode::Direct,
        &Default::default(),
        None,
    )
    .unwrap();
    let c_bar = h0.lambda.unwrap();
    let c = CouplingConfig { ergodic: ErgodicSchedule { tol: 1e-6, ..Default::default() }, ..cfg() };
    let drive = ergodic_drive(&spec, &m0(), &c, &InitialGuess::Stationary).unwrap();
    assert!(drive.converged);
    assert!(drive.direct_lambda_gap < 1e-5);
    for s in &drive.solution.slices {
        let expected = c_bar - spec.l1(&s.mu);
        assert!((s.hjb.lambda_estimate() - expected).abs() < 1e-9 + drive.direct_lambda_gap);
        // The shape does not depend on the measure.
        assert!(s.hjb.normalized().sup_distance(&h0.u) < 1e-5);
    }
}

#[test]
fn uniform_decoupled_state_does_not_move() {
    let spec = Example1::decoupled(1, 1.0, 1.0);
    let sol = gamma_iterate(&spec, &DensityField::uniform(grid()), &cfg()).unwrap();
    let k = kset_report(&spec, &sol, &OtOptions::default()).unwrap();
    assert!(k.m_holder.constant <= 1e-12);
    assert!(k.mu_holder.constant <= 1e-12);
    assert!(k.du_holder.constant <= 1e-12);
    assert!(k.du_sup <= 1e-12);
}

#[test]
fn kset_bounds_hold_on_a_converged_run() {
    let spec = weak();
    let c = cfg();
    let sol = gamma_iterate(&spec, &m0(), &c).unwrap();
    let k = kset_report(&spec, &sol, &c.ot).unwrap();
    assert!(k.rho_u_max.unwrap() <= k.cost_max + 1e-9);
    assert!(k.cost_max <= k.k_bound);
    assert!(k.min_density >= 0.0);
    assert!(k.m_holder.constant.is_finite() && k.m_holder.constant > 0.0);
    assert!(k.mu_holder.constant.is_finite() && k.mu_holder.constant > 0.0);
}

#[test]
fn holder_constants_are_stable_under_time_refinement() {
    let spec = weak();
    let coarse = cfg();
    let fine = CouplingConfig { dt: coarse.dt / 2.0, ..coarse };
    let a = kset_report(&spec, &gamma_iterate(&spec, &m0(), &coarse).unwrap(), &coarse.ot).unwrap();
    let b = kset_report(&spec, &gamma_iterate(&spec, &m0(), &fine).unwrap(), &fine.ot).unwrap();
    for (x, y) in [(a.m_holder.constant, b.m_holder.constant), (a.mu_holder.constant, b.mu_holder.constant)] {
        assert!(x / y < 2.0 && y / x < 2.0, "{x} {y}");
    }
}

#[test]
fn config_validation() {
    let bad = [
        CouplingConfig { dt: 0.03, ..cfg() },
        CouplingConfig { damping: 0.0, ..cfg() },
        CouplingConfig { rho: -1.0, ..cfg() },
        CouplingConfig { max_outer: 0, ..cfg() },
    ];
    for c in bad {
        assert!(gamma_iterate(&weak(), &m0(), &c).is_err());
    }
    let wrong_dim = DensityField::uniform(Grid::new(2, 8).unwrap());
    assert!(gamma_iterate(&weak(), &wrong_dim, &cfg()).is_err());
    let text = serde_json::to_string(&cfg()).unwrap();
    assert_eq!(serde_json::from_str::<CouplingConfig>(&text).unwrap(), cfg());
    assert!(serde_json::from_str::<CouplingConfig>(r#"{"outer_toll": 1}"#).is_err());
}

#[test]
fn csv_outputs_have_one_row_per_record() {
    let spec = weak();
    let sol = gamma_iterate(&spec, &m0(), &cfg()).unwrap();
    let conv = sol.convergence_csv();
    assert_eq!(conv.lines().next(), Some("iteration,error,du_error,m_error,mu_error"));
    assert_eq!(conv.lines().count(), sol.log.len() + 1);
    let traj = sol.trajectory_csv();
    assert_eq!(traj.lines().next(), Some("t,node,u,m,a0"));
    assert_eq!(traj.lines().count(), sol.slices.len() * grid().len() + 1);
    assert_eq!(sol.fp_trajectory().densities.len(), sol.slices.len());
}
