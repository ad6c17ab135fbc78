//! Sampled spot-checks of a model's declared structure.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ContextKind, FrozenModel, History, ModelSpec, MuContext};
use crate::error::Result;
use crate::grid::{torus_distance, Point};
use crate::measure::{wasserstein1_joint, Atom, JointMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateOptions {
    pub samples: usize,
    pub seed: u64,
    /// Brute-force points per control axis.
    pub mesh: usize,
    /// Gradients are drawn from `[-p_max, p_max]^d`.
    pub p_max: f64,
    /// Step of the central difference in `p`.
    pub fd_step: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 7,
            mesh: 1001,
            p_max: 4.0,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub samples: usize,
    pub failures: usize,
    /// Largest `observed - allowed` over samples; negative when all pass.
    pub worst_margin: f64,
}

impl Check {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            samples: 0,
            failures: 0,
            worst_margin: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, observed: f64, allowed: f64) {
        self.samples += 1;
        let margin = observed - allowed;
        self.worst_margin = self.worst_margin.max(margin);
        if !(margin <= 0.0) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub checks: Vec<Check>,
    pub mesh_warnings: usize,
    pub non_unique_warnings: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Owned measure data that can be borrowed as a [`MuContext`].
#[derive(Debug, Clone)]
pub enum OwnedContext {
    Instant(JointMeasure),
    History { times: Vec<f64>, trajectory: Vec<JointMeasure> },
}

impl OwnedContext {
    pub fn as_context(&self) -> MuContext<'_> {
        match self {
            OwnedContext::Instant(m) => MuContext::Instant(m),
            OwnedContext::History { times, trajectory } => {
                let (current, past) = trajectory.split_last().expect("nonempty trajectory");
                MuContext::History(History::new(times, past, current).expect("consistent history"))
            }
        }
    }
}

fn random_point(rng: &mut impl Rng, dim: usize, lo: f64, hi: f64) -> Point {
    let mut p = Point::zeros();
    for k in 0..dim {
        p[k] = rng.gen_range(lo..hi);
    }
    p
}

/// A random probability measure on `T^d x A` with at most `max_atoms` atoms.
pub fn random_measure(spec: &dyn ModelSpec, rng: &mut impl Rng, max_atoms: usize) -> JointMeasure {
    let set = spec.control_set();
    let r = set.max_norm();
    let count = rng.gen_range(1..=max_atoms.max(1));
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let atoms = raw
        .iter()
        .map(|w| Atom {
            x: random_point(rng, spec.state_dim(), 0.0, 1.0),
            a: set.project(&random_point(rng, set.dim(), -r, r)),
            w: w / total,
        })
        .collect();
    JointMeasure::new(atoms, None).expect("valid random measure")
}

pub fn random_context(spec: &dyn ModelSpec, rng: &mut impl Rng, max_atoms: usize) -> OwnedContext {
    match spec.context_kind() {
        ContextKind::Instant => OwnedContext::Instant(random_measure(spec, rng, max_atoms)),
        ContextKind::History => {
            let steps = rng.gen_range(2..=6);
            let dt = 0.1;
            OwnedContext::History {
                times: (0..steps).map(|k| k as f64 * dt).collect(),
                trajectory: (0..steps).map(|_| random_measure(spec, rng, max_atoms)).collect(),
            }
        }
    }
}

/// Runs the structural spot-checks on sampled `(x, a, p, nu)`.
pub fn validate_model(spec: &dyn ModelSpec, opts: &ValidateOptions) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let consts = spec.constants();
    let set = *spec.control_set();
    let d = spec.state_dim();
    let spacing = set.mesh_spacing(opts.mesh);
    let k = consts.k;

    let mut bound = Check::new("coefficient_bound");
    let mut alpha = Check::new("alpha_closed_vs_brute");
    let mut ham = Check::new("hamiltonian_closed_vs_brute");
    let mut hp = Check::new("hp_finite_difference");
    let mut lip_x = Check::new("lipschitz_in_x");
    let mut convex = Check::new("convex_in_p");
    let mut contraction = Check::new("alpha_lipschitz_in_measure");
    let mut mesh_warnings = 0;
    let mut non_unique_warnings = 0;

    for _ in 0..opts.samples {
        let owned = random_context(spec, &mut rng, 6);
        let ctx = owned.as_context();
        let frozen = FrozenModel::new(spec, &ctx)?;
        let x = random_point(&mut rng, d, 0.0, 1.0);
        let p = random_point(&mut rng, d, -opts.p_max, opts.p_max);
        let r = set.max_norm();
        let a = set.project(&random_point(&mut rng, set.dim(), -r, r));

        bound.record(frozen.drift(&x, &a).norm().max(frozen.cost(&x, &a).abs()), k + 1e-9);

        let checked = frozen.hamiltonian_checked(&x, &p);
        mesh_warnings += checked.mesh_too_coarse as usize;
        non_unique_warnings += frozen.optimal_control_checked(&x, &p).non_unique as usize;

        if frozen.has_closed_form() {
            let (bf, h_bf, ambiguous) = frozen.brute_force(&x, &p, opts.mesh);
            let cf = frozen.optimal_control(&x, &p);
            // A flat objective has no unique maximizer to compare against.
            if !ambiguous {
                alpha.record((bf - cf).norm(), spacing * (set.dim() as f64).sqrt() + 1e-12);
            }
            let h_cf = frozen.hamiltonian(&x, &p);
            ham.record((h_bf - h_cf).abs(), (k + p.norm() * k) * spacing + 1e-12);
        }

        // Central differences, skipped when the stencil straddles a switch
        // between interior and boundary maximizers.
        let g = frozen.hamiltonian_gradient_p(&x, &p);
        let s = opts.fd_step;
        for axis in 0..d {
            let mut e = Point::zeros();
            e[axis] = s;
            let on = |q: &Point| set.on_boundary(&frozen.optimal_control(&x, q), 1e-9);
            let flags = [on(&(p + e * 2.0)), on(&p), on(&(p - e * 2.0))];
            if flags.iter().any(|&f| f != flags[0]) {
                continue;
            }
            let fd = (frozen.hamiltonian(&x, &(p + e)) - frozen.hamiltonian(&x, &(p - e))) / (2.0 * s);
            hp.record((fd - g[axis]).abs(), 1e-6);
        }

        let x2 = random_point(&mut rng, d, 0.0, 1.0);
        let dh = (frozen.hamiltonian(&x, &p) - frozen.hamiltonian(&x2, &p)).abs();
        lip_x.record(dh, consts.l * (1.0 + p.norm()) * torus_distance(&x, &x2) + 1e-9);

        let p2 = random_point(&mut rng, d, -opts.p_max, opts.p_max);
        let mid = frozen.hamiltonian(&x, &((p + p2) * 0.5));
        let avg = 0.5 * (frozen.hamiltonian(&x, &p) + frozen.hamiltonian(&x, &p2));
        convex.record(mid - avg, 1e-9);

        if let OwnedContext::Instant(nu1) = &owned {
            let nu2 = random_measure(spec, &mut rng, 6);
            let other = FrozenModel::new(spec, &MuContext::Instant(&nu2))?;
            let da = (frozen.optimal_control(&x, &p) - other.optimal_control(&x, &p)).norm();
            let w = wasserstein1_joint(nu1, &nu2)?;
            contraction.record(da, consts.lambda0 * w + 1e-9);
        }
    }

    let checks = [bound, alpha, ham, hp, lip_x, convex, contraction]
        .into_iter()
        .filter(|c| c.samples > 0)
        .collect();
    Ok(ValidationReport {
        model: spec.name().to_string(),
        checks,
        mesh_warnings,
        non_unique_warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::super::examples::{ConstantModel, Example1, Example1Params, SeparatedModel, SeparatedParams};
    use super::*;

    #[test]
    fn builtin_models_pass() {
        let opts = ValidateOptions {
            samples: 60,
            ..Default::default()
        };
        let e1 = Example1::new(Example1Params::default()).unwrap();
        let sep = SeparatedModel::new(SeparatedParams::default()).unwrap();
        let c = ConstantModel::new(1, 0.4);
        for spec in [&e1 as &dyn ModelSpec, &sep, &c] {
            let report = validate_model(spec, &opts).unwrap();
            assert!(report.passed(), "{report:#?}");
        }
    }

    #[test]
    fn understated_constants_are_caught() {
        #[derive(Debug)]
        struct Liar(Example1);
        impl ModelSpec for Liar {
            fn name(&self) -> &str {
                "liar"
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn control_set(&self) -> &crate::model::ControlSet {
                self.0.control_set()
            }
            fn constants(&self) -> crate::model::ModelConstants {
                crate::model::ModelConstants {
                    k: 0.01,
                    lambda0: 0.0,
                    ..self.0.constants()
                }
            }
            fn coefficients(&self, ctx: &MuContext<'_>) -> Result<Box<dyn crate::model::Coefficients>> {
                self.0.coefficients(ctx)
            }
        }
        let spec = Liar(Example1::new(Example1Params::default()).unwrap());
        let report = validate_model(&spec, &ValidateOptions { samples: 30, ..Default::default() }).unwrap();
        assert!(!report.check("coefficient_bound").unwrap().passed());
        assert!(!report.check("alpha_lipschitz_in_measure").unwrap().passed());
    }
}
