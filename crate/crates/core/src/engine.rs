//! The averaged iteration
//!
//! ```text
//! s_{t+1} = (1 - α_t) s_t + α_t T(s_t, y_t) + η_t
//! ```
//!
//! with a pluggable averaging schedule, and the per-iteration error ledger
//! `e_t = D(s_t, s*)`, `a_t = e_t (t+1)²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StateDump};
use crate::geometry::{Geometry, GeometryKind};
use crate::operators::{Operator, OperatorKind, DEFAULT_CONTRACTION_PAIRS};
use crate::perturbation::{Injection, PerturbationModel};
use crate::vector::Vector;

/// Default cap for [`Prepared::iterations_to_epsilon`].
pub const DEFAULT_ITERATION_CAP: usize = 10_000_000;
/// Progress is logged every this many iterations.
pub const CHECKPOINT_EVERY: usize = 100_000;
/// Above this dimension states are not retained unless asked for.
pub const RETAIN_STATES_MAX_DIM: usize = 10;

/// Averaging weights `α_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    /// `α_t = 2/(t+2)`
    Accelerated,
    /// `α_t = c`
    Constant { c: f64 },
    /// `α_t = c/(t+1)^p`
    Polynomial { c: f64, p: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Accelerated => Ok(()),
            Schedule::Constant { c } | Schedule::Polynomial { c, .. } if !(c > 0.0 && c <= 1.0) => {
                Err(Error::param("c", format!("must lie in (0, 1], got {c}")))
            }
            Schedule::Polynomial { p, .. } if !(p >= 0.0 && p.is_finite()) => Err(Error::param(
                "p",
                format!("must be finite and >= 0, got {p}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            Schedule::Accelerated => 2.0 / (t as f64 + 2.0),
            Schedule::Constant { c } => c,
            Schedule::Polynomial { c, p } => c / (t as f64 + 1.0).powf(p),
        }
    }
}

/// Everything needed to execute one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub geometry: Geometry,
    pub operator: Operator,
    pub schedule: Schedule,
    pub perturbation: PerturbationModel,
    pub s0: Vector,
    pub iterations: usize,
    pub seed: u64,
    /// `None` retains states when `dim <= 10`.
    pub retain_states: Option<bool>,
    pub contraction_pairs: usize,
    /// Digest of the config this spec came from, copied into the trace.
    pub config_digest: String,
}

impl RunSpec {
    pub fn new(geometry: Geometry, operator: Operator, s0: Vector) -> Self {
        RunSpec {
            geometry,
            operator,
            schedule: Schedule::Accelerated,
            perturbation: PerturbationModel::zero(),
            s0,
            iterations: 1000,
            seed: 0,
            retain_states: None,
            contraction_pairs: DEFAULT_CONTRACTION_PAIRS,
            config_digest: String::new(),
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_perturbation(mut self, pm: PerturbationModel) -> Self {
        self.perturbation = pm;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_retain_states(mut self, retain: bool) -> Self {
        self.retain_states = Some(retain);
        self
    }

    pub fn retains_states(&self) -> bool {
        self.retain_states
            .unwrap_or(self.geometry.dim() <= RETAIN_STATES_MAX_DIM)
    }

    /// Validates the spec and computes `s*` and `γ̂`.
    pub fn prepare(self) -> Result<Prepared> {
        Prepared::new(self)
    }
}

/// Seed of the contraction-estimate stream, kept apart from the noise stream.
fn contraction_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// A validated run with its fixed point and contraction estimate.
#[derive(Debug, Clone)]
pub struct Prepared {
    spec: RunSpec,
    s_star: Vector,
    gamma_hat: f64,
    warnings: Vec<String>,
}

impl Prepared {
    fn new(spec: RunSpec) -> Result<Self> {
        let g = &spec.geometry;
        let op = &spec.operator;
        if op.dim() != g.dim() {
            return Err(Error::dims("operator vs geometry", g.dim(), op.dim()));
        }
        if spec.s0.dim() != g.dim() {
            return Err(Error::dims("s0 vs geometry", g.dim(), spec.s0.dim()));
        }
        if !op.accepts_geometry(g.kind()) {
            return Err(Error::Config(format!(
                "operator {:?} cannot run in {} geometry",
                op.kind(),
                g.kind()
            )));
        }
        if spec.iterations == 0 {
            return Err(Error::param("iterations", "must be >= 1"));
        }
        spec.schedule.validate()?;
        spec.perturbation.validate()?;
        spec.perturbation.check_geometry(g)?;
        g.check_domain(&spec.s0)
            .map_err(|e| Error::Domain(format!("s0: {e}")))?;

        let s_star = op.fixed_point(g)?;
        let gamma_hat = op.estimate_contraction(
            g,
            spec.contraction_pairs.max(1),
            contraction_seed(spec.seed),
        )?;
        let mut warnings = Vec::new();
        let kappa = spec.perturbation.kappa;
        if gamma_hat + kappa >= 1.0 {
            let msg = format!(
                "gamma_hat + kappa = {gamma_hat} + {kappa} >= 1: the contraction hypothesis does not hold for this instance"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(Prepared {
            spec,
            s_star,
            gamma_hat,
            warnings,
        })
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    pub fn s_star(&self) -> &Vector {
        &self.s_star
    }

    pub fn gamma_hat(&self) -> f64 {
        self.gamma_hat
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn e0(&self) -> f64 {
        self.spec.geometry.div(&self.spec.s0, &self.s_star)
    }

    fn fail(&self, t: usize, s: &Vector, alpha: f64, reason: String) -> Error {
        Error::Engine(Box::new(StateDump {
            t,
            reason,
            state: s.as_slice().to_vec(),
            alpha,
        }))
    }

    /// One update. Returns the next state, the injected perturbation and the
    /// projection drift.
    fn step(
        &self,
        t: usize,
        s: &Vector,
        ts: &Vector,
        e: f64,
        alpha: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vector, Vector, f64)> {
        let g = &self.spec.geometry;
        let averaged = s.lerp(ts, alpha);
        let eta = self
            .spec
            .perturbation
            .sample(g, s, &self.s_star, e, alpha, rng)?;
        let raw = averaged.add(&eta);
        if !raw.is_finite() {
            return Err(self.fail(t, s, alpha, "non-finite state after update".into()));
        }
        if g.kind() == GeometryKind::NegativeEntropy {
            match g.project(&raw) {
                Some(p) => {
                    let drift = p.sub(&raw).max_abs();
                    Ok((p, eta, drift))
                }
                None => Err(self.fail(
                    t,
                    &raw,
                    alpha,
                    "update left the simplex interior beyond rounding".into(),
                )),
            }
        } else {
            Ok((raw, eta, 0.0))
        }
    }

    /// Runs the recurrence for `iterations` steps and records every ledger field.
    pub fn run(&self) -> Result<Trace> {
        let spec = &self.spec;
        let g = &spec.geometry;
        let op = &spec.operator;
        let retain = spec.retains_states();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let mut rows = Vec::with_capacity(spec.iterations + 1);
        let mut states = retain.then(|| Vec::with_capacity(spec.iterations + 1));
        let mut etas = retain.then(|| Vec::with_capacity(spec.iterations));
        let mut max_drift = 0.0_f64;

        let mut s = spec.s0.clone();
        for t in 0..=spec.iterations {
            let e = g.div(&s, &self.s_star);
            let alpha = spec.schedule.alpha(t);
            let ts = op
                .apply(&s, t)
                .map_err(|err| self.fail(t, &s, alpha, err.to_string()))?;
            let delta_norm_sq = ts.sub(&s).norm_sq();
            if !(e.is_finite() && delta_norm_sq.is_finite()) {
                return Err(self.fail(t, &s, alpha, "non-finite error ledger".into()));
            }
            if t > 0 && t % CHECKPOINT_EVERY == 0 {
                log::info!("t = {t}, e_t = {e:e}");
            }
            let mut row = TraceRow {
                t,
                e_t: e,
                a_t: e * ((t + 1) as f64).powi(2),
                alpha_t: alpha,
                delta_norm_sq,
                eta_div: 0.0,
            };
            if t == spec.iterations {
                rows.push(row);
                if let Some(st) = states.as_mut() {
                    st.push(s);
                }
                break;
            }
            let (next, eta, drift) = self.step(t, &s, &ts, e, alpha, &mut rng)?;
            max_drift = max_drift.max(drift);
            if g.is_linear_space() {
                row.eta_div = g.div_from_origin(&eta);
            }
            rows.push(row);
            if let Some(st) = states.as_mut() {
                st.push(s);
            }
            if let Some(et) = etas.as_mut() {
                et.push(eta);
            }
            s = next;
        }

        Ok(Trace {
            rows,
            states,
            etas,
            meta: TraceMeta {
                config_digest: spec.config_digest.clone(),
                seed: spec.seed,
                gamma_hat: self.gamma_hat,
                s_star: self.s_star.as_slice().to_vec(),
                geometry: g.kind(),
                operator: op.kind(),
                schedule: spec.schedule,
                injection: spec.perturbation.injection,
                noise_free: spec.perturbation.is_noise_free(),
                warnings: self.warnings.clone(),
                max_projection_drift: max_drift,
            },
        })
    }

    /// Smallest `t` with `e_t <= eps`, iterating without storing a trace.
    /// Requires a noise-free spec.
    pub fn iterations_to_epsilon(&self, eps: f64, cap: usize) -> Result<EpsilonHit> {
        if !(eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {eps}")));
        }
        if !self.spec.perturbation.is_noise_free() {
            return Err(Error::Config(
                "iterations_to_epsilon needs a noise-free perturbation model".into(),
            ));
        }
        let g = &self.spec.geometry;
        let op = &self.spec.operator;
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let mut s = self.spec.s0.clone();
        let mut e = g.div(&s, &self.s_star);
        for t in 0..cap {
            if e <= eps {
                return Ok(EpsilonHit {
                    eps,
                    t: Some(t),
                    cap,
                    last_e: e,
                });
            }
            if t > 0 && t % CHECKPOINT_EVERY == 0 {
                log::info!("iterations_to_epsilon: t = {t}, e_t = {e:e}");
            }
            let alpha = self.spec.schedule.alpha(t);
            let ts = op
                .apply(&s, t)
                .map_err(|err| self.fail(t, &s, alpha, err.to_string()))?;
            s = self.step(t, &s, &ts, e, alpha, &mut rng)?.0;
            e = g.div(&s, &self.s_star);
        }
        if e <= eps {
            return Ok(EpsilonHit {
                eps,
                t: Some(cap),
                cap,
                last_e: e,
            });
        }
        Ok(EpsilonHit {
            eps,
            t: None,
            cap,
            last_e: e,
        })
    }
}

/// Result of [`Prepared::iterations_to_epsilon`]. `t = None` means the cap
/// was reached first (censored).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonHit {
    pub eps: f64,
    pub t: Option<usize>,
    pub cap: usize,
    pub last_e: f64,
}

impl EpsilonHit {
    pub fn censored(&self) -> bool {
        self.t.is_none()
    }
}

/// One ledger row. Serializes to the `trace.csv` columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub e_t: f64,
    pub a_t: f64,
    pub alpha_t: f64,
    /// `‖T(s_t) - s_t‖²`
    pub delta_norm_sq: f64,
    /// `D(η_t, 0)` of the injected perturbation (0 on the last row).
    pub eta_div: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config_digest: String,
    pub seed: u64,
    pub gamma_hat: f64,
    pub s_star: Vec<f64>,
    pub geometry: GeometryKind,
    pub operator: OperatorKind,
    pub schedule: Schedule,
    pub injection: Injection,
    pub noise_free: bool,
    pub warnings: Vec<String>,
    /// Largest entry change made by domain projection (negative-entropy only).
    pub max_projection_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// `s_0 ..= s_T` when retained.
    pub states: Option<Vec<Vector>>,
    /// Injected `η_0 .. η_{T-1}` when retained.
    pub etas: Option<Vec<Vector>>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.e_t).collect()
    }

    pub fn a_max(&self) -> f64 {
        self.rows.iter().fold(0.0_f64, |m, r| m.max(r.a_t))
    }

    /// First recorded `t` with `e_t <= eps`.
    pub fn first_below(&self, eps: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.e_t <= eps).map(|r| r.t)
    }

    /// Mean of `e_t` over `t ∈ [lo, hi]`.
    pub fn mean_error(&self, lo: usize, hi: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.t >= lo && r.t <= hi)
            .map(|r| r.e_t)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Convenience: prepare and run.
pub fn run(spec: RunSpec) -> Result<Trace> {
    spec.prepare()?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::PerturbationMode;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn colinear_spec() -> RunSpec {
        RunSpec::new(
            Geometry::squared_euclidean(2).unwrap(),
            Operator::affine_colinear(0.5, v(&[2.0, -1.0])).unwrap(),
            v(&[0.0, 0.0]),
        )
    }

    #[test]
    fn schedules() {
        let a = Schedule::Accelerated;
        assert_eq!(a.alpha(0), 1.0);
        assert_eq!(a.alpha(1), 2.0 / 3.0);
        assert_eq!(a.alpha(2), 0.5);
        assert_eq!(Schedule::Constant { c: 0.3 }.alpha(1_000_000), 0.3);
        assert_eq!(Schedule::Polynomial { c: 0.5, p: 1.0 }.alpha(3), 0.125);
        assert!(Schedule::Constant { c: 0.0 }.validate().is_err());
        assert!(Schedule::Constant { c: 1.5 }.validate().is_err());
        assert!(Schedule::Polynomial { c: 1.0, p: -1.0 }.validate().is_err());
    }

    #[test]
    fn first_errors_match_hand_computation() {
        let tr = run(colinear_spec().with_iterations(5)).unwrap();
        assert_eq!(tr.rows.len(), 6);
        assert_eq!(tr.rows[0].e_t, 2.5);
        assert!((tr.rows[1].e_t - 0.625).abs() < 1e-15);
        assert!((tr.rows[2].e_t - 2.5 / 9.0).abs() < 1e-15);
        for r in &tr.rows {
            assert!((r.a_t - 2.5).abs() < 1e-12, "{r:?}");
            assert!((r.a_t - r.e_t * ((r.t + 1) as f64).powi(2)).abs() <= 1e-12 * r.a_t);
        }
    }

    #[test]
    fn closed_form_over_long_run() {
        let tr = run(colinear_spec().with_iterations(10_000)).unwrap();
        for r in &tr.rows {
            let exact = 2.5 / ((r.t + 1) as f64).powi(2);
            assert!((r.e_t - exact).abs() <= 1e-9 * 2.5);
        }
        for w in tr.rows.windows(2) {
            assert!(w[1].e_t <= w[0].e_t);
        }
    }

    #[test]
    fn start_at_fixed_point_stays_there() {
        for sched in [
            Schedule::Accelerated,
            Schedule::Constant { c: 0.3 },
            Schedule::Polynomial { c: 1.0, p: 0.5 },
        ] {
            let spec = RunSpec {
                s0: v(&[2.0, -1.0]),
                ..colinear_spec()
            }
            .with_schedule(sched)
            .with_iterations(50);
            let tr = run(spec).unwrap();
            assert!(tr.rows.iter().all(|r| r.e_t == 0.0));
        }
    }

    #[test]
    fn iterations_to_epsilon_examples() {
        let p = colinear_spec().prepare().unwrap();
        assert_eq!(
            p.iterations_to_epsilon(1e-4, 1_000_000).unwrap().t,
            Some(158)
        );
        assert_eq!(
            p.iterations_to_epsilon(1e-6, 1_000_000).unwrap().t,
            Some(1581)
        );
        assert_eq!(p.iterations_to_epsilon(3.0, 10).unwrap().t, Some(0));
        let hit = p.iterations_to_epsilon(1e-6, 100).unwrap();
        assert!(hit.censored());
    }

    #[test]
    fn noisy_runs_are_deterministic() {
        let pm = PerturbationModel::new(PerturbationMode::Random, 1e-3, 0.1, Injection::Unscaled)
            .unwrap();
        let spec = colinear_spec()
            .with_perturbation(pm)
            .with_iterations(500)
            .with_seed(9);
        assert_eq!(run(spec.clone()).unwrap(), run(spec.clone()).unwrap());
        assert_ne!(
            run(spec.clone()).unwrap().rows,
            run(spec.with_seed(10)).unwrap().rows
        );
    }

    #[test]
    fn absorption_with_zero_budget_noise() {
        let pm = PerturbationModel::new(PerturbationMode::Random, 0.0, 0.0, Injection::Unscaled)
            .unwrap();
        let spec = RunSpec {
            s0: v(&[2.0, -1.0]),
            ..colinear_spec()
        }
        .with_perturbation(pm)
        .with_iterations(100);
        assert!(run(spec).unwrap().rows.iter().all(|r| r.e_t == 0.0));
    }

    #[test]
    fn validation_errors() {
        let bad_s0 = RunSpec {
            s0: v(&[0.0, 0.0, 0.0]),
            ..colinear_spec()
        };
        assert!(matches!(
            bad_s0.prepare(),
            Err(Error::DimensionMismatch { .. })
        ));

        let h = Geometry::negative_entropy(2, 1e-6).unwrap();
        let wrong_geom = RunSpec {
            geometry: h,
            s0: v(&[0.5, 0.5]),
            ..colinear_spec()
        };
        assert!(matches!(wrong_geom.prepare(), Err(Error::Config(_))));

        assert!(colinear_spec().with_iterations(0).prepare().is_err());
    }

    #[test]
    fn entropy_run_stays_in_simplex() {
        let rho = 1e-6;
        let g = Geometry::negative_entropy(3, rho).unwrap();
        let op = Operator::exp_gradient_step(v(&[0.2, 0.3, 0.5]), 0.5, rho).unwrap();
        let tr =
            run(RunSpec::new(g.clone(), op, v(&[0.8, 0.1, 0.1])).with_iterations(2000)).unwrap();
        for s in tr.states.as_ref().unwrap() {
            g.check_domain(s).unwrap();
        }
        assert!(tr.rows.last().unwrap().e_t < 1e-6);
        assert!(tr.meta.max_projection_drift < 1e-12);
    }

    #[test]
    fn warns_when_hypothesis_fails() {
        let spec = RunSpec::new(
            Geometry::squared_euclidean(2).unwrap(),
            Operator::bellman(crate::mdp::Mdp::two_state_example(0.9).unwrap()).unwrap(),
            v(&[0.0, 0.0]),
        );
        let p = spec.prepare().unwrap();
        assert!(p.gamma_hat() >= 1.0);
        assert_eq!(p.warnings().len(), 1);
    }

    #[test]
    fn retention_default_depends_on_dim() {
        let g = Geometry::squared_euclidean(11).unwrap();
        let op = Operator::affine_colinear(0.5, Vector::zeros(11)).unwrap();
        let spec = RunSpec::new(g, op, Vector::new(vec![1.0; 11]).unwrap()).with_iterations(3);
        assert!(!spec.retains_states());
        let tr = run(spec.clone()).unwrap();
        assert!(tr.states.is_none() && tr.etas.is_none());
        let tr = run(spec.with_retain_states(true)).unwrap();
        assert_eq!(tr.states.unwrap().len(), 4);
        assert_eq!(tr.etas.unwrap().len(), 3);
    }
}
