//! Rate fits and step-by-step audits of the accelerated-rate argument.
//!
//! Every audit replays a recorded [`Trace`] and evaluates both sides of one
//! inequality at each iteration, with the *measured* contraction factor `γ̂`
//! standing in for the assumed one. Results are collected in an
//! [`AuditReport`].

mod feedback;
mod proof;
mod rate;
mod recursion;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::operators::Operator;
use crate::perturbation::PerturbationModel;

pub use feedback::{compare_feedback_feedforward, FeedbackComparison};
pub use proof::{
    audit_assumption_budget, audit_combined, audit_contraction_along_trace, audit_cross_term,
    audit_descent, audit_remainder, audit_three_point, fit_m,
};
pub use rate::{
    default_window, fit_rate, fit_rate_errors, RateFit, DEFAULT_R2_THRESHOLD, MIN_FIT_POINTS,
};
pub use recursion::{
    audit_envelope, audit_induction_step, audit_recursion, gronwall_envelope, Envelope,
    InductionCell, InductionTable, DEFAULT_BETA_GRID, DEFAULT_T_GRID_MAX,
};

/// Default per-check tolerance, relative to `max(1, |RHS|)`.
pub const DEFAULT_CHECK_TOL: f64 = 1e-12;

/// Constants of the bound, instantiated for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub gamma_hat: f64,
    pub kappa: f64,
    pub delta0: f64,
    pub mu: f64,
    pub l: f64,
    /// Strong-convexity constant of the cross-term bound, `c = mu`.
    pub c_sc: f64,
    /// Norm–divergence equivalence `‖η‖ <= K sqrt(D(η, 0))`, `K = sqrt(2/mu)`.
    pub k_equiv: f64,
    /// Empirical `max ‖Δ_t‖² / e_t` along the trace.
    pub m_fit: f64,
    /// `C0 = 2 L² K² / c`
    pub c0: f64,
    pub beta: f64,
}

impl BoundConstants {
    pub fn new(g: &Geometry, gamma_hat: f64, pm: &PerturbationModel) -> Self {
        let mu = g.mu();
        let l = g.l();
        let k_equiv = (2.0 / mu).sqrt();
        BoundConstants {
            gamma_hat,
            kappa: pm.kappa,
            delta0: pm.delta0,
            mu,
            l,
            c_sc: mu,
            k_equiv,
            m_fit: 0.0,
            c0: 2.0 * l * l * k_equiv * k_equiv / mu,
            beta: 0.0,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_m(mut self, m: f64) -> Self {
        self.m_fit = m;
        self
    }

    /// `θ = 1 - α (1 - γ̂)`
    pub fn theta(&self, alpha: f64) -> f64 {
        1.0 - alpha * (1.0 - self.gamma_hat)
    }

    pub fn recomputed_c0(&self) -> f64 {
        2.0 * self.l * self.l * self.k_equiv * self.k_equiv / self.c_sc
    }

    /// True when `γ̂ + κ < 1`, the hypothesis the bound needs.
    pub fn hypothesis_holds(&self) -> bool {
        self.gamma_hat + self.kappa < 1.0
    }

    /// Checks finiteness, non-negativity and the stored `C0`.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma_hat", self.gamma_hat),
            ("kappa", self.kappa),
            ("delta0", self.delta0),
            ("mu", self.mu),
            ("L", self.l),
            ("c_sc", self.c_sc),
            ("K", self.k_equiv),
            ("M", self.m_fit),
            ("C0", self.c0),
            ("beta", self.beta),
        ];
        for (name, x) in fields {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("must be finite and >= 0, got {x}"),
                ));
            }
        }
        let c0 = self.recomputed_c0();
        if (c0 - self.c0).abs() > 1e-12 * c0.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::param(
                "C0",
                format!("stored {} != recomputed {c0}", self.c0),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Nothing to check (for example, no perturbation was injected).
    VacuousPass,
    /// Reported as found; not a pass/fail gate.
    Finding,
}

/// Result of one audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub status: CheckStatus,
    /// `max_t max(LHS_t - RHS_t, 0)`
    pub worst_violation: f64,
    /// Iteration with the largest `LHS - RHS` (the tightest step when nothing is violated).
    pub worst_t: Option<usize>,
    pub tolerance: f64,
    pub evaluated: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, serde_json::Value>,
}

impl CheckRecord {
    pub fn passed(&self) -> bool {
        matches!(self.status, CheckStatus::Pass | CheckStatus::VacuousPass)
    }

    pub(crate) fn with_detail(mut self, key: &str, value: impl Serialize) -> Self {
        self.detail.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
        self
    }
}

/// Tracks `LHS - RHS` over iterations.
#[derive(Debug)]
pub(crate) struct Inequality {
    name: String,
    tol: f64,
    worst_gap: f64,
    worst_t: Option<usize>,
    failed: bool,
    evaluated: usize,
}

impl Inequality {
    pub(crate) fn new(name: &str, tol: f64) -> Self {
        Inequality {
            name: name.to_string(),
            tol,
            worst_gap: f64::NEG_INFINITY,
            worst_t: None,
            failed: false,
            evaluated: 0,
        }
    }

    /// Records `lhs <= rhs` at iteration `t`.
    pub(crate) fn observe(&mut self, t: usize, lhs: f64, rhs: f64) {
        let gap = lhs - rhs;
        self.evaluated += 1;
        if gap > self.tol * rhs.abs().max(1.0) || gap.is_nan() {
            self.failed = true;
        }
        if gap > self.worst_gap || self.worst_t.is_none() {
            self.worst_gap = gap;
            self.worst_t = Some(t);
        }
    }

    pub(crate) fn finish(self) -> CheckRecord {
        let status = if self.evaluated == 0 {
            CheckStatus::VacuousPass
        } else if self.failed {
            CheckStatus::Fail
        } else {
            CheckStatus::Pass
        };
        CheckRecord {
            name: self.name,
            status,
            worst_violation: if self.worst_gap.is_nan() {
                f64::NAN
            } else {
                self.worst_gap.max(0.0)
            },
            worst_t: self.worst_t,
            tolerance: self.tol,
            evaluated: self.evaluated,
            detail: BTreeMap::new(),
        }
    }
}

/// Every audit for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config_digest: String,
    pub constants: BoundConstants,
    pub beta_max: f64,
    pub m_empirical: f64,
    pub checks: Vec<CheckRecord>,
    pub induction: InductionTable,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Names of the checks in an [`AuditReport`], in order.
pub const CHECK_NAMES: [&str; 10] = [
    "assumption-contraction",
    "assumption-perturbation-budget",
    "three-point",
    "descent",
    "cross-term",
    "combined",
    "remainder",
    "recursion",
    "induction-step",
    "gronwall-envelope",
];

/// Runs every audit. The trace must carry retained states.
pub fn audit_trace(
    trace: &Trace,
    g: &Geometry,
    op: &Operator,
    pm: &PerturbationModel,
    tol: f64,
) -> Result<AuditReport> {
    if trace.states.is_none() {
        return Err(Error::MissingStates);
    }
    let m = fit_m(trace);
    let base = BoundConstants::new(g, trace.meta.gamma_hat, pm).with_m(m);
    let (beta_max, recursion) = audit_recursion(trace, &base, tol);
    let bc = base.with_beta(beta_max);
    bc.validate()?;

    let induction = audit_induction_step(
        &DEFAULT_BETA_GRID,
        &(0..=DEFAULT_T_GRID_MAX).collect::<Vec<_>>(),
    );
    let induction_record = induction.as_record();

    let checks = vec![
        audit_contraction_along_trace(trace, op, g, &bc, tol)?,
        audit_assumption_budget(trace, g, &bc, tol)?,
        audit_three_point(trace, g, op)?,
        audit_descent(trace, g, op, &bc, tol)?,
        audit_cross_term(trace, g, op, &bc, tol)?,
        audit_combined(trace, g, &bc, tol)?,
        audit_remainder(trace, &bc, tol),
        recursion,
        induction_record,
        audit_envelope(trace, &bc),
    ];
    debug_assert!(checks.iter().map(|c| c.name.as_str()).eq(CHECK_NAMES));
    Ok(AuditReport {
        config_digest: trace.meta.config_digest.clone(),
        constants: bc,
        beta_max,
        m_empirical: m,
        checks,
        induction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::PerturbationModel;

    #[test]
    fn euclidean_constants() {
        let g = Geometry::squared_euclidean(2).unwrap();
        let bc = BoundConstants::new(&g, 0.25, &PerturbationModel::zero());
        assert!((bc.k_equiv - 2f64.sqrt()).abs() < 1e-15);
        assert!((bc.c0 - 4.0).abs() < 1e-12);
        assert_eq!(bc.theta(1.0), 0.25);
        bc.validate().unwrap();
        assert!(bc.hypothesis_holds());

        let mut bad = bc;
        bad.c0 = 5.0;
        assert!(bad.validate().is_err());
        assert!(!BoundConstants { kappa: 0.8, ..bc }.hypothesis_holds());
    }

    #[test]
    fn inequality_tracking() {
        let mut ineq = Inequality::new("x", 1e-12);
        ineq.observe(0, 1.0, 2.0);
        ineq.observe(1, 1.5, 1.6);
        let rec = ineq.finish();
        assert_eq!(rec.status, CheckStatus::Pass);
        assert_eq!(rec.worst_t, Some(1));
        assert_eq!(rec.worst_violation, 0.0);

        let mut ineq = Inequality::new("y", 1e-12);
        ineq.observe(3, 2.0, 1.0);
        let rec = ineq.finish();
        assert_eq!(rec.status, CheckStatus::Fail);
        assert_eq!(rec.worst_violation, 1.0);

        assert_eq!(
            Inequality::new("z", 0.0).finish().status,
            CheckStatus::VacuousPass
        );
    }
}
