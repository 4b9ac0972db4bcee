//! The closing recursion `e_{t+1} <= (1 - 2β/(t+2)) e_t + 2(1+C0)δ0/(t+2)`,
//! its induction step, and the envelope obtained by unrolling it.

use serde::{Deserialize, Serialize};

use crate::analysis::{BoundConstants, CheckRecord, CheckStatus, Inequality};
use crate::engine::Trace;
use crate::error::{Error, Result};

/// `β ∈ {0.1, 0.2, …, 0.9}`
pub const DEFAULT_BETA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// The default `t` grid is `0..=DEFAULT_T_GRID_MAX`.
pub const DEFAULT_T_GRID_MAX: usize = 100;

/// Slack allowed between the trace and the envelope.
const ENVELOPE_SLACK: f64 = 1e-12;

fn noise_term(bc: &BoundConstants, t: usize) -> f64 {
    2.0 * (1.0 + bc.c0) * bc.delta0 / (t as f64 + 2.0)
}

/// Largest `β >= 0` for which the recursion holds at every recorded step.
///
/// Each step gives a linear constraint
/// `β <= ((t+2)(e_t - e_{t+1}) + 2(1+C0)δ0) / (2 e_t)`, so the answer is
/// the smallest of those, clipped at zero. The returned record re-checks
/// the recursion at that `β`.
pub fn audit_recursion(trace: &Trace, bc: &BoundConstants, tol: f64) -> (f64, CheckRecord) {
    let mut beta = f64::INFINITY;
    let mut binding_t = None;
    let mut infeasible_t = None;
    for w in trace.rows.windows(2) {
        let (t, e, e_next) = (w[0].t, w[0].e_t, w[1].e_t);
        let tp2 = t as f64 + 2.0;
        if e > 0.0 {
            let bound = (tp2 * (e - e_next) + 2.0 * (1.0 + bc.c0) * bc.delta0) / (2.0 * e);
            if bound < beta {
                beta = bound;
                binding_t = Some(t);
            }
        } else if e_next > noise_term(bc, t) && infeasible_t.is_none() {
            // With e_t = 0 the β term drops out, so no β can repair this step.
            infeasible_t = Some(t);
        }
    }
    let beta_max = if beta.is_finite() { beta.max(0.0) } else { 0.0 };

    let mut ineq = Inequality::new("recursion", tol);
    for w in trace.rows.windows(2) {
        let t = w[0].t;
        let coeff = 1.0 - 2.0 * beta_max / (t as f64 + 2.0);
        ineq.observe(t, w[1].e_t, coeff * w[0].e_t + noise_term(bc, t));
    }
    let mut rec = ineq.finish();
    if beta_max <= 0.0 {
        rec.status = CheckStatus::Finding;
    }
    let rec = rec
        .with_detail("beta_max", beta_max)
        .with_detail("beta_positive", beta_max > 0.0)
        .with_detail("binding_t", binding_t)
        .with_detail("infeasible_t", infeasible_t);
    (beta_max, rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InductionCell {
    pub t: usize,
    pub beta: f64,
    /// `(t+2)(t+2-2β)/(t+1)²`
    pub lhs: f64,
    /// `1 - 2β/(t+2)`
    pub rhs: f64,
    pub holds: bool,
}

/// Truth table for the claimed induction inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductionTable {
    pub cells: Vec<InductionCell>,
    pub violations: usize,
    pub total: usize,
}

impl InductionTable {
    /// Summary record. Its status is always [`CheckStatus::Finding`]: the
    /// table is informational.
    pub fn as_record(&self) -> CheckRecord {
        let mut ineq = Inequality::new("induction-step", 0.0);
        for c in &self.cells {
            ineq.observe(c.t, c.lhs, c.rhs);
        }
        let mut rec = ineq.finish();
        rec.status = CheckStatus::Finding;
        rec.with_detail("violations", self.violations)
            .with_detail("total", self.total)
    }
}

/// Evaluates `(t+2)(t+2-2β)/(t+1)² <= 1 - 2β/(t+2)` on every grid pair.
pub fn audit_induction_step(beta_grid: &[f64], t_grid: &[usize]) -> InductionTable {
    let mut cells = Vec::with_capacity(beta_grid.len() * t_grid.len());
    for &t in t_grid {
        let tp1 = t as f64 + 1.0;
        let tp2 = t as f64 + 2.0;
        for &beta in beta_grid {
            let lhs = tp2 * (tp2 - 2.0 * beta) / (tp1 * tp1);
            let rhs = 1.0 - 2.0 * beta / tp2;
            cells.push(InductionCell {
                t,
                beta,
                lhs,
                rhs,
                holds: lhs <= rhs,
            });
        }
    }
    let violations = cells.iter().filter(|c| !c.holds).count();
    InductionTable {
        total: cells.len(),
        cells,
        violations,
    }
}

/// Envelopes on `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// The recursion iterated forward with equality from `ê_0 = e0`.
    pub recursive: Vec<f64>,
    /// `e0/(t+1)² + (2(1+C0)δ0/β)/(t+1)`
    pub closed_form: Vec<f64>,
}

pub fn gronwall_envelope(e0: f64, bc: &BoundConstants, iterations: usize) -> Result<Envelope> {
    if !(bc.beta > 0.0) {
        return Err(Error::param(
            "beta",
            format!("must be > 0, got {}", bc.beta),
        ));
    }
    if iterations < 1 {
        return Err(Error::param("T", "must be >= 1"));
    }
    let mut recursive = Vec::with_capacity(iterations + 1);
    let mut e = e0;
    recursive.push(e);
    for t in 0..iterations {
        e = (1.0 - 2.0 * bc.beta / (t as f64 + 2.0)) * e + noise_term(bc, t);
        recursive.push(e);
    }
    let floor = 2.0 * (1.0 + bc.c0) * bc.delta0 / bc.beta;
    let closed_form = (0..=iterations)
        .map(|t| {
            let tp1 = t as f64 + 1.0;
            e0 / (tp1 * tp1) + floor / tp1
        })
        .collect();
    Ok(Envelope {
        recursive,
        closed_form,
    })
}

/// Does the unrolled recursion at `bc.beta` dominate the trace,
/// `ê_t >= e_t - 1e-12` for every `t`? A non-positive `β` yields a finding
/// with no comparison.
pub fn audit_envelope(trace: &Trace, bc: &BoundConstants) -> CheckRecord {
    let mut ineq = Inequality::new("gronwall-envelope", 0.0);
    let env = match gronwall_envelope(trace.rows[0].e_t, bc, trace.iterations()) {
        Ok(env) => env,
        Err(_) => {
            let mut rec = ineq.finish();
            rec.status = CheckStatus::Finding;
            return rec.with_detail("reason", "beta_max is not positive; no envelope");
        }
    };
    let mut closed_violations = 0usize;
    for (row, (&hat, &closed)) in trace
        .rows
        .iter()
        .zip(env.recursive.iter().zip(&env.closed_form))
    {
        ineq.observe(row.t, row.e_t - ENVELOPE_SLACK, hat);
        if row.e_t > closed + ENVELOPE_SLACK {
            closed_violations += 1;
        }
    }
    ineq.finish()
        .with_detail("beta", bc.beta)
        .with_detail("closed_form_violations", closed_violations)
        .with_detail("closed_form_final", env.closed_form.last().copied())
        .with_detail("recursive_final", env.recursive.last().copied())
}
