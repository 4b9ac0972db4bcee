//! Per-iteration audits of the descent, cross-term, combination and
//! remainder inequalities, and of the two hypotheses on `T` and `η`.

use crate::analysis::{BoundConstants, CheckRecord, Inequality};
use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::operators::Operator;
use crate::vector::Vector;

/// Errors below this are treated as zero when fitting ratios.
const ERROR_FLOOR: f64 = 1e-14;

/// Empirical `M = max_t ‖Δ_t‖² / e_t` over rows with `e_t > 1e-14`.
pub fn fit_m(trace: &Trace) -> f64 {
    trace
        .rows
        .iter()
        .filter(|r| r.e_t > ERROR_FLOOR)
        .map(|r| r.delta_norm_sq / r.e_t)
        .fold(0.0, f64::max)
}

fn states(trace: &Trace) -> Result<&[Vector]> {
    trace.states.as_deref().ok_or(Error::MissingStates)
}

/// `s*` as recorded in the trace metadata.
fn s_star(trace: &Trace) -> Vector {
    Vector::from_raw(trace.meta.s_star.clone())
}

/// `x_t = (1 - α_t) s_t + α_t T(s_t)`.
fn averaged(op: &Operator, s: &Vector, t: usize, alpha: f64) -> Result<Vector> {
    Ok(s.lerp(&op.apply(s, t)?, alpha))
}

/// Contraction toward the fixed point along the trajectory:
/// `D(T s_t, s*) <= γ̂ e_t`.
pub fn audit_contraction_along_trace(
    trace: &Trace,
    op: &Operator,
    g: &Geometry,
    bc: &BoundConstants,
    tol: f64,
) -> Result<CheckRecord> {
    let states = states(trace)?;
    let star = s_star(trace);
    let mut ineq = Inequality::new("assumption-contraction", tol);
    let mut worst_ratio = 0.0_f64;
    for (row, s) in trace.rows.iter().zip(states) {
        let lhs = g.div(&op.apply(s, row.t)?, &star);
        if row.e_t > ERROR_FLOOR {
            worst_ratio = worst_ratio.max(lhs / row.e_t);
        }
        ineq.observe(row.t, lhs, bc.gamma_hat * row.e_t);
    }
    Ok(ineq
        .finish()
        .with_detail("max_ratio_to_fixed_point", worst_ratio))
}

/// Perturbation budget: `D(η_t, 0) <= delta0 + kappa e_t`, on the injected `η`.
pub fn audit_assumption_budget(
    trace: &Trace,
    g: &Geometry,
    bc: &BoundConstants,
    tol: f64,
) -> Result<CheckRecord> {
    let mut ineq = Inequality::new("assumption-perturbation-budget", tol);
    if !trace.meta.noise_free && g.is_linear_space() {
        for row in &trace.rows[..trace.rows.len() - 1] {
            ineq.observe(row.t, row.eta_div, bc.delta0 + bc.kappa * row.e_t);
        }
    }
    Ok(ineq.finish())
}

/// Three-point identity at `u = s_{t+1}`, `v = x_t`, `w = s*`, and the
/// inequality it yields, `e_{t+1} <= D(x_t, s*) + R_t + D(s_{t+1}, x_t)`.
pub fn audit_three_point(trace: &Trace, g: &Geometry, op: &Operator) -> Result<CheckRecord> {
    let states = states(trace)?;
    let star = s_star(trace);
    let tol = g.tolerances().identity;
    let mut identity = Inequality::new("three-point", 0.0);
    let mut bound = Inequality::new("three-point-inequality", 1e-12);
    let mut max_residual = 0.0_f64;
    for (w, row) in states.windows(2).zip(&trace.rows) {
        let x = averaged(op, &w[0], row.t, row.alpha_t)?;
        let residual = g.three_point_unchecked(&w[1], &x, &star);
        max_residual = max_residual.max(residual);
        identity.observe(row.t, residual, tol);

        let eta = w[1].sub(&x);
        let r = g
            .grad_unchecked(&x)
            .sub(&g.grad_unchecked(&star))
            .dot(&eta)
            .abs();
        let rhs = g.div(&x, &star) + r + g.div(&w[1], &x);
        bound.observe(row.t, g.div(&w[1], &star), rhs);
    }
    let bound = bound.finish();
    Ok(identity
        .finish()
        .with_detail("max_residual", max_residual)
        .with_detail("inequality_status", bound.status)
        .with_detail("inequality_worst_violation", bound.worst_violation))
}

/// Descent for the averaged point:
/// `D(x_t, s*) <= θ_t e_t + (L/2) α_t² ‖Δ_t‖²` with `θ_t = 1 - α_t(1 - γ̂)`.
///
/// The pre-contraction form
/// `D(x_t, s*) <= (1-α_t) e_t + α_t D(T s_t, s*) + (L/2) α_t² ‖Δ_t‖²`
/// is reported in the detail map.
pub fn audit_descent(
    trace: &Trace,
    g: &Geometry,
    op: &Operator,
    bc: &BoundConstants,
    tol: f64,
) -> Result<CheckRecord> {
    let states = states(trace)?;
    let star = s_star(trace);
    let mut main = Inequality::new("descent", tol);
    let mut pre = Inequality::new("descent-pre-contraction", tol);
    for (row, s) in trace.rows.iter().zip(states).take(trace.rows.len() - 1) {
        let a = row.alpha_t;
        let ts = op.apply(s, row.t)?;
        let x = s.lerp(&ts, a);
        let lhs = g.div(&x, &star);
        let smooth = 0.5 * bc.l * a * a * row.delta_norm_sq;
        main.observe(row.t, lhs, bc.theta(a) * row.e_t + smooth);
        pre.observe(
            row.t,
            lhs,
            (1.0 - a) * row.e_t + a * g.div(&ts, &star) + smooth,
        );
    }
    let pre = pre.finish();
    Ok(main
        .finish()
        .with_detail("pre_contraction_status", pre.status)
        .with_detail("pre_contraction_worst_violation", pre.worst_violation)
        .with_detail("pre_contraction_worst_t", pre.worst_t))
}

/// Both sides of the cross-term bound for one step:
/// `R = |<∇φ(x) - ∇φ(s*), η>|` and `½ D(x, s*) + C0 D(η, 0)`.
pub fn cross_term_step(
    g: &Geometry,
    x: &Vector,
    star: &Vector,
    eta: &Vector,
    c0: f64,
) -> (f64, f64) {
    let r = g
        .grad_unchecked(x)
        .sub(&g.grad_unchecked(star))
        .dot(eta)
        .abs();
    (r, 0.5 * g.div(x, star) + c0 * g.div_from_origin(eta))
}

/// Cross-term bound `R_t <= ½ D(x_t, s*) + C0 D(η_t, 0)`. Vacuous on
/// noise-free traces.
pub fn audit_cross_term(
    trace: &Trace,
    g: &Geometry,
    op: &Operator,
    bc: &BoundConstants,
    tol: f64,
) -> Result<CheckRecord> {
    let mut ineq = Inequality::new("cross-term", tol);
    if trace.meta.noise_free || !g.is_linear_space() {
        return Ok(ineq
            .finish()
            .with_detail("reason", "no perturbation injected"));
    }
    let states = states(trace)?;
    let star = s_star(trace);
    let mut max_r = 0.0_f64;
    let mut min_slack = f64::INFINITY;
    for (w, row) in states.windows(2).zip(&trace.rows) {
        let x = averaged(op, &w[0], row.t, row.alpha_t)?;
        let eta = match trace.etas.as_ref() {
            Some(etas) => etas[row.t].clone(),
            None => w[1].sub(&x),
        };
        let (r, rhs) = cross_term_step(g, &x, &star, &eta, bc.c0);
        max_r = max_r.max(r);
        min_slack = min_slack.min(rhs - r);
        ineq.observe(row.t, r, rhs);
    }
    Ok(ineq
        .finish()
        .with_detail("max_cross_term", max_r)
        .with_detail("min_slack", min_slack))
}

/// Combined estimate
/// `e_{t+1} <= (3/2)[θ_t e_t + (L/2) α_t² ‖Δ_t‖²] + (1 + C0) D(η_t, 0)`.
/// Uses only ledger columns.
pub fn audit_combined(
    trace: &Trace,
    _g: &Geometry,
    bc: &BoundConstants,
    tol: f64,
) -> Result<CheckRecord> {
    let mut ineq = Inequality::new("combined", tol);
    for w in trace.rows.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let a = cur.alpha_t;
        let rhs = 1.5 * (bc.theta(a) * cur.e_t + 0.5 * bc.l * a * a * cur.delta_norm_sq)
            + (1.0 + bc.c0) * cur.eta_div;
        ineq.observe(cur.t, next.e_t, rhs);
    }
    Ok(ineq.finish())
}

/// Remainder step: with the fitted `M`,
/// `e_{t+1} <= c_t e_t + (1 + C0) delta0` where
/// `c_t = (3/2)θ_t + (3LM/4)α_t² + (1 + C0)κ`.
///
/// The detail map records how often `c_t >= 1`, which is where the
/// coefficient fails to contract.
pub fn audit_remainder(trace: &Trace, bc: &BoundConstants, tol: f64) -> CheckRecord {
    let mut ineq = Inequality::new("remainder", tol);
    let mut above_one = 0usize;
    let mut max_coeff = f64::NEG_INFINITY;
    let mut last_above: Option<usize> = None;
    for w in trace.rows.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let a = cur.alpha_t;
        let coeff = 1.5 * bc.theta(a) + 0.75 * bc.l * bc.m_fit * a * a + (1.0 + bc.c0) * bc.kappa;
        if coeff >= 1.0 {
            above_one += 1;
            last_above = Some(cur.t);
        }
        max_coeff = max_coeff.max(coeff);
        ineq.observe(cur.t, next.e_t, coeff * cur.e_t + (1.0 + bc.c0) * bc.delta0);
    }
    ineq.finish()
        .with_detail("m_fit", bc.m_fit)
        .with_detail("coefficient_max", max_coeff)
        .with_detail("coefficient_at_least_one_count", above_one)
        .with_detail("coefficient_at_least_one_last_t", last_above)
}
