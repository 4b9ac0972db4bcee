//! Update operators `T(s, y)` with fixed-point oracles and sampled
//! contraction-factor estimates.
//!
//! Contraction is always measured in the divergence of a concrete
//! [`Geometry`]. Under squared-euclidean geometry the divergence factor of
//! a map is the *square* of its norm-Lipschitz constant: an affine map
//! `s ↦ γ s + c` has divergence factor `γ²`, not `γ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clamp_to_interior, Geometry, GeometryKind};
use crate::mdp::Mdp;
use crate::vector::{SpdMatrix, Vector};

/// Pairs sampled by the convenience estimators when no count is given.
pub const DEFAULT_CONTRACTION_PAIRS: usize = 1000;
/// Divergence tolerance for the iterative fixed-point fallback.
pub const FIXED_POINT_TOL: f64 = 1e-14;
/// Iteration cap for the iterative fixed-point fallback.
pub const FIXED_POINT_MAX_ITER: usize = 1_000_000;
/// Policy count up to which Bellman fixed points are found by enumeration.
pub const MAX_ENUMERATED_POLICIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    AffineColinear,
    AffineRotation,
    GradientStep,
    ExpGradientStep,
    Bellman,
}

#[derive(Debug, Clone, PartialEq)]
enum Map {
    /// `γ s + (1-γ) s*`
    AffineColinear {
        gamma: f64,
        target: Vector,
    },
    /// `γ R(θ)(s - s*) + s*`
    AffineRotation {
        gamma: f64,
        cos: f64,
        sin: f64,
        target: Vector,
    },
    /// `s - η (A s - b)`
    GradientStep {
        a: SpdMatrix,
        b: Vector,
        step: f64,
    },
    /// `p ∝ p · exp(-η ∇KL(p‖q))`
    ExpGradientStep {
        target: Vector,
        step: f64,
        rho: f64,
    },
    Bellman {
        mdp: Mdp,
    },
}

/// An immutable update operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    map: Map,
    context_y: Option<Vec<Vector>>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param(
            "gamma",
            format!("must lie in [0, 1), got {gamma}"),
        ));
    }
    Ok(())
}

impl Operator {
    pub fn affine_colinear(gamma: f64, target: Vector) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self::from_map(Map::AffineColinear { gamma, target }))
    }

    /// Planar rotation by `theta` radians combined with a `gamma` shrink about `target`.
    pub fn affine_rotation(gamma: f64, theta: f64, target: Vector) -> Result<Self> {
        check_gamma(gamma)?;
        if target.dim() != 2 {
            return Err(Error::dims("affine-rotation target", 2, target.dim()));
        }
        if !theta.is_finite() {
            return Err(Error::param("theta", "must be finite"));
        }
        Ok(Self::from_map(Map::AffineRotation {
            gamma,
            cos: theta.cos(),
            sin: theta.sin(),
            target,
        }))
    }

    pub fn gradient_step(a: SpdMatrix, b: Vector, step: f64) -> Result<Self> {
        if b.dim() != a.dim() {
            return Err(Error::dims("gradient-step b", a.dim(), b.dim()));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param(
                "step",
                format!("must be positive, got {step}"),
            ));
        }
        Ok(Self::from_map(Map::GradientStep { a, b, step }))
    }

    /// Exponentiated-gradient step on `KL(p‖q)`. `rho` must match the
    /// negative-entropy geometry the operator runs in; `target` must lie in
    /// its `rho`-interior.
    pub fn exp_gradient_step(target: Vector, step: f64, rho: f64) -> Result<Self> {
        if !(step > 0.0 && step < 2.0) {
            return Err(Error::param(
                "step",
                format!("must lie in (0, 2), got {step}"),
            ));
        }
        Geometry::negative_entropy(target.dim(), rho)?
            .check_domain(&target)
            .map_err(|e| Error::param("target", e.to_string()))?;
        Ok(Self::from_map(Map::ExpGradientStep { target, step, rho }))
    }

    pub fn bellman(mdp: Mdp) -> Result<Self> {
        mdp.validate()?;
        Ok(Self::from_map(Map::Bellman { mdp }))
    }

    fn from_map(map: Map) -> Self {
        Operator {
            map,
            context_y: None,
        }
    }

    /// Attaches an auxiliary input sequence, cycled by iteration index.
    /// Only the Bellman operator reads it (as per-state reward offsets).
    pub fn with_context(mut self, ys: Vec<Vector>) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::param("context_y", "sequence must be non-empty"));
        }
        if let Some(y) = ys.iter().find(|y| y.dim() != self.dim()) {
            return Err(Error::dims("context_y", self.dim(), y.dim()));
        }
        self.context_y = Some(ys);
        Ok(self)
    }

    pub fn kind(&self) -> OperatorKind {
        match self.map {
            Map::AffineColinear { .. } => OperatorKind::AffineColinear,
            Map::AffineRotation { .. } => OperatorKind::AffineRotation,
            Map::GradientStep { .. } => OperatorKind::GradientStep,
            Map::ExpGradientStep { .. } => OperatorKind::ExpGradientStep,
            Map::Bellman { .. } => OperatorKind::Bellman,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.map {
            Map::AffineColinear { target, .. } => target.dim(),
            Map::AffineRotation { .. } => 2,
            Map::GradientStep { b, .. } => b.dim(),
            Map::ExpGradientStep { target, .. } => target.dim(),
            Map::Bellman { mdp } => mdp.n_states(),
        }
    }

    /// Which geometry kinds this operator can run in.
    pub fn accepts_geometry(&self, kind: GeometryKind) -> bool {
        match self.map {
            Map::ExpGradientStep { .. } => kind == GeometryKind::NegativeEntropy,
            _ => kind != GeometryKind::NegativeEntropy,
        }
    }

    fn context_at(&self, t: usize) -> Option<&Vector> {
        self.context_y.as_ref().map(|ys| &ys[t % ys.len()])
    }

    /// `T(s, y_t)`.
    pub fn apply(&self, s: &Vector, t: usize) -> Result<Vector> {
        if s.dim() != self.dim() {
            return Err(Error::dims("operator input", self.dim(), s.dim()));
        }
        if !s.is_finite() {
            return Err(Error::Domain(
                "operator input has non-finite entries".into(),
            ));
        }
        if let Map::ExpGradientStep { .. } = self.map {
            if let Some(i) = s.iter().position(|&x| x <= 0.0) {
                return Err(Error::Domain(format!(
                    "exp-gradient input entry {i} is not strictly positive ({})",
                    s[i]
                )));
            }
        }
        Ok(self.apply_unchecked(s, t))
    }

    pub(crate) fn apply_unchecked(&self, s: &Vector, t: usize) -> Vector {
        match &self.map {
            Map::AffineColinear { gamma, target } => {
                s.zip_map(target, |x, c| gamma * x + (1.0 - gamma) * c)
            }
            Map::AffineRotation {
                gamma,
                cos,
                sin,
                target,
            } => {
                let d0 = s[0] - target[0];
                let d1 = s[1] - target[1];
                Vector::from_raw(vec![
                    target[0] + gamma * (cos * d0 - sin * d1),
                    target[1] + gamma * (sin * d0 + cos * d1),
                ])
            }
            Map::GradientStep { a, b, step } => {
                let residual = a.mul(s).sub(b);
                s.zip_map(&residual, |x, r| x - step * r)
            }
            Map::ExpGradientStep { target, step, rho } => {
                // ∇KL(p‖q) = ln(p/q) + 1; the constant cancels on renormalization,
                // leaving p^(1-η) q^η. Work in log space and subtract the max.
                let logits = s.zip_map(target, |p, q| (1.0 - step) * p.ln() + step * q.ln());
                let m = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let w = logits.map(|x| (x - m).exp());
                let z: f64 = w.iter().sum();
                clamp_to_interior(&w.scale(1.0 / z), *rho)
            }
            Map::Bellman { mdp } => mdp.backup(s, self.context_at(t)),
        }
    }

    /// The unique fixed point `s*`.
    ///
    /// Closed form for the affine kinds (the stored target), gradient-step
    /// (`A⁻¹b`) and exp-gradient-step (the target distribution). Bellman
    /// operators with at most [`MAX_ENUMERATED_POLICIES`] policies are solved
    /// by policy enumeration; otherwise plain iteration runs until
    /// `D(T s, s) <= 1e-14`. An attached `context_y` is ignored here.
    pub fn fixed_point(&self, g: &Geometry) -> Result<Vector> {
        if g.dim() != self.dim() {
            return Err(Error::dims("geometry vs operator", self.dim(), g.dim()));
        }
        let plain = Operator {
            map: self.map.clone(),
            context_y: None,
        };
        match &self.map {
            Map::AffineColinear { target, .. } | Map::AffineRotation { target, .. } => {
                Ok(target.clone())
            }
            Map::GradientStep { a, b, .. } => Ok(a.solve(b)),
            Map::ExpGradientStep { target, .. } => Ok(target.clone()),
            Map::Bellman { mdp } if mdp.policy_count() <= MAX_ENUMERATED_POLICIES => {
                mdp.solve_by_enumeration()
            }
            Map::Bellman { mdp } => plain.iterate_to_fixed_point(
                g,
                Vector::zeros(mdp.n_states()),
                FIXED_POINT_TOL,
                FIXED_POINT_MAX_ITER,
            ),
        }
    }

    /// Plain iteration `s ← T(s)` until `D(T s, s) <= tol`.
    pub fn iterate_to_fixed_point(
        &self,
        g: &Geometry,
        start: Vector,
        tol: f64,
        max_iter: usize,
    ) -> Result<Vector> {
        let mut s = start;
        let mut residual = f64::INFINITY;
        for k in 0..max_iter {
            let next = self.apply(&s, k)?;
            residual = g.div(&next, &s);
            s = next;
            if residual <= tol {
                return Ok(s);
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual,
        })
    }

    /// Center and half-width of the box from which linear-space geometries
    /// draw sample pairs: centered on `s*`, wide enough to cover the origin
    /// and, for Bellman, the whole value range `|r|max / (1 - discount)`.
    fn sampling_region(&self, s_star: &Vector) -> f64 {
        let base = 1.0 + s_star.max_abs();
        match &self.map {
            Map::Bellman { mdp } => {
                let rmax = mdp
                    .rewards
                    .iter()
                    .flatten()
                    .fold(0.0_f64, |m, r| m.max(r.abs()));
                base.max(1.0 + rmax / (1.0 - mdp.discount))
            }
            _ => base,
        }
    }

    /// `γ̂ = max D(T s, T s') / D(s, s')` over `n_pairs` sampled domain
    /// pairs. Pairs with `D(s, s') < 1e-14` are skipped. The `k`-th pair is
    /// pushed through `T(·, y_k)`, so cycled context inputs are all visited.
    pub fn estimate_contraction(&self, g: &Geometry, n_pairs: usize, seed: u64) -> Result<f64> {
        let s_star = self.fixed_point(g)?;
        let radius = self.sampling_region(&s_star);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..n_pairs).map(|_| {
            (
                g.sample_point(&mut rng, Some(&s_star), radius),
                g.sample_point(&mut rng, Some(&s_star), radius),
            )
        });
        self.contraction_over_pairs(g, pairs)
    }

    /// Largest divergence ratio over explicitly supplied pairs.
    pub fn contraction_over_pairs(
        &self,
        g: &Geometry,
        pairs: impl IntoIterator<Item = (Vector, Vector)>,
    ) -> Result<f64> {
        if g.dim() != self.dim() {
            return Err(Error::dims("geometry vs operator", self.dim(), g.dim()));
        }
        let mut best: Option<f64> = None;
        for (k, (s, r)) in pairs.into_iter().enumerate() {
            let d = g.div(&s, &r);
            if !(d >= 1e-14) {
                continue;
            }
            let ratio = g.div(&self.apply(&s, k)?, &self.apply(&r, k)?) / d;
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
        best.ok_or(Error::DegenerateSample)
    }

    /// Feedforward depth needed to push an initial error `e0` below `eps`
    /// by plain composition, using `γ̂` from [`Operator::estimate_contraction`]
    /// with [`DEFAULT_CONTRACTION_PAIRS`] pairs and seed 0.
    pub fn unrolled_depth(&self, g: &Geometry, e0: f64, eps: f64) -> Result<usize> {
        let gamma_hat = self.estimate_contraction(g, DEFAULT_CONTRACTION_PAIRS, 0)?;
        unrolled_depth(gamma_hat, e0, eps)
    }
}

/// `ceil(ln(e0/eps) / ln(1/γ̂))`, the smallest `D` with `γ̂^D e0 <= eps`.
pub fn unrolled_depth(gamma_hat: f64, e0: f64, eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", format!("must be positive, got {eps}")));
    }
    if !(e0 > 0.0) {
        return Err(Error::param("e0", format!("must be positive, got {e0}")));
    }
    if !(gamma_hat < 1.0) {
        return Err(Error::NotAContraction { gamma_hat });
    }
    if eps >= e0 {
        return Ok(0);
    }
    if gamma_hat <= 0.0 {
        return Ok(1);
    }
    let depth = ((e0 / eps).ln() / (1.0 / gamma_hat).ln()).ceil();
    let mut d = depth as usize;
    // The log quotient can land an ulp off an integer; settle on the true minimum.
    while d > 1 && gamma_hat.powi(d as i32 - 1) * e0 <= eps {
        d -= 1;
    }
    while gamma_hat.powi(d as i32) * e0 > eps {
        d += 1;
    }
    Ok(d)
}
