//! Bregman geometries.
//!
//! A [`Geometry`] bundles a strictly convex potential `φ` with its gradient
//! (the dual coordinate map), the inverse of that gradient (the mirror map),
//! and the strong-convexity / smoothness constants `mu` and `L` that relate
//! the induced divergence
//!
//! ```text
//! D(s, s') = φ(s) - φ(s') - <∇φ(s'), s - s'>
//! ```
//!
//! to the squared Euclidean norm. The constants are declared at construction
//! and can be certified by sampling with [`Geometry::certify`].

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{SpdMatrix, Vector};

/// Default interior margin of the negative-entropy domain.
pub const DEFAULT_RHO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    SquaredEuclidean,
    NegativeEntropy,
    Quadratic,
}

impl std::fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeometryKind::SquaredEuclidean => "squared-euclidean",
            GeometryKind::NegativeEntropy => "negative-entropy",
            GeometryKind::Quadratic => "quadratic",
        })
    }
}

/// Numerical tolerances used by domain checks and certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryTolerances {
    /// Allowed deviation of a simplex point's sum from 1.
    pub simplex_sum: f64,
    /// Relative tolerance for exact identities (mirror inversion, three-point).
    pub identity: f64,
    /// Absolute slack for the sampled convexity/smoothness certificates.
    pub certificate: f64,
}

impl Default for GeometryTolerances {
    fn default() -> Self {
        GeometryTolerances {
            simplex_sum: 1e-12,
            identity: 1e-9,
            certificate: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Potential {
    SquaredEuclidean,
    NegativeEntropy { rho: f64 },
    Quadratic { a: SpdMatrix },
}

/// An immutable Bregman geometry of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    dim: usize,
    potential: Potential,
    mu: f64,
    l: f64,
    tol: GeometryTolerances,
}

impl Geometry {
    /// `φ(x) = ½‖x‖²` on `R^dim`; `mu = L = 1`.
    pub fn squared_euclidean(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        Ok(Geometry {
            dim,
            potential: Potential::SquaredEuclidean,
            mu: 1.0,
            l: 1.0,
            tol: GeometryTolerances::default(),
        })
    }

    /// `φ(x) = Σ xᵢ ln xᵢ` on the `rho`-interior of the probability simplex.
    ///
    /// Declares `mu = 1` (Pinsker, since `‖·‖₁ ≥ ‖·‖₂`) and `L = 1/rho`.
    pub fn negative_entropy(dim: usize, rho: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::param(
                "dim",
                "negative-entropy needs at least 2 coordinates",
            ));
        }
        if !(rho > 0.0 && rho * (dim as f64) < 1.0) {
            return Err(Error::param(
                "rho",
                format!("must satisfy 0 < rho < 1/dim, got {rho}"),
            ));
        }
        Ok(Geometry {
            dim,
            potential: Potential::NegativeEntropy { rho },
            mu: 1.0,
            l: 1.0 / rho,
            tol: GeometryTolerances::default(),
        })
    }

    /// `φ(x) = ½ xᵀAx`; `mu` and `L` default to the extreme eigenvalues of `A`.
    pub fn quadratic(a: SpdMatrix) -> Result<Self> {
        Ok(Geometry {
            dim: a.dim(),
            mu: a.lambda_min(),
            l: a.lambda_max(),
            potential: Potential::Quadratic { a },
            tol: GeometryTolerances::default(),
        })
    }

    /// Overrides the declared constants. They are not re-derived, only checked
    /// for `0 < mu <= L`; use [`Geometry::certify`] to test them.
    pub fn with_constants(mut self, mu: f64, l: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::param("mu", format!("must be positive, got {mu}")));
        }
        if !(l >= mu && l.is_finite()) {
            return Err(Error::param("L", format!("must be >= mu, got {l}")));
        }
        self.mu = mu;
        self.l = l;
        Ok(self)
    }

    pub fn with_tolerances(mut self, tol: GeometryTolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn kind(&self) -> GeometryKind {
        match self.potential {
            Potential::SquaredEuclidean => GeometryKind::SquaredEuclidean,
            Potential::NegativeEntropy { .. } => GeometryKind::NegativeEntropy,
            Potential::Quadratic { .. } => GeometryKind::Quadratic,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn tolerances(&self) -> &GeometryTolerances {
        &self.tol
    }

    /// Interior margin for negative-entropy, `None` otherwise.
    pub fn rho(&self) -> Option<f64> {
        match self.potential {
            Potential::NegativeEntropy { rho } => Some(rho),
            _ => None,
        }
    }

    /// Whether the domain contains the origin (needed to measure `D(η, 0)`).
    pub fn is_linear_space(&self) -> bool {
        !matches!(self.potential, Potential::NegativeEntropy { .. })
    }

    /// Checks dimension and domain membership.
    pub fn check_domain(&self, s: &Vector) -> Result<()> {
        if s.dim() != self.dim {
            return Err(Error::dims("geometry", self.dim, s.dim()));
        }
        if !s.is_finite() {
            return Err(Error::Domain("point has non-finite entries".into()));
        }
        if let Potential::NegativeEntropy { rho } = self.potential {
            if let Some(i) = s.iter().position(|&x| x <= 0.0) {
                return Err(Error::Domain(format!(
                    "simplex entry {i} is not strictly positive ({})",
                    s[i]
                )));
            }
            let floor = rho * (1.0 - 1e-9);
            if let Some(i) = s.iter().position(|&x| x < floor) {
                return Err(Error::Domain(format!(
                    "simplex entry {i} = {:e} is below the interior margin rho = {rho:e}",
                    s[i]
                )));
            }
            let sum: f64 = s.iter().sum();
            if (sum - 1.0).abs() > self.tol.simplex_sum {
                return Err(Error::Domain(format!(
                    "simplex entries sum to {sum}, not 1 (tolerance {:e})",
                    self.tol.simplex_sum
                )));
            }
        }
        Ok(())
    }

    /// The potential `φ(s)`.
    pub fn phi(&self, s: &Vector) -> Result<f64> {
        self.check_domain(s)?;
        Ok(self.phi_unchecked(s))
    }

    pub(crate) fn phi_unchecked(&self, s: &Vector) -> f64 {
        match &self.potential {
            Potential::SquaredEuclidean => 0.5 * s.norm_sq(),
            Potential::NegativeEntropy { .. } => s.iter().map(|&x| x * x.ln()).sum(),
            Potential::Quadratic { a } => 0.5 * a.quad_form(s),
        }
    }

    /// `D(s, s_ref)`.
    pub fn divergence(&self, s: &Vector, s_ref: &Vector) -> Result<f64> {
        self.check_domain(s)?;
        self.check_domain(s_ref)?;
        Ok(self.div(s, s_ref))
    }

    /// Divergence without domain checks. Evaluated in closed form per kind
    /// rather than through `φ` differences, so that small divergences keep
    /// their relative precision.
    pub(crate) fn div(&self, s: &Vector, s_ref: &Vector) -> f64 {
        match &self.potential {
            Potential::SquaredEuclidean => 0.5 * s.sub(s_ref).norm_sq(),
            Potential::Quadratic { a } => 0.5 * a.quad_form(&s.sub(s_ref)),
            Potential::NegativeEntropy { .. } => s
                .iter()
                .zip(s_ref.iter())
                .map(|(&p, &q)| p * (p / q).ln() - p + q)
                .sum::<f64>()
                .max(0.0),
        }
    }

    /// `D(η, 0)` for linear-space geometries.
    pub(crate) fn div_from_origin(&self, eta: &Vector) -> f64 {
        match &self.potential {
            Potential::SquaredEuclidean => 0.5 * eta.norm_sq(),
            Potential::Quadratic { a } => 0.5 * a.quad_form(eta),
            Potential::NegativeEntropy { .. } => f64::NAN,
        }
    }

    /// `∇φ(s)`.
    pub fn grad(&self, s: &Vector) -> Result<Vector> {
        self.check_domain(s)?;
        Ok(self.grad_unchecked(s))
    }

    pub(crate) fn grad_unchecked(&self, s: &Vector) -> Vector {
        match &self.potential {
            Potential::SquaredEuclidean => s.clone(),
            Potential::NegativeEntropy { .. } => s.map(|x| 1.0 + x.ln()),
            Potential::Quadratic { a } => a.mul(s),
        }
    }

    /// `(∇φ)⁻¹(dual)`. For negative-entropy this is the softmax, which
    /// normalizes onto the simplex and absorbs additive constants in `dual`.
    pub fn mirror(&self, dual: &Vector) -> Result<Vector> {
        if dual.dim() != self.dim {
            return Err(Error::dims("mirror", self.dim, dual.dim()));
        }
        if !dual.is_finite() {
            return Err(Error::Domain("dual point has non-finite entries".into()));
        }
        Ok(match &self.potential {
            Potential::SquaredEuclidean => dual.clone(),
            Potential::Quadratic { a } => a.solve(dual),
            Potential::NegativeEntropy { .. } => {
                let m = dual.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let w = dual.map(|x| (x - m).exp());
                let z: f64 = w.iter().sum();
                w.scale(1.0 / z)
            }
        })
    }

    /// Relative residual of the three-point identity
    /// `D(u,w) = D(v,w) + <∇φ(v) - ∇φ(w), u - v> + D(u,v)`.
    pub fn three_point_residual(&self, u: &Vector, v: &Vector, w: &Vector) -> Result<f64> {
        self.check_domain(u)?;
        self.check_domain(v)?;
        self.check_domain(w)?;
        Ok(self.three_point_unchecked(u, v, w))
    }

    pub(crate) fn three_point_unchecked(&self, u: &Vector, v: &Vector, w: &Vector) -> f64 {
        let lhs = self.div(u, w);
        let cross = self
            .grad_unchecked(v)
            .sub(&self.grad_unchecked(w))
            .dot(&u.sub(v));
        let rhs = self.div(v, w) + cross + self.div(u, v);
        (lhs - rhs).abs() / lhs.abs().max(1.0)
    }

    /// Pulls a point that drifted by rounding back into the domain.
    ///
    /// Only negative-entropy has anything to repair: the point is renormalized
    /// and entries are clamped to `rho`. Returns `None` when the drift is too
    /// large to be rounding (sum off by more than `1e-9`, or an entry below
    /// the margin by more than `1e-12`).
    pub fn project(&self, s: &Vector) -> Option<Vector> {
        if s.dim() != self.dim || !s.is_finite() {
            return None;
        }
        match self.potential {
            Potential::NegativeEntropy { rho } => {
                let sum: f64 = s.iter().sum();
                let min = s.iter().fold(f64::INFINITY, |m, &x| m.min(x));
                if (sum - 1.0).abs() > 1e-9 || min < rho - 1e-12 {
                    return None;
                }
                Some(clamp_to_interior(&s.scale(1.0 / sum), rho))
            }
            _ => Some(s.clone()),
        }
    }

    /// Draws one domain point. Linear-space geometries sample uniformly from
    /// the box `center ± radius`; negative-entropy samples a flat Dirichlet
    /// point mapped into the `rho`-interior and ignores `center` and `radius`.
    pub fn sample_point<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        center: Option<&Vector>,
        radius: f64,
    ) -> Vector {
        match self.potential {
            Potential::NegativeEntropy { rho } => {
                let w: Vec<f64> = (0..self.dim).map(|_| Exp1.sample(rng)).collect();
                let z: f64 = w.iter().sum();
                let span = 1.0 - rho * self.dim as f64;
                let p = Vector::from_raw(w.iter().map(|x| rho + span * x / z).collect());
                clamp_to_interior(&p, rho)
            }
            _ => {
                let entries = (0..self.dim)
                    .map(|i| {
                        let c = center.map_or(0.0, |c| c[i]);
                        c + radius * rng.random_range(-1.0..=1.0)
                    })
                    .collect();
                Vector::from_raw(entries)
            }
        }
    }

    /// Samples `n_pairs` domain pairs and reports the worst slack of each
    /// geometry contract.
    pub fn certify(&self, n_pairs: usize, seed: u64) -> Certificate {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cert = Certificate {
            pairs: n_pairs,
            min_divergence: f64::INFINITY,
            strong_convexity_slack: f64::INFINITY,
            smoothness_slack: f64::INFINITY,
            mirror_rel_error: 0.0,
            three_point_residual: 0.0,
        };
        for _ in 0..n_pairs {
            let s = self.sample_point(&mut rng, None, 1.0);
            let r = self.sample_point(&mut rng, None, 1.0);
            let w = self.sample_point(&mut rng, None, 1.0);
            let d = self.div(&s, &r);
            let n2 = s.sub(&r).norm_sq();
            cert.min_divergence = cert.min_divergence.min(d);
            cert.strong_convexity_slack = cert.strong_convexity_slack.min(d - 0.5 * self.mu * n2);
            cert.smoothness_slack = cert.smoothness_slack.min(0.5 * self.l * n2 - d);
            if let Ok(back) = self.mirror(&self.grad_unchecked(&s)) {
                let err = back.sub(&s).max_abs() / s.max_abs().max(f64::MIN_POSITIVE);
                cert.mirror_rel_error = cert.mirror_rel_error.max(err);
            }
            cert.three_point_residual = cert
                .three_point_residual
                .max(self.three_point_unchecked(&s, &r, &w));
        }
        cert
    }
}

/// Worst-case slacks found by [`Geometry::certify`]. Negative slack means a
/// sampled pair violated the declared constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub pairs: usize,
    pub min_divergence: f64,
    /// `min D(s,s') - (mu/2)‖s-s'‖²`
    pub strong_convexity_slack: f64,
    /// `min (L/2)‖s-s'‖² - D(s,s')`
    pub smoothness_slack: f64,
    pub mirror_rel_error: f64,
    pub three_point_residual: f64,
}

impl Certificate {
    pub fn holds(&self, tol: &GeometryTolerances) -> bool {
        self.min_divergence >= -1e-12
            && self.strong_convexity_slack >= -tol.certificate
            && self.smoothness_slack >= -tol.certificate
            && self.mirror_rel_error <= tol.identity
            && self.three_point_residual <= tol.identity
    }
}

/// Raises entries below `rho` to `rho` and takes the excess from the largest
/// entry, so the result sums to 1 up to rounding.
pub(crate) fn clamp_to_interior(p: &Vector, rho: f64) -> Vector {
    let mut x: Vec<f64> = p.iter().map(|&v| v.max(rho)).collect();
    let excess: f64 = x.iter().sum::<f64>() - 1.0;
    let (imax, _) = x
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    x[imax] -= excess;
    Vector::from_raw(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn quad() -> Geometry {
        Geometry::quadratic(SpdMatrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap())
            .unwrap()
    }

    #[test]
    fn euclidean_divergence() {
        let g = Geometry::squared_euclidean(2).unwrap();
        assert_eq!(g.divergence(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.5);
    }

    #[test]
    fn entropy_divergence_matches_kl() {
        let g = Geometry::negative_entropy(2, DEFAULT_RHO).unwrap();
        let s = v(&[0.5, 0.5]);
        assert_eq!(g.divergence(&s, &s).unwrap(), 0.0);
        let r = v(&[0.25, 0.75]);
        let kl: f64 = [(0.5_f64, 0.25_f64), (0.5, 0.75)]
            .iter()
            .map(|(p, q)| p * (p / q).ln())
            .sum();
        assert!((g.divergence(&s, &r).unwrap() - kl).abs() < 1e-15);
    }

    #[test]
    fn entropy_domain_errors_name_the_constraint() {
        let g = Geometry::negative_entropy(2, DEFAULT_RHO).unwrap();
        let e = g.divergence(&v(&[0.6, 0.6]), &v(&[0.5, 0.5])).unwrap_err();
        assert!(e.to_string().contains("sum"), "{e}");
        let e = g.divergence(&v(&[1.0, 0.0]), &v(&[0.5, 0.5])).unwrap_err();
        assert!(e.to_string().contains("strictly positive"), "{e}");
        let e = g
            .divergence(&v(&[1.0 - 1e-8, 1e-8]), &v(&[0.5, 0.5]))
            .unwrap_err();
        assert!(e.to_string().contains("margin"), "{e}");
        let e = g
            .divergence(&v(&[0.2, 0.3, 0.5]), &v(&[0.5, 0.5]))
            .unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn gradients() {
        let g = Geometry::squared_euclidean(2).unwrap();
        assert_eq!(g.grad(&v(&[3.0, -1.0])).unwrap(), v(&[3.0, -1.0]));
        assert_eq!(quad().grad(&v(&[1.0, 1.0])).unwrap(), v(&[2.0, 1.0]));
        let h = Geometry::negative_entropy(2, DEFAULT_RHO).unwrap();
        let e1 = (-1.0_f64).exp();
        let d = h.grad(&v(&[e1, 1.0 - e1])).unwrap();
        assert!(d[0].abs() < 1e-15);
    }

    #[test]
    fn mirrors() {
        let g = Geometry::squared_euclidean(2).unwrap();
        assert_eq!(g.mirror(&v(&[2.0, 5.0])).unwrap(), v(&[2.0, 5.0]));
        let m = quad().mirror(&v(&[2.0, 1.0])).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-15 && (m[1] - 1.0).abs() < 1e-15);
        let h = Geometry::negative_entropy(3, DEFAULT_RHO).unwrap();
        for c in [-7.0, 0.0, 3.5] {
            let m = h.mirror(&v(&[c, c, c])).unwrap();
            assert!(m.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn three_point_trivial_cases() {
        let g = Geometry::squared_euclidean(2).unwrap();
        let u = v(&[1.0, 0.0]);
        assert_eq!(g.three_point_residual(&u, &u, &u).unwrap(), 0.0);
        let r = g
            .three_point_residual(&u, &v(&[0.0, 1.0]), &v(&[0.0, 0.0]))
            .unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn certificates_hold_for_every_kind() {
        for g in [
            Geometry::squared_euclidean(3).unwrap(),
            quad(),
            Geometry::negative_entropy(4, DEFAULT_RHO).unwrap(),
            Geometry::negative_entropy(3, 0.05).unwrap(),
        ] {
            let c = g.certify(1000, 11);
            assert!(c.holds(g.tolerances()), "{:?}: {c:?}", g.kind());
        }
    }

    #[test]
    fn overdeclared_mu_is_caught() {
        let g = quad().with_constants(1.5, 2.0).unwrap();
        let c = g.certify(500, 3);
        assert!(c.strong_convexity_slack < 0.0);
        assert!(quad().with_constants(0.0, 1.0).is_err());
        assert!(quad().with_constants(2.0, 1.0).is_err());
    }

    #[test]
    fn project_repairs_rounding_only() {
        let g = Geometry::negative_entropy(3, 0.01).unwrap();
        let p = g.project(&v(&[0.2, 0.3, 0.5 + 1e-13])).unwrap();
        g.check_domain(&p).unwrap();
        assert!(g.project(&v(&[0.2, 0.3, 0.6])).is_none());
        assert!(g.project(&v(&[0.0, 0.5, 0.5])).is_none());
    }
}
