//! State-dependent perturbations `η_t` with the adaptive budget
//! `D(η_t, 0) <= delta0 + kappa * D(s_t, s*)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    Zero,
    Random,
    Adversarial,
}

/// How the emitted perturbation enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    /// `η_t` is added as sampled.
    #[default]
    Unscaled,
    /// `α_t · η_t` is added.
    Scaled,
}

impl std::fmt::Display for Injection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Injection::Unscaled => "unscaled",
            Injection::Scaled => "scaled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationModel {
    pub mode: PerturbationMode,
    #[serde(default)]
    pub delta0: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub injection: Injection,
}

impl Default for PerturbationModel {
    fn default() -> Self {
        PerturbationModel::zero()
    }
}

impl PerturbationModel {
    pub fn new(
        mode: PerturbationMode,
        delta0: f64,
        kappa: f64,
        injection: Injection,
    ) -> Result<Self> {
        let pm = PerturbationModel {
            mode,
            delta0,
            kappa,
            injection,
        };
        pm.validate()?;
        Ok(pm)
    }

    pub fn zero() -> Self {
        PerturbationModel {
            mode: PerturbationMode::Zero,
            delta0: 0.0,
            kappa: 0.0,
            injection: Injection::Unscaled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("delta0", self.delta0), ("kappa", self.kappa)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("must be finite and >= 0, got {x}"),
                ));
            }
        }
        Ok(())
    }

    /// True when every emitted perturbation is zero.
    pub fn is_noise_free(&self) -> bool {
        self.mode == PerturbationMode::Zero || (self.delta0 == 0.0 && self.kappa == 0.0)
    }

    /// The divergence budget `delta0 + kappa * e_t`.
    pub fn budget(&self, e_t: f64) -> f64 {
        self.delta0 + self.kappa * e_t
    }

    /// Checks that the geometry can host perturbations at all.
    pub fn check_geometry(&self, g: &Geometry) -> Result<()> {
        if !self.is_noise_free() && !g.is_linear_space() {
            return Err(Error::Config(format!(
                "perturbations need a geometry whose domain contains 0 (D(eta, 0) is undefined \
                 on {}); use squared-euclidean or quadratic, or mode \"zero\"",
                g.kind()
            )));
        }
        Ok(())
    }

    /// Draws `η_t` and returns it as injected into the update (already
    /// multiplied by `alpha_t` in scaled mode).
    ///
    /// Random mode picks a uniform direction `v` and length
    /// `u * sqrt(b / D(v, 0))` with `u ~ U[0, 1]`, so `D(η, 0) = u² b`.
    /// Adversarial mode spends the full budget along `(s_t - s*)/‖s_t - s*‖`;
    /// at `s_t = s*` with positive budget the direction is drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        g: &Geometry,
        s_t: &Vector,
        s_star: &Vector,
        e_t: f64,
        alpha_t: f64,
        rng: &mut R,
    ) -> Result<Vector> {
        let raw = self.sample_raw(g, s_t, s_star, e_t, rng)?;
        Ok(match self.injection {
            Injection::Unscaled => raw,
            Injection::Scaled => raw.scale(alpha_t),
        })
    }

    /// The perturbation before injection scaling.
    pub fn sample_raw<R: Rng + ?Sized>(
        &self,
        g: &Geometry,
        s_t: &Vector,
        s_star: &Vector,
        e_t: f64,
        rng: &mut R,
    ) -> Result<Vector> {
        let n = g.dim();
        if s_t.dim() != n || s_star.dim() != n {
            return Err(Error::dims(
                "perturbation state",
                n,
                s_t.dim().max(s_star.dim()),
            ));
        }
        if !(e_t >= 0.0) {
            return Err(Error::param("e_t", format!("must be >= 0, got {e_t}")));
        }
        if self.mode == PerturbationMode::Zero {
            return Ok(Vector::zeros(n));
        }
        self.check_geometry(g)?;
        let budget = self.budget(e_t);
        if budget <= 0.0 {
            return Ok(Vector::zeros(n));
        }
        let (direction, fraction) = match self.mode {
            PerturbationMode::Random => (random_direction(n, rng), rng.random_range(0.0..=1.0)),
            PerturbationMode::Adversarial => {
                let away = s_t.sub(s_star);
                let norm = away.norm();
                if norm > 0.0 {
                    (away.scale(1.0 / norm), 1.0)
                } else {
                    (random_direction(n, rng), 1.0)
                }
            }
            PerturbationMode::Zero => unreachable!(),
        };
        let unit_div = g.div_from_origin(&direction);
        let length = fraction * (budget / unit_div).sqrt();
        Ok(direction.scale(length))
    }
}

fn random_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_raw((0..n).map(|_| rng.sample(StandardNormal)).collect());
        let norm = v.norm();
        if norm > 1e-300 {
            return v.scale(1.0 / norm);
        }
    }
}
