//! Experiment configs: strict JSON schema, canonical form, digest and
//! dotted-path overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::analysis::DEFAULT_CHECK_TOL;
use crate::engine::{RunSpec, Schedule};
use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometryKind, GeometryTolerances};
use crate::mdp::Mdp;
use crate::operators::{Operator, OperatorKind, DEFAULT_CONTRACTION_PAIRS};
use crate::perturbation::PerturbationModel;
use crate::vector::{SpdMatrix, Vector};

/// Default interior margin for the negative-entropy geometry.
pub const DEFAULT_RHO: f64 = 1e-6;
/// Default cap on iterations-to-ε searches.
pub const DEFAULT_EPSILON_CAP: usize = 1_000_000;

/// Names accepted in the `tolerances` map.
pub const TOLERANCE_NAMES: [&str; 4] = ["check", "simplex_sum", "identity", "certificate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
    /// Auxiliary inputs `y_t`, cycled by iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_y: Option<Vec<Vec<f64>>>,
}

fn accelerated() -> Schedule {
    Schedule::Accelerated
}

/// One experiment, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub operator: OperatorSpec,
    #[serde(default = "accelerated")]
    pub schedule: Schedule,
    #[serde(default)]
    pub perturbation: PerturbationModel,
    pub s0: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retain_states: Option<bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_cap: Option<usize>,
    /// Rate-fit window `[lo, hi]`; defaults to `[T/10, T]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_window: Option<[usize; 2]>,
    /// Window for the tail-mean noise-floor statistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_window: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction_pairs: Option<usize>,
    /// Dotted path to a list of values. Only read by `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<BTreeMap<String, Vec<Value>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntropyParams {
    #[serde(default = "default_rho")]
    rho: f64,
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticParams {
    a: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColinearParams {
    gamma: f64,
    target: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RotationParams {
    gamma: f64,
    theta_deg: f64,
    target: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GradientParams {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    step: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpGradientParams {
    target: Vec<f64>,
    step: f64,
}

fn params<T: DeserializeOwned>(field: &str, map: &Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(map.clone()))
        .map_err(|e| Error::Config(format!("{field}: {e}")))
}

fn vector(field: &str, xs: &[f64]) -> Result<Vector> {
    Vector::new(xs.to_vec()).map_err(|e| Error::Config(format!("{field}: {e}")))
}

impl RunConfig {
    /// Parses a config document. Unknown keys are rejected and serde's
    /// diagnostics carry the line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.check_fields()?;
        Ok(cfg)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.check_fields()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    /// Every operator and geometry parameter is real-valued, so `2` and
    /// `2.0` are stored alike and give the same digest.
    fn normalize(&mut self) {
        for map in [&mut self.geometry.params, &mut self.operator.params] {
            for v in map.values_mut() {
                numbers_to_f64(v);
            }
        }
    }

    fn check_fields(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations: must be >= 1".into()));
        }
        for (name, &value) in &self.tolerances {
            if !TOLERANCE_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "tolerances.{name}: unknown tolerance (expected one of {TOLERANCE_NAMES:?})"
                )));
            }
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Config(format!(
                    "tolerances.{name}: must be finite and >= 0"
                )));
            }
        }
        if let Some(bad) = self.epsilons.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::Config(format!(
                "epsilons: must be positive, got {bad}"
            )));
        }
        Ok(())
    }

    /// The config as a JSON value with sorted keys.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Compact JSON with sorted keys and shortest round-trip floats.
    pub fn canonical(&self) -> String {
        self.to_value().to_string()
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn check_tolerance(&self) -> f64 {
        self.tolerances
            .get("check")
            .copied()
            .unwrap_or(DEFAULT_CHECK_TOL)
    }

    pub fn epsilon_cap(&self) -> usize {
        self.epsilon_cap.unwrap_or(DEFAULT_EPSILON_CAP)
    }

    pub fn build_geometry(&self) -> Result<Geometry> {
        let spec = &self.geometry;
        let field = "geometry.params";
        let g = match spec.kind {
            GeometryKind::SquaredEuclidean => {
                params::<NoParams>(field, &spec.params)?;
                Geometry::squared_euclidean(spec.dim)?
            }
            GeometryKind::NegativeEntropy => {
                let p: EntropyParams = params(field, &spec.params)?;
                Geometry::negative_entropy(spec.dim, p.rho)?
            }
            GeometryKind::Quadratic => {
                let p: QuadraticParams = params(field, &spec.params)?;
                let a = SpdMatrix::from_rows(p.a)?;
                if a.dim() != spec.dim {
                    return Err(Error::dims("geometry.params.a", spec.dim, a.dim()));
                }
                Geometry::quadratic(a)?
            }
        };
        let mut tol = GeometryTolerances::default();
        for (name, &value) in &self.tolerances {
            match name.as_str() {
                "simplex_sum" => tol.simplex_sum = value,
                "identity" => tol.identity = value,
                "certificate" => tol.certificate = value,
                _ => {}
            }
        }
        Ok(g.with_tolerances(tol))
    }

    pub fn build_operator(&self, g: &Geometry) -> Result<Operator> {
        let spec = &self.operator;
        let field = "operator.params";
        let op = match spec.kind {
            OperatorKind::AffineColinear => {
                let p: ColinearParams = params(field, &spec.params)?;
                Operator::affine_colinear(p.gamma, vector("operator.params.target", &p.target)?)?
            }
            OperatorKind::AffineRotation => {
                let p: RotationParams = params(field, &spec.params)?;
                Operator::affine_rotation(
                    p.gamma,
                    p.theta_deg.to_radians(),
                    vector("operator.params.target", &p.target)?,
                )?
            }
            OperatorKind::GradientStep => {
                let p: GradientParams = params(field, &spec.params)?;
                Operator::gradient_step(
                    SpdMatrix::from_rows(p.a)?,
                    vector("operator.params.b", &p.b)?,
                    p.step,
                )?
            }
            OperatorKind::ExpGradientStep => {
                let p: ExpGradientParams = params(field, &spec.params)?;
                let rho = g.rho().unwrap_or(DEFAULT_RHO);
                Operator::exp_gradient_step(
                    vector("operator.params.target", &p.target)?,
                    p.step,
                    rho,
                )?
            }
            OperatorKind::Bellman => {
                let mdp: Mdp = params(field, &spec.params)?;
                Operator::bellman(mdp)?
            }
        };
        match &spec.context_y {
            None => Ok(op),
            Some(ys) => {
                let ys = ys
                    .iter()
                    .map(|y| vector("operator.context_y", y))
                    .collect::<Result<Vec<_>>>()?;
                op.with_context(ys)
            }
        }
    }

    /// Assembles the engine input. Dimension and domain checks happen in
    /// [`RunSpec::prepare`].
    pub fn build(&self) -> Result<RunSpec> {
        let g = self.build_geometry()?;
        let op = self.build_operator(&g)?;
        let s0 = vector("s0", &self.s0)?;
        let mut spec = RunSpec::new(g, op, s0)
            .with_schedule(self.schedule)
            .with_perturbation(self.perturbation)
            .with_iterations(self.iterations)
            .with_seed(self.seed);
        spec.retain_states = self.retain_states;
        spec.contraction_pairs = self.contraction_pairs.unwrap_or(DEFAULT_CONTRACTION_PAIRS);
        spec.config_digest = self.digest();
        Ok(spec)
    }

    /// This config without its sweep block.
    pub fn without_sweep(&self) -> RunConfig {
        RunConfig {
            sweep: None,
            ..self.clone()
        }
    }
}

fn numbers_to_f64(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64().and_then(serde_json::Number::from_f64) {
                *n = x;
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(numbers_to_f64),
        Value::Object(m) => m.values_mut().for_each(numbers_to_f64),
        _ => {}
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// Sets `path` (dot separated, e.g. `operator.params.gamma`) inside `doc`,
/// creating intermediate objects as needed.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!(
            "override `{path}`: empty path segment"
        )));
    }
    let mut cur = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override `{path}`: `{}` is not an object",
                keys[..i].join(".")
            ))
        })?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("path has at least one segment")
}

/// Parses a `key=value` override. The value is read as JSON when it
/// parses, otherwise as a bare string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}`: expected key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Applies overrides to the raw document before typed parsing, so that an
/// override can introduce or replace any field.
pub fn apply_overrides(doc: &mut Value, overrides: &[(String, Value)]) -> Result<()> {
    for (k, v) in overrides {
        set_path(doc, k, v.clone())?;
    }
    Ok(())
}

/// Reads a config file as a raw JSON value.
pub fn read_document(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Axis name to the value used at this point.
    pub values: BTreeMap<String, Value>,
    /// The point's config, or the reason it does not parse.
    pub config: std::result::Result<RunConfig, String>,
    /// Digest of the parsed config, or of the raw document when parsing failed.
    pub digest: String,
}

/// Expands the sweep block into one config per grid point, in the
/// lexicographic order of the sorted axis names (last axis fastest).
///
/// A point whose document does not parse is kept, with its error, so that
/// a sweep can record it and carry on.
pub fn expand_sweep(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    let axes = match &cfg.sweep {
        Some(axes) if !axes.is_empty() => axes,
        _ => return Err(Error::Config("sweep: block is missing or empty".into())),
    };
    if let Some((name, _)) = axes.iter().find(|(_, vals)| vals.is_empty()) {
        return Err(Error::Config(format!("sweep.{name}: empty value list")));
    }
    if axes.keys().any(|k| k == "sweep" || k.starts_with("sweep.")) {
        return Err(Error::Config(
            "sweep: axes may not refer to the sweep block".into(),
        ));
    }
    let base = cfg.without_sweep().to_value();
    let names: Vec<&String> = axes.keys().collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; names.len()];
    loop {
        let mut doc = base.clone();
        let mut values = BTreeMap::new();
        for (name, &i) in names.iter().zip(&idx) {
            let v = axes[*name][i].clone();
            set_path(&mut doc, name, v.clone())?;
            values.insert((*name).clone(), v);
        }
        let raw_digest = hex::encode(Sha256::digest(doc.to_string().as_bytes()));
        let config = RunConfig::from_value(doc).map_err(|e| strip_prefix(&e));
        let digest = config.as_ref().map_or(raw_digest, RunConfig::digest);
        points.push(SweepPoint {
            values,
            config,
            digest,
        });

        let mut k = names.len();
        loop {
            if k == 0 {
                return Ok(points);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[names[k]].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}
