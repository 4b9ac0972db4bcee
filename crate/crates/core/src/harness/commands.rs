use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{
    audit_recursion, audit_trace, default_window, fit_rate, fit_rate_errors, AuditReport,
    BoundConstants, RateFit, DEFAULT_R2_THRESHOLD,
};
use crate::engine::{Prepared, Trace, TraceMeta};
use crate::error::Error;
use crate::harness::config::{
    apply_overrides, expand_sweep, parse_override, read_document, RunConfig,
};
use crate::harness::io;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitStatus {
    Ok = 0,
    Runtime = 1,
    Config = 2,
    Precondition = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// A command that did not complete.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub status: ExitStatus,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub type CmdResult<T> = std::result::Result<T, Failure>;

impl Failure {
    fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Config, message)
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Runtime, message)
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::runtime(format!("{}: {err}", path.display()))
    }
}

/// Exit status for an error raised while validating a run.
fn setup_failure(e: Error) -> Failure {
    let status = match e {
        Error::MissingStates | Error::NotAContraction { .. } => ExitStatus::Precondition,
        Error::NonConvergence { .. } | Error::Engine(_) | Error::Io(_) => ExitStatus::Runtime,
        _ => ExitStatus::Config,
    };
    Failure::new(status, e.to_string())
}

pub const CONFIG_FILE: &str = "config.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const STATES_FILE: &str = "states.csv";
pub const META_FILE: &str = "meta.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_FILE: &str = "failure.json";
pub const AUDIT_FILE: &str = "audit.json";
pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub eps: f64,
    pub t: Option<usize>,
    /// Largest `t` searched.
    pub cap: usize,
    pub censored: bool,
    /// `engine` for a dedicated noise-free search, `trace` for the first
    /// recorded crossing in a noisy trace.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub t_lo: usize,
    pub t_hi: usize,
    pub mean_e: Option<f64>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_digest: String,
    pub iterations: usize,
    pub seed: u64,
    pub gamma_hat: f64,
    pub s_star: Vec<f64>,
    pub e0: f64,
    pub e_final: f64,
    pub a_max: f64,
    pub rate: Option<RateFit>,
    pub rate_error: Option<String>,
    /// Largest β for which the closing recursion holds along the trace.
    pub beta_max: f64,
    pub iterations_to_epsilon: Vec<EpsilonReport>,
    pub tail: Option<TailReport>,
    pub noise_free: bool,
    pub warnings: Vec<String>,
    pub max_projection_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    pub started_at: String,
    pub finished_at: String,
    pub files: Vec<FileEntry>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(fs::File) -> crate::Result<()>) -> CmdResult<()> {
    let file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
    f(file).map_err(|e| Failure::io(path, e))
}

fn file_entry(dir: &Path, name: &str) -> CmdResult<FileEntry> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Failure::io(&path, e))?;
    Ok(FileEntry {
        name: name.to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn write_manifest(dir: &Path, digest: &str, started_at: String, files: &[&str]) -> CmdResult<()> {
    let files = files
        .iter()
        .map(|f| file_entry(dir, f))
        .collect::<CmdResult<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: digest.to_string(),
        started_at,
        finished_at: now(),
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn summarize(cfg: &RunConfig, prepared: &Prepared, trace: &Trace) -> CmdResult<Summary> {
    let t_max = trace.iterations();
    let window = cfg
        .rate_window
        .map_or_else(|| default_window(t_max), |[lo, hi]| (lo, hi));
    let (rate, rate_error) = match fit_rate(trace, window) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let spec = prepared.spec();
    let bc = BoundConstants::new(&spec.geometry, prepared.gamma_hat(), &spec.perturbation);
    let (beta_max, _) = audit_recursion(trace, &bc, cfg.check_tolerance());

    let mut hits = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let report = if trace.meta.noise_free {
            let hit = prepared
                .iterations_to_epsilon(eps, cfg.epsilon_cap())
                .map_err(setup_failure)?;
            EpsilonReport {
                eps,
                t: hit.t,
                cap: hit.cap,
                censored: hit.censored(),
                source: "engine".into(),
            }
        } else {
            let t = trace.first_below(eps);
            EpsilonReport {
                eps,
                t,
                cap: t_max,
                censored: t.is_none(),
                source: "trace".into(),
            }
        };
        hits.push(report);
    }

    let tail = cfg.tail_window.map(|[lo, hi]| TailReport {
        t_lo: lo,
        t_hi: hi,
        mean_e: trace.mean_error(lo, hi),
    });

    Ok(Summary {
        config_digest: trace.meta.config_digest.clone(),
        iterations: t_max,
        seed: cfg.seed,
        gamma_hat: prepared.gamma_hat(),
        s_star: trace.meta.s_star.clone(),
        e0: trace.rows[0].e_t,
        e_final: trace.rows[t_max].e_t,
        a_max: trace.a_max(),
        rate,
        rate_error,
        beta_max,
        iterations_to_epsilon: hits,
        tail,
        noise_free: trace.meta.noise_free,
        warnings: trace.meta.warnings.clone(),
        max_projection_drift: trace.meta.max_projection_drift,
    })
}

/// Executes one config and writes every artifact into `out`.
pub fn run_config_to_dir(cfg: &RunConfig, out: &Path) -> CmdResult<Summary> {
    let started_at = now();
    let prepared = cfg
        .build()
        .and_then(|spec| spec.prepare())
        .map_err(setup_failure)?;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let digest = cfg.digest();
    write_json(&out.join(CONFIG_FILE), &cfg.to_value())?;

    let trace = match prepared.run() {
        Ok(trace) => trace,
        Err(err) => {
            let path = out.join(FAILURE_FILE);
            let dump = match &err {
                Error::Engine(dump) => serde_json::to_value(dump).unwrap_or(Value::Null),
                _ => Value::Null,
            };
            let body = serde_json::json!({"error": err.to_string(), "state_dump": dump});
            write_json(&path, &body)?;
            return Err(Failure::runtime(format!(
                "{err}; state dump written to {}",
                path.display()
            )));
        }
    };

    let mut files = vec![CONFIG_FILE, TRACE_FILE, META_FILE, SUMMARY_FILE];
    write_with(&out.join(TRACE_FILE), |f| {
        io::write_trace(&trace.rows, std::io::BufWriter::new(f))
    })?;
    if let Some(states) = &trace.states {
        write_with(&out.join(STATES_FILE), |f| {
            io::write_states(states, std::io::BufWriter::new(f))
        })?;
        files.push(STATES_FILE);
    }
    write_json(&out.join(META_FILE), &trace.meta)?;
    let summary = summarize(cfg, &prepared, &trace)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_manifest(out, &digest, started_at, &files)?;
    Ok(summary)
}

/// Options for [`cmd_run`] beyond the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    /// `key=value` strings with dotted keys.
    pub set: Vec<String>,
}

/// Loads a config, applies overrides and parses it.
pub fn load_config(path: &Path, overrides: &RunOverrides) -> CmdResult<RunConfig> {
    if overrides.set.is_empty() && overrides.seed.is_none() {
        // Parsing the text directly keeps line and column in diagnostics.
        return RunConfig::load(path).map_err(|e| Failure::config(strip(&e)));
    }
    let mut doc = read_document(path).map_err(|e| Failure::config(strip(&e)))?;
    let mut pairs = overrides
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(|e| Failure::config(strip(&e)))?;
    if let Some(seed) = overrides.seed {
        pairs.push(("seed".into(), Value::from(seed)));
    }
    apply_overrides(&mut doc, &pairs).map_err(|e| Failure::config(strip(&e)))?;
    RunConfig::from_value(doc)
        .map_err(|e| Failure::config(format!("{}: {}", path.display(), strip(&e))))
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

pub fn cmd_run(config: &Path, out: &Path, overrides: &RunOverrides) -> CmdResult<Summary> {
    let cfg = load_config(config, overrides)?;
    run_config_to_dir(&cfg, out)
}

/// One line of `index.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub digest: String,
    pub values: BTreeMap<String, Value>,
    pub outcome: std::result::Result<Summary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub index: PathBuf,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Length of the digest prefix used for point directories.
pub const POINT_DIR_DIGEST_LEN: usize = 16;

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_index(path: &Path, axes: &[String], epsilons: &[f64], rows: &[SweepRow]) -> CmdResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::io(path, e))?;
    let mut header = vec!["digest".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(["status", "error", "slope", "r2", "beta_max"].map(String::from));
    header.extend(epsilons.iter().map(|e| format!("t_eps_{e:e}")));
    w.write_record(&header).map_err(|e| Failure::io(path, e))?;
    for row in rows {
        let mut rec = vec![row.digest.clone()];
        rec.extend(axes.iter().map(|a| row.values[a].to_string()));
        match &row.outcome {
            Ok(s) => {
                rec.extend([
                    "ok".to_string(),
                    String::new(),
                    opt(s.rate.map(|r| r.slope)),
                    opt(s.rate.map(|r| r.r2)),
                    s.beta_max.to_string(),
                ]);
                for &eps in epsilons {
                    let t = s
                        .iterations_to_epsilon
                        .iter()
                        .find(|h| h.eps == eps)
                        .and_then(|h| h.t);
                    rec.push(opt(t));
                }
            }
            Err(msg) => {
                rec.extend(["failed".to_string(), msg.clone()]);
                rec.extend(std::iter::repeat_n(String::new(), 3 + epsilons.len()));
            }
        }
        w.write_record(&rec).map_err(|e| Failure::io(path, e))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

/// Runs every point of the config's sweep block, `parallel` at a time.
/// Failed points are recorded in `index.csv` and do not stop the sweep.
pub fn cmd_sweep(config: &Path, out: &Path, parallel: usize) -> CmdResult<SweepOutcome> {
    if parallel == 0 {
        return Err(Failure::config("--parallel must be >= 1"));
    }
    let cfg = load_config(config, &RunOverrides::default())?;
    let points = expand_sweep(&cfg).map_err(|e| Failure::config(strip(&e)))?;
    let axes: Vec<String> = cfg.sweep.iter().flat_map(|s| s.keys().cloned()).collect();
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let started_at = now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let dir = out.join(&p.digest[..POINT_DIR_DIGEST_LEN]);
                let outcome = match &p.config {
                    Ok(c) => run_config_to_dir(c, &dir).map_err(|f| f.message),
                    Err(msg) => Err(msg.clone()),
                };
                if let Err(msg) = &outcome {
                    log::warn!("sweep point {} failed: {msg}", p.digest);
                    if fs::create_dir_all(&dir).is_ok() {
                        let body = serde_json::json!({"error": msg, "values": p.values});
                        let _ = write_json(&dir.join(FAILURE_FILE), &body);
                    }
                }
                SweepRow {
                    digest: p.digest.clone(),
                    values: p.values.clone(),
                    outcome,
                }
            })
            .collect()
    });
    rows.sort_by(|a, b| a.digest.cmp(&b.digest));

    let index = out.join(INDEX_FILE);
    write_index(&index, &axes, &cfg.epsilons, &rows)?;
    write_json(&out.join(CONFIG_FILE), &cfg.to_value())?;
    write_manifest(out, &cfg.digest(), started_at, &[CONFIG_FILE, INDEX_FILE])?;
    Ok(SweepOutcome { rows, index })
}

/// Rebuilds a trace, with states, from a run directory.
pub fn load_run_dir(dir: &Path) -> CmdResult<(RunConfig, Trace)> {
    for name in [TRACE_FILE, MANIFEST_FILE, CONFIG_FILE, META_FILE] {
        if !dir.join(name).is_file() {
            return Err(Failure::new(
                ExitStatus::Precondition,
                format!("{} is not a run directory: {name} missing", dir.display()),
            ));
        }
    }
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE)).map_err(|e| Failure::config(strip(&e)))?;
    let rows =
        io::read_trace_file(&dir.join(TRACE_FILE)).map_err(|e| Failure::config(strip(&e)))?;
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Failure::io(&meta_path, e))?;
    let meta: TraceMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Failure::config(format!("{META_FILE}: {e}")))?;
    let states_path = dir.join(STATES_FILE);
    let states = if states_path.is_file() {
        let f = fs::File::open(&states_path).map_err(|e| Failure::io(&states_path, e))?;
        let states =
            io::read_states(std::io::BufReader::new(f)).map_err(|e| Failure::config(strip(&e)))?;
        if states.len() != rows.len() {
            return Err(Failure::config(format!(
                "{STATES_FILE} has {} rows, {TRACE_FILE} has {}",
                states.len(),
                rows.len()
            )));
        }
        Some(states)
    } else {
        None
    };
    Ok((
        cfg,
        Trace {
            rows,
            states,
            etas: None,
            meta,
        },
    ))
}

/// Audits a run directory and writes `audit.json`. Audit findings never
/// change the exit status; only missing inputs do.
pub fn cmd_audit(dir: &Path) -> CmdResult<AuditReport> {
    let (cfg, trace) = load_run_dir(dir)?;
    if trace.states.is_none() {
        return Err(Failure::new(
            ExitStatus::Precondition,
            format!(
                "{}: no {STATES_FILE}; rerun with retain_states",
                dir.display()
            ),
        ));
    }
    let g = cfg.build_geometry().map_err(setup_failure)?;
    let op = cfg.build_operator(&g).map_err(setup_failure)?;
    let report = audit_trace(&trace, &g, &op, &cfg.perturbation, cfg.check_tolerance())
        .map_err(setup_failure)?;
    write_json(&dir.join(AUDIT_FILE), &report)?;
    Ok(report)
}

/// Parses `a:b`.
pub fn parse_window(text: &str) -> CmdResult<(usize, usize)> {
    let bad = || Failure::config(format!("window `{text}`: expected lo:hi with integers"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

/// Fits the rate of a saved trace over `window`.
pub fn cmd_rate(trace: &Path, window: &str) -> CmdResult<RateFit> {
    let (lo, hi) = parse_window(window)?;
    let rows = io::read_trace_file(trace)
        .map_err(|e| Failure::config(format!("{}: {}", trace.display(), strip(&e))))?;
    let errors: Vec<f64> = rows.iter().map(|r| r.e_t).collect();
    fit_rate_errors(&errors, lo, hi, DEFAULT_R2_THRESHOLD)
        .map_err(|e| Failure::config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write_config(dir: &Path, name: &str, doc: &Value) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, doc.to_string()).unwrap();
        path
    }

    fn colinear(iterations: usize) -> Value {
        json!({
            "geometry": {"kind": "squared-euclidean", "dim": 2},
            "operator": {"kind": "affine-colinear", "params": {"gamma": 0.5, "target": [2.0, -1.0]}},
            "s0": [0.0, 0.0],
            "iterations": iterations,
            "seed": 7,
            "epsilons": [1e-4]
        })
    }

    #[test]
    fn run_then_audit_then_rate() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), "c1.json", &colinear(1000));
        let out = tmp.path().join("run");
        let summary = cmd_run(&cfg, &out, &RunOverrides::default()).unwrap();
        assert_eq!(summary.iterations_to_epsilon[0].t, Some(158));
        assert!((summary.beta_max - 0.75).abs() < 1e-9);
        assert!((summary.rate.unwrap().slope + 2.0).abs() < 1e-3);

        let manifest: RunManifest =
            serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
        let names: Vec<_> = manifest.files.iter().map(|f| f.name.as_str()).collect();
        assert!(names.contains(&TRACE_FILE) && names.contains(&STATES_FILE));

        let report = cmd_audit(&out).unwrap();
        assert!((report.beta_max - 0.75).abs() < 1e-9);
        assert!(out.join(AUDIT_FILE).is_file());

        let fit = cmd_rate(&out.join(TRACE_FILE), "100:1000").unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-6);
        assert_eq!(
            cmd_rate(&out.join(TRACE_FILE), "990:995")
                .unwrap_err()
                .status,
            ExitStatus::Config
        );
        assert_eq!(
            cmd_rate(&out.join(TRACE_FILE), "1-2").unwrap_err().status,
            ExitStatus::Config
        );
    }

    #[test]
    fn overrides_and_exit_codes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), "c2.json", &colinear(100));
        let ov = RunOverrides {
            seed: Some(3),
            set: vec!["iterations=1".into()],
        };
        let out = tmp.path().join("one");
        let s = cmd_run(&cfg, &out, &ov).unwrap();
        assert_eq!((s.iterations, s.seed), (1, 3));
        let text = fs::read_to_string(out.join(TRACE_FILE)).unwrap();
        assert_eq!(text.lines().count(), 3);

        let mut doc = colinear(10);
        doc["s0"] = json!([0.0]);
        let bad = write_config(tmp.path(), "c3.json", &doc);
        let err = cmd_run(&bad, &tmp.path().join("bad"), &RunOverrides::default()).unwrap_err();
        assert_eq!(err.status, ExitStatus::Config);

        let no_states = tmp.path().join("ns");
        let ov = RunOverrides {
            seed: None,
            set: vec!["retain_states=false".into()],
        };
        cmd_run(&cfg, &no_states, &ov).unwrap();
        let err = cmd_audit(&no_states).unwrap_err();
        assert_eq!(err.status, ExitStatus::Precondition);
        assert!(err.message.contains("retain_states"));
    }

    #[test]
    fn sweep_records_failures_and_is_order_independent() {
        let tmp = tempfile::tempdir().unwrap();
        let mut doc = colinear(200);
        doc["sweep"] = json!({"operator.params.gamma": [0.3, 0.5, 1.5]});
        let cfg = write_config(tmp.path(), "c4.json", &doc);
        let a = cmd_sweep(&cfg, &tmp.path().join("a"), 1).unwrap();
        let b = cmd_sweep(&cfg, &tmp.path().join("b"), 3).unwrap();
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.failures(), 1);
        assert_eq!(fs::read(&a.index).unwrap(), fs::read(&b.index).unwrap());

        let mut empty = colinear(10);
        empty["sweep"] = json!({});
        let cfg = write_config(tmp.path(), "c5.json", &empty);
        assert_eq!(
            cmd_sweep(&cfg, &tmp.path().join("c"), 2)
                .unwrap_err()
                .status,
            ExitStatus::Config
        );
    }
}
