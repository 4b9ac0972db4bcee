//! Config-driven runs, sweeps, audits and rate fits, with on-disk artifacts.
//!
//! A run directory holds `config.json` (canonical), `trace.csv`,
//! `states.csv` (when states are retained), `meta.json`, `summary.json` and
//! `manifest.json`. The CLI is a thin layer over [`cmd_run`], [`cmd_sweep`],
//! [`cmd_audit`] and [`cmd_rate`].

mod commands;
pub mod config;
pub mod io;

pub use commands::{
    cmd_audit, cmd_rate, cmd_run, cmd_sweep, load_config, load_run_dir, parse_window,
    run_config_to_dir, CmdResult, EpsilonReport, ExitStatus, Failure, FileEntry, RunManifest,
    RunOverrides, Summary, SweepOutcome, SweepRow, TailReport, AUDIT_FILE, CONFIG_FILE,
    FAILURE_FILE, INDEX_FILE, MANIFEST_FILE, META_FILE, POINT_DIR_DIGEST_LEN, STATES_FILE,
    SUMMARY_FILE, TRACE_FILE,
};
pub use config::{RunConfig, SweepPoint};
