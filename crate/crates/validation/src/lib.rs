//! Reporting for the acceptance suite: one `PASS` or `FAIL` line per
//! criterion, and a non-zero exit when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

/// Outcome of one criterion: `Ok(detail)` passes, `Err(detail)` fails.
pub type Outcome = Result<String, String>;

#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `check` and prints its line immediately. A panic inside
    /// `check` counts as a failure.
    pub fn criterion(&mut self, id: &str, title: &str, check: impl FnOnce() -> Outcome) {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let (pass, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let line = format!(
            "{} {id} {title}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        println!("{line}");
        self.lines.push((pass, line));
    }

    pub fn failures(&self) -> usize {
        self.lines.iter().filter(|(p, _)| !p).count()
    }

    pub fn finish(self) -> ExitCode {
        let failed = self.failures();
        println!(
            "acceptance: {} passed, {failed} failed",
            self.lines.len() - failed
        );
        if failed == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}

/// `Ok(detail)` when `cond`, else `Err(detail)`.
pub fn verdict(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}
