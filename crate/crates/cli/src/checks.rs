use std::fmt::Write as _;

use dualformer::checks::CheckResult;
use serde_json::json;

use crate::error::CliError;
use crate::output::{csv_string, Render};

pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

impl Render for CheckReport {
    fn table(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let _ = writeln!(s, "{r}");
            for (group, err) in &r.groups {
                let _ = writeln!(s, "    {group:<40} {err:.3e}");
            }
        }
        let failed = self.results.iter().filter(|r| !r.passed).count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.results.len());
        s
    }

    fn json(&self) -> serde_json::Value {
        json!({ "passed": self.passed(), "checks": self.results })
    }

    fn csv(&self) -> Result<String, CliError> {
        let mut rows = Vec::new();
        for r in &self.results {
            let row = |group: &str, err: f64| {
                vec![
                    r.name.clone(),
                    group.to_string(),
                    r.cases.to_string(),
                    format!("{err:e}"),
                    format!("{:e}", r.tolerance),
                    r.passed.to_string(),
                    r.worst_seed.to_string(),
                ]
            };
            rows.push(row("", r.max_error));
            for (g, e) in &r.groups {
                rows.push(row(g, *e));
            }
        }
        csv_string(&["check", "group", "cases", "max_error", "tolerance", "passed", "worst_seed"], rows)
    }
}
