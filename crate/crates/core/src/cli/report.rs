use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Manifest, Run, MANIFEST};
use crate::error::Result;
use crate::io::{write_json_atomic, write_string_atomic};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub run_dir: PathBuf,
}

/// One system variant of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub command: String,
    pub seed: u64,
    pub dev_bleu: Option<f64>,
    pub test_bleu: Option<f64>,
}

/// Rows for every subdirectory of `run_dir` holding a manifest, in name
/// order, so numbered variant directories give the cumulative ordering.
/// Problems become warnings rather than errors.
pub fn report_rows(run_dir: &Path) -> Result<(Vec<ReportRow>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut dirs: Vec<(String, PathBuf)> = match fs::read_dir(run_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
            .collect(),
        Err(e) => {
            warnings.push(format!("cannot read {}: {e}", run_dir.display()));
            Vec::new()
        }
    };
    dirs.sort();
    let mut rows = Vec::new();
    for (name, dir) in dirs {
        if !dir.join(MANIFEST).exists() {
            warnings.push(format!("{name}: no {MANIFEST}, skipped"));
            continue;
        }
        let m = match Manifest::load(&dir) {
            Ok(m) => m,
            Err(e) => {
                warnings.push(format!("{name}: {e}"));
                continue;
            }
        };
        if m.command == "report" {
            continue;
        }
        rows.push(ReportRow {
            variant: name,
            command: m.command,
            seed: m.seed,
            dev_bleu: m.metrics.get("dev_bleu").copied(),
            test_bleu: m.metrics.get("test_bleu").or_else(|| m.metrics.get("bleu")).copied(),
        });
    }
    if rows.is_empty() {
        warnings.push(format!("no run manifests under {}", run_dir.display()));
    }
    Ok((rows, warnings))
}

pub fn rows_csv(rows: &[ReportRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut s = String::from("variant,command,seed,dev_bleu,test_bleu\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.variant, r.command, r.seed, cell(r.dev_bleu), cell(r.test_bleu)).expect("string write");
    }
    s
}

pub(super) fn report(c: &ReportConfig, run: &mut Run) -> Result<()> {
    let (rows, warnings) = report_rows(&c.run_dir)?;
    for w in warnings {
        run.warn(w);
    }
    write_string_atomic(&run.file("report.csv"), &rows_csv(&rows))?;
    write_json_atomic(&run.file("report.json"), &json!({ "rows": rows }))?;
    run.metrics.insert("variants".into(), rows.len() as f64);
    Ok(())
}
