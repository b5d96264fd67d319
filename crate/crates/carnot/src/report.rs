//! Machine-readable run artifacts: the versioned JSON report and the CSV
//! convergence tables.
//!
//! Reports are deterministic for a fixed config and seed: all volatile
//! values (wall times) live under the `metadata` key, which consumers strip
//! before byte comparison. JSON maps serialize with sorted keys and floats
//! print in shortest round-trip form, so equal values give equal bytes.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ResolvedSummary;

pub const SCHEMA_VERSION: u32 = 1;

/// One named assertion with its measured value and bound.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckOutcome {
    pub fn new(name: &str, passed: bool) -> Self {
        CheckOutcome { name: name.into(), passed, value: None, bound: None, note: None }
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Volatile run facts, excluded from determinism comparisons.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub passed: bool,
    pub config: ResolvedSummary,
    pub checks: Vec<CheckOutcome>,
    /// Experiment-specific payload (tables, constants, mask counts).
    pub details: serde_json::Value,
    /// Relative names of sibling artifact files written by the run.
    pub artifacts: Vec<String>,
    pub metadata: Metadata,
}

impl Report {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Writes `report.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json_bytes())?;
        Ok(path)
    }
}

/// Renders the fixed four-column convergence table. `label` names the first
/// column (`p` for the exponent family, `lambda` for parameter families).
pub fn csv_table(label: &str, rows: &[(f64, f64, usize, f64)]) -> String {
    let mut out = format!("{label},residual,iterations,error_vs_reference\n");
    for &(x, residual, iterations, error) in rows {
        out.push_str(&format!("{x},{residual},{iterations},{error}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{resolve, ConfigFile};

    fn sample_report() -> Report {
        let file = ConfigFile::parse_str(
            "[group]\nname = \"heisenberg\"\n\n[operator]\nname = \"infinity\"\n\n\
             [experiment]\nkind = \"checks\"\n",
        )
        .unwrap();
        let resolved = resolve(&file, None, None).unwrap();
        Report {
            schema_version: SCHEMA_VERSION,
            experiment: "checks".into(),
            passed: true,
            config: resolved.summary(),
            checks: vec![
                CheckOutcome::new("bare", true),
                CheckOutcome::new("bounded", false).with_value(0.5).with_bound(0.25),
                CheckOutcome::new("annotated", true).with_note("skipped on purpose"),
            ],
            details: serde_json::json!({ "count": 3 }),
            artifacts: vec!["table.csv".into()],
            metadata: Metadata { wall_time_s: 1.25 },
        }
    }

    #[test]
    fn outcome_builders_skip_unset_fields() {
        let json = serde_json::to_value(sample_report().checks).unwrap();
        let bare = &json[0];
        assert_eq!(bare["name"], "bare");
        assert_eq!(bare["passed"], true);
        assert!(bare.get("value").is_none());
        assert!(bare.get("bound").is_none());
        assert!(bare.get("note").is_none());

        let bounded = &json[1];
        assert_eq!(bounded["value"], 0.5);
        assert_eq!(bounded["bound"], 0.25);
        assert_eq!(json[2]["note"], "skipped on purpose");
    }

    #[test]
    fn json_bytes_are_deterministic_and_versioned() {
        let a = sample_report().to_json_bytes();
        let b = sample_report().to_json_bytes();
        assert_eq!(a, b);
        assert_eq!(a.last(), Some(&b'\n'));

        let parsed: serde_json::Value = serde_json::from_slice(&a).unwrap();
        assert_eq!(parsed["schema_version"], 1);
        assert_eq!(parsed["config"]["group"], "heisenberg");
        assert_eq!(parsed["metadata"]["wall_time_s"], 1.25);
        assert_eq!(parsed["details"]["count"], 3);
    }

    #[test]
    fn write_creates_report_json() {
        let dir = std::env::temp_dir().join(format!("carnot-report-{}", std::process::id()));
        let path = sample_report().write(&dir).unwrap();
        assert_eq!(path.file_name().unwrap(), "report.json");
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, sample_report().to_json_bytes());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_table_layout() {
        let rows = [(2.0, 1e-9, 120, 0.5), (4.0, 2e-9, 240, 0.25)];
        let text = csv_table("p", &rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "p,residual,iterations,error_vs_reference");
        assert_eq!(lines[1], "2,0.000000001,120,0.5");
        assert_eq!(lines[2], "4,0.000000002,240,0.25");
        assert!(text.ends_with('\n'));

        assert_eq!(csv_table("lambda", &[]), "lambda,residual,iterations,error_vs_reference\n");
    }
}
