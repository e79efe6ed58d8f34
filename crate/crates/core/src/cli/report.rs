//! Versioned report files and their CSV companions.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::analysis::{FlipDiagnostic, MarginReport, ShiftReport, SweepResult};
use crate::error::{Error, Result};
use crate::linalg::RNG_ALGORITHM;

pub const SCHEMA_VERSION: &str = "1.0";
pub const SCHEMA_MAJOR: u32 = 1;
pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile<T> {
    pub schema_version: String,
    pub tool: String,
    pub tool_version: String,
    pub rng_algorithm: String,
    pub command: String,
    pub model_digest: String,
    pub config: ExperimentConfig,
    pub results: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginResults {
    pub report: MarginReport,
    pub flip: FlipDiagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub token: usize,
    #[serde(flatten)]
    pub sweep: SweepResult,
}

pub type ShiftReportFile = ReportFile<Vec<ShiftReport>>;
pub type MarginReportFile = ReportFile<MarginResults>;
pub type SweepReportFile = ReportFile<SweepResults>;

impl<T: Serialize + DeserializeOwned> ReportFile<T> {
    pub fn new(command: &str, model_digest: String, config: &ExperimentConfig, results: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            tool: TOOL.into(),
            tool_version: TOOL_VERSION.into(),
            rng_algorithm: RNG_ALGORITHM.into(),
            command: command.into(),
            model_digest,
            config: config.clone(),
            results,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a report, rejecting any schema major other than the current one.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: String,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let major = header
            .schema_version
            .split('.')
            .next()
            .and_then(|m| m.parse::<u32>().ok())
            .ok_or_else(|| Error::Parse(format!("malformed schema_version `{}`", header.schema_version)))?;
        if major != SCHEMA_MAJOR {
            return Err(Error::Parse(format!(
                "unsupported report schema major {major} (this tool reads {SCHEMA_MAJOR}.x)"
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Shortest round-trip decimal, identical to the JSON rendering.
pub fn num(x: f64) -> String {
    serde_json::to_string(&x).expect("finite numbers serialize")
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn shift_csv(reports: &[ShiftReport]) -> String {
    csv(
        &[
            "token",
            "epsilon",
            "exact_shift",
            "first_order_total",
            "remainder",
            "delta_norm",
        ],
        reports.iter().map(|r| {
            vec![
                r.token.to_string(),
                num(r.epsilon),
                num(r.exact_shift),
                num(r.first_order_total),
                num(r.remainder),
                num(r.delta_norm),
            ]
        }),
    )
}

/// Per-site breakdown: one row per (token, site).
pub fn shift_sites_csv(reports: &[ShiftReport]) -> String {
    csv(
        &["token", "site", "layer", "slot", "first_order"],
        reports.iter().flat_map(|r| {
            r.per_site.iter().map(move |t| {
                vec![
                    r.token.to_string(),
                    t.site.to_string(),
                    t.site.layer.to_string(),
                    t.site.slot.as_str().to_string(),
                    num(t.first_order),
                ]
            })
        }),
    )
}

pub fn margin_csv(r: &MarginResults) -> String {
    let m = &r.report;
    csv(
        &[
            "y_doc",
            "y_pre",
            "epsilon",
            "m0",
            "m",
            "first_order_margin",
            "margin_remainder",
            "flip_predicted",
            "flip_actual",
            "identity_consistent",
        ],
        [vec![
            m.y_doc.to_string(),
            m.y_pre.to_string(),
            num(m.epsilon),
            num(m.m0),
            num(m.m),
            num(m.first_order_margin),
            num(m.margin_remainder),
            m.flip_predicted.to_string(),
            m.flip_actual.to_string(),
            r.flip.identity_consistent.to_string(),
        ]],
    )
}

pub const SWEEP_CSV_COLUMNS: [&str; 6] = [
    "epsilon",
    "exact_shift",
    "first_order",
    "remainder",
    "remainder_over_eps",
    "remainder_over_eps_sq",
];

pub fn sweep_csv(s: &SweepResult) -> String {
    csv(
        &SWEEP_CSV_COLUMNS,
        s.rows.iter().map(|r| {
            vec![
                num(r.epsilon),
                num(r.exact_shift),
                num(r.first_order),
                num(r.remainder),
                num(r.remainder_over_eps),
                num(r.remainder_over_eps_sq),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{SweepResult, SweepRow};

    fn sample() -> SweepReportFile {
        let config = ExperimentConfig::from_toml(
            "tokens = [1]\n[model]\nn_layers = 1\nd_model = 2\nd_ff = 2\nvocab = 3\nseq_capacity = 2\nactivation = \"tanh\"\nnorm = \"rmsnorm\"\ninit_scale = 1.0\nseed = 1\n",
        )
        .unwrap();
        let sweep = SweepResult {
            eps_grid: vec![0.1, 0.01, 0.001],
            rows: vec![SweepRow {
                epsilon: 0.1,
                exact_shift: 1e-13,
                first_order: 0.30000000000000004,
                remainder: -2.5e-7,
                remainder_over_eps: 1.0,
                remainder_over_eps_sq: 2.0,
            }],
            fitted_slope: Some(2.0),
            linear_exact: false,
        };
        ReportFile::new("sweep", "abc".into(), &config, SweepResults { token: 0, sweep })
    }

    #[test]
    fn json_round_trip_and_schema_gate() {
        let r = sample();
        let text = r.to_json().unwrap();
        assert_eq!(SweepReportFile::from_json(&text).unwrap(), r);
        let future = text.replace("\"1.0\"", "\"2.0\"");
        assert!(SweepReportFile::from_json(&future)
            .unwrap_err()
            .to_string()
            .contains("major 2"));
        let minor = text.replace("\"1.0\"", "\"1.7\"");
        assert!(SweepReportFile::from_json(&minor).is_ok());
    }

    #[test]
    fn csv_uses_shortest_round_trip_numbers() {
        let r = sample();
        let text = sweep_csv(&r.results.sweep);
        assert_eq!(text.lines().next().unwrap(), SWEEP_CSV_COLUMNS.join(","));
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0.1,1e-13,0.30000000000000004,-2.5e-7,1.0,2.0"
        );
        for field in text.lines().nth(1).unwrap().split(',') {
            let x: f64 = field.parse().unwrap();
            assert_eq!(num(x), field);
        }
    }
}
