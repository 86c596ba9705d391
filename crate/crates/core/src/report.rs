//! Client-wise and averaged results.
//!
//! Averages are unweighted means over clients, kept at full precision in
//! the JSON form and rounded to two decimals only when rendered as a table.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::RoundTelemetry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRow {
    pub client_id: u32,
    pub sign_accuracy_pct: f64,
    pub mae: f64,
    /// Sleep and distance accuracies, present in per-output mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_output_accuracy_pct: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mostly_ideal: Option<bool>,
}

impl ClientRow {
    pub fn new(client_id: u32, sign_accuracy_pct: f64, mae: f64) -> Self {
        Self {
            client_id,
            sign_accuracy_pct,
            mae,
            per_output_accuracy_pct: None,
            mostly_ideal: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_digest: Option<String>,
    pub clients: Vec<ClientRow>,
    pub average_accuracy_pct: f64,
    pub average_mae: f64,
    #[serde(default)]
    pub telemetry: Vec<RoundTelemetry>,
}

pub fn aggregate_report(rows: Vec<ClientRow>) -> Result<MetricsReport> {
    MetricsReport::aggregate(rows)
}

impl MetricsReport {
    /// Orders rows by client id and averages them.
    pub fn aggregate(mut rows: Vec<ClientRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("a report needs at least one client row".into()));
        }
        rows.sort_by_key(|r| r.client_id);
        if rows.windows(2).any(|w| w[0].client_id == w[1].client_id) {
            return Err(Error::InvalidArgument("duplicate client id in report rows".into()));
        }
        for r in &rows {
            if !(0.0..=100.0).contains(&r.sign_accuracy_pct) {
                return Err(Error::InvalidArgument(format!(
                    "client {} accuracy {} is not a percentage",
                    r.client_id, r.sign_accuracy_pct
                )));
            }
            if !(r.mae.is_finite() && r.mae >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "client {} has invalid MAE {}",
                    r.client_id, r.mae
                )));
            }
        }
        let n = rows.len() as f64;
        let average_accuracy_pct = rows.iter().map(|r| r.sign_accuracy_pct).sum::<f64>() / n;
        let average_mae = rows.iter().map(|r| r.mae).sum::<f64>() / n;
        Ok(Self {
            strategy: None,
            seed: None,
            config_digest: None,
            clients: rows,
            average_accuracy_pct,
            average_mae,
            telemetry: Vec::new(),
        })
    }

    /// Re-derives the averages from the rows and checks they agree.
    pub fn validate(&self) -> Result<()> {
        let fresh = Self::aggregate(self.clients.clone())?;
        if fresh.clients != self.clients {
            return Err(Error::InvalidArgument(
                "report rows are not ordered by client id".into(),
            ));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        if !close(fresh.average_accuracy_pct, self.average_accuracy_pct) || !close(fresh.average_mae, self.average_mae)
        {
            return Err(Error::InvalidArgument(
                "stored averages disagree with the client rows".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Plain-text table in the layout of the published client-wise results.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.strategy {
            let _ = writeln!(out, "Strategy: {s}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "Seed: {seed}");
        }
        let _ = writeln!(out, "{:<8} {:>12} {:>8}", "Client", "Accuracy (%)", "MAE");
        for r in &self.clients {
            let _ = writeln!(out, "{:<8} {:>12.2} {:>8.2}", r.client_id, r.sign_accuracy_pct, r.mae);
        }
        let _ = writeln!(
            out,
            "{:<8} {:>12.2} {:>8.2}",
            "Average", self.average_accuracy_pct, self.average_mae
        );
        out
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    client_id: u32,
    accuracy_pct: f64,
    mae: f64,
}

/// Reads client rows from `client_id,accuracy_pct,mae` CSV.
pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<ClientRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["client_id", "accuracy_pct", "mae"] {
        return Err(Error::InvalidRecord(format!(
            "expected header client_id,accuracy_pct,mae, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize::<CsvRow>()
        .map(|r| {
            let r = r?;
            Ok(ClientRow::new(r.client_id, r.accuracy_pct, r.mae))
        })
        .collect()
}
