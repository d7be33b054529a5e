//! Result tables: numeric rows plus a metadata block that is enough
//! to re-run the experiment exactly.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    /// Probabilities nudged back into [0, 1] from roundoff.
    pub clipped: usize,
    /// Largest excursion absorbed by the clip policy.
    pub clip_worst: f64,
    /// Witness nodes dropped because the intermediate map was
    /// numerically singular.
    pub conditioning_excluded: usize,
}

impl Diagnostics {
    pub fn absorb_clip(&mut self, clip: &qrtsim::multitime::ClipStats) {
        self.clipped += clip.clipped;
        self.clip_worst = self.clip_worst.max(clip.worst);
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        self.clipped += other.clipped;
        self.clip_worst = self.clip_worst.max(other.clip_worst);
        self.conditioning_excluded += other.conditioning_excluded;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub version: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: Metadata,
}

/// Numeric formatting shared by both writers: scientific notation for
/// small magnitudes, shortest round-trip form otherwise, and explicit
/// text for the non-finite values JSON numbers cannot carry.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

impl ResultTable {
    pub fn new(columns: Vec<&'static str>, metadata: Metadata) -> Self {
        ResultTable {
            columns,
            rows: Vec::new(),
            metadata,
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)
            .map_err(|e| format!("csv write: {e}"))?;
        for row in &self.rows {
            let record: Vec<String> = row.iter().map(|&x| format_value(x)).collect();
            w.write_record(&record)
                .map_err(|e| format!("csv write: {e}"))?;
        }
        let bytes = w.into_inner().map_err(|e| format!("csv flush: {e}"))?;
        String::from_utf8(bytes).map_err(|e| format!("csv is not utf-8: {e}"))
    }

    pub fn to_json(&self) -> Result<String, String> {
        let rows: Vec<Vec<Value>> = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&x| {
                        if x.is_finite() {
                            json!(x)
                        } else {
                            Value::String(format_value(x))
                        }
                    })
                    .collect()
            })
            .collect();
        let doc = json!({
            "columns": self.columns,
            "rows": rows,
            "metadata": self.metadata,
        });
        serde_json::to_string_pretty(&doc).map_err(|e| format!("json write: {e}"))
    }

    pub fn render(&self, format: crate::config::OutputFormat) -> Result<String, String> {
        match format {
            crate::config::OutputFormat::Csv => self.to_csv(),
            crate::config::OutputFormat::Json => self.to_json(),
        }
    }
}
