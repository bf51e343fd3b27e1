//! Metrics reports: a deterministic JSON document and its table rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classify::ClassifyResult;
use super::corpus::Split;
use super::retrieval::{Recalls, RetrievalMetrics};
use super::sweep::SweepTable;
use super::train::StepRecord;
use crate::error::{Error, Result};

/// Identity tolerance for `sum_r == r1 + r5 + r10`.
pub const SUM_R_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    /// Short method name, e.g. `or` or `or/soft-max`.
    pub method: String,
    /// Effective run configuration.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassifyResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepTable>,
    #[serde(default)]
    pub loss_trace: Vec<StepRecord>,
}

fn check_recalls(r: &Recalls, what: &str) -> Result<()> {
    let v = [r.r1, r.r5, r.r10];
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::contract(format!("{what}: recall outside [0, 1]")));
    }
    if !(r.r1 <= r.r5 && r.r5 <= r.r10) {
        return Err(Error::contract(format!("{what}: recalls decrease with K")));
    }
    if (r.sum_r - (r.r1 + r.r5 + r.r10)).abs() > SUM_R_TOL {
        return Err(Error::contract(format!("{what}: sumR does not equal R@1 + R@5 + R@10")));
    }
    Ok(())
}

impl MetricsReport {
    pub fn new(seed: u64, method: impl Into<String>, config: serde_json::Value) -> Self {
        MetricsReport { seed, method: method.into(), config, eval_split: None, retrieval: None, classification: None, sweep: None, loss_trace: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.retrieval {
            check_recalls(&r.audio_to_visual, "audio→visual")?;
            check_recalls(&r.visual_to_audio, "visual→audio")?;
            if (r.sum_r - (r.audio_to_visual.sum_r + r.visual_to_audio.sum_r)).abs() > SUM_R_TOL {
                return Err(Error::contract("total sumR does not equal the sum of both directions"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: MetricsReport = serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), line: e.line(), msg: e.to_string() })?;
        r.validate()?;
        Ok(r)
    }
}

/// Fraction as a percentage with one decimal, rounding halves up.
pub fn percent(x: f64) -> String {
    format!("{:.1}", (x * 1000.0 + 0.5 + 1e-9).floor() / 10.0)
}

fn opt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), percent)
}

/// One row per report: both retrieval directions, then classification.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} | {:>5} {:>5} {:>5} | {:>5} {:>5} {:>5} | {:>6} | {:>5} {:>5}",
        "method", "A→V@1", "@5", "@10", "V→A@1", "@5", "@10", "sumR", "acc", "mAP"
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 66));
    for r in reports {
        let (a, v, s) = match &r.retrieval {
            Some(m) => (
                [m.audio_to_visual.r1, m.audio_to_visual.r5, m.audio_to_visual.r10].map(percent),
                [m.visual_to_audio.r1, m.visual_to_audio.r5, m.visual_to_audio.r10].map(percent),
                percent(m.sum_r),
            ),
            None => (["-".into(), "-".into(), "-".into()], ["-".into(), "-".into(), "-".into()], "-".into()),
        };
        let c = r.classification.as_ref();
        let _ = writeln!(
            out,
            "{:<width$} | {:>5} {:>5} {:>5} | {:>5} {:>5} {:>5} | {:>6} | {:>5} {:>5}",
            r.method,
            a[0],
            a[1],
            a[2],
            v[0],
            v[1],
            v[2],
            s,
            opt_pct(c.and_then(|c| c.accuracy)),
            opt_pct(c.and_then(|c| c.map)),
        );
    }
    for r in reports {
        if let Some(sw) = &r.sweep {
            let _ = writeln!(out, "\n{} threshold sweep ({:?} varied, other fixed at {}):", r.method, sw.varied, sw.fixed_other);
            let _ = writeln!(out, "{:>6} | {:>6}", "theta", "sumR");
            for row in &sw.rows {
                let _ = writeln!(out, "{:>6.2} | {:>6}", row.theta, percent(row.sum_r));
            }
        }
    }
    out
}
