//! On-disk formats: policy JSON and the CSV series, each file opening with
//! `#` comment lines that carry the configuration hash and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use dlmp_core::evaluator::{ComparisonTable, DemoTrace, EvalReport};
use dlmp_core::trainer::TrainLog;
use dlmp_core::{PolicyLayout, PolicyParams, RewardMode};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub config_sha256: String,
    pub seed: u64,
    pub mode: RewardMode,
    pub w: f64,
    pub zero_impedance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub layout: PolicyLayout,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<PolicyMeta>,
}

impl PolicyFile {
    pub fn params(&self) -> anyhow::Result<PolicyParams> {
        Ok(PolicyParams::from_vec(self.layout, self.theta.clone())?)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read policy {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid policy file {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// CSV file with leading comment lines.
pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, comments: &[String], header: &[&str]) -> anyhow::Result<Self> {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut buf = BufWriter::new(file);
        for c in comments {
            writeln!(buf, "# {c}")?;
        }
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(header)?;
        Ok(CsvOut { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_train_log(path: &Path, comments: &[String], log: &TrainLog) -> anyhow::Result<()> {
    let mut out = CsvOut::create(path, comments, &["iteration", "value", "grad_norm", "theta_norm"])?;
    for r in &log.records {
        out.row([r.iteration.to_string(), num(r.value), num(r.grad_norm), num(r.theta_norm)])?;
    }
    out.finish()
}

pub fn write_eval_report(path: &Path, comments: &[String], report: &EvalReport) -> anyhow::Result<()> {
    let mut out = CsvOut::create(
        path,
        comments,
        &["rollout", "adjusted", "welfare", "baseline", "v_min", "v_max", "mean_losses_fraction", "xi_fingerprint"],
    )?;
    for r in &report.rollouts {
        out.row([
            r.rollout.to_string(),
            num(r.adjusted),
            num(r.welfare),
            num(r.baseline),
            num(r.v_min),
            num(r.v_max),
            num(r.mean_losses_fraction),
            format!("{:016x}", r.xi_fingerprint),
        ])?;
    }
    out.finish()
}

/// Long format: `metric, label, other, value`.
pub fn write_comparison(path: &Path, comments: &[String], table: &ComparisonTable) -> anyhow::Result<()> {
    let mut out = CsvOut::create(path, comments, &["metric", "label", "other", "value"])?;
    for p in &table.policies {
        for (metric, v) in [
            ("mean", p.mean),
            ("min", p.min),
            ("q1", p.q1),
            ("median", p.median),
            ("q3", p.q3),
            ("max", p.max),
        ] {
            out.row([metric, p.label.as_str(), "", num(v).as_str()])?;
        }
    }
    for g in &table.gaps {
        out.row(["gap", g.first.as_str(), g.second.as_str(), num(g.gap).as_str()])?;
        out.row(["relative_gap", g.first.as_str(), g.second.as_str(), num(g.relative).as_str()])?;
    }
    if let Some(r) = table.poa_ratio {
        out.row(["poa_ratio", "SO-EQ", "EQ-UN", num(r).as_str()])?;
    }
    out.finish()
}

pub fn write_demo(path: &Path, comments: &[String], trace: &DemoTrace) -> anyhow::Result<()> {
    let mut out = CsvOut::create(path, comments, &["t", "node", "series", "value"])?;
    for r in &trace.rows {
        out.row([r.t.to_string(), r.node.to_string(), r.series.to_string(), num(r.value)])?;
    }
    out.finish()
}
