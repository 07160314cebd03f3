//! Report rows and their CSV and JSON renderings.
//!
//! Output depends only on the input file and the library version; nothing
//! time- or host-dependent is written.

use std::io::Write;

use serde::Serialize;
use skipfree::panel::Row;
use skipfree::simulate::Estimate;

use crate::config::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    /// Nothing to compare against (simulation-only output).
    #[serde(rename = "-")]
    None,
}

/// One output line; column order is the CSV header order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub query_kind: String,
    pub args: String,
    pub closed_form: Option<String>,
    pub oracle: Option<String>,
    pub mc_p_hat: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub abs_diff: Option<f64>,
    pub verdict: Verdict,
}

impl Record {
    pub fn from_row(r: &Row) -> Self {
        let judged = r.oracle.is_some() || r.mc.is_some();
        Record {
            query_kind: r.query_kind.clone(),
            args: r.args.clone(),
            closed_form: Some(r.closed_form.clone()),
            oracle: r.oracle.clone(),
            mc_p_hat: r.mc.map(|m| m.p_hat),
            mc_stderr: r.mc.map(|m| m.std_err),
            abs_diff: judged.then_some(r.abs_diff),
            verdict: if r.pass { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn estimate_only(kind: &str, args: String, est: Option<Estimate>) -> Self {
        Record {
            query_kind: kind.into(),
            args,
            closed_form: None,
            oracle: None,
            mc_p_hat: est.map(|m| m.p_hat),
            mc_stderr: est.map(|m| m.std_err),
            abs_diff: None,
            verdict: Verdict::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub pass_rate: f64,
}

#[derive(Serialize)]
struct Metadata {
    tool: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    metadata: Metadata,
    rows: &'a [Record],
    summary: &'a Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<Record>,
    pub summary: Summary,
}

impl Report {
    pub fn new(rows: Vec<Record>) -> Self {
        let passed = rows.iter().filter(|r| r.verdict == Verdict::Pass).count();
        let failed = rows.iter().filter(|r| r.verdict == Verdict::Fail).count();
        let judged = passed + failed;
        let pass_rate = if judged == 0 { 1.0 } else { passed as f64 / judged as f64 };
        Report { summary: Summary { total: rows.len(), passed, failed, pass_rate }, rows }
    }

    pub fn all_pass(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn write(&self, format: Format, out: impl Write) -> std::io::Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => {
                let mut out = out;
                let doc = JsonDoc {
                    metadata: Metadata { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") },
                    rows: &self.rows,
                    summary: &self.summary,
                };
                serde_json::to_writer_pretty(&mut out, &doc)?;
                writeln!(out)
            }
        }
    }

    fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["query_kind", "args", "closed_form", "oracle", "mc_p_hat", "mc_stderr", "abs_diff", "verdict"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let verdict = match r.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::None => "-",
            };
            w.write_record([
                r.query_kind.as_str(),
                r.args.as_str(),
                r.closed_form.as_deref().unwrap_or(""),
                r.oracle.as_deref().unwrap_or(""),
                &opt(r.mc_p_hat),
                &opt(r.mc_stderr),
                &opt(r.abs_diff),
                verdict,
            ])?;
        }
        w.flush()
    }
}
