//! Run reports, comparison tables and figure data.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::calibration::{self, BinStats, PredictionSet};
use crate::error::{Error, Result};

/// One row of `report.csv`: the headline numbers of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    /// `SGD`, `DP-SGD` or `DP-SGLD`.
    pub procedure: String,
    pub dataset: String,
    /// Spent epsilon; `f64::INFINITY` for non-private runs.
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub accuracy: f64,
    pub auc: f64,
    pub ece: f64,
    pub sce: Option<f64>,
    pub ace: Option<f64>,
    pub steps: u64,
    pub halted_by_budget: bool,
    pub ece_bins: usize,
    pub seed: u64,
}

const REPORT_HEADER: [&str; 14] = [
    "procedure",
    "dataset",
    "epsilon",
    "delta",
    "mu",
    "accuracy",
    "auc",
    "ece",
    "sce",
    "ace",
    "steps",
    "halted_by_budget",
    "ece_bins",
    "seed",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

fn fmt_eps(e: f64) -> String {
    if e.is_infinite() {
        "inf".into()
    } else {
        format!("{e:e}")
    }
}

fn parse_f64(field: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse()
        .map_err(|e| Error::Format(format!("{field} `{raw}`: {e}")))
}

fn parse_opt(field: &str, raw: &str) -> Result<Option<f64>> {
    if raw.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(field, raw).map(Some)
    }
}

impl ReportSummary {
    fn record(&self) -> Vec<String> {
        vec![
            self.procedure.clone(),
            self.dataset.clone(),
            fmt_eps(self.epsilon),
            opt(self.delta),
            opt(self.mu),
            format!("{:e}", self.accuracy),
            format!("{:e}", self.auc),
            format!("{:e}", self.ece),
            opt(self.sce),
            opt(self.ace),
            self.steps.to_string(),
            self.halted_by_budget.to_string(),
            self.ece_bins.to_string(),
            self.seed.to_string(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != REPORT_HEADER.len() {
            return Err(Error::Format(format!(
                "report row has {} fields, expected {}",
                rec.len(),
                REPORT_HEADER.len()
            )));
        }
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("{} `{}`: {e}", REPORT_HEADER[i], &rec[i])))
        };
        Ok(Self {
            procedure: rec[0].to_string(),
            dataset: rec[1].to_string(),
            epsilon: parse_f64("epsilon", &rec[2])?,
            delta: parse_opt("delta", &rec[3])?,
            mu: parse_opt("mu", &rec[4])?,
            accuracy: parse_f64("accuracy", &rec[5])?,
            auc: parse_f64("auc", &rec[6])?,
            ece: parse_f64("ece", &rec[7])?,
            sce: parse_opt("sce", &rec[8])?,
            ace: parse_opt("ace", &rec[9])?,
            steps: int(10)?,
            halted_by_budget: rec[11]
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("halted_by_budget: {e}")))?,
            ece_bins: int(12)? as usize,
            seed: int(13)?,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(REPORT_HEADER)?;
        w.write_record(self.record())?;
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != REPORT_HEADER {
            return Err(Error::Format(format!("unexpected report header {header:?}")));
        }
        let rec = r
            .records()
            .next()
            .ok_or_else(|| Error::Format("report has no data row".into()))??;
        Self::from_record(&rec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}

/// Privacy spend after one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub noise_multiplier: f64,
    pub step_mu: f64,
    pub mu: f64,
    pub epsilon: f64,
}

pub fn write_trace<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "noise_multiplier", "step_mu", "mu", "epsilon"])?;
    for r in rows {
        w.write_record(&[
            r.step.to_string(),
            format!("{:e}", r.noise_multiplier),
            format!("{:e}", r.step_mu),
            format!("{:e}", r.mu),
            format!("{:e}", r.epsilon),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Test-split metrics at an intermediate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub accuracy: f64,
    pub ece: f64,
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub report: PathBuf,
    pub epsilon_trace: PathBuf,
    pub reliability: PathBuf,
    pub histogram: PathBuf,
    pub predictions: PathBuf,
    pub loss: PathBuf,
    pub config: PathBuf,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: ReportSummary,
    pub trace: Vec<TraceRow>,
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub predictions: PredictionSet,
    pub reliability: BinStats,
    pub config_echo: String,
    pub wall_clock_secs: f64,
    pub outputs: Option<OutputPaths>,
}

impl RunReport {
    /// Writes every output file into `dir` (created if missing).
    pub fn write_to(&mut self, dir: &Path) -> Result<OutputPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| -> Result<(PathBuf, std::fs::File)> {
            let p = dir.join(name);
            let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            Ok((p, f))
        };
        let (report, f) = create("report.csv")?;
        self.summary.write_csv(f)?;
        let (epsilon_trace, f) = create("epsilon_trace.csv")?;
        write_trace(&self.trace, f)?;
        let (predictions, f) = create("predictions.csv")?;
        self.predictions.write_csv(f)?;
        let (reliability, histogram) = emit_figure_data(&self.predictions, self.summary.ece_bins, dir)?;
        let (loss, mut f) = create("loss.csv")?;
        let mut text = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(text, "{i},{l:e}");
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&loss, e))?;
        let (config, mut f) = create("config.txt")?;
        f.write_all(self.config_echo.as_bytes())
            .map_err(|e| Error::io(&config, e))?;
        let paths = OutputPaths {
            report,
            epsilon_trace,
            reliability,
            histogram,
            predictions,
            loss,
            config,
        };
        self.outputs = Some(paths.clone());
        Ok(paths)
    }
}

/// Writes `reliability.csv` and `histogram.csv` for a prediction dump.
///
/// Both files share the `bin_lo,bin_hi,count,mean_conf,accuracy` layout; the
/// histogram is the count column of the same binning.
pub fn emit_figure_data(preds: &PredictionSet, bins: usize, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let curve = calibration::reliability_curve(preds, bins)?;
    let rel = dir.join("reliability.csv");
    curve.write_csv(std::fs::File::create(&rel).map_err(|e| Error::io(&rel, e))?)?;
    let hist = dir.join("histogram.csv");
    curve.write_csv(std::fs::File::create(&hist).map_err(|e| Error::io(&hist, e))?)?;
    Ok((rel, hist))
}

/// Regenerates figure data from a run directory holding `predictions.csv`
/// (and optionally `report.csv` for the bin count).
pub fn figure_data_from_dir(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let preds_path = dir.join("predictions.csv");
    if !preds_path.exists() {
        return Err(Error::Format(format!("no prediction dump at {}", preds_path.display())));
    }
    let preds = PredictionSet::load(&preds_path)?;
    let report_path = dir.join("report.csv");
    let bins = if report_path.exists() {
        ReportSummary::load(&report_path)?.ece_bins
    } else {
        15
    };
    emit_figure_data(&preds, bins, dir)
}

/// Side-by-side comparison of runs on the same dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub dataset: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub procedure: String,
    pub epsilon: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub ece: f64,
    pub sce: Option<f64>,
    pub ace: Option<f64>,
}

const TABLE_HEADER: [&str; 7] = ["procedure", "epsilon", "accuracy", "auc", "ece", "sce", "ace"];

pub fn compare(reports: &[ReportSummary]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs at least two reports, got {}",
            reports.len()
        )));
    }
    let dataset = reports[0].dataset.clone();
    if let Some(other) = reports.iter().find(|r| r.dataset != dataset) {
        return Err(Error::InvalidArgument(format!(
            "reports mix datasets `{dataset}` and `{}`",
            other.dataset
        )));
    }
    Ok(ComparisonTable {
        dataset,
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                procedure: r.procedure.clone(),
                epsilon: r.epsilon,
                accuracy: r.accuracy,
                auc: r.auc,
                ece: r.ece,
                sce: r.sce,
                ace: r.ace,
            })
            .collect(),
    })
}

impl ComparisonTable {
    /// Index of the row with the lowest ECE (first on ties).
    pub fn best_ece(&self) -> usize {
        let mut best = 0;
        for (i, r) in self.rows.iter().enumerate() {
            if r.ece < self.rows[best].ece {
                best = i;
            }
        }
        best
    }

    /// Markdown table; the best ECE is bold.
    pub fn render(&self) -> String {
        let best = self.best_ece();
        let show_sce = self.rows.iter().any(|r| r.sce.is_some());
        let show_ace = self.rows.iter().any(|r| r.ace.is_some());
        let mut head = vec!["Procedure", "ε", "Accuracy", "AUC", "ECE"];
        if show_sce {
            head.push("SCE");
        }
        if show_ace {
            head.push("ACE");
        }
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", head.join(" | "));
        let _ = writeln!(out, "|{}|", vec!["---"; head.len()].join("|"));
        for (i, r) in self.rows.iter().enumerate() {
            let eps = if r.epsilon.is_infinite() {
                "∞".to_string()
            } else {
                format!("{}", round_to(r.epsilon, 3))
            };
            let ece = if i == best {
                format!("**{:.4}**", r.ece)
            } else {
                format!("{:.4}", r.ece)
            };
            let mut cells = vec![
                r.procedure.clone(),
                eps,
                format!("{:.3}", r.accuracy),
                format!("{:.3}", r.auc),
                ece,
            ];
            let dash = |v: Option<f64>| v.map_or_else(|| "–".to_string(), |x| format!("{x:.4}"));
            if show_sce {
                cells.push(dash(r.sce));
            }
            if show_ace {
                cells.push(dash(r.ace));
            }
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TABLE_HEADER)?;
        for r in &self.rows {
            w.write_record(&[
                r.procedure.clone(),
                fmt_eps(r.epsilon),
                format!("{:e}", r.accuracy),
                format!("{:e}", r.auc),
                format!("{:e}", r.ece),
                opt(r.sce),
                opt(r.ace),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, dataset: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != TABLE_HEADER {
            return Err(Error::Format(format!("unexpected table header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(ComparisonRow {
                procedure: rec[0].to_string(),
                epsilon: parse_f64("epsilon", &rec[1])?,
                accuracy: parse_f64("accuracy", &rec[2])?,
                auc: parse_f64("auc", &rec[3])?,
                ece: parse_f64("ece", &rec[4])?,
                sce: parse_opt("sce", &rec[5])?,
                ace: parse_opt("ace", &rec[6])?,
            });
        }
        Ok(Self {
            dataset: dataset.to_string(),
            rows,
        })
    }
}

fn round_to(x: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (x * f).round() / f
}
