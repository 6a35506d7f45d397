//! Calibration and discrimination metrics over softmax prediction sets.
//!
//! Equal-width bins over `[0, 1]` are left-open and right-closed, except the
//! first bin which also holds 0. A confidence sitting exactly on an interior
//! edge therefore belongs to the lower bin. Empty bins carry zero weight.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-stochastic probability matrix with true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl PredictionSet {
    /// `probs` is row-major `n x num_classes`.
    pub fn new(probs: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("zero classes".into()));
        }
        if probs.len() != labels.len() * num_classes {
            return Err(Error::Shape(format!(
                "{} probabilities for {} rows of {num_classes} classes",
                probs.len(),
                labels.len()
            )));
        }
        for (i, row) in probs.chunks_exact(num_classes).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}")));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            probs,
            labels,
            num_classes,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("ragged probability rows".into()));
        }
        Self::new(rows.concat(), labels, k)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.num_classes)
    }

    /// Predicted class of row `i` (first maximum on ties).
    pub fn predicted(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    /// Maximum probability of row `i`.
    pub fn confidence(&self, i: usize) -> f64 {
        self.row(i)[self.predicted(i)]
    }

    pub fn is_correct(&self, i: usize) -> bool {
        self.predicted(i) == self.labels[i]
    }

    /// Writes `prob_0,...,prob_{K-1},label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.num_classes).map(|k| format!("prob_{k}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, label) in self.rows().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|p| format!("{p:e}")).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let k = header.len().saturating_sub(1);
        let well_formed = k > 0
            && header.get(k) == Some("label")
            && (0..k).all(|i| header.get(i) == Some(format!("prob_{i}").as_str()));
        if !well_formed {
            return Err(Error::Format(format!("unexpected prediction header {header:?}")));
        }
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for i in 0..k {
                probs.push(parse_field::<f64>(&rec, i)?);
            }
            labels.push(parse_field::<usize>(&rec, k)?);
        }
        Self::new(probs, labels, k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| Error::Format(format!("missing column {i}")))?;
    raw.trim()
        .parse()
        .map_err(|e| Error::Format(format!("column {i} value `{raw}`: {e}")))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn require_non_empty(preds: &PredictionSet) -> Result<()> {
    if preds.is_empty() {
        Err(Error::Empty("prediction set"))
    } else {
        Ok(())
    }
}

fn require_bins(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::InvalidArgument("bin count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Index of the equal-width bin holding `c`.
pub fn bin_index(c: f64, bins: usize) -> usize {
    let idx = (c * bins as f64).ceil() as isize - 1;
    idx.clamp(0, bins as isize - 1) as usize
}

/// Per-bin tallies for a reliability diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    /// `bins + 1` edges for equal-width bins.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean confidence per bin; 0 for empty bins.
    pub mean_confidence: Vec<f64>,
    /// Fraction correct per bin; 0 for empty bins.
    pub accuracy: Vec<f64>,
    pub total: usize,
}

impl BinStats {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// `|B_m| / n` per bin.
    pub fn weights(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }

    /// Weighted mean absolute gap between accuracy and confidence.
    pub fn ece(&self) -> f64 {
        self.counts
            .iter()
            .zip(self.accuracy.iter().zip(&self.mean_confidence))
            .map(|(&c, (a, m))| c as f64 / self.total as f64 * (a - m).abs())
            .sum()
    }

    /// `bin_lo,bin_hi,count,mean_conf,accuracy`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_lo", "bin_hi", "count", "mean_conf", "accuracy"])?;
        for m in 0..self.bins() {
            w.write_record(&[
                format!("{}", self.edges[m]),
                format!("{}", self.edges[m + 1]),
                self.counts[m].to_string(),
                format!("{:e}", self.mean_confidence[m]),
                format!("{:e}", self.accuracy[m]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["bin_lo", "bin_hi", "count", "mean_conf", "accuracy"] {
            return Err(Error::Format(format!("unexpected bin header {header:?}")));
        }
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        let mut mean_confidence = Vec::new();
        let mut accuracy = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if edges.is_empty() {
                edges.push(parse_field::<f64>(&rec, 0)?);
            }
            edges.push(parse_field::<f64>(&rec, 1)?);
            counts.push(parse_field::<usize>(&rec, 2)?);
            mean_confidence.push(parse_field::<f64>(&rec, 3)?);
            accuracy.push(parse_field::<f64>(&rec, 4)?);
        }
        let total = counts.iter().sum();
        Ok(Self {
            edges,
            counts,
            mean_confidence,
            accuracy,
            total,
        })
    }
}

fn equal_width_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|m| m as f64 / bins as f64).collect()
}

/// Top-label reliability curve: per equal-width bin, mean confidence,
/// accuracy and count.
pub fn reliability_curve(preds: &PredictionSet, bins: usize) -> Result<BinStats> {
    require_non_empty(preds)?;
    require_bins(bins)?;
    let mut counts = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    for i in 0..preds.len() {
        let c = preds.confidence(i);
        let m = bin_index(c, bins);
        counts[m] += 1;
        conf_sum[m] += c;
        correct[m] += preds.is_correct(i) as usize;
    }
    let mean_confidence = counts
        .iter()
        .zip(&conf_sum)
        .map(|(&n, &s)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let accuracy = counts
        .iter()
        .zip(&correct)
        .map(|(&n, &k)| if n == 0 { 0.0 } else { k as f64 / n as f64 })
        .collect();
    Ok(BinStats {
        edges: equal_width_edges(bins),
        counts,
        mean_confidence,
        accuracy,
        total: preds.len(),
    })
}

/// Expected calibration error over `bins` equal-width top-label bins.
pub fn ece(preds: &PredictionSet, bins: usize) -> Result<f64> {
    Ok(reliability_curve(preds, bins)?.ece())
}

/// Number of top-label confidences per equal-width bin.
pub fn confidence_histogram(preds: &PredictionSet, bins: usize) -> Result<Vec<usize>> {
    Ok(reliability_curve(preds, bins)?.counts)
}

/// Static calibration error: ECE computed per class on that class's
/// probability column with `label == k` as correctness, averaged over classes.
pub fn sce(preds: &PredictionSet, bins: usize) -> Result<f64> {
    require_non_empty(preds)?;
    require_bins(bins)?;
    let n = preds.len() as f64;
    let k = preds.num_classes();
    let mut total = 0.0;
    for class in 0..k {
        let mut counts = vec![0usize; bins];
        let mut conf = vec![0.0; bins];
        let mut hits = vec![0usize; bins];
        for (i, row) in preds.rows().enumerate() {
            let m = bin_index(row[class], bins);
            counts[m] += 1;
            conf[m] += row[class];
            hits[m] += (preds.labels()[i] == class) as usize;
        }
        for m in 0..bins {
            if counts[m] > 0 {
                let c = counts[m] as f64;
                total += c / n * (hits[m] as f64 / c - conf[m] / c).abs();
            }
        }
    }
    Ok(total / k as f64)
}

/// Adaptive calibration error: like SCE, but each class's samples are sorted
/// by that class's probability and cut into `ranges` equal-count bins
/// (sizes differ by at most one, larger bins first).
pub fn ace(preds: &PredictionSet, ranges: usize) -> Result<f64> {
    require_non_empty(preds)?;
    require_bins(ranges)?;
    let n = preds.len();
    if ranges > n {
        return Err(Error::InvalidArgument(format!(
            "{ranges} adaptive ranges for {n} samples"
        )));
    }
    let k = preds.num_classes();
    let mut total = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    for class in 0..k {
        order.sort_by(|&a, &b| preds.row(a)[class].total_cmp(&preds.row(b)[class]).then(a.cmp(&b)));
        let mut lo = 0;
        for r in 0..ranges {
            // the first n % R bins take the extra sample
            let hi = lo + n / ranges + usize::from(r < n % ranges);
            let members = &order[lo..hi];
            lo = hi;
            let c = members.len() as f64;
            let conf: f64 = members.iter().map(|&i| preds.row(i)[class]).sum();
            let hits = members.iter().filter(|&&i| preds.labels()[i] == class).count() as f64;
            total += c / n as f64 * (hits / c - conf / c).abs();
        }
    }
    Ok(total / k as f64)
}

pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    require_non_empty(preds)?;
    let hits = (0..preds.len()).filter(|&i| preds.is_correct(i)).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// One-vs-rest ROC AUC for a single class: probability that a random
/// positive outscores a random negative, ties counted half. `None` when the
/// class has no positives or no negatives.
pub fn auc_one_vs_rest(preds: &PredictionSet, class: usize) -> Option<f64> {
    let n = preds.len();
    let mut scored: Vec<(f64, bool)> = (0..n)
        .map(|i| (preds.row(i)[class], preds.labels()[i] == class))
        .collect();
    let positives = scored.iter().filter(|s| s.1).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of midranks of the positives (Mann-Whitney U).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        let pos_in_tie = scored[i..j].iter().filter(|s| s.1).count();
        rank_sum += midrank * pos_in_tie as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Some(u / (p * negatives as f64))
}

/// Unweighted mean of the one-vs-rest AUCs. Classes without positives or
/// negatives are skipped with a warning.
pub fn auc_macro_ovr(preds: &PredictionSet) -> Result<f64> {
    require_non_empty(preds)?;
    let k = preds.num_classes();
    let mut sum = 0.0;
    let mut used = 0;
    for class in 0..k {
        match auc_one_vs_rest(preds, class) {
            Some(a) => {
                sum += a;
                used += 1;
            }
            None => log::warn!("class {class} skipped in macro AUC: needs positives and negatives"),
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument(
            "no class has both positives and negatives".into(),
        ));
    }
    Ok(sum / used as f64)
}

/// All headline metrics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub auc: f64,
    pub ece: f64,
    pub sce: f64,
    pub ace: f64,
}

pub fn summarize(preds: &PredictionSet, bins: usize, ranges: usize) -> Result<MetricSummary> {
    Ok(MetricSummary {
        accuracy: accuracy(preds)?,
        auc: auc_macro_ovr(preds)?,
        ece: ece(preds, bins)?,
        sce: sce(preds, bins)?,
        ace: ace(preds, ranges.min(preds.len()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_case() -> PredictionSet {
        PredictionSet::from_rows(
            &[vec![0.6, 0.4], vec![0.8, 0.2], vec![0.9, 0.1], vec![0.55, 0.45]],
            vec![0, 1, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn ece_hand_case() {
        let p = four_case();
        let e = ece(&p, 2).unwrap();
        assert!((e - 0.2125).abs() < 1e-15, "ece = {e}");
    }

    #[test]
    fn confident_and_correct_is_calibrated() {
        let p = PredictionSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]).unwrap();
        assert_eq!(ece(&p, 15).unwrap(), 0.0);
        let curve = reliability_curve(&p, 15).unwrap();
        assert_eq!(curve.counts[14], 2);
        assert_eq!(curve.counts.iter().sum::<usize>(), 2);
        assert_eq!((curve.accuracy[14], curve.mean_confidence[14]), (1.0, 1.0));
        assert_eq!(confidence_histogram(&p, 15).unwrap()[14], 2);
    }

    #[test]
    fn single_bin_is_accuracy_minus_confidence() {
        let p = four_case();
        let mean_conf = (0.6 + 0.8 + 0.9 + 0.55) / 4.0;
        let e = ece(&p, 1).unwrap();
        assert!((e - (accuracy(&p).unwrap() - mean_conf).abs()).abs() < 1e-15);
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.5, 2), 0);
        assert_eq!(bin_index(0.5000001, 2), 1);
        assert_eq!(bin_index(1.0, 15), 14);
        assert_eq!(bin_index(0.25, 4), 0);
    }

    #[test]
    fn validation_errors() {
        assert!(PredictionSet::from_rows(&[vec![0.5, 0.4]], vec![0]).is_err());
        assert!(PredictionSet::from_rows(&[vec![1.2, -0.2]], vec![0]).is_err());
        assert!(PredictionSet::from_rows(&[vec![0.5, 0.5]], vec![2]).is_err());
        let empty = PredictionSet::new(vec![], vec![], 3).unwrap();
        assert!(matches!(ece(&empty, 10), Err(Error::Empty(_))));
        assert!(matches!(accuracy(&empty), Err(Error::Empty(_))));
        assert!(ece(&four_case(), 0).is_err());
        assert!(ace(&four_case(), 5).is_err());
    }

    #[test]
    fn degenerate_single_class_sce_is_zero() {
        let p = PredictionSet::new(vec![1.0; 5], vec![0; 5], 1).unwrap();
        assert_eq!(sce(&p, 10).unwrap(), 0.0);
        assert_eq!(ace(&p, 5).unwrap(), 0.0);
    }

    #[test]
    fn ace_with_singleton_bins() {
        let p = four_case();
        let mut expected = 0.0;
        for (i, row) in p.rows().enumerate() {
            for (k, &prob) in row.iter().enumerate() {
                let ind = (p.labels()[i] == k) as u8 as f64;
                expected += (ind - prob).abs();
            }
        }
        expected /= (p.len() * p.num_classes()) as f64;
        assert!((ace(&p, 4).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_pin_sce_and_single_range_ace() {
        let row = vec![0.2, 0.5, 0.3];
        let labels = vec![0, 1, 1, 2, 1, 0, 1, 2, 1, 1];
        let rows = vec![row.clone(); labels.len()];
        let p = PredictionSet::from_rows(&rows, labels.clone()).unwrap();
        let mut expected = 0.0;
        for (k, &prob) in row.iter().enumerate() {
            let freq = labels.iter().filter(|&&l| l == k).count() as f64 / labels.len() as f64;
            expected += (freq - prob).abs();
        }
        expected /= 3.0;
        assert!((ace(&p, 1).unwrap() - expected).abs() < 1e-12);
        // finer rank bins split the labels unevenly, which can only add error
        for r in [3, 10] {
            assert!(ace(&p, r).unwrap() >= expected - 1e-12);
        }
        assert!((sce(&p, 15).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn auc_extremes() {
        let sep = PredictionSet::from_rows(
            &[vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.1, 0.9]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        assert_eq!(auc_macro_ovr(&sep).unwrap(), 1.0);
        let tied = PredictionSet::from_rows(&vec![vec![0.5, 0.5]; 4], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(auc_macro_ovr(&tied).unwrap(), 0.5);
        let one_class = PredictionSet::from_rows(&vec![vec![0.5, 0.5]; 2], vec![0, 0]).unwrap();
        assert!(auc_macro_ovr(&one_class).is_err());
    }

    #[test]
    fn prediction_csv_round_trip() {
        let p = four_case();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("prob_0,prob_1,label\n"));
        assert_eq!(PredictionSet::read_csv(buf.as_slice()).unwrap(), p);
        assert!(PredictionSet::read_csv("a,b\n1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn bin_csv_round_trip() {
        let curve = reliability_curve(&four_case(), 4).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let back = BinStats::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, curve);
    }
}
