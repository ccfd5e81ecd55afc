//! Binary segmentation scores and their aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion_slices(pred: &[bool], gt: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "mask sizes differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::invalid(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    confusion_slices(&pred.data, &gt.data)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2·tp / (2·tp + fp + fn)`; 1 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    if c.both_empty() {
        return 1.0;
    }
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    if c.both_empty() {
        return 1.0;
    }
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    if c.both_empty() {
        return 1.0;
    }
    ratio(c.tp, c.tp + c.fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
}

impl From<&ConfusionCounts> for Scores {
    fn from(c: &ConfusionCounts) -> Self {
        Scores {
            dice: dice(c),
            precision: precision(c),
            recall: recall(c),
        }
    }
}

/// Mean and population standard deviation.
pub fn aggregate(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty score list"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub per_item: Vec<f64>,
}

impl MetricSummary {
    pub fn from_items(per_item: Vec<f64>) -> Result<Self> {
        let (mean, std) = aggregate(&per_item)?;
        Ok(Self { mean, std, per_item })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
}

impl MetricsReport {
    pub fn from_scores(scores: &[Scores]) -> Result<Self> {
        Ok(Self {
            dice: MetricSummary::from_items(scores.iter().map(|s| s.dice).collect())?,
            precision: MetricSummary::from_items(scores.iter().map(|s| s.precision).collect())?,
            recall: MetricSummary::from_items(scores.iter().map(|s| s.recall).collect())?,
        })
    }

    /// One line per metric, two decimals.
    pub fn summary_lines(&self) -> Vec<String> {
        [("dice", &self.dice), ("precision", &self.precision), ("recall", &self.recall)]
            .iter()
            .map(|(name, m)| format!("{name}: {:.2} ± {:.2}", m.mean, m.std))
            .collect()
    }
}

/// Scores grouped into scans: per projection, and per scan (mean of its
/// projections) with mean ± std across scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_scans: usize,
    pub n_projections: usize,
    pub per_scan: MetricsReport,
    pub per_projection: MetricsReport,
}

/// `scans[s][p]` holds the `(pred, gt)` pair of projection `p` in scan `s`.
pub fn evaluate(scans: &[Vec<(Mask, Mask)>]) -> Result<EvaluationReport> {
    if scans.is_empty() || scans.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("every scan needs at least one projection"));
    }
    let mut per_projection = Vec::new();
    let mut per_scan = Vec::new();
    for scan in scans {
        let scores = scan
            .iter()
            .map(|(p, g)| confusion(p, g).map(|c| Scores::from(&c)))
            .collect::<Result<Vec<_>>>()?;
        let mean = |f: fn(&Scores) -> f64| scores.iter().map(f).sum::<f64>() / scores.len() as f64;
        per_scan.push(Scores {
            dice: mean(|s| s.dice),
            precision: mean(|s| s.precision),
            recall: mean(|s| s.recall),
        });
        per_projection.extend(scores);
    }
    Ok(EvaluationReport {
        n_scans: scans.len(),
        n_projections: per_projection.len(),
        per_scan: MetricsReport::from_scores(&per_scan)?,
        per_projection: MetricsReport::from_scores(&per_projection)?,
    })
}
