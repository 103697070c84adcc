//! Calibration and discrimination metrics over weighted (confidence, correct) records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub confidence: f64,
    pub correct: bool,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl PredictionRecord {
    pub fn new(confidence: f64, correct: bool) -> Result<Self> {
        Self::weighted(confidence, correct, 1.0)
    }

    pub fn weighted(confidence: f64, correct: bool, weight: f64) -> Result<Self> {
        let r = Self { confidence, correct, weight, tag: None };
        r.validate()?;
        Ok(r)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::ConfidenceOutOfRange(self.confidence));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidWeight(self.weight));
        }
        Ok(())
    }
}

fn checked(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for r in records {
        r.validate()?;
        total += r.weight;
    }
    Ok(total)
}

fn label(r: &PredictionRecord) -> f64 {
    if r.correct {
        1.0
    } else {
        0.0
    }
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    let w = checked(records)?;
    Ok(records.iter().map(|r| r.weight * label(r)).sum::<f64>() / w)
}

pub fn mean_confidence(records: &[PredictionRecord]) -> Result<f64> {
    let w = checked(records)?;
    Ok(records.iter().map(|r| r.weight * r.confidence).sum::<f64>() / w)
}

/// Mean confidence minus accuracy; positive means overconfident.
pub fn ocg(records: &[PredictionRecord]) -> Result<f64> {
    Ok(mean_confidence(records)? - accuracy(records)?)
}

pub fn brier(records: &[PredictionRecord]) -> Result<f64> {
    let w = checked(records)?;
    Ok(records.iter().map(|r| r.weight * (r.confidence - label(r)).powi(2)).sum::<f64>() / w)
}

/// Equal-width bins; bin 0 is `[0, 1/B]`, bin `b > 0` is `(b/B, (b+1)/B]`.
pub fn bin_index(confidence: f64, num_bins: usize) -> usize {
    let edge = |i: usize| i as f64 / num_bins as f64;
    let mut idx = ((confidence * num_bins as f64).ceil() as usize).saturating_sub(1).min(num_bins - 1);
    while idx > 0 && confidence <= edge(idx) {
        idx -= 1;
    }
    while idx + 1 < num_bins && confidence > edge(idx + 1) {
        idx += 1;
    }
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// `None` for an empty bin.
    pub mean_conf: Option<f64>,
    pub acc: Option<f64>,
    pub count: usize,
    pub weight: f64,
}

pub fn reliability_bins(records: &[PredictionRecord], num_bins: usize) -> Result<Vec<ReliabilityBin>> {
    if num_bins == 0 {
        return Err(Error::InvalidConfig("num_bins must be at least 1".into()));
    }
    checked(records)?;
    let mut sums = vec![(0usize, 0.0f64, 0.0f64, 0.0f64); num_bins];
    for r in records {
        let s = &mut sums[bin_index(r.confidence, num_bins)];
        s.0 += 1;
        s.1 += r.weight;
        s.2 += r.weight * r.confidence;
        s.3 += r.weight * label(r);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(b, (count, w, c, a))| ReliabilityBin {
            lower: b as f64 / num_bins as f64,
            upper: (b + 1) as f64 / num_bins as f64,
            mean_conf: (count > 0).then(|| c / w),
            acc: (count > 0).then(|| a / w),
            count,
            weight: w,
        })
        .collect())
}

fn ece_from_bins(bins: &[ReliabilityBin], total: f64) -> f64 {
    bins.iter()
        .filter_map(|b| Some((b.weight / total) * (b.acc? - b.mean_conf?).abs()))
        .sum()
}

pub fn ece(records: &[PredictionRecord], num_bins: usize) -> Result<f64> {
    let bins = reliability_bins(records, num_bins)?;
    let total: f64 = bins.iter().map(|b| b.weight).sum();
    Ok(ece_from_bins(&bins, total))
}

/// Weighted pair masses `(strictly greater, tied, total)` over (correct, incorrect) pairs.
/// `None` when either class is empty.
fn pair_masses(records: &[PredictionRecord]) -> Result<Option<(f64, f64, f64)>> {
    checked(records)?;
    let mut neg: Vec<(f64, f64)> = records.iter().filter(|r| !r.correct).map(|r| (r.confidence, r.weight)).collect();
    let pos: Vec<&PredictionRecord> = records.iter().filter(|r| r.correct).collect();
    if neg.is_empty() || pos.is_empty() {
        return Ok(None);
    }
    neg.sort_by(|a, b| a.0.total_cmp(&b.0));
    // prefix[i] = weight of the first i negatives
    let mut prefix = Vec::with_capacity(neg.len() + 1);
    prefix.push(0.0);
    for (_, w) in &neg {
        prefix.push(prefix.last().unwrap() + w);
    }
    let w_neg = *prefix.last().unwrap();
    let mut greater = 0.0;
    let mut tied = 0.0;
    let mut w_pos = 0.0;
    for p in pos {
        let below = neg.partition_point(|n| n.0 < p.confidence);
        let upto = neg.partition_point(|n| n.0 <= p.confidence);
        greater += p.weight * prefix[below];
        tied += p.weight * (prefix[upto] - prefix[below]);
        w_pos += p.weight;
    }
    Ok(Some((greater, tied, w_pos * w_neg)))
}

/// `P(c+ > c-)`; ties earn nothing. `None` when a class is empty.
pub fn spr(records: &[PredictionRecord]) -> Result<Option<f64>> {
    Ok(pair_masses(records)?.map(|(g, _, t)| g / t))
}

/// `P(c+ > c-) + 0.5 P(c+ = c-)`. `None` when a class is empty.
pub fn auroc(records: &[PredictionRecord]) -> Result<Option<f64>> {
    Ok(pair_masses(records)?.map(|(g, tie, t)| (g + 0.5 * tie) / t))
}

pub const CONSISTENCY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub ocg: f64,
    pub ece: f64,
    pub brier: f64,
    pub spr: Option<f64>,
    pub auroc: Option<f64>,
    pub tie_probability: Option<f64>,
    pub num_bins: usize,
    pub bins: Vec<ReliabilityBin>,
}

impl CalibrationReport {
    pub fn from_records(records: &[PredictionRecord], num_bins: usize) -> Result<Self> {
        let bins = reliability_bins(records, num_bins)?;
        let total: f64 = records.iter().map(|r| r.weight).sum();
        let accuracy = accuracy(records)?;
        let mean_confidence = mean_confidence(records)?;
        let masses = pair_masses(records)?;
        let report = Self {
            n: records.len(),
            accuracy,
            mean_confidence,
            ocg: mean_confidence - accuracy,
            ece: ece_from_bins(&bins, total),
            brier: brier(records)?,
            spr: masses.map(|(g, _, t)| g / t),
            auroc: masses.map(|(g, tie, t)| (g + 0.5 * tie) / t),
            tie_probability: masses.map(|(_, tie, t)| tie / t),
            num_bins,
            bins,
        };
        report.check()?;
        Ok(report)
    }

    /// Internal consistency of the assembled fields.
    pub fn check(&self) -> Result<()> {
        if (self.ocg - (self.mean_confidence - self.accuracy)).abs() > CONSISTENCY_TOL {
            return Err(Error::Inconsistent("ocg != mean_confidence - accuracy".into()));
        }
        match (self.spr, self.auroc, self.tie_probability) {
            (Some(s), Some(a), Some(t)) => {
                if (a - s - 0.5 * t).abs() > CONSISTENCY_TOL {
                    return Err(Error::Inconsistent("auroc - spr != tie_probability / 2".into()));
                }
            }
            (None, None, None) => {}
            _ => return Err(Error::Inconsistent("spr/auroc definedness differs".into())),
        }
        if self.bins.len() != self.num_bins || self.bins.iter().map(|b| b.count).sum::<usize>() != self.n {
            return Err(Error::Inconsistent("bin counts do not cover the records".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str = "n,accuracy,mean_confidence,ocg,ece,brier,spr,auroc,num_bins";

    /// Header plus one data row; undefined SPR/AUROC are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{}\n{},{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.n,
            self.accuracy,
            self.mean_confidence,
            self.ocg,
            self.ece,
            self.brier,
            opt(self.spr),
            opt(self.auroc),
            self.num_bins
        )
    }

    pub fn bins_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("lower,upper,mean_conf,acc,count,weight\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.lower,
                b.upper,
                opt(b.mean_conf),
                opt(b.acc),
                b.count,
                b.weight
            ));
        }
        out
    }
}

pub fn report(records: &[PredictionRecord], num_bins: usize) -> Result<CalibrationReport> {
    CalibrationReport::from_records(records, num_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recs(items: &[(f64, bool)]) -> Vec<PredictionRecord> {
        items.iter().map(|&(c, y)| PredictionRecord::new(c, y).unwrap()).collect()
    }

    #[test]
    fn brier_examples() {
        assert!((brier(&recs(&[(0.8, true)])).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(brier(&recs(&[(1.0, true), (1.0, true)])).unwrap(), 0.0);
        assert!(matches!(brier(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(PredictionRecord::new(1.01, true).is_err());
        assert!(PredictionRecord::new(-0.0, true).is_ok());
        assert!(PredictionRecord::weighted(0.5, true, 0.0).is_err());
        let bad = PredictionRecord { confidence: f64::NAN, correct: true, weight: 1.0, tag: None };
        assert!(brier(&[bad]).is_err());
    }

    #[test]
    fn calibrated_degenerate_set() {
        let r: Vec<_> = (0..100).map(|i| PredictionRecord::new(0.7, i < 70).unwrap()).collect();
        assert!(ece(&r, 10).unwrap() < 1e-12);
        assert!(ocg(&r).unwrap().abs() < 1e-12);
    }

    #[test]
    fn saturated_anchor() {
        let r: Vec<_> = (0..1000).map(|i| PredictionRecord::new(1.0, i < 576).unwrap()).collect();
        assert!((ece(&r, 10).unwrap() - 0.424).abs() < 1e-12);
        assert_eq!(spr(&r).unwrap(), Some(0.0));
        assert_eq!(auroc(&r).unwrap(), Some(0.5));
    }

    #[test]
    fn ocg_examples() {
        let mut r: Vec<_> = (0..1000).map(|i| PredictionRecord::new(0.897, i < 310).unwrap()).collect();
        assert!((ocg(&r).unwrap() - 0.587).abs() < 1e-12);
        r = recs(&[(0.0, false), (0.0, false)]);
        assert_eq!(ocg(&r).unwrap(), 0.0);
    }

    #[test]
    fn ranking_examples() {
        let sep = recs(&[(0.9, true), (0.8, true), (0.2, false), (0.1, false)]);
        assert_eq!(spr(&sep).unwrap(), Some(1.0));
        assert_eq!(auroc(&sep).unwrap(), Some(1.0));
        assert_eq!(spr(&recs(&[(0.9, true)])).unwrap(), None);
        assert_eq!(auroc(&recs(&[(0.9, false)])).unwrap(), None);
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.30000000000000004, 10), 3);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.5, 1), 0);
    }

    #[test]
    fn perfect_predictor_report() {
        let r = report(&recs(&[(1.0, true), (0.0, false)]), 10).unwrap();
        assert_eq!((r.ece, r.brier, r.ocg), (0.0, 0.0, 0.0));
        assert_eq!(r.spr, Some(1.0));
        let r = report(&recs(&[(1.0, true)]), 10).unwrap();
        assert_eq!(r.spr, None);
        assert!(r.to_csv().lines().nth(1).unwrap().contains(",,"));
    }

    fn record_set() -> impl Strategy<Value = Vec<PredictionRecord>> {
        proptest::collection::vec((0u32..=20, any::<bool>(), 1u32..4), 1..120).prop_map(|v| {
            v.into_iter()
                .map(|(c, y, w)| PredictionRecord::weighted(c as f64 / 20.0, y, w as f64).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ranking_bounds(r in record_set()) {
            if let (Some(s), Some(a)) = (spr(&r).unwrap(), auroc(&r).unwrap()) {
                prop_assert!(s <= a && a <= s + 0.5);
            }
        }

        #[test]
        fn one_bin_ece_is_abs_ocg(r in record_set()) {
            prop_assert_eq!(ece(&r, 1).unwrap(), ocg(&r).unwrap().abs());
        }

        #[test]
        fn permutation_and_rescale_invariance(r in record_set(), s in 1u32..5) {
            let mut rev = r.clone();
            rev.reverse();
            let mut scaled = r.clone();
            scaled.iter_mut().for_each(|x| x.weight *= s as f64);
            for other in [&rev, &scaled] {
                prop_assert!((brier(&r).unwrap() - brier(other).unwrap()).abs() < 1e-12);
                prop_assert!((ece(&r, 10).unwrap() - ece(other, 10).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn report_consistent(r in record_set(), bins in 1usize..20) {
            let rep = report(&r, bins).unwrap();
            prop_assert_eq!(rep.n, r.len());
            prop_assert!(rep.check().is_ok());
        }
    }
}
