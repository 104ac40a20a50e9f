//! Metrics, error diagnostics, multi-year inference and trend correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{DacRecord, TractId};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::models::{fmt_f64, predict, Prediction, TrainedModel};
use crate::scoring::{assign_percentiles, median};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

impl Outcome {
    pub fn of(predicted: bool, actual: bool) -> Self {
        match (predicted, actual) {
            (true, true) => Outcome::TruePositive,
            (true, false) => Outcome::FalsePositive,
            (false, true) => Outcome::FalseNegative,
            (false, false) => Outcome::TrueNegative,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Outcome::TruePositive => "TP",
            Outcome::FalsePositive => "FP",
            Outcome::FalseNegative => "FN",
            Outcome::TrueNegative => "TN",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Binary confusion counts with DAC as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (p, a) in pairs {
            match Outcome::of(p, a) {
                Outcome::TruePositive => c.tp += 1,
                Outcome::FalsePositive => c.fp += 1,
                Outcome::FalseNegative => c.fn_ += 1,
                Outcome::TrueNegative => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, 0 when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.total())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TractOutcome {
    pub tract: TractId,
    pub probability: f64,
    pub predicted: bool,
    pub actual: bool,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Sorted by tract.
    pub tracts: Vec<TractOutcome>,
}

/// Score predictions against labels; both must cover the same tracts.
pub fn evaluate(predictions: &[Prediction], labels: &BTreeMap<TractId, bool>) -> Result<EvalReport> {
    let predicted: BTreeMap<&TractId, &Prediction> = predictions.iter().map(|p| (&p.tract, p)).collect();
    if predicted.len() != predictions.len() {
        return Err(Error::invalid("duplicate tracts among predictions"));
    }
    let a: BTreeSet<&TractId> = predicted.keys().copied().collect();
    let b: BTreeSet<&TractId> = labels.keys().collect();
    if a != b {
        let only_pred: Vec<&str> = a.difference(&b).map(|t| t.as_str()).collect();
        let only_label: Vec<&str> = b.difference(&a).map(|t| t.as_str()).collect();
        return Err(Error::invalid(format!(
            "prediction and label tracts differ: {} only predicted [{}], {} only labeled [{}]",
            only_pred.len(),
            preview(&only_pred),
            only_label.len(),
            preview(&only_label)
        )));
    }
    let tracts: Vec<TractOutcome> = predicted
        .into_iter()
        .map(|(t, p)| {
            let actual = labels[t];
            TractOutcome {
                tract: t.clone(),
                probability: p.probability,
                predicted: p.dac,
                actual,
                outcome: Outcome::of(p.dac, actual),
            }
        })
        .collect();
    let confusion = Confusion::from_pairs(tracts.iter().map(|t| (t.predicted, t.actual)));
    Ok(EvalReport {
        confusion,
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        accuracy: confusion.accuracy(),
        tracts,
    })
}

fn preview(items: &[&str]) -> String {
    let mut s = items.iter().take(10).copied().collect::<Vec<_>>().join(", ");
    if items.len() > 10 {
        s.push_str(", ...");
    }
    s
}

impl EvalReport {
    /// `metric,value` rows.
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        let c = &self.confusion;
        for (k, v) in [
            ("tp", c.tp.to_string()),
            ("fp", c.fp.to_string()),
            ("fn", c.fn_.to_string()),
            ("tn", c.tn.to_string()),
            ("precision", fmt_f64(self.precision)),
            ("recall", fmt_f64(self.recall)),
            ("f1", fmt_f64(self.f1)),
            ("accuracy", fmt_f64(self.accuracy)),
        ] {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `tract_id,probability,predicted,actual,outcome` rows.
    pub fn write_outcomes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tract_id", "probability", "predicted", "actual", "outcome"])?;
        for t in &self.tracts {
            w.write_record([
                t.tract.as_str(),
                &fmt_f64(t.probability),
                if t.predicted { "1" } else { "0" },
                if t.actual { "1" } else { "0" },
                t.outcome.code(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedIndicator {
    pub indicator: String,
    /// Median over the group of (tract percentile - TP median percentile).
    pub median_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRanking {
    pub outcome: Outcome,
    pub n_tracts: usize,
    /// Every indicator, by descending |median delta|; absent deltas last.
    pub entries: Vec<RankedIndicator>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TractDiagnostic {
    pub tract: TractId,
    pub outcome: Outcome,
    pub percentiles: Vec<Option<f64>>,
    pub deltas: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDiagnostics {
    pub indicators: Vec<String>,
    pub tp_medians: Vec<Option<f64>>,
    /// False positives then false negatives, each sorted by tract.
    pub tracts: Vec<TractDiagnostic>,
    /// One ranking per non-empty error group (FP, FN).
    pub groups: Vec<GroupRanking>,
}

impl ErrorDiagnostics {
    pub fn group(&self, outcome: Outcome) -> Option<&GroupRanking> {
        self.groups.iter().find(|g| g.outcome == outcome)
    }

    /// `group,rank,indicator,median_delta,n_tracts` rows.
    pub fn write_rankings_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group", "rank", "indicator", "median_delta", "n_tracts"])?;
        for g in &self.groups {
            for (i, e) in g.entries.iter().enumerate() {
                w.write_record([
                    g.outcome.code().to_string(),
                    (i + 1).to_string(),
                    e.indicator.clone(),
                    e.median_delta.map(fmt_f64).unwrap_or_default(),
                    g.n_tracts.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `tract_id,outcome,<indicator deltas...>` rows.
    pub fn write_tracts_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["tract_id".to_string(), "outcome".to_string()];
        header.extend(self.indicators.iter().map(|n| format!("delta_{n}")));
        w.write_record(&header)?;
        for t in &self.tracts {
            let mut row = vec![t.tract.to_string(), t.outcome.code().to_string()];
            row.extend(t.deltas.iter().map(|d| d.map(fmt_f64).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Explain false positives and false negatives against the true positives'
/// indicator percentiles. Percentiles are computed over `dac` when the
/// records do not already carry them.
pub fn diagnose_errors(eval: &EvalReport, dac: &[DacRecord]) -> Result<ErrorDiagnostics> {
    let Some(first) = dac.first() else {
        return Err(Error::invalid("no DAC records to diagnose against"));
    };
    let names: Vec<String> = first.indicators.names.to_vec();
    let owned;
    let records: &[DacRecord] = if dac.iter().all(|r| r.indicators.percentiles.is_some()) {
        dac
    } else {
        let mut v = dac.to_vec();
        assign_percentiles(&mut v)?;
        owned = v;
        &owned
    };
    let by_tract: BTreeMap<&TractId, &DacRecord> = records.iter().map(|r| (&r.tract, r)).collect();
    let missing: Vec<&str> = eval
        .tracts
        .iter()
        .filter(|t| !by_tract.contains_key(&t.tract))
        .map(|t| t.tract.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "{} evaluated tracts have no DAC record: [{}]",
            missing.len(),
            preview(&missing)
        )));
    }
    let pct = |t: &TractId| -> Vec<Option<f64>> {
        by_tract[t]
            .indicators
            .percentiles
            .clone()
            .expect("percentiles assigned above")
    };

    let tp: Vec<Vec<Option<f64>>> = eval
        .tracts
        .iter()
        .filter(|t| t.outcome == Outcome::TruePositive)
        .map(|t| pct(&t.tract))
        .collect();
    if tp.is_empty() {
        return Err(Error::invalid(
            "no true positives: nothing to compare errors against",
        ));
    }
    let tp_medians: Vec<Option<f64>> = (0..names.len())
        .map(|k| {
            let mut v: Vec<f64> = tp.iter().filter_map(|p| p[k]).collect();
            median(&mut v)
        })
        .collect();

    let mut tracts = Vec::new();
    let mut groups = Vec::new();
    for outcome in [Outcome::FalsePositive, Outcome::FalseNegative] {
        let members: Vec<TractDiagnostic> = eval
            .tracts
            .iter()
            .filter(|t| t.outcome == outcome)
            .map(|t| {
                let percentiles = pct(&t.tract);
                let deltas = percentiles
                    .iter()
                    .zip(&tp_medians)
                    .map(|(p, m)| Some((*p)? - (*m)?))
                    .collect();
                TractDiagnostic {
                    tract: t.tract.clone(),
                    outcome,
                    percentiles,
                    deltas,
                }
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut entries: Vec<RankedIndicator> = names
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let mut d: Vec<f64> = members.iter().filter_map(|m| m.deltas[k]).collect();
                RankedIndicator {
                    indicator: n.clone(),
                    median_delta: median(&mut d),
                }
            })
            .collect();
        entries.sort_by(|a, b| match (a.median_delta, b.median_delta) {
            (Some(x), Some(y)) => y.abs().total_cmp(&x.abs()),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
        groups.push(GroupRanking {
            outcome,
            n_tracts: members.len(),
            entries,
        });
        tracts.extend(members);
    }
    Ok(ErrorDiagnostics {
        indicators: names,
        tp_medians,
        tracts,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearInference {
    pub year: u16,
    pub predictions: Vec<Prediction>,
    pub dac_count: usize,
}

/// Apply a model to standardized matrices of other years.
pub fn infer_years(
    model: &TrainedModel,
    yearly: &BTreeMap<u16, FeatureMatrix>,
    threshold: f64,
) -> Result<BTreeMap<u16, YearInference>> {
    let results: Vec<Result<YearInference>> = yearly
        .par_iter()
        .map(|(&year, m)| {
            let predictions = predict(model, m, threshold).map_err(|e| match e {
                Error::FeatureMismatch(msg) => Error::FeatureMismatch(format!("year {year}: {msg}")),
                other => other,
            })?;
            let dac_count = predictions.iter().filter(|p| p.dac).count();
            Ok(YearInference {
                year,
                predictions,
                dac_count,
            })
        })
        .collect();
    results.into_iter().map(|r| r.map(|y| (y.year, y))).collect()
}

/// Mean of each feature over tracts, weighted by `weights` when given.
/// Tracts without a weight count with weight 0.
pub fn feature_means(
    m: &FeatureMatrix,
    features: &[String],
    weights: Option<&BTreeMap<TractId, f64>>,
) -> Result<BTreeMap<String, f64>> {
    let w: Vec<f64> = match weights {
        Some(map) => m
            .tracts()
            .iter()
            .map(|t| map.get(t).copied().unwrap_or(0.0))
            .collect(),
        None => vec![1.0; m.n_rows()],
    };
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid(format!("year {}: total weight is zero", m.year)));
    }
    features
        .iter()
        .map(|f| {
            let j = m
                .feature_index(f)
                .ok_or_else(|| Error::FeatureMismatch(format!("year {}: no feature {f:?}", m.year)))?;
            let s: f64 = (0..m.n_rows()).map(|i| w[i] * m.row(i)[j]).sum();
            Ok((f.clone(), s / total))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

impl Correlation {
    pub fn code(self) -> &'static str {
        match self {
            Correlation::Pearson => "pearson",
            Correlation::Spearman => "spearman",
        }
    }

    pub fn compute(self, x: &[f64], y: &[f64]) -> Option<f64> {
        match self {
            Correlation::Pearson => pearson(x, y),
            Correlation::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
        }
    }
}

impl FromStr for Correlation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(Correlation::Pearson),
            "spearman" => Ok(Correlation::Spearman),
            _ => Err(Error::invalid(format!("unknown correlation {s:?}"))),
        }
    }
}

/// Pearson r; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendEntry {
    pub feature: String,
    pub means: Vec<f64>,
    /// Absent when either series is constant.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    pub method: Correlation,
    pub years: Vec<u16>,
    pub counts: Vec<usize>,
    pub entries: Vec<TrendEntry>,
}

/// Correlate the yearly DAC count with each selected feature's yearly mean.
pub fn correlate_trends(
    counts: &BTreeMap<u16, usize>,
    means: &BTreeMap<u16, BTreeMap<String, f64>>,
    selected: &[String],
    method: Correlation,
) -> Result<TrendReport> {
    if counts.len() < 3 {
        return Err(Error::invalid(format!(
            "trend correlation needs at least 3 years, got {}",
            counts.len()
        )));
    }
    let years: Vec<u16> = counts.keys().copied().collect();
    let count_series: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let mut entries = Vec::with_capacity(selected.len());
    for f in selected {
        let series = years
            .iter()
            .map(|y| {
                means
                    .get(y)
                    .and_then(|m| m.get(f))
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("no mean of {f:?} for year {y}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let r = method.compute(&count_series, &series);
        if r.is_none() {
            log::warn!("{f}: constant series, correlation undefined");
        }
        entries.push(TrendEntry {
            feature: f.clone(),
            means: series,
            r,
        });
    }
    Ok(TrendReport {
        method,
        years,
        counts: counts.values().copied().collect(),
        entries,
    })
}

impl TrendReport {
    /// `series,r,method,<years...>`; the first row holds the DAC counts.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["series".to_string(), "r".to_string(), "method".to_string()];
        header.extend(self.years.iter().map(|y| y.to_string()));
        w.write_record(&header)?;
        let mut row = vec!["dac_count".to_string(), String::new(), String::new()];
        row.extend(self.counts.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
        for e in &self.entries {
            let mut row = vec![
                e.feature.clone(),
                e.r.map(fmt_f64).unwrap_or_default(),
                self.method.code().to_string(),
            ];
            row.extend(e.means.iter().map(|m| fmt_f64(*m)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::IndicatorVector;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn tract(i: usize) -> TractId {
        TractId::parse(&format!("530330{i:05}")).unwrap()
    }

    fn preds(p: &[bool]) -> Vec<Prediction> {
        p.iter()
            .enumerate()
            .map(|(i, &d)| Prediction {
                tract: tract(i),
                probability: if d { 0.9 } else { 0.1 },
                dac: d,
            })
            .collect()
    }

    fn labels(l: &[bool]) -> BTreeMap<TractId, bool> {
        l.iter().enumerate().map(|(i, &d)| (tract(i), d)).collect()
    }

    #[test]
    fn textbook_confusion() {
        let c = Confusion {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 4,
        };
        assert_eq!(c.precision(), 0.75);
        assert_eq!(c.recall(), 0.6);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-4);
        assert_eq!(c.accuracy(), 0.7);
    }

    #[test]
    fn perfect_and_all_negative() {
        let l = [true, false, true, false];
        let r = evaluate(&preds(&l), &labels(&l)).unwrap();
        assert_eq!((r.f1, r.accuracy), (1.0, 1.0));
        let r = evaluate(&preds(&[false; 4]), &labels(&l)).unwrap();
        assert_eq!((r.recall, r.f1), (0.0, 0.0));
    }

    #[test]
    fn misaligned_tracts_are_reported() {
        let mut l = labels(&[true, false]);
        l.insert(tract(7), true);
        let e = evaluate(&preds(&[true, false]), &l).unwrap_err().to_string();
        assert!(e.contains("53033000007"), "{e}");
    }

    proptest! {
        #[test]
        fn evaluate_is_order_free_and_consistent(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60),
            rot in 0usize..60,
        ) {
            let p: Vec<bool> = pairs.iter().map(|x| x.0).collect();
            let l: Vec<bool> = pairs.iter().map(|x| x.1).collect();
            let mut ps = preds(&p);
            let a = evaluate(&ps, &labels(&l)).unwrap();
            let k = rot % ps.len();
            ps.rotate_left(k);
            let b = evaluate(&ps, &labels(&l)).unwrap();
            prop_assert_eq!(&a, &b);
            let c = a.confusion;
            prop_assert_eq!(c.total(), pairs.len());
            let (pr, re) = (c.tp as f64 / (c.tp + c.fp).max(1) as f64, c.tp as f64 / (c.tp + c.fn_).max(1) as f64);
            let f1 = if pr + re == 0.0 { 0.0 } else { 2.0 * pr * re / (pr + re) };
            prop_assert!((a.f1 - f1).abs() < 1e-12);
        }
    }

    fn dac_records(rows: &[(bool, [f64; 3])]) -> Vec<DacRecord> {
        let names: Arc<[String]> = vec!["low_income_fpl".into(), "lead".into(), "other".into()].into();
        rows.iter()
            .enumerate()
            .map(|(i, (d, v))| DacRecord {
                tract: tract(i),
                indicators: IndicatorVector {
                    names: names.clone(),
                    values: v.iter().map(|x| Some(*x)).collect(),
                    percentiles: None,
                },
                dac: *d,
                score: None,
            })
            .collect()
    }

    #[test]
    fn single_cause_false_negatives() {
        // FNs differ from TPs only on the first indicator
        let mut rows = Vec::new();
        for i in 0..6 {
            rows.push((true, [0.9 + i as f64 * 0.001, 0.5, 0.5]));
        }
        for i in 0..3 {
            rows.push((true, [0.1 + i as f64 * 0.001, 0.5, 0.5]));
        }
        for i in 0..6 {
            rows.push((false, [0.2, 0.3 + i as f64 * 0.01, 0.5]));
        }
        let dac = dac_records(&rows);
        let p: Vec<bool> = (0..15).map(|i| i < 6).collect();
        let l: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let eval = evaluate(&preds(&p), &labels(&l)).unwrap();
        let d = diagnose_errors(&eval, &dac).unwrap();
        let fn_group = d.group(Outcome::FalseNegative).unwrap();
        assert_eq!(fn_group.n_tracts, 3);
        assert_eq!(fn_group.entries[0].indicator, "low_income_fpl");
        assert_eq!(fn_group.entries.len(), 3);

        // rescaling raw indicators monotonically changes nothing
        let scaled: Vec<(bool, [f64; 3])> = rows
            .iter()
            .map(|(d, v)| (*d, [v[0].exp(), v[1] * 10.0 + 3.0, v[2]]))
            .collect();
        assert_eq!(diagnose_errors(&eval, &dac_records(&scaled)).unwrap(), d);
    }

    #[test]
    fn no_errors_and_no_true_positives() {
        let rows = vec![(true, [1.0, 1.0, 1.0]), (false, [0.0, 0.0, 0.0])];
        let dac = dac_records(&rows);
        let eval = evaluate(&preds(&[true, false]), &labels(&[true, false])).unwrap();
        let d = diagnose_errors(&eval, &dac).unwrap();
        assert!(d.groups.is_empty() && d.tracts.is_empty());
        let eval = evaluate(&preds(&[false, true]), &labels(&[true, false])).unwrap();
        assert!(diagnose_errors(&eval, &dac).is_err());
    }

    /// Covariance-based Pearson, written independently of [`pearson`].
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let e = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (ex, ey) = (e(x), e(y));
        let cov = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n - ex * ey;
        let var = |v: &[f64], m: f64| v.iter().map(|a| a * a).sum::<f64>() / n - m * m;
        cov / (var(x, ex) * var(y, ey)).sqrt()
    }

    #[test]
    fn correlation_examples() {
        let counts: BTreeMap<u16, usize> = (0..5).map(|i| (2013 + i, 5 - i as usize)).collect();
        let means: BTreeMap<u16, BTreeMap<String, f64>> = (0..5)
            .map(|i| {
                (
                    2013 + i,
                    BTreeMap::from([("f".to_string(), f64::from(i + 1)), ("c".to_string(), 2.0)]),
                )
            })
            .collect();
        let r = correlate_trends(&counts, &means, &["f".into(), "c".into()], Correlation::Pearson).unwrap();
        assert!((r.entries[0].r.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(r.entries[1].r, None);

        let two: BTreeMap<u16, usize> = [(2013, 1), (2014, 2)].into();
        assert!(correlate_trends(&two, &means, &["f".into()], Correlation::Pearson).is_err());
    }

    proptest! {
        #[test]
        fn pearson_matches_covariance_oracle(
            x in prop::collection::vec(-100.0f64..100.0, 5),
            y in prop::collection::vec(-100.0f64..100.0, 5),
        ) {
            if let Some(r) = pearson(&x, &y) {
                prop_assert!((r - pearson_oracle(&x, &y)).abs() < 1e-9);
            }
        }

        #[test]
        fn pearson_affine_invariance(
            x in prop::collection::vec(-10.0f64..10.0, 5),
            y in prop::collection::vec(-10.0f64..10.0, 5),
            a in 0.5f64..5.0,
            b in -5.0f64..5.0,
        ) {
            if let Some(r) = pearson(&x, &y) {
                let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
                prop_assert!((pearson(&xs, &y).unwrap() - r).abs() < 1e-9);
                prop_assert!((pearson(&xn, &y).unwrap() + r).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pearson_random_series_matches_to_1e12() {
        use rand::Rng;
        let mut rng = crate::seed::rng(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..10.0)).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..10.0)).collect();
            assert!((pearson(&x, &y).unwrap() - pearson_oracle(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let r = Correlation::Spearman
            .compute(&[1.0, 2.0, 3.0], &[1.0, 8.0, 27.0])
            .unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }
}
