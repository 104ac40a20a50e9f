//! National percentile ranks, DAC scores, and indicator separation.

use std::io::Write;

use rayon::prelude::*;

use crate::domain::{DacRecord, IndicatorVector};
use crate::error::{Error, Result};

/// Mid-rank percentile of each present value.
///
/// For a present value `v` among `N` present values:
/// `100 * (below(v) + 0.5 * (ties(v) - 1)) / N`, where `ties` counts `v`
/// itself. Absent inputs map to absent outputs.
pub fn percentile_rank(values: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::invalid("no present values to rank"));
    }
    if let Some(bad) = present.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("cannot rank non-finite value {bad}")));
    }
    present.sort_by(f64::total_cmp);
    let n = present.len() as f64;
    let pct = |v: f64| {
        let below = present.partition_point(|&x| x < v);
        let upto = present.partition_point(|&x| x <= v);
        let ties = (upto - below) as f64;
        100.0 * (below as f64 + 0.5 * (ties - 1.0)) / n
    };
    Ok(values.iter().map(|v| v.map(pct)).collect())
}

/// Fill every record's percentile vector, one indicator column at a time.
pub fn assign_percentiles(records: &mut [DacRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    let names = first.indicators.names.clone();
    let columns: Vec<Vec<Option<f64>>> = (0..names.len())
        .into_par_iter()
        .map(|j| {
            let col: Vec<Option<f64>> = records.iter().map(|r| r.indicators.values[j]).collect();
            percentile_rank(&col).map_err(|e| Error::invalid(format!("indicator {}: {e}", names[j])))
        })
        .collect::<Result<_>>()?;
    for (i, r) in records.iter_mut().enumerate() {
        r.indicators.percentiles = Some(columns.iter().map(|c| c[i]).collect());
    }
    Ok(())
}

/// Sum of all indicator percentiles.
pub fn dac_score(indicators: &IndicatorVector) -> Result<f64> {
    let pcts = indicators
        .percentiles
        .as_ref()
        .ok_or_else(|| Error::invalid("indicator vector has no percentiles"))?;
    let missing: Vec<&str> = indicators
        .names
        .iter()
        .zip(pcts)
        .filter(|(_, p)| p.is_none())
        .map(|(n, _)| n.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "missing percentiles: {}",
            missing.join(", ")
        )));
    }
    Ok(pcts.iter().flatten().sum())
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationEntry {
    pub indicator: String,
    pub median_dac: Option<f64>,
    pub median_nondac: Option<f64>,
    pub separation: f64,
}

/// Indicators ordered by how well they separate DACs from non-DACs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    /// One entry per indicator, in manifest order.
    pub entries: Vec<SeparationEntry>,
    /// Indices into `entries`, best separator first.
    pub ranking: Vec<usize>,
}

impl SeparationReport {
    pub fn top(&self, k: usize) -> impl Iterator<Item = &SeparationEntry> {
        self.ranking.iter().take(k).map(|&i| &self.entries[i])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["indicator", "median_dac", "median_nondac", "separation", "rank"])?;
        for (rank, &i) in self.ranking.iter().enumerate() {
            let e = &self.entries[i];
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                e.indicator.clone(),
                opt(e.median_dac),
                opt(e.median_nondac),
                e.separation.to_string(),
                (rank + 1).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rank indicators by `|median pct (DAC) - median pct (non-DAC)|`, ties in
/// manifest order. Records must carry percentiles.
pub fn rank_separation(dataset: &[DacRecord]) -> Result<SeparationReport> {
    let n_dac = dataset.iter().filter(|r| r.dac).count();
    if n_dac == 0 || n_dac == dataset.len() {
        return Err(Error::invalid("separation needs both DAC and non-DAC tracts"));
    }
    let names = dataset[0].indicators.names.clone();
    let pcts: Vec<&Vec<Option<f64>>> = dataset
        .iter()
        .map(|r| {
            r.indicators
                .percentiles
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("tract {} has no percentiles", r.tract)))
        })
        .collect::<Result<_>>()?;
    let entries: Vec<SeparationEntry> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut dac = Vec::new();
            let mut non = Vec::new();
            for (r, p) in dataset.iter().zip(&pcts) {
                if let Some(v) = p[j] {
                    if r.dac {
                        dac.push(v)
                    } else {
                        non.push(v)
                    }
                }
            }
            let md = median(&mut dac);
            let mn = median(&mut non);
            let separation = match (md, mn) {
                (Some(a), Some(b)) => (a - b).abs(),
                _ => 0.0,
            };
            SeparationEntry {
                indicator: name.clone(),
                median_dac: md,
                median_nondac: mn,
                separation,
            }
        })
        .collect();
    let mut ranking: Vec<usize> = (0..entries.len()).collect();
    // stable: equal separations keep manifest order
    ranking.sort_by(|&a, &b| entries[b].separation.total_cmp(&entries[a].separation));
    Ok(SeparationReport { entries, ranking })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{IndicatorManifest, TractId, INDICATOR_COUNT};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// O(n^2) counting oracle.
    fn oracle(values: &[Option<f64>]) -> Vec<Option<f64>> {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let n = present.len() as f64;
        values
            .iter()
            .map(|v| {
                v.map(|v| {
                    let below = present.iter().filter(|&&x| x < v).count() as f64;
                    let ties = present.iter().filter(|&&x| x == v).count() as f64;
                    100.0 * (below + 0.5 * (ties - 1.0)) / n
                })
            })
            .collect()
    }

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    #[test]
    fn distinct_values() {
        assert_eq!(
            percentile_rank(&some(&[10.0, 20.0, 30.0, 40.0])).unwrap(),
            some(&[0.0, 25.0, 50.0, 75.0])
        );
    }

    #[test]
    fn all_ties() {
        assert_eq!(percentile_rank(&some(&[5.0; 4])).unwrap(), some(&[37.5; 4]));
    }

    #[test]
    fn absent_stays_absent() {
        let out = percentile_rank(&[Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!(out, vec![Some(0.0), None, Some(50.0)]);
        assert!(percentile_rank(&[None, None]).is_err());
    }

    #[test]
    fn random_vector_matches_counting_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let v: Vec<Option<f64>> = (0..1000)
            .map(|_| Some(rng.random_range(0..200) as f64 / 4.0))
            .collect();
        assert_eq!(percentile_rank(&v).unwrap(), oracle(&v));
    }

    fn record(tract: &str, dac: bool, values: Vec<f64>, manifest: &IndicatorManifest) -> DacRecord {
        DacRecord {
            tract: TractId::parse(tract).unwrap(),
            indicators: IndicatorVector {
                names: manifest.shared_names(),
                values: values.into_iter().map(Some).collect(),
                percentiles: None,
            },
            dac,
            score: None,
        }
    }

    #[test]
    fn scores() {
        let m = IndicatorManifest::bundled();
        let mut r = record("53033000100", true, vec![0.0; INDICATOR_COUNT], &m);
        r.indicators.percentiles = Some(vec![Some(0.0); INDICATOR_COUNT]);
        assert_eq!(dac_score(&r.indicators).unwrap(), 0.0);
        r.indicators.percentiles = Some(vec![Some(50.0); INDICATOR_COUNT]);
        assert_eq!(dac_score(&r.indicators).unwrap(), 1800.0);
        r.indicators.percentiles.as_mut().unwrap()[4] = None;
        let err = dac_score(&r.indicators).unwrap_err().to_string();
        assert!(err.contains(&m.names()[4]));
    }

    #[test]
    fn random_score_matches_summation() {
        let m = IndicatorManifest::bundled();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pcts: Vec<f64> = (0..INDICATOR_COUNT)
            .map(|_| rng.random_range(0.0..100.0))
            .collect();
        let mut r = record("53033000100", true, vec![0.0; INDICATOR_COUNT], &m);
        r.indicators.percentiles = Some(pcts.iter().copied().map(Some).collect());
        let mut oracle = 0.0;
        for p in &pcts {
            oracle += p;
        }
        assert!((dac_score(&r.indicators).unwrap() - oracle).abs() < 1e-9);
    }

    fn corpus(perfect: usize) -> Vec<DacRecord> {
        let m = IndicatorManifest::bundled();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut out: Vec<DacRecord> = (0..200)
            .map(|i| {
                let dac = i % 5 == 0;
                let mut v: Vec<f64> = (0..INDICATOR_COUNT).map(|_| rng.random::<f64>()).collect();
                v[perfect] = if dac { 1.0 } else { 0.0 };
                record(&format!("530330{:05}", i), dac, v, &m)
            })
            .collect();
        assign_percentiles(&mut out).unwrap();
        out
    }

    #[test]
    fn perfect_separator_ranks_first() {
        let rep = rank_separation(&corpus(7)).unwrap();
        assert_eq!(rep.ranking[0], 7);
        let mut sorted = rep.ranking.clone();
        sorted.sort();
        assert_eq!(sorted, (0..INDICATOR_COUNT).collect::<Vec<_>>());
    }

    #[test]
    fn identical_indicators_keep_manifest_order() {
        let m = IndicatorManifest::bundled();
        let mut recs: Vec<DacRecord> = (0..10)
            .map(|i| record(&format!("530330{:05}", i), i < 3, vec![1.0; INDICATOR_COUNT], &m))
            .collect();
        assign_percentiles(&mut recs).unwrap();
        let rep = rank_separation(&recs).unwrap();
        assert!(rep.entries.iter().all(|e| e.separation == 0.0));
        assert_eq!(rep.ranking, (0..INDICATOR_COUNT).collect::<Vec<_>>());
    }

    #[test]
    fn single_class_is_error() {
        let m = IndicatorManifest::bundled();
        let recs = vec![record("53033000100", true, vec![1.0; INDICATOR_COUNT], &m)];
        assert!(rank_separation(&recs).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_tie_consistent(v in proptest::collection::vec(-50i32..50, 1..80)) {
            let vals: Vec<Option<f64>> = v.iter().map(|&x| Some(x as f64)).collect();
            let p = percentile_rank(&vals).unwrap();
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] < v[j] { prop_assert!(p[i] < p[j]); }
                    if v[i] == v[j] { prop_assert_eq!(p[i], p[j]); }
                }
            }
        }

        #[test]
        fn tie_free_sum(n in 1usize..200) {
            let vals: Vec<Option<f64>> = (0..n).map(|i| Some((i * 7 % n) as f64)).collect();
            let distinct: std::collections::HashSet<i64> = vals.iter().map(|v| v.unwrap() as i64).collect();
            prop_assume!(distinct.len() == n);
            let sum: f64 = percentile_rank(&vals).unwrap().into_iter().flatten().sum();
            let expected = 100.0 * (n as f64 * (n as f64 - 1.0) / 2.0) / n as f64;
            prop_assert!((sum - expected).abs() < 1e-9 * n as f64);
        }

        #[test]
        fn separation_invariant_to_monotone_rescaling(scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let base = corpus(2);
            let mut scaled = base.clone();
            for r in &mut scaled {
                for v in r.indicators.values.iter_mut().flatten() {
                    *v = (*v * scale + shift).exp();
                }
            }
            assign_percentiles(&mut scaled).unwrap();
            prop_assert_eq!(rank_separation(&base).unwrap(), rank_separation(&scaled).unwrap());
        }
    }
}
