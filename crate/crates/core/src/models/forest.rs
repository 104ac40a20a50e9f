//! Bagged forests: DRF with exhaustive thresholds, XRT with random ones.

use rand::Rng;
use rayon::prelude::*;

use super::tree::{grow, sample_features, sample_rows, Columns, GrowParams, SplitSampling, ThresholdRule};
use super::{EnsembleKind, Family, ModelSpec, TreeEnsemble};
use crate::seed;

pub(crate) fn train(spec: &ModelSpec, cols: &Columns, y: &[f64]) -> TreeEnsemble {
    let n = cols.n;
    let p = cols.p();
    let mtries = match spec.int("mtries") {
        -1 => ((p as f64).sqrt().floor() as usize).max(1),
        m => (m as usize).min(p),
    };
    let params = GrowParams {
        max_depth: spec.int("max_depth") as usize,
        min_rows: spec.f64("min_rows"),
        min_split_improvement: spec.f64("min_split_improvement"),
        sampling: SplitSampling::Count {
            mtries,
            change: spec.f64("col_sample_rate_change_per_level"),
        },
        rule: if spec.family == Family::Xrt {
            ThresholdRule::Random
        } else {
            ThresholdRule::Best
        },
    };
    let bootstrap = spec.flag("bootstrap");
    let rate = spec.f64("sample_rate");
    let leaf = |rows: &[usize]| rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len().max(1) as f64;

    let trees = (0..spec.int("ntrees") as u64)
        .into_par_iter()
        .map(|t| {
            // each tree owns its stream, so the forest is independent of
            // thread scheduling
            let mut rng = seed::rng(seed::derive(spec.seed, t));
            let rows = if bootstrap {
                let k = ((rate * n as f64).round() as usize).max(1);
                let mut v: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
                v.sort_unstable();
                v
            } else {
                sample_rows(n, rate, &mut rng)
            };
            let features = sample_features(p, spec.f64("col_sample_rate_per_tree"), &mut rng);
            grow(cols, y, rows, &features, params, &leaf, &mut rng)
        })
        .collect();
    TreeEnsemble {
        kind: EnsembleKind::Averaged,
        base: y.iter().sum::<f64>() / n as f64,
        trees,
    }
}
