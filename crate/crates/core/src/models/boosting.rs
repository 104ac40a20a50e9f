//! Gradient boosting for the GBM and XGBoost families.

use super::tree::{grow, sample_features, sample_rows, Columns, GrowParams, SplitSampling, ThresholdRule};
use super::{log_loss, sigmoid, EnsembleKind, Family, ModelSpec, TreeEnsemble};
use crate::seed;

pub(crate) struct Boosted {
    pub ensemble: TreeEnsemble,
    /// Training log-loss after each stage, starting with the prior.
    pub loss_curve: Vec<f64>,
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    g.signum() * (g.abs() - alpha).max(0.0)
}

pub(crate) fn train(spec: &ModelSpec, cols: &Columns, y: &[f64]) -> Boosted {
    let n = cols.n;
    let p_bar = (y.iter().sum::<f64>() / n as f64).clamp(1e-15, 1.0 - 1e-15);
    let init = (p_bar / (1.0 - p_bar)).ln();
    let mut f = vec![init; n];

    let lr = spec.f64("learn_rate");
    let xgb = spec.family == Family::XGBoost;
    let (alpha, lambda) = if xgb {
        (spec.f64("reg_alpha"), spec.f64("reg_lambda"))
    } else {
        (0.0, 0.0)
    };
    let params = GrowParams {
        max_depth: spec.int("max_depth") as usize,
        min_rows: spec.f64("min_rows"),
        min_split_improvement: spec.f64("min_split_improvement"),
        sampling: SplitSampling::Rate {
            rate: spec.f64("col_sample_rate"),
            change: spec.f64("col_sample_rate_change_per_level"),
        },
        rule: ThresholdRule::Best,
    };
    let mut rng = seed::rng(spec.seed);
    let mut trees = Vec::new();
    let mut loss_curve = vec![mean_loss(y, &f)];
    let mut r = vec![0.0; n];
    let mut h = vec![0.0; n];

    for _ in 0..spec.int("ntrees") {
        for i in 0..n {
            let p = sigmoid(f[i]);
            r[i] = y[i] - p;
            h[i] = p * (1.0 - p);
        }
        let rows = sample_rows(n, spec.f64("sample_rate"), &mut rng);
        let features = sample_features(cols.p(), spec.f64("col_sample_rate_per_tree"), &mut rng);
        let leaf = |rows: &[usize]| {
            let g: f64 = rows.iter().map(|&i| r[i]).sum();
            let hs: f64 = rows.iter().map(|&i| h[i]).sum();
            let step = if xgb {
                soft_threshold(g, alpha) / (hs + lambda).max(1e-12)
            } else {
                g / hs.max(1e-12)
            };
            lr * step
        };
        let tree = grow(cols, &r, rows, &features, params, &leaf, &mut rng);
        let mut x = vec![0.0; cols.p()];
        for (i, fi) in f.iter_mut().enumerate() {
            for (j, c) in cols.cols.iter().enumerate() {
                x[j] = c[i];
            }
            *fi += tree.predict(&x);
        }
        trees.push(tree);
        loss_curve.push(mean_loss(y, &f));
    }
    Boosted {
        ensemble: TreeEnsemble {
            kind: EnsembleKind::Boosted,
            base: init,
            trees,
        },
        loss_curve,
    }
}

fn mean_loss(y: &[f64], f: &[f64]) -> f64 {
    y.iter()
        .zip(f)
        .map(|(&yi, &fi)| log_loss(yi, sigmoid(fi)))
        .sum::<f64>()
        / y.len() as f64
}
