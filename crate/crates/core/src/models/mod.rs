//! Training, prediction and feature importance for the six model families.
//!
//! Models train on standardized matrices. A [`TrainedModel`] carries the
//! standardization statistics it was fitted with so raw matrices can be
//! scored with [`TrainedModel::predict_raw`].

mod boosting;
mod forest;
mod glm;
pub mod io;
mod mlp;
pub mod spec;
pub mod tree;

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

pub use spec::{fmt_f64, param_defs, Family, ModelSpec, ParamDef, ParamKind, ParamValue};
pub use tree::{Node, Tree};

use crate::domain::TractId;
use crate::error::{Error, Result};
use crate::features::{check_names, FeatureMatrix, SplitConfig, StandardizationStats, Variant};
use crate::seed;

/// Default decision threshold on P(DAC).
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_loss(y: f64, p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    /// `sigmoid(base + sum of trees)`.
    Boosted,
    /// Mean of tree outputs; `base` when there are no trees.
    Averaged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub kind: EnsembleKind,
    pub base: f64,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.kind {
            EnsembleKind::Boosted => {
                sigmoid(self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
            }
            EnsembleKind::Averaged if self.trees.is_empty() => self.base,
            EnsembleKind::Averaged => {
                let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
                (s / self.trees.len() as f64).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Trees(TreeEnsemble),
    Linear(LinearModel),
    Network(Network),
}

/// Facts recorded at training time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMeta {
    pub variant: Option<Variant>,
    pub year: Option<u16>,
    pub split: Option<SplitConfig>,
    pub n_train: usize,
    pub n_positive: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Training loss at each stage (trees, IRLS iterations or epochs).
    pub loss_curve: Vec<f64>,
    /// Wall-clock training time; not persisted.
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub features: Vec<String>,
    pub stats: StandardizationStats,
    pub params: ModelParams,
    pub meta: TrainingMeta,
}

/// One tract's prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub tract: TractId,
    pub probability: f64,
    pub dac: bool,
}

fn oversample_minority(m: &FeatureMatrix, labels: &[bool], seed: u64) -> FeatureMatrix {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let (minority, majority) = if pos.len() < neg.len() {
        (pos, neg.len())
    } else {
        (neg, pos.len())
    };
    let deficit = majority - minority.len();
    if minority.is_empty() || deficit == 0 {
        return m.clone();
    }
    let mut rng = seed::rng(seed::derive(seed, 0xBA1A));
    let mut rows: Vec<usize> = (0..labels.len()).collect();
    rows.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
    m.select_rows(&rows)
}

/// Train `spec` on a standardized, labeled matrix.
pub fn train(spec: &ModelSpec, train: &FeatureMatrix) -> Result<TrainedModel> {
    spec.validate()?;
    let labels = train.require_labels("training")?;
    if train.n_rows() == 0 {
        return Err(Error::Training("empty training set".into()));
    }
    let n_positive = labels.iter().filter(|&&l| l).count();
    if n_positive == 0 || n_positive == labels.len() {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    if train.n_features() == 0 {
        return Err(Error::Training("no features".into()));
    }
    if spec.family.is_tree() && spec.f64("min_rows") > train.n_rows() as f64 {
        return Err(Error::Training(format!(
            "min_rows {} exceeds the {} training rows",
            spec.f64("min_rows"),
            train.n_rows()
        )));
    }
    let start = Instant::now();
    let data = if spec.flag("balance_classes") {
        oversample_minority(train, labels, spec.seed)
    } else {
        train.clone()
    };
    let y: Vec<f64> = data
        .labels()
        .expect("labels checked above")
        .iter()
        .map(|&l| f64::from(u8::from(l)))
        .collect();

    let mut warnings = Vec::new();
    let (params, loss_curve, converged) = match spec.family {
        Family::Gbm | Family::XGBoost => {
            let b = boosting::train(spec, &tree::Columns::from_matrix(&data), &y);
            (ModelParams::Trees(b.ensemble), b.loss_curve, true)
        }
        Family::Drf | Family::Xrt => {
            let e = forest::train(spec, &tree::Columns::from_matrix(&data), &y);
            (ModelParams::Trees(e), Vec::new(), true)
        }
        Family::Glm => {
            let fit = glm::train(
                &tree::Columns::from_matrix(&data),
                &y,
                glm::GlmParams {
                    alpha: spec.f64("alpha"),
                    lambda: spec.f64("lambda"),
                    max_iterations: spec.int("max_iterations") as usize,
                    tolerance: spec.f64("beta_epsilon"),
                },
            );
            if !fit.converged {
                warnings.push(format!(
                    "GLM did not converge in {} iterations",
                    spec.int("max_iterations")
                ));
            }
            (ModelParams::Linear(fit.model), fit.loss_curve, fit.converged)
        }
        Family::DeepLearning => {
            let hidden: Vec<usize> = spec.int_list("hidden").iter().map(|&h| h as usize).collect();
            // a single ratio applies to every hidden layer
            let hidden_dropout = match spec.float_list("hidden_dropout_ratios") {
                Some(d) if d.len() == 1 => vec![d[0]; hidden.len()],
                Some(d) => d,
                None => vec![0.0; hidden.len()],
            };
            // an epsilon printed as 0.0 is a rounded small value
            let eps = spec.f64("epsilon");
            let p = mlp::MlpParams {
                hidden,
                input_dropout: spec.f64("input_dropout_ratio"),
                hidden_dropout,
                rho: spec.f64("rho"),
                epsilon: if eps == 0.0 { 1e-8 } else { eps },
                epochs: spec.int("epochs") as usize,
            };
            let xs: Vec<Vec<f64>> = (0..data.n_rows()).map(|i| data.row(i).to_vec()).collect();
            let fit = mlp::train(&xs, &y, &p, &mut seed::rng(spec.seed));
            (ModelParams::Network(fit.network), fit.loss_curve, true)
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let bad = match &params {
        ModelParams::Linear(l) => !l.intercept.is_finite() || l.coefficients.iter().any(|c| !c.is_finite()),
        ModelParams::Network(n) => n
            .layers
            .iter()
            .any(|l| l.weights.iter().chain(&l.biases).any(|v| !v.is_finite())),
        ModelParams::Trees(_) => false,
    };
    if bad {
        return Err(Error::Training(format!(
            "{} produced non-finite parameters",
            spec.family
        )));
    }
    Ok(TrainedModel {
        spec: spec.clone(),
        features: train.names().to_vec(),
        stats: StandardizationStats::identity(train.names()),
        params,
        meta: TrainingMeta {
            variant: Some(train.variant),
            year: Some(train.year),
            split: None,
            n_train: train.n_rows(),
            n_positive,
            converged,
            warnings,
            loss_curve,
            duration_secs: start.elapsed().as_secs_f64(),
        },
    })
}

impl TrainedModel {
    /// Attach the statistics the training matrix was standardized with.
    pub fn with_stats(mut self, stats: StandardizationStats) -> Result<Self> {
        check_names(&self.features, &stats.names)?;
        self.stats = stats;
        Ok(self)
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Trees(e) => e.predict(x),
            ModelParams::Linear(l) => {
                sigmoid(l.intercept + l.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
            }
            ModelParams::Network(n) => n.forward(x),
        }
    }

    /// P(DAC) for each row of a standardized matrix.
    pub fn predict_proba(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        check_names(&self.features, m.names())?;
        Ok((0..m.n_rows()).map(|i| self.predict_row(m.row(i))).collect())
    }

    /// Standardize a raw matrix with the training statistics.
    pub fn standardize(&self, raw: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.stats.apply(raw)
    }

    /// P(DAC) for each row of an unstandardized matrix.
    pub fn predict_raw(&self, raw: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_proba(&self.standardize(raw)?)
    }

    pub fn feature_importance(&self) -> ImportanceReport {
        let p = self.features.len();
        let (method, raw) = match &self.params {
            ModelParams::Trees(e) => {
                let mut imp = vec![0.0; p];
                for t in &e.trees {
                    t.accumulate_gain(&mut imp);
                }
                (ImportanceMethod::RelativeInfluence, imp)
            }
            ModelParams::Linear(l) => (
                ImportanceMethod::CoefficientMagnitude,
                l.coefficients.iter().map(|c| c.abs()).collect(),
            ),
            ModelParams::Network(n) => (ImportanceMethod::Gedeon, mlp::gedeon(n)),
        };
        ImportanceReport::new(method, &self.features, raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ImportanceMethod {
    /// Summed squared-error improvement of every split on the feature.
    RelativeInfluence,
    /// |coefficient| on standardized inputs.
    CoefficientMagnitude,
    /// Weight-share aggregation through the first two layers.
    Gedeon,
}

impl ImportanceMethod {
    pub fn tag(self) -> &'static str {
        match self {
            ImportanceMethod::RelativeInfluence => "relative_influence",
            ImportanceMethod::CoefficientMagnitude => "coefficient_magnitude",
            ImportanceMethod::Gedeon => "gedeon",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub raw: f64,
    /// `raw / max(raw)`, or 0 when every raw value is 0.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub method: ImportanceMethod,
    /// One entry per model feature, in feature order.
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn new(method: ImportanceMethod, features: &[String], raw: Vec<f64>) -> Self {
        let max = raw.iter().cloned().fold(0.0, f64::max);
        let entries = features
            .iter()
            .zip(raw)
            .map(|(f, r)| ImportanceEntry {
                feature: f.clone(),
                raw: r,
                relative: if max > 0.0 { r / max } else { 0.0 },
            })
            .collect();
        Self { method, entries }
    }

    /// Entries by descending importance; ties keep feature order.
    pub fn ranked(&self) -> Vec<&ImportanceEntry> {
        let mut v: Vec<&ImportanceEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.raw.total_cmp(&a.raw));
        v
    }

    pub fn top(&self, k: usize) -> Vec<String> {
        self.ranked()
            .into_iter()
            .take(k)
            .map(|e| e.feature.clone())
            .collect()
    }

    pub fn relative(&self, feature: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.feature == feature)
            .map(|e| e.relative)
    }

    /// `rank,feature,raw,relative,method`, ranked.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "feature", "raw", "relative", "method"])?;
        for (i, e) in self.ranked().into_iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                e.feature.clone(),
                fmt_f64(e.raw),
                fmt_f64(e.relative),
                self.method.tag().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Predict every tract of a standardized matrix.
pub fn predict(model: &TrainedModel, m: &FeatureMatrix, threshold: f64) -> Result<Vec<Prediction>> {
    let probs = model.predict_proba(m)?;
    Ok(m.tracts()
        .iter()
        .zip(probs)
        .map(|(t, p)| Prediction {
            tract: t.clone(),
            probability: p,
            dac: p >= threshold,
        })
        .collect())
}
