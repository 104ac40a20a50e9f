//! Budgeted grid search over model families and feature variants.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::Confusion;
use crate::error::{Error, Result};
use crate::features::{split, standardize, FeatureMatrix, SplitConfig, StandardizationStats, Variant};
use crate::models::{self, fmt_f64, param_defs, Family, ModelSpec, ParamValue, TrainedModel};
use crate::seed;

const BUNDLED_GRID: &str = include_str!("../data/default_grid.txt");

pub const DEFAULT_BUDGET: usize = 30;

/// Candidate values per hyperparameter for each family, plus a budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    /// Parameters in name order; the last one varies fastest.
    pub grids: BTreeMap<Family, Vec<(String, Vec<ParamValue>)>>,
    pub budget: usize,
    /// Fixed per-family budgets; the rest is shared evenly.
    pub family_budgets: BTreeMap<Family, usize>,
}

/// Split at commas outside brackets.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out.into_iter().filter(|x| !x.is_empty()).collect()
}

impl SearchSpace {
    /// Parse `family.parameter = v1, v2, ...` lines. `budget = N` sets the
    /// total and `family.budget = N` fixes one family's share.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grids: BTreeMap<Family, BTreeMap<String, Vec<ParamValue>>> = BTreeMap::new();
        let mut budget = DEFAULT_BUDGET;
        let mut family_budgets = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::row(n as u64 + 1, msg);
            let (key, values) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = values, got {line:?}")))?;
            let (key, values) = (key.trim(), values.trim());
            if key == "budget" {
                budget = values
                    .parse()
                    .map_err(|_| bad(format!("bad budget {values:?}")))?;
                continue;
            }
            let (fam, param) = key
                .split_once('.')
                .ok_or_else(|| bad(format!("expected family.parameter, got {key:?}")))?;
            let family: Family = fam.parse().map_err(|e: Error| bad(e.to_string()))?;
            if param == "budget" {
                let b = values
                    .parse()
                    .map_err(|_| bad(format!("bad budget {values:?}")))?;
                family_budgets.insert(family, b);
                continue;
            }
            let kind = models::spec::param_kind(family, param)
                .ok_or_else(|| bad(format!("{family} has no hyperparameter {param:?}")))?;
            let mut list: Vec<ParamValue> = Vec::new();
            for v in split_top_level(values) {
                let pv = ParamValue::parse(kind, v).map_err(|e| bad(e.to_string()))?;
                if !list.contains(&pv) {
                    list.push(pv);
                }
            }
            if list.is_empty() {
                return Err(bad(format!("{family}.{param} has no candidates")));
            }
            grids.entry(family).or_default().insert(param.to_string(), list);
        }
        let space = Self {
            grids: grids
                .into_iter()
                .map(|(f, m)| (f, m.into_iter().collect()))
                .collect(),
            budget,
            family_budgets,
        };
        space.allocation()?;
        Ok(space)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_GRID).expect("bundled grid is valid")
    }

    pub fn families(&self) -> Vec<Family> {
        self.grids.keys().copied().collect()
    }

    /// Keep only `families`.
    pub fn restrict(mut self, families: &[Family]) -> Result<Self> {
        self.grids.retain(|f, _| families.contains(f));
        self.family_budgets.retain(|f, _| families.contains(f));
        for f in families {
            if !self.grids.contains_key(f) {
                self.grids.insert(*f, Vec::new());
            }
        }
        self.allocation()?;
        Ok(self)
    }

    pub fn with_budget(mut self, budget: usize) -> Result<Self> {
        self.budget = budget;
        self.allocation()?;
        Ok(self)
    }

    /// Number of distinct specs in a family's grid.
    pub fn grid_size(&self, family: Family) -> u64 {
        self.grids.get(&family).map_or(0, |g| {
            g.iter()
                .try_fold(1u64, |acc, (_, v)| acc.checked_mul(v.len() as u64))
                .unwrap_or(u64::MAX)
        })
    }

    /// Specs per family: fixed shares first, then the remainder split
    /// evenly with leftovers going to earlier families, each capped at its
    /// grid size.
    pub fn allocation(&self) -> Result<Vec<(Family, usize)>> {
        let families = self.families();
        if families.is_empty() {
            return Err(Error::invalid("search space has no families"));
        }
        if self.budget < families.len() {
            return Err(Error::invalid(format!(
                "budget {} is below the family count {}",
                self.budget,
                families.len()
            )));
        }
        let fixed: usize = self.family_budgets.values().sum();
        if fixed > self.budget {
            return Err(Error::invalid("per-family budgets exceed the total budget"));
        }
        let shared: Vec<Family> = families
            .iter()
            .copied()
            .filter(|f| !self.family_budgets.contains_key(f))
            .collect();
        let rest = self.budget - fixed;
        let (base, extra) = if shared.is_empty() {
            (0, 0)
        } else {
            (rest / shared.len(), rest % shared.len())
        };
        Ok(families
            .iter()
            .map(|&f| {
                let want = match self.family_budgets.get(&f) {
                    Some(&b) => b,
                    None => {
                        let pos = shared.iter().position(|&s| s == f).expect("shared family");
                        base + usize::from(pos < extra)
                    }
                };
                (f, (want as u64).min(self.grid_size(f)) as usize)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    /// Position in the enumeration; also keys the spec seed.
    pub index: usize,
    pub spec: ModelSpec,
}

/// Deterministic per-family samples without replacement from each grid,
/// listed in family order and, within a family, in lexicographic grid order.
pub fn enumerate_candidates(space: &SearchSpace, search_seed: u64) -> Result<Vec<Candidate>> {
    let mut rng = seed::rng_for(search_seed, seed::stream::CANDIDATES);
    let spec_base = seed::derive(search_seed, seed::stream::SPEC);
    let mut out = Vec::new();
    for (family, k) in space.allocation()? {
        let grid = &space.grids[&family];
        let n = space.grid_size(family);
        let picks: Vec<u64> = if k as u64 >= n {
            (0..n).collect()
        } else {
            let len = usize::try_from(n)
                .map_err(|_| Error::invalid(format!("{family} grid is too large to sample")))?;
            let mut v: Vec<u64> = index::sample(&mut rng, len, k)
                .into_iter()
                .map(|i| i as u64)
                .collect();
            v.sort_unstable();
            v
        };
        for mut code in picks {
            let mut spec = ModelSpec::new(family, 0);
            for (name, values) in grid.iter().rev() {
                let len = values.len() as u64;
                spec.set(name, values[(code % len) as usize].clone())?;
                code /= len;
            }
            let index = out.len();
            spec.seed = seed::derive(spec_base, index as u64);
            out.push(Candidate { index, spec });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    pub index: usize,
    pub spec: ModelSpec,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
    /// Wall-clock seconds; kept out of CSV output.
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leaderboard {
    pub variant: Variant,
    pub seed: u64,
    /// F1 descending, then accuracy, then enumeration index; failures last.
    pub entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn best(&self) -> Option<&LeaderboardEntry> {
        self.entries.first().filter(|e| e.f1.is_some())
    }

    pub fn best_for(&self, family: Family) -> Option<&LeaderboardEntry> {
        self.entries
            .iter()
            .find(|e| e.spec.family == family && e.f1.is_some())
    }
}

fn rank(entries: &mut [LeaderboardEntry]) {
    entries.sort_by(|a, b| match (a.f1, b.f1) {
        (Some(x), Some(y)) => y
            .total_cmp(&x)
            .then(b.accuracy.unwrap_or(0.0).total_cmp(&a.accuracy.unwrap_or(0.0)))
            .then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
}

/// Thread pool with `workers` threads; 0 means one per core.
pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Train every candidate on `train` and score it on `test`. Failed
/// candidates stay on the board without a score.
pub fn run_search(
    candidates: &[Candidate],
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    threshold: f64,
    search_seed: u64,
) -> Result<Leaderboard> {
    let test_labels = test.require_labels("scoring")?;
    let mut entries: Vec<LeaderboardEntry> = candidates
        .par_iter()
        .map(|c| {
            let start = Instant::now();
            let scored = models::train(&c.spec, train).and_then(|m| {
                let p = m.predict_proba(test)?;
                Ok(Confusion::from_pairs(
                    p.iter().map(|&x| x >= threshold).zip(test_labels.iter().copied()),
                ))
            });
            let (f1, accuracy, error) = match scored {
                Ok(c) => (Some(c.f1()), Some(c.accuracy()), None),
                Err(e) => {
                    log::warn!("candidate {} ({}) failed: {e}", c.index, c.spec.family);
                    (None, None, Some(e.to_string()))
                }
            };
            LeaderboardEntry {
                index: c.index,
                spec: c.spec.clone(),
                f1,
                accuracy,
                error,
                duration_secs: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    if !entries.is_empty() && entries.iter().all(|e| e.f1.is_none()) {
        let causes: Vec<String> = entries
            .iter()
            .map(|e| {
                format!(
                    "#{} {}: {}",
                    e.index,
                    e.spec.family,
                    e.error.as_deref().unwrap_or("")
                )
            })
            .collect();
        return Err(Error::Training(format!(
            "every candidate failed: {}",
            causes.join("; ")
        )));
    }
    rank(&mut entries);
    Ok(Leaderboard {
        variant: train.variant,
        seed: search_seed,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutomlConfig {
    pub split: SplitConfig,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for AutomlConfig {
    fn default() -> Self {
        Self {
            split: SplitConfig::default(),
            seed: 0,
            threshold: models::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub leaderboard: Leaderboard,
    pub stats: StandardizationStats,
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
}

impl VariantResult {
    /// Retrain the leaderboard head from its recorded spec.
    pub fn retrain_best(&self, split_cfg: SplitConfig) -> Result<TrainedModel> {
        let best = self
            .leaderboard
            .best()
            .ok_or_else(|| Error::Training("no successful candidate".into()))?;
        let mut model = models::train(&best.spec, &self.train)?.with_stats(self.stats.clone())?;
        model.meta.split = Some(split_cfg);
        Ok(model)
    }
}

/// Split, standardize and search each variant with the same candidates.
/// Run inside [`pool`] to bound parallelism.
pub fn run_automl(
    matrices: &[FeatureMatrix],
    space: &SearchSpace,
    cfg: &AutomlConfig,
) -> Result<Vec<VariantResult>> {
    let candidates = enumerate_candidates(space, cfg.seed)?;
    matrices
        .iter()
        .map(|m| {
            let (train_raw, test_raw) = split(m, &cfg.split)?;
            let (train, test, stats) = standardize(&train_raw, &test_raw)?;
            log::info!(
                "{}: {} candidates on {} train / {} test rows",
                m.variant.label(),
                candidates.len(),
                train.n_rows(),
                test.n_rows()
            );
            let leaderboard = run_search(&candidates, &train, &test, cfg.threshold, cfg.seed)?;
            Ok(VariantResult {
                leaderboard,
                stats,
                train,
                test,
            })
        })
        .collect()
}

/// `variant,rank,index,family,f1,accuracy,seed,params,error` rows.
pub fn write_leaderboards<W: Write>(boards: &[&Leaderboard], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "variant", "rank", "index", "family", "f1", "accuracy", "seed", "params", "error",
    ])?;
    for b in boards {
        for (r, e) in b.entries.iter().enumerate() {
            w.write_record([
                b.variant.code().to_string(),
                (r + 1).to_string(),
                e.index.to_string(),
                e.spec.family.to_string(),
                e.f1.map(fmt_f64).unwrap_or_default(),
                e.accuracy.map(fmt_f64).unwrap_or_default(),
                e.spec.seed.to_string(),
                e.spec.describe(),
                e.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuild a spec from a leaderboard row's family, seed and params.
pub fn spec_from_row(family: &str, seed_: &str, params: &str) -> Result<ModelSpec> {
    let family: Family = family.parse()?;
    let mut spec = ModelSpec::new(family, seed_.parse().map_err(|_| Error::invalid("bad seed"))?);
    for kv in params.split(';').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("bad parameter {kv:?}")))?;
        spec.set_str(k, v)?;
    }
    Ok(spec)
}

/// Max F1 per (variant, family) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Grid {
    pub rows: Vec<Variant>,
    pub cols: Vec<Family>,
    pub cells: Vec<Vec<Option<f64>>>,
    /// Column of each row's maximum; the first one on ties.
    pub bold: Vec<Option<usize>>,
}

/// Collapse leaderboards into a variant-by-family grid in table order.
pub fn best_per_cell(boards: &[&Leaderboard]) -> F1Grid {
    let mut rows: Vec<Variant> = boards.iter().map(|b| b.variant).collect();
    rows.sort();
    rows.dedup();
    let mut cols: Vec<Family> = boards
        .iter()
        .flat_map(|b| b.entries.iter().map(|e| e.spec.family))
        .collect();
    cols.sort();
    cols.dedup();
    let cells: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|&v| {
            cols.iter()
                .map(|&f| {
                    boards
                        .iter()
                        .filter(|b| b.variant == v)
                        .filter_map(|b| b.best_for(f).and_then(|e| e.f1))
                        .reduce(f64::max)
                })
                .collect()
        })
        .collect();
    for (r, row) in cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if cell.is_none() {
                log::warn!("no score for {} / {}", rows[r].label(), cols[c]);
            }
        }
    }
    F1Grid::new(rows, cols, cells)
}

impl F1Grid {
    pub fn new(rows: Vec<Variant>, cols: Vec<Family>, cells: Vec<Vec<Option<f64>>>) -> Self {
        let bold = cells
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter_map(|(i, v)| v.map(|v| (i, v)))
                    .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                        Some((_, b)) if b >= v => best,
                        _ => Some((i, v)),
                    })
                    .map(|(i, _)| i)
            })
            .collect();
        Self {
            rows,
            cols,
            cells,
            bold,
        }
    }

    pub fn cell(&self, v: Variant, f: Family) -> Option<f64> {
        let r = self.rows.iter().position(|&x| x == v)?;
        let c = self.cols.iter().position(|&x| x == f)?;
        self.cells[r][c]
    }

    /// Best cell overall: (variant, family, f1).
    pub fn best(&self) -> Option<(Variant, Family, f64)> {
        let mut best: Option<(Variant, Family, f64)> = None;
        for (r, row) in self.cells.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if best.is_none_or(|b| v > b.2) {
                        best = Some((self.rows[r], self.cols[c], v));
                    }
                }
            }
        }
        best
    }

    /// `variant,<families...>` with full-precision F1 values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["variant".to_string()];
        header.extend(self.cols.iter().map(|f| f.to_string()));
        w.write_record(&header)?;
        for (r, v) in self.rows.iter().enumerate() {
            let mut row = vec![v.label().to_string()];
            row.extend(self.cells[r].iter().map(|c| c.map(fmt_f64).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("variant") {
            return Err(Error::Schema("grid file must start with a variant column".into()));
        }
        let cols: Vec<Family> = header.iter().skip(1).map(str::parse).collect::<Result<_>>()?;
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            rows.push(
                rec[0]
                    .parse::<Variant>()
                    .map_err(|e| Error::row(line, e.to_string()))?,
            );
            cells.push(
                rec.iter()
                    .skip(1)
                    .map(|s| {
                        if s.trim().is_empty() {
                            Ok(None)
                        } else {
                            s.trim()
                                .parse()
                                .map(Some)
                                .map_err(|_| Error::row(line, format!("bad F1 {s:?}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self::new(rows, cols, cells))
    }

    /// Markdown table, two decimals, each row's maximum in bold.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| |");
        for f in &self.cols {
            s.push_str(&format!(" {f} |"));
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(self.cols.len()));
        s.push('\n');
        for (r, v) in self.rows.iter().enumerate() {
            s.push_str(&format!("| {} |", v.label()));
            for (c, cell) in self.cells[r].iter().enumerate() {
                let text = cell.map_or("-".to_string(), |x| format!("{x:.2}"));
                if self.bold[r] == Some(c) {
                    s.push_str(&format!(" **{text}** |"));
                } else {
                    s.push_str(&format!(" {text} |"));
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Default grid values every family must be able to reach.
pub fn anchor_values() -> Vec<(Family, &'static str, &'static [&'static str])> {
    vec![
        (Family::Gbm, "col_sample_rate", &["0.7", "0.8", "1.0", "0.4"]),
        (Family::Gbm, "col_sample_rate_per_tree", &["1.0", "0.8", "0.7"]),
        (Family::Gbm, "learn_rate", &["0.1"]),
        (Family::Gbm, "max_depth", &["4", "15", "7", "17", "6"]),
        (Family::Gbm, "min_rows", &["5.0", "100.0", "10.0", "15.0"]),
        (Family::Gbm, "min_split_improvement", &["0.00001"]),
        (Family::Gbm, "ntrees", &["35", "41", "37", "45", "50"]),
        (Family::Gbm, "sample_rate", &["0.9", "0.8", "0.5"]),
        (Family::XGBoost, "booster", &["gbtree"]),
        (Family::XGBoost, "col_sample_rate", &["0.8", "0.6"]),
        (Family::XGBoost, "col_sample_rate_per_tree", &["0.8", "0.7"]),
        (Family::XGBoost, "max_depth", &["5", "10", "9"]),
        (Family::XGBoost, "min_rows", &["3.0", "5.0", "10.0"]),
        (Family::XGBoost, "ntrees", &["34", "33", "35", "42", "40"]),
        (Family::XGBoost, "reg_alpha", &["0.0", "1.0", "0.001"]),
        (Family::XGBoost, "reg_lambda", &["1.0", "0.01"]),
        (Family::XGBoost, "sample_rate", &["0.8", "0.6"]),
        (Family::Glm, "alpha", &["[0.0]"]),
        (Family::DeepLearning, "epsilon", &["0.0", "0.000001"]),
        (
            Family::DeepLearning,
            "hidden",
            &["[100, 100]", "[10, 10, 10]", "[50, 50, 50]", "[50]", "[100]"],
        ),
        (
            Family::DeepLearning,
            "hidden_dropout_ratios",
            &["[0.1]", "None", "[0.4]"],
        ),
        (
            Family::DeepLearning,
            "input_dropout_ratio",
            &["0.15", "0.0", "0.2"],
        ),
        (Family::DeepLearning, "rho", &["0.9", "0.99", "0.95"]),
        (Family::Drf, "balance_classes", &["False"]),
        (Family::Drf, "ntrees", &["34", "41", "40", "33"]),
        (Family::Drf, "max_depth", &["20"]),
        (Family::Drf, "col_sample_rate_change_per_level", &["1.0"]),
        (Family::Drf, "col_sample_rate_per_tree", &["1.0"]),
        (Family::Drf, "min_split_improvement", &["0.00001"]),
        (Family::Xrt, "balance_classes", &["False"]),
        (Family::Xrt, "ntrees", &["43", "45", "35", "41"]),
        (Family::Xrt, "max_depth", &["20"]),
        (Family::Xrt, "col_sample_rate_change_per_level", &["1.0"]),
        (Family::Xrt, "col_sample_rate_per_tree", &["1.0"]),
        (Family::Xrt, "min_split_improvement", &["0.00001"]),
    ]
}

/// Check that every grid key belongs to its family's schema.
pub fn check_space(space: &SearchSpace) -> Result<()> {
    for (f, grid) in &space.grids {
        let defs = param_defs(*f);
        for (name, _) in grid {
            if !defs.iter().any(|d| d.name == name) {
                return Err(Error::invalid(format!("{f} has no hyperparameter {name:?}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TractId;
    use rand::Rng;

    #[test]
    fn bundled_grid_contains_every_anchor_value() {
        let space = SearchSpace::bundled();
        check_space(&space).unwrap();
        for (family, param, winners) in anchor_values() {
            let kind = models::spec::param_kind(family, param).unwrap();
            let grid = &space.grids[&family];
            let (_, values) = grid
                .iter()
                .find(|(n, _)| n == param)
                .unwrap_or_else(|| panic!("{family}.{param}"));
            for w in winners {
                let v = ParamValue::parse(kind, w).unwrap();
                assert!(values.contains(&v), "{family}.{param} lacks {w}");
            }
        }
    }

    #[test]
    fn budget_thirty_gives_five_per_family() {
        let space = SearchSpace::bundled();
        let alloc = space.allocation().unwrap();
        assert_eq!(alloc.len(), 6);
        assert!(alloc.iter().all(|(_, k)| *k == 5));
        let c = enumerate_candidates(&space, 1).unwrap();
        assert_eq!(c.len(), 30);
        assert_eq!(c, enumerate_candidates(&space, 1).unwrap());
        assert_ne!(c, enumerate_candidates(&space, 2).unwrap());
        let idx: Vec<usize> = c.iter().map(|x| x.index).collect();
        assert_eq!(idx, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn remainder_goes_to_earlier_families_and_overrides_hold() {
        let space = SearchSpace::bundled().with_budget(32).unwrap();
        let alloc: Vec<usize> = space.allocation().unwrap().into_iter().map(|x| x.1).collect();
        assert_eq!(alloc, vec![6, 6, 5, 5, 5, 5]);
        let mut s = SearchSpace::bundled();
        s.family_budgets.insert(Family::Glm, 2);
        let alloc: Vec<usize> = s.allocation().unwrap().into_iter().map(|x| x.1).collect();
        // GLM keeps 2; 28 spread over five families
        assert_eq!(alloc, vec![6, 6, 6, 2, 5, 5]);
        assert!(SearchSpace::bundled().with_budget(5).is_err());
    }

    #[test]
    fn full_budget_enumerates_lexicographically() {
        let space =
            SearchSpace::parse("budget = 6\nGLM.alpha = 0.0, 0.5\nGLM.lambda = 0.1, 0.2, 0.3\n").unwrap();
        let c = enumerate_candidates(&space, 0).unwrap();
        let got: Vec<(f64, f64)> = c
            .iter()
            .map(|x| (x.spec.f64("alpha"), x.spec.f64("lambda")))
            .collect();
        assert_eq!(
            got,
            vec![
                (0.0, 0.1),
                (0.0, 0.2),
                (0.0, 0.3),
                (0.5, 0.1),
                (0.5, 0.2),
                (0.5, 0.3)
            ]
        );
    }

    #[test]
    fn grid_parse_errors() {
        assert!(SearchSpace::parse("GLM.alpha =\n").is_err());
        assert!(SearchSpace::parse("GLM.ntrees = 5\n").is_err());
        assert!(SearchSpace::parse("Foo.alpha = 1\n").is_err());
        let s = SearchSpace::parse("DeepLearning.hidden = [1, 2], [3]\n").unwrap();
        assert_eq!(s.grids[&Family::DeepLearning][0].1.len(), 2);
    }

    fn matrix(n: usize, seed_: u64, separable: bool) -> FeatureMatrix {
        let mut rng = seed::rng(seed_);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            values.extend([a, b]);
            let noisy = !separable && rng.random_bool(0.15);
            labels.push((a > 0.0) ^ noisy);
        }
        FeatureMatrix::new(
            Variant::V2a,
            2018,
            (0..n)
                .map(|i| TractId::parse(&format!("{:011}", 53_000_000_000u64 + i as u64)).unwrap())
                .collect(),
            vec!["a".into(), "b".into()],
            values,
            Some(labels),
        )
        .unwrap()
    }

    #[test]
    fn memorizer_ranks_first() {
        let train = matrix(100, 1, true);
        let test = matrix(60, 2, true);
        let good = ModelSpec::new(Family::Drf, 0)
            .with("ntrees", ParamValue::Int(5))
            .unwrap();
        let bad = ModelSpec::new(Family::Gbm, 0)
            .with("learn_rate", ParamValue::Float(0.0))
            .unwrap()
            .with("ntrees", ParamValue::Int(1))
            .unwrap();
        let cands = vec![
            Candidate { index: 0, spec: bad },
            Candidate { index: 1, spec: good },
        ];
        let b = run_search(&cands, &train, &test, 0.5, 0).unwrap();
        assert_eq!(b.entries[0].index, 1);
        assert!(b.entries[0].f1.unwrap() > 0.95);
    }

    #[test]
    fn serial_and_parallel_searches_agree() {
        let train = matrix(150, 3, false);
        let test = matrix(80, 4, false);
        let space = SearchSpace::bundled().with_budget(12).unwrap();
        let cands = enumerate_candidates(&space, 9).unwrap();
        let one = pool(1)
            .unwrap()
            .install(|| run_search(&cands, &train, &test, 0.5, 9).unwrap());
        let four = pool(4)
            .unwrap()
            .install(|| run_search(&cands, &train, &test, 0.5, 9).unwrap());
        let strip = |b: &Leaderboard| -> Vec<(usize, Option<f64>, Option<f64>)> {
            b.entries.iter().map(|e| (e.index, e.f1, e.accuracy)).collect()
        };
        assert_eq!(strip(&one), strip(&four));
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_leaderboards(&[&one], &mut a).unwrap();
        write_leaderboards(&[&four], &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn glm_lambda_ranking_matches_independent_f1() {
        let train = matrix(120, 5, false);
        let test = matrix(80, 6, false);
        let space = SearchSpace::parse("budget = 4\nGLM.lambda = 0.0001, 0.01, 1.0, 10.0\n").unwrap();
        let cands = enumerate_candidates(&space, 0).unwrap();
        let board = run_search(&cands, &train, &test, 0.5, 0).unwrap();
        // independent metric: count directly from probabilities
        let labels = test.labels().unwrap();
        let mut expected: Vec<(usize, f64)> = cands
            .iter()
            .map(|c| {
                let m = models::train(&c.spec, &train).unwrap();
                let p = m.predict_proba(&test).unwrap();
                let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
                for (pi, &l) in p.iter().zip(labels) {
                    match (*pi >= 0.5, l) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fn_ += 1.0,
                        _ => {}
                    }
                }
                (
                    c.index,
                    if tp == 0.0 {
                        0.0
                    } else {
                        2.0 * tp / (2.0 * tp + fp + fn_)
                    },
                )
            })
            .collect();
        for e in &board.entries {
            let f = expected.iter().find(|x| x.0 == e.index).unwrap().1;
            assert!((e.f1.unwrap() - f).abs() < 1e-12);
        }
        expected.sort_by(|a, b| b.1.total_cmp(&a.1));
        assert!((board.entries[0].f1.unwrap() - expected[0].1).abs() < 1e-12);
    }

    #[test]
    fn failures_are_entries_and_total_failure_errors() {
        let train = matrix(40, 7, false);
        let test = matrix(20, 8, false);
        let broken = ModelSpec::new(Family::Gbm, 0)
            .with("min_rows", ParamValue::Float(1000.0))
            .unwrap();
        let ok = ModelSpec::new(Family::Glm, 0);
        let cands = vec![
            Candidate {
                index: 0,
                spec: broken.clone(),
            },
            Candidate { index: 1, spec: ok },
        ];
        let b = run_search(&cands, &train, &test, 0.5, 0).unwrap();
        assert_eq!(b.entries[1].f1, None);
        assert!(b.entries[1].error.is_some());
        let only_broken = vec![Candidate {
            index: 0,
            spec: broken,
        }];
        assert!(run_search(&only_broken, &train, &test, 0.5, 0).is_err());
    }

    #[test]
    fn retraining_the_head_reproduces_its_f1() {
        let m = matrix(200, 10, false);
        let space = SearchSpace::bundled().with_budget(6).unwrap();
        let cfg = AutomlConfig::default();
        let res = run_automl(&[m], &space, &cfg).unwrap();
        let r = &res[0];
        let head = r.leaderboard.best().unwrap();
        let model = r.retrain_best(cfg.split).unwrap();
        let p = model.predict_proba(&r.test).unwrap();
        let c = Confusion::from_pairs(
            p.iter()
                .map(|&x| x >= 0.5)
                .zip(r.test.labels().unwrap().iter().copied()),
        );
        assert_eq!(c.f1(), head.f1.unwrap());
        let row = spec_from_row(
            &head.spec.family.to_string(),
            &head.spec.seed.to_string(),
            &head.spec.describe(),
        )
        .unwrap();
        assert_eq!(row, head.spec);
    }

    #[test]
    fn grid_layout_and_ties() {
        let g = F1Grid::new(
            vec![Variant::V1a],
            vec![Family::Drf, Family::Gbm],
            vec![vec![Some(0.7), Some(0.7)]],
        );
        assert_eq!(g.bold, vec![Some(0)]);
        assert!(g.to_markdown().contains("**0.70**"));
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(F1Grid::read_csv(buf.as_slice()).unwrap(), g);

        let board = Leaderboard {
            variant: Variant::V2b,
            seed: 0,
            entries: vec![LeaderboardEntry {
                index: 0,
                spec: ModelSpec::new(Family::Gbm, 0),
                f1: Some(0.8),
                accuracy: Some(0.9),
                error: None,
                duration_secs: 0.0,
            }],
        };
        let g = best_per_cell(&[&board]);
        assert_eq!((g.rows.len(), g.cols.len()), (1, 1));
        assert_eq!(g.best(), Some((Variant::V2b, Family::Gbm, 0.8)));
    }
}
