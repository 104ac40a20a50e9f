//! The five feature variants, train/test splitting, and standardization.
//!
//! | variant | contents                                         | denominator        |
//! |---------|--------------------------------------------------|--------------------|
//! | v1a     | every RAC bin group                              | RAC total jobs     |
//! | v1b     | every WAC bin group, incl. firm age/size         | WAC total jobs     |
//! | v1c     | v1a and v1b side by side                         | each side's total  |
//! | v2a     | RAC employed + RAC industry + ACS income         | total population   |
//! | v2b     | v2a + WAC industry                               | total population   |
//!
//! Feature names carry a source prefix (`rac_`, `wac_`, `acs_`) followed by
//! the bin-group stem and label, e.g. `rac_ind_transportation_warehousing`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{AcsTractRecord, BinGroup, IncomeBins, LodesKind, LodesTractRecord, TractId};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    V1a,
    V1b,
    V1c,
    V2a,
    V2b,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::V1a,
        Variant::V1b,
        Variant::V1c,
        Variant::V2a,
        Variant::V2b,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Variant::V1a => "v1a",
            Variant::V1b => "v1b",
            Variant::V1c => "v1c",
            Variant::V2a => "v2a",
            Variant::V2b => "v2b",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::V1a => "LODES(R)",
            Variant::V1b => "LODES(W)",
            Variant::V1c => "LODES(R+W)",
            Variant::V2a => "LI(R)+ACS",
            Variant::V2b => "LI(R+W)+ACS",
        }
    }

    fn needs(self) -> (bool, bool, bool) {
        // (rac, wac, acs)
        match self {
            Variant::V1a => (true, false, false),
            Variant::V1b => (false, true, false),
            Variant::V1c => (true, true, false),
            Variant::V2a => (true, false, true),
            Variant::V2b => (true, true, true),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| v.code().eq_ignore_ascii_case(s) || v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

fn group_names(kind: LodesKind, group: BinGroup) -> impl Iterator<Item = String> {
    group
        .labels()
        .iter()
        .map(move |l| format!("{}_{}_{l}", kind.prefix(), group.feature_stem()))
}

fn lodes_names(kind: LodesKind) -> Vec<String> {
    BinGroup::for_kind(kind)
        .into_iter()
        .flat_map(|g| group_names(kind, g))
        .collect()
}

fn income_names(bins: &IncomeBins) -> Vec<String> {
    (0..bins.len())
        .map(|i| format!("acs_hh_income_{}", bins.label(i)))
        .collect()
}

/// Feature names of a variant, in column order.
pub fn feature_names(variant: Variant, bins: &IncomeBins) -> Vec<String> {
    match variant {
        Variant::V1a => lodes_names(LodesKind::Rac),
        Variant::V1b => lodes_names(LodesKind::Wac),
        Variant::V1c => {
            let mut n = lodes_names(LodesKind::Rac);
            n.extend(lodes_names(LodesKind::Wac));
            n
        }
        Variant::V2a | Variant::V2b => {
            let mut n = vec!["rac_employed".to_string()];
            n.extend(group_names(LodesKind::Rac, BinGroup::Industry));
            n.extend(income_names(bins));
            if variant == Variant::V2b {
                n.extend(group_names(LodesKind::Wac, BinGroup::Industry));
            }
            n
        }
    }
}

/// True for age, sex, race and ethnicity features of either LODES side.
pub fn is_demographic_feature(name: &str) -> bool {
    let Some(rest) = name.strip_prefix("rac_").or_else(|| name.strip_prefix("wac_")) else {
        return false;
    };
    BinGroup::SHARED
        .into_iter()
        .filter(|g| g.is_demographic())
        .any(|g| rest.starts_with(&format!("{}_", g.feature_stem())))
}

/// Named real-valued features, one row per tract.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub variant: Variant,
    pub year: u16,
    tracts: Vec<TractId>,
    names: Vec<String>,
    values: Vec<f64>,
    labels: Option<Vec<bool>>,
}

impl FeatureMatrix {
    pub fn new(
        variant: Variant,
        year: u16,
        tracts: Vec<TractId>,
        names: Vec<String>,
        values: Vec<f64>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        if values.len() != tracts.len() * names.len() {
            return Err(Error::invalid(format!(
                "{} values for {} rows x {} features",
                values.len(),
                tracts.len(),
                names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid(format!("duplicate feature name {dup:?}")));
        }
        if let Some(l) = &labels {
            if l.len() != tracts.len() {
                return Err(Error::invalid("label count differs from row count"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(Self {
            variant,
            year,
            tracts,
            names,
            values,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.tracts.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn tracts(&self) -> &[TractId] {
        &self.tracts
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.names.len();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| self.values[i * self.names.len() + j])
            .collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Labels, or an error naming the operation that needed them.
    pub fn require_labels(&self, what: &str) -> Result<&[bool]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("{what} needs labeled rows")))
    }

    pub fn with_labels(mut self, labels: Option<Vec<bool>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n_rows() {
                return Err(Error::invalid("label count differs from row count"));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            variant: self.variant,
            year: self.year,
            tracts: indices.iter().map(|&i| self.tracts[i].clone()).collect(),
            names: self.names.clone(),
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Append one feature column.
    pub fn with_feature(&self, name: &str, column: &[f64]) -> Result<FeatureMatrix> {
        if column.len() != self.n_rows() {
            return Err(Error::invalid("new column length differs from row count"));
        }
        let mut names = self.names.clone();
        names.push(name.to_string());
        let mut values = Vec::with_capacity(self.values.len() + column.len());
        for (i, extra) in column.iter().enumerate() {
            values.extend_from_slice(self.row(i));
            values.push(*extra);
        }
        FeatureMatrix::new(
            self.variant,
            self.year,
            self.tracts.clone(),
            names,
            values,
            self.labels.clone(),
        )
    }

    /// `tract_id,label,<features...>`; unlabeled rows leave `label` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["tract_id".to_string(), "label".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut row = vec![self.tracts[i].to_string()];
            row.push(match &self.labels {
                Some(l) => u8::from(l[i]).to_string(),
                None => String::new(),
            });
            row.extend(self.row(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a matrix CSV. The variant is inferred from feature prefixes when
    /// not given.
    pub fn read_csv<R: Read>(input: R, variant: Option<Variant>, year: u16) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("tract_id") || headers.get(1) != Some("label") {
            return Err(Error::Schema("matrix CSV must start with tract_id,label".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut tracts = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut any_label = false;
        let mut any_missing = false;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            tracts.push(TractId::parse(&rec[0]).map_err(|e| Error::row(line, e.to_string()))?);
            match rec[1].trim() {
                "" => any_missing = true,
                "1" | "true" => {
                    any_label = true;
                    labels.push(true)
                }
                "0" | "false" => {
                    any_label = true;
                    labels.push(false)
                }
                other => return Err(Error::row(line, format!("bad label {other:?}"))),
            }
            for (j, field) in rec.iter().skip(2).enumerate() {
                values.push(field.trim().parse::<f64>().map_err(|_| {
                    Error::row(line, format!("{}: expected a number, got {field:?}", names[j]))
                })?);
            }
        }
        if any_label && any_missing {
            return Err(Error::invalid("matrix mixes labeled and unlabeled rows"));
        }
        let variant = match variant {
            Some(v) => v,
            None => infer_variant(&names)?,
        };
        FeatureMatrix::new(variant, year, tracts, names, values, any_label.then_some(labels))
    }
}

/// Guess the variant from source prefixes of the feature names.
pub fn infer_variant(names: &[String]) -> Result<Variant> {
    let has = |p: &str| names.iter().any(|n| n.starts_with(p));
    Ok(match (has("rac_"), has("wac_"), has("acs_")) {
        (true, true, true) => Variant::V2b,
        (true, false, true) => Variant::V2a,
        (true, true, false) => Variant::V1c,
        (true, false, false) => Variant::V1a,
        (false, true, false) => Variant::V1b,
        _ => return Err(Error::invalid("cannot infer feature variant from column names")),
    })
}

/// Tract-level inputs to [`build_variant`]; sources a variant does not use
/// may be empty.
#[derive(Debug, Clone, Copy)]
pub struct VariantSources<'a> {
    pub rac: &'a [LodesTractRecord],
    pub wac: &'a [LodesTractRecord],
    pub acs: &'a [AcsTractRecord],
    pub bins: &'a IncomeBins,
    pub labels: Option<&'a BTreeMap<TractId, bool>>,
}

/// Rows left out while building a matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounts {
    /// Present in some required source but not all of them (or unlabeled).
    pub unmatched: usize,
    pub zero_denominator: usize,
}

fn push_shares(out: &mut Vec<f64>, counts: &[u64], denom: f64) {
    out.extend(counts.iter().map(|&c| c as f64 / denom));
}

fn push_lodes(out: &mut Vec<f64>, rec: &LodesTractRecord) -> bool {
    let denom = rec.counts.total_jobs as f64;
    if denom == 0.0 {
        return false;
    }
    for g in BinGroup::for_kind(rec.kind) {
        match rec.counts.group(g) {
            Some(c) => push_shares(out, c, denom),
            None => out.extend(std::iter::repeat_n(0.0, g.len())),
        }
    }
    true
}

/// Build one feature variant at tract level. Output rows are sorted by tract.
pub fn build_variant(
    variant: Variant,
    sources: &VariantSources<'_>,
    year: u16,
) -> Result<(FeatureMatrix, DropCounts)> {
    let (need_rac, need_wac, need_acs) = variant.needs();
    let index_lodes = |recs: &'_ [LodesTractRecord], kind: LodesKind| -> Result<HashMap<TractId, usize>> {
        if let Some(r) = recs.iter().find(|r| r.kind != kind) {
            return Err(Error::invalid(format!(
                "{} record for {} in {kind} input",
                r.kind, r.geo
            )));
        }
        Ok(recs.iter().enumerate().map(|(i, r)| (r.geo.clone(), i)).collect())
    };
    let rac = index_lodes(sources.rac, LodesKind::Rac)?;
    let wac = index_lodes(sources.wac, LodesKind::Wac)?;
    let acs: HashMap<TractId, usize> = sources
        .acs
        .iter()
        .enumerate()
        .map(|(i, r)| (r.geo.clone(), i))
        .collect();
    if let Some(r) = sources
        .acs
        .iter()
        .find(|r| r.household_counts.len() != sources.bins.len())
    {
        return Err(Error::invalid(format!(
            "ACS record {} has {} income bins, manifest has {}",
            r.geo,
            r.household_counts.len(),
            sources.bins.len()
        )));
    }

    let mut universe: std::collections::BTreeSet<TractId> = std::collections::BTreeSet::new();
    if need_rac {
        universe.extend(rac.keys().cloned());
    }
    if need_wac {
        universe.extend(wac.keys().cloned());
    }
    if need_acs {
        universe.extend(acs.keys().cloned());
    }

    let names = feature_names(variant, sources.bins);
    let mut drops = DropCounts::default();
    let mut tracts = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for tract in universe {
        let r = rac.get(&tract).map(|&i| &sources.rac[i]);
        let w = wac.get(&tract).map(|&i| &sources.wac[i]);
        let a = acs.get(&tract).map(|&i| &sources.acs[i]);
        let label = sources.labels.map(|l| l.get(&tract).copied());
        if (need_rac && r.is_none())
            || (need_wac && w.is_none())
            || (need_acs && a.is_none())
            || matches!(label, Some(None))
        {
            drops.unmatched += 1;
            continue;
        }
        let mut row = Vec::with_capacity(names.len());
        let ok = match variant {
            Variant::V1a => push_lodes(&mut row, r.unwrap()),
            Variant::V1b => push_lodes(&mut row, w.unwrap()),
            Variant::V1c => push_lodes(&mut row, r.unwrap()) && push_lodes(&mut row, w.unwrap()),
            Variant::V2a | Variant::V2b => {
                let a = a.unwrap();
                let r = r.unwrap();
                let pop = a.total_population as f64;
                if pop == 0.0 {
                    false
                } else {
                    row.push(r.counts.total_jobs as f64 / pop);
                    push_shares(&mut row, &r.counts.industry, pop);
                    push_shares(&mut row, &a.household_counts, pop);
                    if variant == Variant::V2b {
                        push_shares(&mut row, &w.unwrap().counts.industry, pop);
                    }
                    true
                }
            }
        };
        if !ok {
            drops.zero_denominator += 1;
            continue;
        }
        debug_assert_eq!(row.len(), names.len());
        values.extend(row);
        if let Some(Some(l)) = label {
            labels.push(l);
        }
        tracts.push(tract);
    }
    if drops.unmatched > 0 {
        log::info!(
            "{variant}: dropped {} tracts not present in every required source",
            drops.unmatched
        );
    }
    if drops.zero_denominator > 0 {
        log::info!(
            "{variant}: dropped {} tracts with a zero denominator",
            drops.zero_denominator
        );
    }
    let labels = sources.labels.map(|_| labels);
    Ok((
        FeatureMatrix::new(variant, year, tracts, names, values, labels)?,
        drops,
    ))
}

/// Row indices of a train/test partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split configuration; recorded with trained models so the held-out rows
/// can be recovered later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: 0.67,
            seed: 0,
            stratify: true,
        }
    }
}

/// Compute a (stratified) split of labeled rows.
///
/// The training size is `round(ratio * N)`. With stratification each class
/// receives `floor(ratio * n_k)` rows and the leftover slots go to the
/// classes with the largest fractional quotas, so every stratum is within
/// one row of its exact share.
pub fn split_indices(labels: &[bool], cfg: &SplitConfig) -> Result<SplitIndices> {
    if !(cfg.ratio > 0.0 && cfg.ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio {} outside (0, 1)",
            cfg.ratio
        )));
    }
    let strata: Vec<Vec<usize>> = if cfg.stratify {
        [false, true]
            .iter()
            .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    for s in &strata {
        if s.len() < 2 {
            return Err(Error::invalid(format!(
                "a split stratum has {} rows; at least 2 are needed",
                s.len()
            )));
        }
    }
    let target = (cfg.ratio * labels.len() as f64).round() as usize;
    let quotas: Vec<f64> = strata.iter().map(|s| cfg.ratio * s.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa)
    });
    let mut remaining = target.saturating_sub(take.iter().sum());
    for &k in order.iter().cycle().take(strata.len() * 2) {
        if remaining == 0 {
            break;
        }
        if take[k] < strata[k].len() {
            take[k] += 1;
            remaining -= 1;
        }
    }

    let mut rng = seed::rng_for(cfg.seed, seed::stream::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, &k) in strata.iter().zip(&take) {
        let mut idx = s.clone();
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Split a labeled matrix into (train, test).
pub fn split(matrix: &FeatureMatrix, cfg: &SplitConfig) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let labels = matrix.require_labels("split")?;
    let idx = split_indices(labels, cfg)?;
    Ok((matrix.select_rows(&idx.train), matrix.select_rows(&idx.test)))
}

/// Per-feature location and scale, computed on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    /// Population standard deviation (divides by N).
    pub stds: Vec<f64>,
    /// Columns whose training values are all equal; they map to 0.
    pub constant: Vec<bool>,
}

impl StandardizationStats {
    pub fn fit(train: &FeatureMatrix) -> Result<Self> {
        let n = train.n_rows();
        if n == 0 {
            return Err(Error::invalid("cannot standardize an empty training set"));
        }
        let p = train.n_features();
        let mut means = vec![0.0; p];
        let mut stds = vec![0.0; p];
        let mut constant = vec![false; p];
        for j in 0..p {
            let col = train.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let first = col[0];
            constant[j] = col.iter().all(|&x| x == first);
            means[j] = mean;
            stds[j] = if constant[j] { 0.0 } else { var.sqrt() };
        }
        Ok(Self {
            names: train.names().to_vec(),
            means,
            stds,
            constant,
        })
    }

    /// The identity transform for the given feature names.
    pub fn identity(names: &[String]) -> Self {
        Self {
            names: names.to_vec(),
            means: vec![0.0; names.len()],
            stds: vec![1.0; names.len()],
            constant: vec![false; names.len()],
        }
    }

    pub fn apply(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        check_names(&self.names, matrix.names())?;
        let p = self.names.len();
        let values = matrix
            .values()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let j = k % p;
                if self.constant[j] {
                    0.0
                } else {
                    (x - self.means[j]) / self.stds[j]
                }
            })
            .collect();
        FeatureMatrix::new(
            matrix.variant,
            matrix.year,
            matrix.tracts().to_vec(),
            matrix.names().to_vec(),
            values,
            matrix.labels().map(<[bool]>::to_vec),
        )
    }
}

/// Error listing the difference between expected and actual feature names.
pub fn check_names(expected: &[String], actual: &[String]) -> Result<()> {
    if expected == actual {
        return Ok(());
    }
    let missing: Vec<&str> = expected
        .iter()
        .filter(|n| !actual.contains(n))
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = actual
        .iter()
        .filter(|n| !expected.contains(n))
        .map(String::as_str)
        .collect();
    let msg = if missing.is_empty() && extra.is_empty() {
        "same features in a different order".to_string()
    } else {
        format!(
            "missing [{}], unexpected [{}]",
            missing.join(", "),
            extra.join(", ")
        )
    };
    Err(Error::FeatureMismatch(msg))
}

/// Standardize both partitions with statistics from `train`.
pub fn standardize(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix, StandardizationStats)> {
    let stats = StandardizationStats::fit(train)?;
    Ok((stats.apply(train)?, stats.apply(test)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{LodesCounts, LodesRecord};
    use proptest::prelude::*;

    fn tract(i: usize) -> TractId {
        TractId::parse(&format!("530330{:05}", i)).unwrap()
    }

    fn lodes(i: usize, kind: LodesKind, total: u64, age: [u64; 3]) -> LodesTractRecord {
        let mut counts = LodesCounts {
            total_jobs: total,
            age,
            ..Default::default()
        };
        for g in BinGroup::for_kind(kind).into_iter().skip(1) {
            counts.group_mut(g)[0] = total;
        }
        LodesRecord {
            geo: tract(i),
            kind,
            counts,
        }
    }

    fn acs(i: usize, bins: &IncomeBins, pop: u64) -> AcsTractRecord {
        let mut hh = vec![0; bins.len()];
        hh[0] = 10;
        hh[bins.len() - 1] = 30;
        AcsTractRecord {
            geo: tract(i),
            household_counts: hh,
            total_households: 40,
            total_population: pop,
        }
    }

    #[test]
    fn v1a_divides_by_total_jobs() {
        let bins = IncomeBins::bundled();
        let rac = vec![lodes(1, LodesKind::Rac, 5, [2, 2, 1])];
        let src = VariantSources {
            rac: &rac,
            wac: &[],
            acs: &[],
            bins: &bins,
            labels: None,
        };
        let (m, drops) = build_variant(Variant::V1a, &src, 2018).unwrap();
        assert_eq!(drops, DropCounts::default());
        assert_eq!(&m.row(0)[..3], &[0.4, 0.4, 0.2]);
        assert_eq!(m.names()[0], "rac_age_le29");
        assert!(m.labels().is_none());
    }

    #[test]
    fn v1c_is_disjoint_union() {
        let bins = IncomeBins::bundled();
        let a = feature_names(Variant::V1a, &bins);
        let b = feature_names(Variant::V1b, &bins);
        let c = feature_names(Variant::V1c, &bins);
        assert_eq!(c.len(), a.len() + b.len());
        assert!(a.iter().all(|n| !b.contains(n)));
    }

    #[test]
    fn v2_variants_exclude_demographics() {
        let bins = IncomeBins::bundled();
        for v in [Variant::V2a, Variant::V2b] {
            assert!(feature_names(v, &bins).iter().all(|n| !is_demographic_feature(n)));
        }
        assert!(feature_names(Variant::V1a, &bins)
            .iter()
            .any(|n| is_demographic_feature(n)));
        assert!(!is_demographic_feature("wac_firmage_0_1"));
    }

    #[test]
    fn v2b_normalizes_by_population_and_drops_unmatched() {
        let bins = IncomeBins::bundled();
        let rac = vec![
            lodes(1, LodesKind::Rac, 5, [2, 2, 1]),
            lodes(2, LodesKind::Rac, 5, [2, 2, 1]),
        ];
        let wac = vec![lodes(1, LodesKind::Wac, 20, [10, 5, 5])];
        let acs = vec![acs(1, &bins, 100), acs(2, &bins, 100), acs(3, &bins, 0)];
        let labels: BTreeMap<TractId, bool> = [(tract(1), true), (tract(2), false)].into();
        let src = VariantSources {
            rac: &rac,
            wac: &wac,
            acs: &acs,
            bins: &bins,
            labels: Some(&labels),
        };
        let (m, drops) = build_variant(Variant::V2b, &src, 2018).unwrap();
        assert_eq!(m.n_rows(), 1);
        assert_eq!(drops.unmatched, 2);
        assert_eq!(m.row(0)[0], 0.05);
        let inc = m.feature_index("acs_hh_income_lt10000").unwrap();
        assert_eq!(m.row(0)[inc], 0.1);
        let wind = m.feature_index("wac_ind_agriculture").unwrap();
        assert_eq!(m.row(0)[wind], 0.2);
        assert_eq!(m.labels(), Some(&[true][..]));

        let (m2, d2) = build_variant(Variant::V2a, &src, 2018).unwrap();
        assert_eq!(m2.n_rows(), 2);
        assert_eq!(d2.unmatched, 1);
    }

    #[test]
    fn zero_denominator_rows_are_dropped() {
        let bins = IncomeBins::bundled();
        let rac = vec![
            lodes(1, LodesKind::Rac, 0, [0, 0, 0]),
            lodes(2, LodesKind::Rac, 5, [2, 2, 1]),
        ];
        let src = VariantSources {
            rac: &rac,
            wac: &[],
            acs: &[],
            bins: &bins,
            labels: None,
        };
        let (m, drops) = build_variant(Variant::V1a, &src, 2018).unwrap();
        assert_eq!(m.n_rows(), 1);
        assert_eq!(drops.zero_denominator, 1);
    }

    #[test]
    fn unknown_variant_is_error() {
        assert!("v3".parse::<Variant>().is_err());
        assert_eq!("LI(R+W)+ACS".parse::<Variant>().unwrap(), Variant::V2b);
    }

    fn labeled(n_pos: usize, n_neg: usize) -> FeatureMatrix {
        let n = n_pos + n_neg;
        let labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
        FeatureMatrix::new(
            Variant::V1a,
            2018,
            (0..n).map(tract).collect(),
            vec!["x".into()],
            (0..n).map(|i| i as f64).collect(),
            Some(labels),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_for_1445_rows() {
        let labels: Vec<bool> = (0..1445).map(|i| i < 262).collect();
        let s = split_indices(
            &labels,
            &SplitConfig {
                ratio: 0.67,
                seed: 1,
                stratify: true,
            },
        )
        .unwrap();
        assert_eq!(s.train.len(), 968);
        assert_eq!(s.test.len(), 477);
    }

    #[test]
    fn half_split_preserves_classes() {
        let m = labeled(5, 5);
        let (tr, te) = split(
            &m,
            &SplitConfig {
                ratio: 0.5,
                seed: 9,
                stratify: true,
            },
        )
        .unwrap();
        assert_eq!(tr.n_rows(), 5);
        assert_eq!(te.n_rows(), 5);
        let pos = |m: &FeatureMatrix| m.labels().unwrap().iter().filter(|&&l| l).count();
        assert!((2..=3).contains(&pos(&tr)));
        assert_eq!(pos(&tr) + pos(&te), 5);
    }

    #[test]
    fn split_needs_two_rows_per_stratum() {
        let m = labeled(1, 9);
        assert!(split(&m, &SplitConfig::default()).is_err());
        assert!(split(
            &m,
            &SplitConfig {
                stratify: false,
                ..Default::default()
            }
        )
        .is_ok());
        assert!(split(
            &labeled(5, 5),
            &SplitConfig {
                ratio: 1.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn standardization_uses_train_stats() {
        let names = vec!["a".to_string(), "c".to_string()];
        let tr = FeatureMatrix::new(
            Variant::V1a,
            2018,
            (0..4).map(tract).collect(),
            names.clone(),
            vec![1.0, 0.1, 2.0, 0.1, 3.0, 0.1, 4.0, 0.1],
            None,
        )
        .unwrap();
        let te = FeatureMatrix::new(
            Variant::V1a,
            2018,
            (4..6).map(tract).collect(),
            names,
            vec![10.0, 0.1, 12.0, 5.0],
            None,
        )
        .unwrap();
        let (tr2, te2, stats) = standardize(&tr, &te).unwrap();
        let col = tr2.column(0);
        let mean = col.iter().sum::<f64>() / 4.0;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
        assert!(stats.constant[1]);
        assert_eq!(tr2.column(1), vec![0.0; 4]);
        assert_eq!(te2.column(1), vec![0.0; 2]);
        let test_mean = te2.column(0).iter().sum::<f64>() / 2.0;
        assert!(test_mean > 5.0, "test rows must not be re-centred: {test_mean}");
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = labeled(3, 4)
            .with_feature("y", &[0.1, 1e-300, -2.5, 3.0, 1.0 / 3.0, 7.0, 8.0])
            .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = FeatureMatrix::read_csv(buf.as_slice(), Some(Variant::V1a), 2018).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn split_partitions_input(n_pos in 2usize..40, n_neg in 2usize..40, ratio in 0.05f64..0.95, seed in any::<u64>(), stratify in any::<bool>()) {
            let labels: Vec<bool> = (0..n_pos + n_neg).map(|i| i % 3 == 0 && i / 3 < n_pos).collect();
            let n_pos_actual = labels.iter().filter(|&&l| l).count();
            prop_assume!(n_pos_actual >= 2 && labels.len() - n_pos_actual >= 2);
            let cfg = SplitConfig { ratio, seed, stratify };
            let s = split_indices(&labels, &cfg).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), (ratio * labels.len() as f64).round() as usize);
            if stratify {
                let pos_train = s.train.iter().filter(|&&i| labels[i]).count() as f64;
                prop_assert!((pos_train - ratio * n_pos_actual as f64).abs() <= 1.0);
            }
            prop_assert_eq!(split_indices(&labels, &cfg).unwrap(), s);
        }

        #[test]
        fn v1a_group_shares_sum_to_one(a in 0u64..50, b in 0u64..50, c in 1u64..50) {
            let bins = IncomeBins::bundled();
            let rac = vec![lodes(1, LodesKind::Rac, a + b + c, [a, b, c])];
            let src = VariantSources { rac: &rac, wac: &[], acs: &[], bins: &bins, labels: None };
            let (m, _) = build_variant(Variant::V1a, &src, 2018).unwrap();
            let row = m.row(0);
            let mut k = 0;
            for g in BinGroup::SHARED {
                let s: f64 = row[k..k + g.len()].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                k += g.len();
            }
        }
    }
}
