//! Deterministic synthetic census corpora.
//!
//! Each tract gets three latent drivers in `[0, 1]`: income deprivation
//! `u_inc`, low-wage industry exposure `u_ind` and education deficit
//! `u_edu`. The last two are partly driven by `u_inc`. The latent score is
//!
//! ```text
//! s = w_inc * u_inc + w_ind * u_ind + w_edu * u_edu + noise * e,  e ~ U(-1, 1)
//! ```
//!
//! and a tract is disadvantaged when `s` exceeds the threshold that yields
//! the target prevalence. A further subset of tracts, taken from below the
//! threshold, is flagged only because of extreme pre-1960 housing; nothing
//! in the LODES or ACS features reveals it.
//!
//! Counts are drawn from multinomials whose cell probabilities follow the
//! drivers, so every bin group sums exactly to its total. Earlier history
//! years are poorer by `income_drift` per year.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AcsBlockGroupRecord, AcsRecord, AcsTractRecord, BlockGroupId, BlockId, DacRecord, IncomeBins,
    IndicatorManifest, IndicatorVector, LodesBlockRecord, LodesCounts, LodesKind, LodesRecord,
    LodesTractRecord, TractId,
};
use crate::error::{Error, Result};
use crate::features::{build_variant, FeatureMatrix, Variant, VariantSources};
use crate::ingest::{aggregate_to_tract, write_acs, write_dac, write_lodes, ColumnMap};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub tracts: usize,
    /// Year carrying DAC labels.
    pub year: u16,
    /// Unlabeled years; may include `year`, which is generated once.
    pub history: Vec<u16>,
    pub income_weight: f64,
    pub industry_weight: f64,
    pub education_weight: f64,
    /// Half-width of the uniform noise added to the latent score.
    pub noise: f64,
    /// Share of tracts flagged as disadvantaged.
    pub dac_fraction: f64,
    /// Share of the flagged tracts driven only by housing age.
    pub housing_fraction: f64,
    /// Weight of `u_inc` in `u_ind`.
    pub industry_coupling: f64,
    /// Weight of `u_inc` in `u_edu`.
    pub education_coupling: f64,
    /// Weight of resident industry exposure in workplace composition.
    pub wac_coupling: f64,
    /// Strength of the link between race/ethnicity mix and `u_inc`.
    pub race_income_coupling: f64,
    /// Increase of `u_inc` per year before `year`.
    pub income_drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tracts: 2000,
            year: 2018,
            history: (2013..=2017).collect(),
            income_weight: 0.6,
            industry_weight: 0.3,
            education_weight: 0.1,
            noise: 0.02,
            dac_fraction: 0.17,
            housing_fraction: 0.05,
            industry_coupling: 0.6,
            education_coupling: 0.7,
            wac_coupling: 0.6,
            race_income_coupling: 0.3,
            income_drift: 0.03,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Workplace composition carries no information about residents.
    pub fn residence_driven() -> Self {
        Self {
            wac_coupling: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.tracts < 10 {
            return Err(Error::invalid(format!(
                "at least 10 tracts required, got {}",
                self.tracts
            )));
        }
        if self.tracts > 999_999 {
            return Err(Error::invalid("tract count exceeds the id space"));
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err(Error::invalid(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        for (n, v) in [
            ("income_weight", self.income_weight),
            ("industry_weight", self.industry_weight),
            ("education_weight", self.education_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{n} must be non-negative, got {v}")));
            }
        }
        if self.income_weight + self.industry_weight + self.education_weight <= 0.0 {
            return Err(Error::invalid("at least one driver weight must be positive"));
        }
        unit("dac_fraction", self.dac_fraction)?;
        unit("housing_fraction", self.housing_fraction)?;
        unit("industry_coupling", self.industry_coupling)?;
        unit("education_coupling", self.education_coupling)?;
        unit("wac_coupling", self.wac_coupling)?;
        unit("race_income_coupling", self.race_income_coupling)?;
        if !(self.income_drift.is_finite() && self.income_drift >= 0.0) {
            return Err(Error::invalid("income_drift must be non-negative"));
        }
        Ok(())
    }

    pub fn years(&self) -> Vec<u16> {
        let mut y = self.history.clone();
        y.push(self.year);
        y.sort_unstable();
        y.dedup();
        y
    }
}

/// Latent state of one tract in the labeled year.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TractTruth {
    pub tract: TractId,
    pub u_inc: f64,
    pub u_ind: f64,
    pub u_edu: f64,
    pub latent: f64,
    /// Flagged through housing age alone.
    pub housing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearData {
    pub rac: Vec<LodesBlockRecord>,
    pub wac: Vec<LodesBlockRecord>,
    pub acs: Vec<AcsBlockGroupRecord>,
}

/// Tract-level sources of one year.
#[derive(Debug, Clone, PartialEq)]
pub struct TractSources {
    pub rac: Vec<LodesTractRecord>,
    pub wac: Vec<LodesTractRecord>,
    pub acs: Vec<AcsTractRecord>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub bins: IncomeBins,
    pub manifest: IndicatorManifest,
    pub years: BTreeMap<u16, YearData>,
    /// Labeled-year DAC records, sorted by tract.
    pub dac: Vec<DacRecord>,
    pub truth: Vec<TractTruth>,
    pub threshold: f64,
}

// Industry loadings: +1 low-wage, -1 high-wage, in LODES order.
const INDUSTRY_LOADING: [f64; 20] = [
    1.0, 0.0, -1.0, 1.0, 1.0, 0.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0,
];
const INDUSTRY_BASE: [f64; 20] = [
    0.01, 0.005, 0.01, 0.06, 0.09, 0.04, 0.11, 0.04, 0.02, 0.04, 0.02, 0.07, 0.015, 0.06, 0.09, 0.14, 0.02,
    0.09, 0.03, 0.05,
];
const INDUSTRY_GAIN: f64 = 2.5;

/// Multiplicative jitter factors, fixed per tract so composition is stable
/// across years.
#[derive(Debug, Clone)]
struct Profile {
    index: usize,
    tract: TractId,
    u_inc: f64,
    e_ind: f64,
    e_edu: f64,
    e_wac: f64,
    e_noise: f64,
    /// Block numbers per block group; group digits start at 1.
    layout: Vec<Vec<u16>>,
    households: Vec<u64>,
    persons_per_household: f64,
    wac_jobs: u64,
    wac_block_weights: Vec<f64>,
    factors: BTreeMap<&'static str, Vec<f64>>,
    indicator_draws: Vec<f64>,
    lead_high: f64,
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn factors(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random_range(1.0 - spread..1.0 + spread))
        .collect()
}

fn normalized(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

fn apply(base: &[f64], f: &[f64]) -> Vec<f64> {
    normalized(base.iter().zip(f).map(|(b, f)| b.max(1e-4) * f).collect())
}

/// Multinomial draw by sequential conditional binomials.
fn multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() || mass <= 0.0 {
            out[i] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[i] = k;
        left -= k;
        mass -= p;
    }
    out
}

fn tract_id(i: usize) -> TractId {
    let county = 1 + 2 * (i / 5000);
    let number = (i % 5000 + 1) * 100;
    TractId::parse(&format!("53{county:03}{number:06}")).expect("well-formed tract id")
}

fn profile(base: u64, index: usize, n_indicators: usize) -> Profile {
    let mut rng = seed::rng_for(base, index as u64);
    let u_inc = rng.random::<f64>();
    let e_ind = rng.random::<f64>();
    let e_edu = rng.random::<f64>();
    let e_wac = rng.random::<f64>();
    let e_noise = rng.random_range(-1.0..1.0);
    let n_groups = rng.random_range(1..=3usize);
    let layout: Vec<Vec<u16>> = (0..n_groups)
        .map(|g| {
            let n = rng.random_range(1..=3u16);
            (0..n).map(|b| (g as u16 + 1) * 1000 + b + 1).collect()
        })
        .collect();
    let households = (0..n_groups).map(|_| rng.random_range(300..900u64)).collect();
    let persons_per_household = rng.random_range(2.2..2.8);
    let wac_jobs = (rng.random_range(5.0f64..8.0)).exp().round() as u64;
    let n_blocks: usize = layout.iter().map(Vec::len).sum();
    let wac_block_weights = normalized((0..n_blocks).map(|_| rng.random_range(0.2..1.0)).collect());
    let mut f = BTreeMap::new();
    for (name, n, spread) in [
        ("age", 3, 0.2),
        ("race", 6, 0.3),
        ("ethnicity", 2, 0.2),
        ("sex", 2, 0.05),
        ("rac_industry", 20, 0.2),
        ("wac_industry", 20, 0.3),
        ("wac_age", 3, 0.2),
        ("wac_race", 6, 0.3),
        ("wac_ethnicity", 2, 0.2),
        ("wac_sex", 2, 0.1),
        ("firm_age", 5, 0.4),
        ("firm_size", 5, 0.4),
    ] {
        f.insert(name, factors(&mut rng, n, spread));
    }
    let indicator_draws = (0..n_indicators).map(|_| rng.random::<f64>()).collect();
    let lead_high = rng.random_range(0.9..1.0);
    Profile {
        index,
        tract: tract_id(index),
        u_inc,
        e_ind,
        e_edu,
        e_wac,
        e_noise,
        layout,
        households,
        persons_per_household,
        wac_jobs,
        wac_block_weights,
        factors: f,
        indicator_draws,
        lead_high,
    }
}

/// Drivers of a tract in a given year.
#[derive(Debug, Clone, Copy)]
struct Drivers {
    inc: f64,
    ind: f64,
    edu: f64,
    wac: f64,
}

fn drivers(cfg: &SynthConfig, p: &Profile, year: u16) -> Drivers {
    let shift = cfg.income_drift * (f64::from(cfg.year) - f64::from(year));
    let inc = clamp01(p.u_inc + shift);
    let ind = cfg.industry_coupling * inc + (1.0 - cfg.industry_coupling) * p.e_ind;
    let edu = cfg.education_coupling * inc + (1.0 - cfg.education_coupling) * p.e_edu;
    let wac = cfg.wac_coupling * ind + (1.0 - cfg.wac_coupling) * p.e_wac;
    Drivers { inc, ind, edu, wac }
}

fn score(cfg: &SynthConfig, d: &Drivers) -> f64 {
    cfg.income_weight * d.inc + cfg.industry_weight * d.ind + cfg.education_weight * d.edu
}

fn industry_probs(u: f64, f: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = INDUSTRY_BASE
        .iter()
        .zip(INDUSTRY_LOADING)
        .map(|(b, l)| b * (INDUSTRY_GAIN * l * (u - 0.5)).exp())
        .collect();
    apply(&w, f)
}

fn race_probs(kappa: f64, u: f64, f: &[f64]) -> Vec<f64> {
    let shift = kappa * 0.3 * u;
    apply(
        &[
            0.62 - shift,
            0.1 + 0.7 * shift,
            0.02,
            0.12 - 0.1 * shift,
            0.01,
            0.13 + 0.4 * shift,
        ],
        f,
    )
}

fn ethnicity_probs(kappa: f64, u: f64, f: &[f64]) -> Vec<f64> {
    let h = 0.08 + kappa * 0.35 * u;
    apply(&[1.0 - h, h], f)
}

fn earnings_probs(u: f64) -> Vec<f64> {
    let low = 0.15 + 0.45 * u;
    let high = 0.45 - 0.35 * u;
    vec![low, 1.0 - low - high, high]
}

fn education_probs(u: f64) -> Vec<f64> {
    let lt = 0.05 + 0.3 * u;
    let ba = 0.4 - 0.3 * u;
    vec![lt, 0.25, 1.0 - lt - ba - 0.25, ba]
}

/// Cell probabilities of every bin group for one side.
struct Mix {
    age: Vec<f64>,
    earnings: Vec<f64>,
    industry: Vec<f64>,
    race: Vec<f64>,
    ethnicity: Vec<f64>,
    education: Vec<f64>,
    sex: Vec<f64>,
    firm: Option<(Vec<f64>, Vec<f64>)>,
}

fn mix(cfg: &SynthConfig, p: &Profile, d: &Drivers, kind: LodesKind) -> Mix {
    let k = cfg.race_income_coupling;
    let f = |n: &str| p.factors[n].as_slice();
    match kind {
        LodesKind::Rac => Mix {
            age: apply(&[0.25, 0.5, 0.25], f("age")),
            earnings: earnings_probs(d.inc),
            industry: industry_probs(d.ind, f("rac_industry")),
            race: race_probs(k, d.inc, f("race")),
            ethnicity: ethnicity_probs(k, d.inc, f("ethnicity")),
            education: education_probs(d.edu),
            sex: apply(&[0.5, 0.5], f("sex")),
            firm: None,
        },
        LodesKind::Wac => Mix {
            age: apply(&[0.22, 0.53, 0.25], f("wac_age")),
            earnings: earnings_probs(0.8 * d.wac),
            industry: industry_probs(d.wac, f("wac_industry")),
            race: race_probs(k, d.wac, f("wac_race")),
            ethnicity: ethnicity_probs(k, d.wac, f("wac_ethnicity")),
            education: education_probs(0.8 * d.wac),
            sex: apply(&[0.52, 0.48], f("wac_sex")),
            firm: Some((
                apply(&[0.08, 0.1, 0.1, 0.2, 0.52], f("firm_age")),
                apply(&[0.25, 0.12, 0.2, 0.08, 0.35], f("firm_size")),
            )),
        },
    }
}

fn counts(rng: &mut ChaCha8Rng, total: u64, m: &Mix) -> LodesCounts {
    let mut c = LodesCounts {
        total_jobs: total,
        ..Default::default()
    };
    c.age.copy_from_slice(&multinomial(rng, total, &m.age));
    c.earnings.copy_from_slice(&multinomial(rng, total, &m.earnings));
    c.industry.copy_from_slice(&multinomial(rng, total, &m.industry));
    c.race.copy_from_slice(&multinomial(rng, total, &m.race));
    c.ethnicity
        .copy_from_slice(&multinomial(rng, total, &m.ethnicity));
    c.education
        .copy_from_slice(&multinomial(rng, total, &m.education));
    c.sex.copy_from_slice(&multinomial(rng, total, &m.sex));
    if let Some((fa, fs)) = &m.firm {
        let mut a = [0u64; 5];
        a.copy_from_slice(&multinomial(rng, total, fa));
        let mut s = [0u64; 5];
        s.copy_from_slice(&multinomial(rng, total, fs));
        c.firm_age = Some(a);
        c.firm_size = Some(s);
    }
    c
}

/// Log-logistic household income, discretized onto the bins.
fn income_probs(bins: &IncomeBins, u: f64) -> Vec<f64> {
    let mu = 110_000f64.ln() - 1.8 * u;
    let s = 0.45;
    let cdf = |x: u64| -> f64 {
        if x == 0 {
            0.0
        } else {
            1.0 / (1.0 + (-((x as f64).ln() - mu) / s).exp())
        }
    };
    let edges = bins.lower_edges();
    (0..edges.len())
        .map(|i| {
            let hi = edges.get(i + 1).map_or(1.0, |&e| cdf(e));
            (hi - cdf(edges[i])).max(0.0)
        })
        .collect()
}

fn year_data(cfg: &SynthConfig, bins: &IncomeBins, base: u64, p: &Profile, year: u16) -> YearData {
    let mut rng = seed::rng_for(seed::derive(base, p.index as u64), u64::from(year));
    let d = drivers(cfg, p, year);
    let blocks: Vec<BlockId> = p
        .layout
        .iter()
        .flatten()
        .map(|b| BlockId::parse(&format!("{}{b:04}", p.tract)).expect("well-formed block id"))
        .collect();

    let mut acs = Vec::new();
    let mut population = 0u64;
    for (g, &h) in p.households.iter().enumerate() {
        let households = (h as f64 * rng.random_range(0.97..1.03)).round() as u64;
        let persons = (households as f64 * p.persons_per_household).round() as u64;
        population += persons;
        acs.push(AcsRecord {
            geo: BlockGroupId::parse(&format!("{}{}", p.tract, g + 1)).expect("well-formed block group id"),
            household_counts: multinomial(&mut rng, households, &income_probs(bins, d.inc)),
            total_households: households,
            total_population: persons,
        });
    }

    let employed = (population as f64 * (0.58 - 0.25 * d.inc) * rng.random_range(0.95..1.05)).round() as u64;
    let even = vec![1.0 / blocks.len() as f64; blocks.len()];
    let rac_split = multinomial(&mut rng, employed, &even);
    let rac_mix = mix(cfg, p, &d, LodesKind::Rac);
    let mut rac = Vec::new();
    for (b, &n) in blocks.iter().zip(&rac_split) {
        if n > 0 {
            rac.push(LodesRecord {
                geo: b.clone(),
                kind: LodesKind::Rac,
                counts: counts(&mut rng, n, &rac_mix),
            });
        }
    }

    let jobs = (p.wac_jobs as f64 * rng.random_range(0.95..1.05)).round() as u64;
    let wac_split = multinomial(&mut rng, jobs, &p.wac_block_weights);
    let wac_mix = mix(cfg, p, &d, LodesKind::Wac);
    let mut wac = Vec::new();
    for (b, &n) in blocks.iter().zip(&wac_split) {
        if n > 0 {
            wac.push(LodesRecord {
                geo: b.clone(),
                kind: LodesKind::Wac,
                counts: counts(&mut rng, n, &wac_mix),
            });
        }
    }
    YearData { rac, wac, acs }
}

fn indicators(manifest: &IndicatorManifest, p: &Profile, d: &Drivers, housing: bool) -> Vec<Option<f64>> {
    let u = &p.indicator_draws;
    manifest
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let e = u[i];
            let v = match name.as_str() {
                "low_income_ami" => 0.05 + 0.7 * d.inc + 0.16 * (e - 0.5),
                "low_income_fpl" => 0.02 + 0.5 * d.inc + 0.12 * (e - 0.5),
                "less_hs_education" => 0.02 + 0.3 * d.edu + 0.08 * (e - 0.5),
                "unemployment" => 0.02 + 0.1 * d.inc + 0.06 * (e - 0.5),
                "housing_cost_burden" => 0.1 + 0.3 * d.inc + 0.2 * (e - 0.5),
                "energy_burden" => 0.01 + 0.05 * d.inc + 0.04 * (e - 0.5),
                "lead_paint_pre1960_housing" if housing => p.lead_high,
                "lead_paint_pre1960_housing" => 0.8 * e,
                _ => e,
            };
            Some((v.max(0.0) * 1e6).round() / 1e6)
        })
        .collect()
}

/// Generate a corpus. Identical configs give identical corpora.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    generate_with(cfg, IncomeBins::bundled(), IndicatorManifest::bundled())
}

pub fn generate_with(
    cfg: &SynthConfig,
    bins: IncomeBins,
    manifest: IndicatorManifest,
) -> Result<SynthCorpus> {
    cfg.validate()?;
    let base = seed::derive(cfg.seed, seed::stream::SYNTH);
    let profiles: Vec<Profile> = (0..cfg.tracts)
        .into_par_iter()
        .map(|i| profile(base, i, manifest.len()))
        .collect();

    let n = cfg.tracts;
    let target = (cfg.dac_fraction * n as f64).round() as usize;
    let n_housing = (cfg.housing_fraction * target as f64).round() as usize;
    let n_score = target - n_housing;
    if n_score == 0 || target >= n {
        return Err(Error::invalid(format!(
            "configuration yields a single class ({target} of {n} tracts flagged, {n_score} by score)"
        )));
    }
    let latent: Vec<f64> = profiles
        .iter()
        .map(|p| score(cfg, &drivers(cfg, p, cfg.year)) + cfg.noise * p.e_noise)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]).then(a.cmp(&b)));
    let cut = n - n_score;
    let threshold = 0.5 * (latent[order[cut - 1]] + latent[order[cut]]);
    if latent[order[cut - 1]] == latent[order[cut]] {
        return Err(Error::invalid("latent scores tie at the threshold"));
    }

    // housing-driven tracts come from the 60th-80th latent percentile band
    let lo = (0.6 * n as f64) as usize;
    let hi = ((0.8 * n as f64) as usize).min(cut);
    if n_housing > hi.saturating_sub(lo) {
        return Err(Error::invalid("housing subset is larger than its candidate band"));
    }
    let mut rng = seed::rng_for(base, u64::MAX);
    let mut housing = vec![false; n];
    for k in rand::seq::index::sample(&mut rng, hi - lo, n_housing) {
        housing[order[lo + k]] = true;
    }

    let truth: Vec<TractTruth> = profiles
        .iter()
        .map(|p| {
            let d = drivers(cfg, p, cfg.year);
            TractTruth {
                tract: p.tract.clone(),
                u_inc: d.inc,
                u_ind: d.ind,
                u_edu: d.edu,
                latent: latent[p.index],
                housing: housing[p.index],
            }
        })
        .collect();
    let names = manifest.shared_names();
    let dac: Vec<DacRecord> = profiles
        .iter()
        .map(|p| {
            let d = drivers(cfg, p, cfg.year);
            DacRecord {
                tract: p.tract.clone(),
                indicators: IndicatorVector {
                    names: names.clone(),
                    values: indicators(&manifest, p, &d, housing[p.index]),
                    percentiles: None,
                },
                dac: housing[p.index] || latent[p.index] > threshold,
                score: None,
            }
        })
        .collect();

    let mut years = BTreeMap::new();
    for y in cfg.years() {
        let parts: Vec<YearData> = profiles
            .par_iter()
            .map(|p| year_data(cfg, &bins, base, p, y))
            .collect();
        let mut all = YearData {
            rac: Vec::new(),
            wac: Vec::new(),
            acs: Vec::new(),
        };
        for part in parts {
            all.rac.extend(part.rac);
            all.wac.extend(part.wac);
            all.acs.extend(part.acs);
        }
        years.insert(y, all);
    }
    Ok(SynthCorpus {
        config: cfg.clone(),
        bins,
        manifest,
        years,
        dac,
        truth,
        threshold,
    })
}

impl SynthCorpus {
    pub fn labels(&self) -> BTreeMap<TractId, bool> {
        self.dac.iter().map(|r| (r.tract.clone(), r.dac)).collect()
    }

    pub fn tract_sources(&self, year: u16) -> Result<TractSources> {
        let y = self
            .years
            .get(&year)
            .ok_or_else(|| Error::invalid(format!("year {year} was not generated")))?;
        Ok(TractSources {
            rac: aggregate_to_tract(&y.rac),
            wac: aggregate_to_tract(&y.wac),
            acs: aggregate_to_tract(&y.acs),
        })
    }

    /// Feature matrix of a variant; labeled only for the labeled year.
    pub fn matrix(&self, variant: Variant, year: u16) -> Result<FeatureMatrix> {
        let s = self.tract_sources(year)?;
        let labels = self.labels();
        let sources = VariantSources {
            rac: &s.rac,
            wac: &s.wac,
            acs: &s.acs,
            bins: &self.bins,
            labels: (year == self.config.year).then_some(&labels),
        };
        Ok(build_variant(variant, &sources, year)?.0)
    }

    /// One square polygon per tract on a regular grid.
    pub fn geojson(&self) -> serde_json::Value {
        let features: Vec<serde_json::Value> = self
            .truth
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let (x, y) = ((i % 50) as f64, (i / 50) as f64);
                let (lon, lat) = (-124.0 + 0.02 * x, 45.5 + 0.02 * y);
                let ring = vec![
                    [lon, lat],
                    [lon + 0.02, lat],
                    [lon + 0.02, lat + 0.02],
                    [lon, lat + 0.02],
                    [lon, lat],
                ];
                serde_json::json!({
                    "type": "Feature",
                    "properties": { "GEOID": t.tract.as_str() },
                    "geometry": { "type": "Polygon", "coordinates": [ring] },
                })
            })
            .collect();
        serde_json::json!({ "type": "FeatureCollection", "features": features })
    }

    /// Write raw files with the public column names. Returns the paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|source| Error::File {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|source| Error::File {
                path: path.clone(),
                source,
            })?;
            written.push(path);
            Ok(())
        };
        for (year, data) in &self.years {
            for (kind, recs) in [(LodesKind::Rac, &data.rac), (LodesKind::Wac, &data.wac)] {
                let mut buf = Vec::new();
                write_lodes(recs, kind, &ColumnMap::default_lodes(kind), &mut buf)?;
                put(format!("lodes_{}_{year}.csv", kind.prefix()), buf)?;
            }
            let mut buf = Vec::new();
            write_acs(
                &data.acs,
                &self.bins,
                &ColumnMap::default_acs(&self.bins),
                &mut buf,
            )?;
            put(format!("acs_{year}.csv"), buf)?;
        }
        let mut buf = Vec::new();
        write_dac(
            &self.dac,
            &self.manifest,
            &ColumnMap::default_dac(&self.manifest),
            &mut buf,
        )?;
        put(format!("dac_{}.csv", self.config.year), buf)?;
        let mut geo = serde_json::to_vec_pretty(&self.geojson())?;
        geo.push(b'\n');
        put("tracts.geojson".into(), geo)?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Validate, ValidationPolicy};

    fn small(seed_: u64) -> SynthConfig {
        SynthConfig {
            tracts: 300,
            history: vec![2016, 2017],
            ..SynthConfig::default()
        }
        .with_seed(seed_)
    }

    #[test]
    fn noiseless_flags_reproduce_the_thresholded_drivers() {
        let cfg = SynthConfig {
            noise: 0.0,
            housing_fraction: 0.0,
            ..small(3)
        };
        let c = generate(&cfg).unwrap();
        for (t, r) in c.truth.iter().zip(&c.dac) {
            let s =
                cfg.income_weight * t.u_inc + cfg.industry_weight * t.u_ind + cfg.education_weight * t.u_edu;
            assert_eq!(r.dac, s > c.threshold, "{}", t.tract);
        }
    }

    #[test]
    fn prevalence_and_housing_subset_sizes() {
        let c = generate(&small(4)).unwrap();
        let dac = c.dac.iter().filter(|r| r.dac).count();
        assert_eq!(dac, 51);
        let housing = c.truth.iter().filter(|t| t.housing).count();
        assert_eq!(housing, 3);
        for (t, r) in c.truth.iter().zip(&c.dac) {
            if t.housing {
                assert!(r.dac && t.latent < c.threshold);
                assert!(r.indicators.value("lead_paint_pre1960_housing").unwrap() >= 0.9);
            } else {
                assert!(r.indicators.value("lead_paint_pre1960_housing").unwrap() < 0.8);
            }
        }
    }

    #[test]
    fn records_pass_strict_validation() {
        let c = generate(&small(5)).unwrap();
        for y in c.years.values() {
            for r in y.rac.iter().chain(&y.wac) {
                assert!(r.validate(&ValidationPolicy::STRICT).is_clean());
            }
            for r in &y.acs {
                assert!(r.validate(&ValidationPolicy::STRICT).is_clean());
            }
        }
    }

    #[test]
    fn same_seed_same_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = generate(&small(6)).unwrap().write_to(a.path()).unwrap();
        let pb = generate(&small(6)).unwrap().write_to(b.path()).unwrap();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
        let other = generate(&small(7)).unwrap();
        assert_ne!(other.dac, generate(&small(6)).unwrap().dac);
    }

    #[test]
    fn single_class_configs_are_rejected() {
        assert!(generate(&SynthConfig {
            dac_fraction: 0.0,
            ..small(1)
        })
        .is_err());
        assert!(generate(&SynthConfig {
            dac_fraction: 1.0,
            ..small(1)
        })
        .is_err());
        assert!(generate(&SynthConfig {
            tracts: 5,
            ..small(1)
        })
        .is_err());
        assert!(generate(&SynthConfig {
            noise: -1.0,
            ..small(1)
        })
        .is_err());
    }

    #[test]
    fn history_years_are_poorer() {
        let c = generate(&small(8)).unwrap();
        let share = |year: u16| -> f64 {
            let s = c.tract_sources(year).unwrap();
            let low: u64 = s
                .acs
                .iter()
                .map(|r| r.household_counts[..5].iter().sum::<u64>())
                .sum();
            let all: u64 = s.acs.iter().map(|r| r.total_households).sum();
            low as f64 / all as f64
        };
        assert!(share(2016) > share(2017));
        assert!(share(2017) > share(2018));
    }

    #[test]
    fn matrices_cover_every_tract() {
        let c = generate(&small(9)).unwrap();
        let m = c.matrix(Variant::V2b, 2018).unwrap();
        assert_eq!(m.n_rows(), 300);
        assert!(m.labels().is_some());
        assert!(c.matrix(Variant::V1a, 2016).unwrap().labels().is_none());
    }
}
