//! Identifiers, source records, and their validation rules.
//!
//! Counts are kept as non-negative integers exactly as published; every
//! downstream computation converts to `f64`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of burden indicators per tract.
pub const INDICATOR_COUNT: usize = 36;

const BUNDLED_INDICATORS: &str = include_str!("../data/indicators.txt");
const BUNDLED_INCOME_BINS: &str = include_str!("../data/income_bins.txt");

/// A geographic code made of a fixed number of decimal digits.
pub trait Geocode: Clone + Ord + Eq + std::hash::Hash + fmt::Display + Send + Sync {
    const DIGITS: usize;
    const NAME: &'static str;

    fn from_validated(code: String) -> Self;
    fn as_str(&self) -> &str;

    fn parse(code: &str) -> Result<Self> {
        let code = code.trim();
        if code.len() != Self::DIGITS || !code.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::invalid(format!(
                "{} must be exactly {} decimal digits, got {code:?}",
                Self::NAME,
                Self::DIGITS
            )));
        }
        Ok(Self::from_validated(code.to_string()))
    }

    /// The enclosing census tract: the first 11 digits.
    fn tract(&self) -> TractId {
        TractId(self.as_str()[..TractId::DIGITS].to_string())
    }
}

macro_rules! geocode_type {
    ($(#[$meta:meta])* $name:ident, $digits:expr, $label:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl Geocode for $name {
            const DIGITS: usize = $digits;
            const NAME: &'static str = $label;

            fn from_validated(code: String) -> Self {
                $name(code)
            }

            fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl $name {
            pub fn parse(code: &str) -> Result<Self> {
                <$name as Geocode>::parse(code)
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::str::FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                <$name as Geocode>::parse(s)
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(s: String) -> Result<Self> {
                <$name as Geocode>::parse(&s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }
    };
}

geocode_type!(
    /// Census tract: 2 state + 3 county + 6 tract digits.
    TractId,
    11,
    "tract id"
);
geocode_type!(
    /// Census block: tract digits followed by a 4-digit block number.
    BlockId,
    15,
    "block id"
);
geocode_type!(
    /// Census block group: tract digits followed by one block-group digit.
    BlockGroupId,
    12,
    "block group id"
);

/// Residence-area or workplace-area characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LodesKind {
    Rac,
    Wac,
}

impl LodesKind {
    pub fn prefix(self) -> &'static str {
        match self {
            LodesKind::Rac => "rac",
            LodesKind::Wac => "wac",
        }
    }
}

impl fmt::Display for LodesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LodesKind::Rac => "RAC",
            LodesKind::Wac => "WAC",
        })
    }
}

/// The categorical groups a LODES job count is broken down by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinGroup {
    Age,
    Earnings,
    Industry,
    Race,
    Ethnicity,
    Education,
    Sex,
    FirmAge,
    FirmSize,
}

const AGE_LABELS: [&str; 3] = ["le29", "30_54", "ge55"];
const EARNINGS_LABELS: [&str; 3] = ["le1250", "1251_3333", "gt3333"];
const INDUSTRY_LABELS: [&str; 20] = [
    "agriculture",
    "mining",
    "utilities",
    "construction",
    "manufacturing",
    "wholesale",
    "retail",
    "transportation_warehousing",
    "information",
    "finance_insurance",
    "real_estate",
    "professional_services",
    "management",
    "admin_support_waste",
    "educational_services",
    "health_care",
    "arts_recreation",
    "accommodation_food",
    "other_services",
    "public_administration",
];
const RACE_LABELS: [&str; 6] = ["white", "black", "aian", "asian", "nhpi", "two_or_more"];
const ETHNICITY_LABELS: [&str; 2] = ["not_hispanic", "hispanic"];
const EDUCATION_LABELS: [&str; 4] = ["lt_hs", "hs", "some_college", "bachelor_plus"];
const SEX_LABELS: [&str; 2] = ["male", "female"];
const FIRM_AGE_LABELS: [&str; 5] = ["0_1", "2_3", "4_5", "6_10", "11_plus"];
const FIRM_SIZE_LABELS: [&str; 5] = ["0_19", "20_49", "50_249", "250_499", "500_plus"];

impl BinGroup {
    /// Groups published for both residence and workplace files.
    pub const SHARED: [BinGroup; 7] = [
        BinGroup::Age,
        BinGroup::Earnings,
        BinGroup::Industry,
        BinGroup::Race,
        BinGroup::Ethnicity,
        BinGroup::Education,
        BinGroup::Sex,
    ];
    pub const WAC_ONLY: [BinGroup; 2] = [BinGroup::FirmAge, BinGroup::FirmSize];

    pub fn for_kind(kind: LodesKind) -> Vec<BinGroup> {
        let mut groups = Self::SHARED.to_vec();
        if kind == LodesKind::Wac {
            groups.extend(Self::WAC_ONLY);
        }
        groups
    }

    /// Logical field prefix, as used in column maps.
    pub fn key(self) -> &'static str {
        match self {
            BinGroup::Age => "age",
            BinGroup::Earnings => "earnings",
            BinGroup::Industry => "industry",
            BinGroup::Race => "race",
            BinGroup::Ethnicity => "ethnicity",
            BinGroup::Education => "education",
            BinGroup::Sex => "sex",
            BinGroup::FirmAge => "firm_age",
            BinGroup::FirmSize => "firm_size",
        }
    }

    /// Prefix used in feature names.
    pub fn feature_stem(self) -> &'static str {
        match self {
            BinGroup::Age => "age",
            BinGroup::Earnings => "earn",
            BinGroup::Industry => "ind",
            BinGroup::Race => "race",
            BinGroup::Ethnicity => "eth",
            BinGroup::Education => "edu",
            BinGroup::Sex => "sex",
            BinGroup::FirmAge => "firmage",
            BinGroup::FirmSize => "firmsize",
        }
    }

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            BinGroup::Age => &AGE_LABELS,
            BinGroup::Earnings => &EARNINGS_LABELS,
            BinGroup::Industry => &INDUSTRY_LABELS,
            BinGroup::Race => &RACE_LABELS,
            BinGroup::Ethnicity => &ETHNICITY_LABELS,
            BinGroup::Education => &EDUCATION_LABELS,
            BinGroup::Sex => &SEX_LABELS,
            BinGroup::FirmAge => &FIRM_AGE_LABELS,
            BinGroup::FirmSize => &FIRM_SIZE_LABELS,
        }
    }

    pub fn len(self) -> usize {
        self.labels().len()
    }

    /// Age, sex, race and ethnicity: the attributes the income/industry
    /// variants leave out.
    pub fn is_demographic(self) -> bool {
        matches!(
            self,
            BinGroup::Age | BinGroup::Race | BinGroup::Ethnicity | BinGroup::Sex
        )
    }
}

/// Job counts for one geography, broken down by every published bin group.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LodesCounts {
    pub total_jobs: u64,
    pub age: [u64; 3],
    pub earnings: [u64; 3],
    pub industry: [u64; 20],
    pub race: [u64; 6],
    pub ethnicity: [u64; 2],
    pub education: [u64; 4],
    pub sex: [u64; 2],
    pub firm_age: Option<[u64; 5]>,
    pub firm_size: Option<[u64; 5]>,
}

impl LodesCounts {
    pub fn group(&self, group: BinGroup) -> Option<&[u64]> {
        match group {
            BinGroup::Age => Some(&self.age),
            BinGroup::Earnings => Some(&self.earnings),
            BinGroup::Industry => Some(&self.industry),
            BinGroup::Race => Some(&self.race),
            BinGroup::Ethnicity => Some(&self.ethnicity),
            BinGroup::Education => Some(&self.education),
            BinGroup::Sex => Some(&self.sex),
            BinGroup::FirmAge => self.firm_age.as_ref().map(|a| a.as_slice()),
            BinGroup::FirmSize => self.firm_size.as_ref().map(|a| a.as_slice()),
        }
    }

    /// Mutable access; WAC-only groups are created on demand.
    pub fn group_mut(&mut self, group: BinGroup) -> &mut [u64] {
        match group {
            BinGroup::Age => &mut self.age,
            BinGroup::Earnings => &mut self.earnings,
            BinGroup::Industry => &mut self.industry,
            BinGroup::Race => &mut self.race,
            BinGroup::Ethnicity => &mut self.ethnicity,
            BinGroup::Education => &mut self.education,
            BinGroup::Sex => &mut self.sex,
            BinGroup::FirmAge => self.firm_age.get_or_insert([0; 5]),
            BinGroup::FirmSize => self.firm_size.get_or_insert([0; 5]),
        }
    }

    pub fn add(&mut self, other: &LodesCounts) {
        self.total_jobs += other.total_jobs;
        for g in BinGroup::SHARED.into_iter().chain(BinGroup::WAC_ONLY) {
            if let Some(src) = other.group(g) {
                for (d, s) in self.group_mut(g).iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

/// A LODES record at any geography level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LodesRecord<G> {
    pub geo: G,
    pub kind: LodesKind,
    pub counts: LodesCounts,
}

pub type LodesBlockRecord = LodesRecord<BlockId>;
pub type LodesTractRecord = LodesRecord<TractId>;

/// Household income bins: lower edge of each annual-income range in dollars.
/// The last range is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncomeBins {
    lower_edges: Vec<u64>,
}

impl IncomeBins {
    pub fn new(lower_edges: Vec<u64>) -> Result<Self> {
        if lower_edges.is_empty() {
            return Err(Error::invalid("income bin manifest is empty"));
        }
        if let Some(w) = lower_edges.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "income bin edges must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { lower_edges })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let edges = manifest_lines(text)
            .map(|l| {
                l.parse::<u64>()
                    .map_err(|_| Error::invalid(format!("bad income bin edge {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(edges)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_INCOME_BINS).expect("bundled income bins are valid")
    }

    pub fn len(&self) -> usize {
        self.lower_edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower_edges.is_empty()
    }

    pub fn lower_edges(&self) -> &[u64] {
        &self.lower_edges
    }

    /// Feature-name suffix for bin `i`, e.g. `lt10000`, `10000_14999`, `ge200000`.
    pub fn label(&self, i: usize) -> String {
        let lo = self.lower_edges[i];
        match self.lower_edges.get(i + 1) {
            Some(&hi) if lo == 0 => format!("lt{hi}"),
            Some(&hi) => format!("{lo}_{}", hi - 1),
            None => format!("ge{lo}"),
        }
    }
}

impl Default for IncomeBins {
    fn default() -> Self {
        Self::bundled()
    }
}

/// ACS household income distribution for one geography.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcsRecord<G> {
    pub geo: G,
    pub household_counts: Vec<u64>,
    pub total_households: u64,
    pub total_population: u64,
}

pub type AcsBlockGroupRecord = AcsRecord<BlockGroupId>;
pub type AcsTractRecord = AcsRecord<TractId>;

/// Ordered indicator names, loaded from a manifest file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorManifest {
    names: Arc<[String]>,
}

impl IndicatorManifest {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate indicator name {n:?}")));
            }
        }
        Ok(Self { names: names.into() })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(manifest_lines(text).map(str::to_string).collect())
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_INDICATORS).expect("bundled indicator manifest is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shared_names(&self) -> Arc<[String]> {
        Arc::clone(&self.names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for IndicatorManifest {
    fn default() -> Self {
        Self::bundled()
    }
}

fn manifest_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// A tract's burden indicators: raw values and, once scored, percentiles.
/// Missing values are `None` and stay missing.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorVector {
    pub names: Arc<[String]>,
    pub values: Vec<Option<f64>>,
    pub percentiles: Option<Vec<Option<f64>>>,
}

impl IndicatorVector {
    pub fn value(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.values[i]
    }

    pub fn percentile(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.percentiles.as_ref()?[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DacRecord {
    pub tract: TractId,
    pub indicators: IndicatorVector,
    pub dac: bool,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
    pub severity: Severity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.rule)
    }
}

/// How strictly bin-sum mismatches are treated. Published LODES data is
/// noise-infused, so mismatches are warnings unless `strict_sums` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ValidationPolicy {
    pub strict_sums: bool,
}

impl ValidationPolicy {
    pub const STRICT: Self = Self { strict_sums: true };

    fn sum_severity(&self) -> Severity {
        if self.strict_sums {
            Severity::Error
        } else {
            Severity::Warning
        }
    }
}

/// Outcome of validating one record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    /// No violations of any severity.
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// No error-severity violations.
    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Warning)
    }

    fn error(&mut self, field: impl Into<String>, rule: impl Into<String>) {
        self.push(field, rule, Severity::Error);
    }

    fn push(&mut self, field: impl Into<String>, rule: impl Into<String>, severity: Severity) {
        self.violations.push(Violation {
            field: field.into(),
            rule: rule.into(),
            severity,
        });
    }
}

pub trait Validate {
    fn validate(&self, policy: &ValidationPolicy) -> Validation;
}

/// Check every invariant of a parsed record.
pub fn validate_record<R: Validate + ?Sized>(record: &R, policy: &ValidationPolicy) -> Validation {
    record.validate(policy)
}

impl<G> Validate for LodesRecord<G> {
    fn validate(&self, policy: &ValidationPolicy) -> Validation {
        let mut v = Validation::default();
        let c = &self.counts;
        for group in BinGroup::SHARED {
            let sum: u64 = c.group(group).unwrap_or_default().iter().sum();
            if sum != c.total_jobs {
                v.push(
                    group.key(),
                    format!("bins sum to {sum}, total_jobs is {}", c.total_jobs),
                    policy.sum_severity(),
                );
            }
        }
        for group in BinGroup::WAC_ONLY {
            let present = c.group(group).is_some();
            match (self.kind, present) {
                (LodesKind::Rac, true) => v.error(group.key(), format!("{} present on RAC", group.key())),
                (LodesKind::Wac, false) => v.error(group.key(), format!("{} missing on WAC", group.key())),
                _ => {}
            }
        }
        v
    }
}

impl<G> Validate for AcsRecord<G> {
    fn validate(&self, policy: &ValidationPolicy) -> Validation {
        let mut v = Validation::default();
        let sum: u64 = self.household_counts.iter().sum();
        if sum != self.total_households {
            v.push(
                "household_counts",
                format!("bins sum to {sum}, total_households is {}", self.total_households),
                policy.sum_severity(),
            );
        }
        v
    }
}

impl Validate for IncomeBins {
    fn validate(&self, _policy: &ValidationPolicy) -> Validation {
        let mut v = Validation::default();
        if self.lower_edges.windows(2).any(|w| w[0] >= w[1]) {
            v.error("income_bins", "bin edges must be strictly increasing");
        }
        v
    }
}

impl Validate for IndicatorVector {
    fn validate(&self, _policy: &ValidationPolicy) -> Validation {
        let mut v = Validation::default();
        if self.names.len() != INDICATOR_COUNT {
            v.error(
                "indicators",
                format!(
                    "expected {INDICATOR_COUNT} indicators, found {}",
                    self.names.len()
                ),
            );
        }
        if self.values.len() != self.names.len() {
            v.error(
                "indicators.values",
                format!("{} values for {} names", self.values.len(), self.names.len()),
            );
        }
        if let Some(pcts) = &self.percentiles {
            if pcts.len() != self.names.len() {
                v.error(
                    "indicators.percentiles",
                    format!("{} percentiles for {} names", pcts.len(), self.names.len()),
                );
            }
            for (name, p) in self.names.iter().zip(pcts) {
                if let Some(p) = p {
                    if !(0.0..=100.0).contains(p) {
                        v.error(format!("percentile.{name}"), format!("{p} outside [0, 100]"));
                    }
                }
            }
        }
        v
    }
}

/// Tolerance between a stored score and the recomputed percentile sum.
pub const SCORE_TOLERANCE: f64 = 1e-9;

impl Validate for DacRecord {
    fn validate(&self, policy: &ValidationPolicy) -> Validation {
        let mut v = self.indicators.validate(policy);
        if let Some(score) = self.score {
            match &self.indicators.percentiles {
                Some(p) if p.iter().all(Option::is_some) => {
                    let sum: f64 = p.iter().flatten().sum();
                    if (sum - score).abs() > SCORE_TOLERANCE {
                        v.error("score", format!("score {score} != percentile sum {sum}"));
                    }
                }
                _ => v.error("score", "score present without a full percentile vector"),
            }
        }
        v
    }
}
