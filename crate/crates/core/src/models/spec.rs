//! Model families and their hyperparameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six model families, in result-table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Drf,
    DeepLearning,
    Gbm,
    Glm,
    XGBoost,
    Xrt,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Drf,
        Family::DeepLearning,
        Family::Gbm,
        Family::Glm,
        Family::XGBoost,
        Family::Xrt,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Family::Drf => "DRF",
            Family::DeepLearning => "DeepLearning",
            Family::Gbm => "GBM",
            Family::Glm => "GLM",
            Family::XGBoost => "XGBoost",
            Family::Xrt => "XRT",
        }
    }

    pub fn is_tree(self) -> bool {
        matches!(self, Family::Drf | Family::Gbm | Family::XGBoost | Family::Xrt)
    }

    pub fn is_boosted(self) -> bool {
        matches!(self, Family::Gbm | Family::XGBoost)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let aliases: &[(&str, Family)] = &[
            ("mlp", Family::DeepLearning),
            ("deep_learning", Family::DeepLearning),
            ("xgb", Family::XGBoost),
        ];
        Family::ALL
            .into_iter()
            .find(|f| f.code().eq_ignore_ascii_case(s))
            .or_else(|| {
                aliases
                    .iter()
                    .find(|(a, _)| a.eq_ignore_ascii_case(s))
                    .map(|(_, f)| *f)
            })
            .ok_or_else(|| Error::invalid(format!("unknown model family {s:?}")))
    }
}

/// A hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    IntList(Vec<i64>),
    FloatList(Vec<f64>),
    /// Explicitly unset, e.g. `hidden_dropout_ratios = None`.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Bool,
    Int,
    Float,
    Str,
    IntList,
    /// A float list that may also be `None`.
    FloatListOrNull,
}

/// Format a float so that parsing it back yields the same bits.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 || (1e-5..1e16).contains(&x.abs()) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn split_list(s: &str) -> Vec<&str> {
    let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .collect()
}

impl ParamValue {
    pub fn parse(kind: ParamKind, raw: &str) -> Result<Self> {
        let raw = raw.trim();
        let bad = || Error::invalid(format!("cannot parse {raw:?} as {kind:?}"));
        Ok(match kind {
            ParamKind::Bool => match raw.to_ascii_lowercase().as_str() {
                "true" | "1" => ParamValue::Bool(true),
                "false" | "0" => ParamValue::Bool(false),
                _ => return Err(bad()),
            },
            ParamKind::Int => ParamValue::Int(raw.parse().map_err(|_| bad())?),
            ParamKind::Float => {
                // a one-element list such as `[0.0]` is accepted
                let items = split_list(raw);
                match items.as_slice() {
                    [one] => ParamValue::Float(one.parse().map_err(|_| bad())?),
                    _ => return Err(bad()),
                }
            }
            ParamKind::Str => ParamValue::Str(raw.to_string()),
            ParamKind::IntList => ParamValue::IntList(
                split_list(raw)
                    .into_iter()
                    .map(|x| x.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            ),
            ParamKind::FloatListOrNull => {
                if raw.eq_ignore_ascii_case("none") || raw.eq_ignore_ascii_case("null") {
                    ParamValue::Null
                } else {
                    ParamValue::FloatList(
                        split_list(raw)
                            .into_iter()
                            .map(|x| x.parse().map_err(|_| bad()))
                            .collect::<Result<_>>()?,
                    )
                }
            }
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(x) => Some(*x),
            ParamValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => f.write_str(&fmt_f64(*x)),
            ParamValue::Str(s) => f.write_str(s),
            ParamValue::IntList(v) => {
                let items: Vec<String> = v.iter().map(i64::to_string).collect();
                write!(f, "[{}]", items.join(","))
            }
            ParamValue::FloatList(v) => {
                let items: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
                write!(f, "[{}]", items.join(","))
            }
            ParamValue::Null => f.write_str("None"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamDef {
    pub name: &'static str,
    pub kind: ParamKind,
    pub default: ParamValue,
}

fn def(name: &'static str, kind: ParamKind, default: ParamValue) -> ParamDef {
    ParamDef { name, kind, default }
}

fn float(name: &'static str, v: f64) -> ParamDef {
    def(name, ParamKind::Float, ParamValue::Float(v))
}

fn int(name: &'static str, v: i64) -> ParamDef {
    def(name, ParamKind::Int, ParamValue::Int(v))
}

fn boolean(name: &'static str, v: bool) -> ParamDef {
    def(name, ParamKind::Bool, ParamValue::Bool(v))
}

/// Every hyperparameter a family accepts, with its default.
pub fn param_defs(family: Family) -> Vec<ParamDef> {
    let tree_common = |ntrees, depth, min_rows, msi| {
        vec![
            int("ntrees", ntrees),
            int("max_depth", depth),
            float("min_rows", min_rows),
            float("min_split_improvement", msi),
            float("col_sample_rate_per_tree", 1.0),
            float("col_sample_rate_change_per_level", 1.0),
            boolean("balance_classes", false),
        ]
    };
    match family {
        Family::Gbm => {
            let mut d = tree_common(50, 5, 10.0, 1e-5);
            d.extend([
                float("learn_rate", 0.1),
                float("sample_rate", 1.0),
                float("col_sample_rate", 1.0),
            ]);
            d
        }
        Family::XGBoost => {
            let mut d = tree_common(50, 6, 1.0, 0.0);
            d.extend([
                def("booster", ParamKind::Str, ParamValue::Str("gbtree".into())),
                float("learn_rate", 0.3),
                float("sample_rate", 1.0),
                float("col_sample_rate", 1.0),
                float("reg_alpha", 0.0),
                float("reg_lambda", 1.0),
            ]);
            d
        }
        Family::Drf | Family::Xrt => {
            let mut d = tree_common(50, 20, 1.0, 1e-5);
            d.extend([
                // -1 selects floor(sqrt(p)) candidate columns per split
                int("mtries", -1),
                float("sample_rate", 1.0),
                boolean("bootstrap", true),
            ]);
            d
        }
        Family::Glm => vec![
            float("alpha", 0.0),
            float("lambda", 1e-4),
            int("max_iterations", 100),
            float("beta_epsilon", 1e-8),
            boolean("balance_classes", false),
        ],
        Family::DeepLearning => vec![
            def("hidden", ParamKind::IntList, ParamValue::IntList(vec![50])),
            def(
                "hidden_dropout_ratios",
                ParamKind::FloatListOrNull,
                ParamValue::Null,
            ),
            float("input_dropout_ratio", 0.0),
            float("rho", 0.99),
            float("epsilon", 1e-8),
            int("epochs", 10),
            boolean("balance_classes", false),
        ],
    }
}

pub fn param_kind(family: Family, name: &str) -> Option<ParamKind> {
    param_defs(family)
        .into_iter()
        .find(|d| d.name == name)
        .map(|d| d.kind)
}

/// A model family with fully resolved hyperparameters and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
}

impl ModelSpec {
    /// Family defaults.
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            params: param_defs(family)
                .into_iter()
                .map(|d| (d.name.to_string(), d.default))
                .collect(),
            seed,
        }
    }

    /// Set one hyperparameter; unknown keys and wrongly typed values are
    /// rejected.
    pub fn set(&mut self, name: &str, value: ParamValue) -> Result<&mut Self> {
        let kind = param_kind(self.family, name)
            .ok_or_else(|| Error::invalid(format!("{} has no hyperparameter {name:?}", self.family)))?;
        let value = match (kind, value) {
            (ParamKind::Float, ParamValue::Int(i)) => ParamValue::Float(i as f64),
            (ParamKind::Float, ParamValue::FloatList(v)) if v.len() == 1 => ParamValue::Float(v[0]),
            (_, v) => v,
        };
        let ok = matches!(
            (kind, &value),
            (ParamKind::Bool, ParamValue::Bool(_))
                | (ParamKind::Int, ParamValue::Int(_))
                | (ParamKind::Float, ParamValue::Float(_))
                | (ParamKind::Str, ParamValue::Str(_))
                | (ParamKind::IntList, ParamValue::IntList(_))
                | (
                    ParamKind::FloatListOrNull,
                    ParamValue::FloatList(_) | ParamValue::Null
                )
        );
        if !ok {
            return Err(Error::invalid(format!("{name}: {value} is not a {kind:?}")));
        }
        self.params.insert(name.to_string(), value);
        Ok(self)
    }

    /// Set from text, typed by the family's schema.
    pub fn set_str(&mut self, name: &str, raw: &str) -> Result<&mut Self> {
        let kind = param_kind(self.family, name)
            .ok_or_else(|| Error::invalid(format!("{} has no hyperparameter {name:?}", self.family)))?;
        self.set(name, ParamValue::parse(kind, raw)?)
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Result<Self> {
        self.set(name, value)?;
        Ok(self)
    }

    fn get(&self, name: &str) -> &ParamValue {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("{} spec lacks {name}", self.family))
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.get(name).as_f64().expect("numeric hyperparameter")
    }

    pub fn int(&self, name: &str) -> i64 {
        match self.get(name) {
            ParamValue::Int(i) => *i,
            other => panic!("{name} is not an integer: {other}"),
        }
    }

    pub fn flag(&self, name: &str) -> bool {
        matches!(self.get(name), ParamValue::Bool(true))
    }

    pub fn int_list(&self, name: &str) -> Vec<i64> {
        match self.get(name) {
            ParamValue::IntList(v) => v.clone(),
            other => panic!("{name} is not an integer list: {other}"),
        }
    }

    pub fn float_list(&self, name: &str) -> Option<Vec<f64>> {
        match self.get(name) {
            ParamValue::FloatList(v) => Some(v.clone()),
            _ => None,
        }
    }

    /// Check key validity and value ranges.
    pub fn validate(&self) -> Result<()> {
        let defs = param_defs(self.family);
        for key in self.params.keys() {
            if !defs.iter().any(|d| d.name == key) {
                return Err(Error::invalid(format!(
                    "{} has no hyperparameter {key:?}",
                    self.family
                )));
            }
        }
        for d in &defs {
            if !self.params.contains_key(d.name) {
                return Err(Error::invalid(format!("{} spec lacks {}", self.family, d.name)));
            }
        }
        let rate = |name: &str| -> Result<()> {
            let v = self.f64(name);
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must lie in (0, 1]")))
            }
        };
        let positive = |name: &str| -> Result<()> {
            if self.int(name) >= 1 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be at least 1")))
            }
        };
        let non_negative = |name: &str| -> Result<()> {
            let v = self.f64(name);
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be non-negative")))
            }
        };
        if self.family.is_tree() {
            if self.int("ntrees") < 0 {
                return Err(Error::invalid("ntrees must be non-negative"));
            }
            positive("max_depth")?;
            if self.f64("min_rows") <= 0.0 {
                return Err(Error::invalid("min_rows must be positive"));
            }
            non_negative("min_split_improvement")?;
            rate("sample_rate")?;
            rate("col_sample_rate_per_tree")?;
            let change = self.f64("col_sample_rate_change_per_level");
            if !(change > 0.0 && change <= 2.0) {
                return Err(Error::invalid(format!(
                    "col_sample_rate_change_per_level = {change} must lie in (0, 2]"
                )));
            }
        }
        match self.family {
            Family::Gbm | Family::XGBoost => {
                rate("col_sample_rate")?;
                let lr = self.f64("learn_rate");
                if !(0.0..=1.0).contains(&lr) {
                    return Err(Error::invalid(format!("learn_rate = {lr} must lie in [0, 1]")));
                }
                if self.family == Family::XGBoost {
                    non_negative("reg_alpha")?;
                    non_negative("reg_lambda")?;
                    if !matches!(self.get("booster"), ParamValue::Str(s) if s == "gbtree") {
                        return Err(Error::invalid("only the gbtree booster is supported"));
                    }
                }
            }
            Family::Drf | Family::Xrt => {
                let m = self.int("mtries");
                if m == 0 || m < -1 {
                    return Err(Error::invalid("mtries must be -1 or at least 1"));
                }
            }
            Family::Glm => {
                let a = self.f64("alpha");
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::invalid(format!("alpha = {a} must lie in [0, 1]")));
                }
                non_negative("lambda")?;
                positive("max_iterations")?;
                non_negative("beta_epsilon")?;
            }
            Family::DeepLearning => {
                let hidden = self.int_list("hidden");
                if hidden.is_empty() || hidden.iter().any(|&h| h < 1) {
                    return Err(Error::invalid(format!(
                        "hidden layer sizes must be at least 1: {:?}",
                        hidden
                    )));
                }
                if let Some(d) = self.float_list("hidden_dropout_ratios") {
                    if d.len() != hidden.len() && d.len() != 1 {
                        return Err(Error::invalid(
                            "hidden_dropout_ratios needs one ratio, or one per hidden layer",
                        ));
                    }
                    if d.iter().any(|r| !(0.0..1.0).contains(r)) {
                        return Err(Error::invalid("dropout ratios must lie in [0, 1)"));
                    }
                }
                let idr = self.f64("input_dropout_ratio");
                if !(0.0..1.0).contains(&idr) {
                    return Err(Error::invalid("input_dropout_ratio must lie in [0, 1)"));
                }
                let rho = self.f64("rho");
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::invalid("rho must lie in [0, 1)"));
                }
                non_negative("epsilon")?;
                if self.int("epochs") < 0 {
                    return Err(Error::invalid("epochs must be non-negative"));
                }
            }
        }
        Ok(())
    }

    /// `key=value;key=value` summary in key order.
    pub fn describe(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for f in Family::ALL {
            ModelSpec::new(f, 1).validate().unwrap();
        }
    }

    #[test]
    fn every_grid_table_key_is_representable() {
        let keys: &[(Family, &[&str])] = &[
            (
                Family::Gbm,
                &[
                    "col_sample_rate",
                    "col_sample_rate_per_tree",
                    "learn_rate",
                    "max_depth",
                    "min_rows",
                    "min_split_improvement",
                    "ntrees",
                    "sample_rate",
                ],
            ),
            (
                Family::XGBoost,
                &[
                    "booster",
                    "col_sample_rate",
                    "col_sample_rate_per_tree",
                    "max_depth",
                    "min_rows",
                    "ntrees",
                    "reg_alpha",
                    "reg_lambda",
                    "sample_rate",
                ],
            ),
            (Family::Glm, &["alpha"]),
            (
                Family::DeepLearning,
                &[
                    "epsilon",
                    "hidden",
                    "hidden_dropout_ratios",
                    "input_dropout_ratio",
                    "rho",
                ],
            ),
            (
                Family::Drf,
                &[
                    "balance_classes",
                    "ntrees",
                    "max_depth",
                    "col_sample_rate_change_per_level",
                    "col_sample_rate_per_tree",
                    "min_split_improvement",
                ],
            ),
        ];
        for (f, ks) in keys {
            for k in *ks {
                assert!(param_kind(*f, k).is_some(), "{f} lacks {k}");
            }
        }
    }

    #[test]
    fn typed_parsing() {
        let mut s = ModelSpec::new(Family::DeepLearning, 0);
        s.set_str("hidden", "[50, 50, 50]").unwrap();
        s.set_str("hidden_dropout_ratios", "[0.4, 0.4, 0.4]").unwrap();
        s.validate().unwrap();
        s.set_str("hidden_dropout_ratios", "None").unwrap();
        s.validate().unwrap();
        s.set_str("hidden", "[0]").unwrap();
        assert!(s.validate().is_err());

        let mut g = ModelSpec::new(Family::Glm, 0);
        g.set_str("alpha", "[0.0]").unwrap();
        assert_eq!(g.f64("alpha"), 0.0);
        assert!(g.set_str("ntrees", "5").is_err());
    }

    #[test]
    fn range_checks() {
        let mut s = ModelSpec::new(Family::Gbm, 0);
        s.set("sample_rate", ParamValue::Float(0.0)).unwrap();
        assert!(s.validate().is_err());
        let mut s = ModelSpec::new(Family::Gbm, 0);
        s.set("learn_rate", ParamValue::Float(0.0)).unwrap();
        s.set("ntrees", ParamValue::Int(0)).unwrap();
        s.validate().unwrap();
        let mut x = ModelSpec::new(Family::XGBoost, 0);
        x.set("booster", ParamValue::Str("dart".into())).unwrap();
        assert!(x.validate().is_err());
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.1, 1e-5, 0.00001, 1e-300, 123456.789, -2.5e20, 0.0, 1.0 / 3.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(0.00001), "0.00001");
    }

    #[test]
    fn family_aliases() {
        assert_eq!("mlp".parse::<Family>().unwrap(), Family::DeepLearning);
        assert_eq!("xgb".parse::<Family>().unwrap(), Family::XGBoost);
        assert_eq!("drf".parse::<Family>().unwrap(), Family::Drf);
    }
}
