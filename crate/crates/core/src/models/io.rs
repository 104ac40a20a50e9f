//! Plain-text model files.
//!
//! ```text
//! dacml-model v1
//! [spec]      family, seed and every hyperparameter
//! [meta]      training facts (variant, split, loss curve, warnings)
//! [features]  name<TAB>mean<TAB>std<TAB>constant
//! [trees] | [linear] | [network]
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved model
//! reproduces its predictions bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{
    fmt_f64, EnsembleKind, Family, Layer, LinearModel, ModelParams, ModelSpec, Network, Node, TrainedModel,
    TrainingMeta, Tree, TreeEnsemble,
};
use crate::error::{Error, Result};
use crate::features::{SplitConfig, StandardizationStats, Variant};

pub const HEADER: &str = "dacml-model v1";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

pub fn to_text(m: &TrainedModel) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "{HEADER}");
    let _ = writeln!(w, "[spec]");
    let _ = writeln!(w, "family = {}", m.spec.family);
    let _ = writeln!(w, "seed = {}", m.spec.seed);
    for (k, v) in &m.spec.params {
        let _ = writeln!(w, "{k} = {v}");
    }

    let meta = &m.meta;
    let _ = writeln!(w, "[meta]");
    if let Some(v) = meta.variant {
        let _ = writeln!(w, "variant = {}", v.code());
    }
    if let Some(y) = meta.year {
        let _ = writeln!(w, "year = {y}");
    }
    if let Some(sp) = &meta.split {
        let _ = writeln!(w, "split_ratio = {}", fmt_f64(sp.ratio));
        let _ = writeln!(w, "split_seed = {}", sp.seed);
        let _ = writeln!(w, "split_stratify = {}", sp.stratify);
    }
    let _ = writeln!(w, "n_train = {}", meta.n_train);
    let _ = writeln!(w, "n_positive = {}", meta.n_positive);
    let _ = writeln!(w, "converged = {}", meta.converged);
    let _ = writeln!(w, "loss_curve = {}", join(&meta.loss_curve));
    for warning in &meta.warnings {
        let _ = writeln!(w, "warning = {}", warning.replace('\n', " "));
    }

    let _ = writeln!(w, "[features]");
    let st = &m.stats;
    for (j, name) in m.features.iter().enumerate() {
        let _ = writeln!(
            w,
            "{name}\t{}\t{}\t{}",
            fmt_f64(st.means[j]),
            fmt_f64(st.stds[j]),
            u8::from(st.constant[j])
        );
    }

    match &m.params {
        ModelParams::Trees(e) => {
            let kind = match e.kind {
                EnsembleKind::Boosted => "boosted",
                EnsembleKind::Averaged => "averaged",
            };
            let _ = writeln!(w, "[trees]");
            let _ = writeln!(w, "kind = {kind}");
            let _ = writeln!(w, "base = {}", fmt_f64(e.base));
            for t in &e.trees {
                let _ = writeln!(w, "tree {}", t.nodes.len());
                for n in &t.nodes {
                    let _ = match n {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                            gain,
                        } => writeln!(
                            w,
                            "S {feature} {} {left} {right} {}",
                            fmt_f64(*threshold),
                            fmt_f64(*gain)
                        ),
                        Node::Leaf { value } => writeln!(w, "L {}", fmt_f64(*value)),
                    };
                }
            }
        }
        ModelParams::Linear(l) => {
            let _ = writeln!(w, "[linear]");
            let _ = writeln!(w, "intercept = {}", fmt_f64(l.intercept));
            let _ = writeln!(w, "coefficients = {}", join(&l.coefficients));
        }
        ModelParams::Network(n) => {
            let _ = writeln!(w, "[network]");
            for layer in &n.layers {
                let _ = writeln!(w, "layer {} {}", layer.n_in, layer.n_out);
                for o in 0..layer.n_out {
                    let _ = writeln!(
                        w,
                        "w {}",
                        join(&layer.weights[o * layer.n_in..(o + 1) * layer.n_in])
                    );
                }
                let _ = writeln!(w, "b {}", join(&layer.biases));
            }
        }
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner.next().map(|(i, l)| (i + 1, l))
    }

    fn peek(&mut self) -> Option<&'a str> {
        self.inner.peek().map(|(_, l)| *l)
    }
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::ModelFormat(format!("line {line}: {msg}"))
}

fn num<T: FromStr>(line: usize, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| err(line, format!("cannot parse {s:?}")))
}

fn nums(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|x| num(line, x)).collect()
}

fn key_value(line: usize, s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| err(line, format!("expected key = value, got {s:?}")))
}

pub fn from_text(text: &str) -> Result<TrainedModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate().peekable(),
    };
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        Some((_, h)) => {
            return Err(Error::ModelFormat(format!(
                "unsupported model header {h:?}, expected {HEADER:?}"
            )))
        }
        None => return Err(Error::ModelFormat("empty model file".into())),
    }

    let section = |lines: &mut Lines, name: &str| -> Result<()> {
        match lines.next() {
            Some((_, l)) if l.trim() == name => Ok(()),
            Some((n, l)) => Err(err(n, format!("expected {name}, got {l:?}"))),
            None => Err(Error::ModelFormat(format!("missing {name}"))),
        }
    };
    let in_section = |lines: &mut Lines| lines.peek().is_some_and(|l| !l.starts_with('['));

    section(&mut lines, "[spec]")?;
    let (n, l) = lines
        .next()
        .ok_or_else(|| Error::ModelFormat("truncated spec".into()))?;
    let (k, v) = key_value(n, l)?;
    if k != "family" {
        return Err(err(n, "spec must start with family"));
    }
    let family: Family = v.parse().map_err(|e| err(n, e))?;
    let mut spec = ModelSpec::new(family, 0);
    while in_section(&mut lines) {
        let (n, l) = lines.next().expect("peeked");
        let (k, v) = key_value(n, l)?;
        if k == "seed" {
            spec.seed = num(n, v)?;
        } else {
            spec.set_str(k, v).map_err(|e| err(n, e))?;
        }
    }
    spec.validate()?;

    section(&mut lines, "[meta]")?;
    let mut meta = TrainingMeta::default();
    let mut split = SplitConfig::default();
    let mut has_split = false;
    while in_section(&mut lines) {
        let (n, l) = lines.next().expect("peeked");
        let (k, v) = key_value(n, l)?;
        match k {
            "variant" => meta.variant = Some(Variant::from_str(v).map_err(|e| err(n, e))?),
            "year" => meta.year = Some(num(n, v)?),
            "split_ratio" => {
                split.ratio = num(n, v)?;
                has_split = true;
            }
            "split_seed" => split.seed = num(n, v)?,
            "split_stratify" => split.stratify = num(n, v)?,
            "n_train" => meta.n_train = num(n, v)?,
            "n_positive" => meta.n_positive = num(n, v)?,
            "converged" => meta.converged = num(n, v)?,
            "loss_curve" => meta.loss_curve = nums(n, v)?,
            "warning" => meta.warnings.push(v.to_string()),
            _ => return Err(err(n, format!("unknown meta key {k:?}"))),
        }
    }
    meta.split = has_split.then_some(split);

    section(&mut lines, "[features]")?;
    let mut names = Vec::new();
    let (mut means, mut stds, mut constant) = (Vec::new(), Vec::new(), Vec::new());
    while in_section(&mut lines) {
        let (n, l) = lines.next().expect("peeked");
        let parts: Vec<&str> = l.split('\t').collect();
        let [name, mean, std, c] = parts.as_slice() else {
            return Err(err(n, "feature lines need 4 tab-separated fields"));
        };
        names.push(name.to_string());
        means.push(num(n, mean)?);
        stds.push(num(n, std)?);
        constant.push(*c == "1");
    }
    let p = names.len();
    let stats = StandardizationStats {
        names: names.clone(),
        means,
        stds,
        constant,
    };

    let (n, head) = lines
        .next()
        .ok_or_else(|| Error::ModelFormat("missing parameter section".into()))?;
    let params = match head.trim() {
        "[trees]" => {
            let kv = |lines: &mut Lines, key: &str| -> Result<(usize, String)> {
                let (n, l) = lines.next().ok_or_else(|| err(n, "truncated trees"))?;
                let (k, v) = key_value(n, l)?;
                if k != key {
                    return Err(err(n, format!("expected {key}")));
                }
                Ok((n, v.to_string()))
            };
            let (kn, kind) = kv(&mut lines, "kind")?;
            let kind = match kind.as_str() {
                "boosted" => EnsembleKind::Boosted,
                "averaged" => EnsembleKind::Averaged,
                other => return Err(err(kn, format!("unknown ensemble kind {other:?}"))),
            };
            let (bn, base) = kv(&mut lines, "base")?;
            let base = num(bn, &base)?;
            let mut trees = Vec::new();
            while let Some((n, l)) = lines.next() {
                let count: usize = match l.strip_prefix("tree ") {
                    Some(c) => num(n, c)?,
                    None => return Err(err(n, format!("expected tree, got {l:?}"))),
                };
                let mut nodes = Vec::with_capacity(count);
                for _ in 0..count {
                    let (n, l) = lines.next().ok_or_else(|| err(n, "truncated tree"))?;
                    let f: Vec<&str> = l.split_whitespace().collect();
                    let node = match f.as_slice() {
                        ["L", v] => Node::Leaf { value: num(n, v)? },
                        ["S", feat, t, left, right, gain] => Node::Split {
                            feature: num(n, feat)?,
                            threshold: num(n, t)?,
                            left: num(n, left)?,
                            right: num(n, right)?,
                            gain: num(n, gain)?,
                        },
                        _ => return Err(err(n, format!("bad node {l:?}"))),
                    };
                    if let Node::Split {
                        feature, left, right, ..
                    } = node
                    {
                        if feature >= p || left >= count || right >= count {
                            return Err(err(n, "node index out of range"));
                        }
                    }
                    nodes.push(node);
                }
                if nodes.is_empty() {
                    return Err(err(n, "empty tree"));
                }
                trees.push(Tree { nodes });
            }
            ModelParams::Trees(TreeEnsemble { kind, base, trees })
        }
        "[linear]" => {
            let mut intercept = None;
            let mut coefficients = None;
            while let Some((n, l)) = lines.next() {
                let (k, v) = key_value(n, l)?;
                match k {
                    "intercept" => intercept = Some(num(n, v)?),
                    "coefficients" => coefficients = Some(nums(n, v)?),
                    _ => return Err(err(n, format!("unknown key {k:?}"))),
                }
            }
            let (Some(intercept), Some(coefficients)) = (intercept, coefficients) else {
                return Err(Error::ModelFormat("linear model lacks parameters".into()));
            };
            if coefficients.len() != p {
                return Err(Error::ModelFormat(format!(
                    "{} coefficients for {p} features",
                    coefficients.len()
                )));
            }
            ModelParams::Linear(LinearModel {
                intercept,
                coefficients,
            })
        }
        "[network]" => {
            let mut layers = Vec::new();
            while let Some((n, l)) = lines.next() {
                let dims: Vec<usize> = match l.strip_prefix("layer ") {
                    Some(d) => d.split_whitespace().map(|x| num(n, x)).collect::<Result<_>>()?,
                    None => return Err(err(n, format!("expected layer, got {l:?}"))),
                };
                let [n_in, n_out] = dims[..] else {
                    return Err(err(n, "layer needs two sizes"));
                };
                let mut weights = Vec::with_capacity(n_in * n_out);
                for _ in 0..n_out {
                    let (n, l) = lines.next().ok_or_else(|| err(n, "truncated layer"))?;
                    let row = nums(n, l.strip_prefix("w ").ok_or_else(|| err(n, "expected w"))?)?;
                    if row.len() != n_in {
                        return Err(err(n, "weight row length"));
                    }
                    weights.extend(row);
                }
                let (bn, l) = lines.next().ok_or_else(|| err(n, "truncated layer"))?;
                let biases = nums(bn, l.strip_prefix("b ").ok_or_else(|| err(bn, "expected b"))?)?;
                if biases.len() != n_out {
                    return Err(err(bn, "bias length"));
                }
                layers.push(Layer {
                    n_in,
                    n_out,
                    weights,
                    biases,
                });
            }
            if layers.first().is_none_or(|l| l.n_in != p) {
                return Err(Error::ModelFormat(
                    "network input size differs from feature count".into(),
                ));
            }
            ModelParams::Network(Network { layers })
        }
        other => return Err(err(n, format!("unknown parameter section {other:?}"))),
    };

    Ok(TrainedModel {
        spec,
        features: names,
        stats,
        params,
        meta,
    })
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::toy;
    use crate::models::train;

    #[test]
    fn round_trip_preserves_predictions_exactly() {
        let m = toy(120, 9);
        for f in Family::ALL {
            let mut model = train(&ModelSpec::new(f, 3), &m).unwrap();
            model.meta.split = Some(SplitConfig::default());
            model.meta.duration_secs = 0.0;
            let back = from_text(&to_text(&model)).unwrap();
            assert_eq!(back, model, "{f}");
            let a = model.predict_proba(&m).unwrap();
            let b = back.predict_proba(&m).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_unknown_versions_and_garbage() {
        assert!(matches!(
            from_text("dacml-model v9\n"),
            Err(Error::ModelFormat(_))
        ));
        assert!(matches!(from_text(""), Err(Error::ModelFormat(_))));
        let m = toy(60, 1);
        let text = to_text(&train(&ModelSpec::new(Family::Glm, 0), &m).unwrap());
        let broken = text.replace("coefficients = ", "coefficients = 1 ");
        assert!(from_text(&broken).is_err());
    }
}
