//! Markdown report assembled from the CSV artifacts of earlier stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use crate::automl::F1Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    pub title: String,
    pub method: String,
    /// (feature, relative importance), descending.
    pub rows: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticTable {
    pub group: String,
    pub n_tracts: usize,
    pub rows: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendTable {
    pub years: Vec<u16>,
    pub counts: Vec<usize>,
    /// (feature, r, method).
    pub rows: Vec<(String, Option<f64>, String)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportInputs {
    pub grid: Option<F1Grid>,
    pub importance: Vec<ImportanceTable>,
    pub diagnostics: Vec<DiagnosticTable>,
    pub counts: Option<BTreeMap<u16, usize>>,
    pub trend: Option<TrendTable>,
}

fn opt_num(s: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    s.trim()
        .parse()
        .map(Some)
        .map_err(|_| Error::Schema(format!("expected a number, got {s:?}")))
}

fn records<R: Read>(input: R, expect: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    for (i, e) in expect.iter().enumerate() {
        if header.get(i) != Some(*e) {
            return Err(Error::Schema(format!(
                "expected column {} to be {e:?}, found {:?}",
                i + 1,
                header.get(i).unwrap_or("")
            )));
        }
    }
    Ok(rdr.records().collect::<std::result::Result<_, _>>()?)
}

/// Read an importance CSV written by `ImportanceReport::write_csv`.
pub fn read_importance<R: Read>(title: &str, input: R) -> Result<ImportanceTable> {
    let recs = records(input, &["rank", "feature", "raw", "relative", "method"])?;
    let method = recs.first().map_or(String::new(), |r| r[4].to_string());
    let rows = recs
        .iter()
        .map(|r| Ok((r[1].to_string(), opt_num(&r[3])?.unwrap_or(0.0))))
        .collect::<Result<_>>()?;
    Ok(ImportanceTable {
        title: title.to_string(),
        method,
        rows,
    })
}

/// Read error-group rankings; one table per group in file order.
pub fn read_diagnostics<R: Read>(input: R) -> Result<Vec<DiagnosticTable>> {
    let recs = records(input, &["group", "rank", "indicator", "median_delta", "n_tracts"])?;
    let mut out: Vec<DiagnosticTable> = Vec::new();
    for r in &recs {
        let n = r[4]
            .parse()
            .map_err(|_| Error::Schema(format!("bad tract count {:?}", &r[4])))?;
        if out.last().is_none_or(|t| t.group != r[0]) {
            out.push(DiagnosticTable {
                group: r[0].to_string(),
                n_tracts: n,
                rows: Vec::new(),
            });
        }
        let t = out.last_mut().expect("pushed above");
        t.rows.push((r[2].to_string(), opt_num(&r[3])?));
    }
    Ok(out)
}

/// `year,dac_count,...` rows.
pub fn read_counts<R: Read>(input: R) -> Result<BTreeMap<u16, usize>> {
    let recs = records(input, &["year", "dac_count"])?;
    recs.iter()
        .map(|r| {
            let y = r[0]
                .parse()
                .map_err(|_| Error::Schema(format!("bad year {:?}", &r[0])))?;
            let c = r[1]
                .parse()
                .map_err(|_| Error::Schema(format!("bad count {:?}", &r[1])))?;
            Ok((y, c))
        })
        .collect()
}

/// Read a trend CSV written by `TrendReport::write_csv`.
pub fn read_trend<R: Read>(input: R) -> Result<TrendTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().take(3).collect::<Vec<_>>() != ["series", "r", "method"] {
        return Err(Error::Schema("trend file must start with series,r,method".into()));
    }
    let years = header
        .iter()
        .skip(3)
        .map(|y| {
            y.parse()
                .map_err(|_| Error::Schema(format!("bad year column {y:?}")))
        })
        .collect::<Result<Vec<u16>>>()?;
    let mut counts = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if &rec[0] == "dac_count" {
            counts = rec
                .iter()
                .skip(3)
                .map(|c| c.parse().map_err(|_| Error::Schema(format!("bad count {c:?}"))))
                .collect::<Result<_>>()?;
        } else {
            rows.push((rec[0].to_string(), opt_num(&rec[1])?, rec[2].to_string()));
        }
    }
    Ok(TrendTable { years, counts, rows })
}

fn f2(x: Option<f64>) -> String {
    x.map_or("-".to_string(), |v| format!("{v:.2}"))
}

/// Render every available section; missing ones get a one-line notice.
pub fn emit_report(inputs: &ReportInputs, top_k: usize) -> String {
    let mut s = String::from("# DAC classification report\n\n");

    s.push_str("## F1 by feature variant and model family\n\n");
    match &inputs.grid {
        Some(g) => {
            s.push_str(&g.to_markdown());
            if let Some((v, f, f1)) = g.best() {
                let _ = writeln!(s, "\nBest cell: {f} on {} (F1 {f1:.2}).", v.label());
            }
        }
        None => s.push_str("_No F1 grid available._\n"),
    }

    s.push_str("\n## Feature importance\n");
    if inputs.importance.is_empty() {
        s.push_str("\n_No importance tables available._\n");
    }
    for t in &inputs.importance {
        let _ = write!(
            s,
            "\n### {} ({})\n\n| rank | feature | relative |\n|---:|---|---:|\n",
            t.title, t.method
        );
        for (i, (f, r)) in t.rows.iter().take(top_k).enumerate() {
            let _ = writeln!(s, "| {} | {f} | {r:.3} |", i + 1);
        }
    }

    s.push_str("\n## Error diagnostics\n");
    if inputs.diagnostics.is_empty() {
        s.push_str("\n_No error diagnostics available._\n");
    }
    for t in &inputs.diagnostics {
        let _ = write!(
            s,
            "\n### {} ({} tracts)\n\n| rank | indicator | median delta vs TP |\n|---:|---|---:|\n",
            t.group, t.n_tracts
        );
        for (i, (ind, d)) in t.rows.iter().take(top_k).enumerate() {
            let _ = writeln!(s, "| {} | {ind} | {} |", i + 1, f2(*d));
        }
    }

    s.push_str("\n## DAC estimates by year\n\n");
    let counts = inputs.counts.clone().or_else(|| {
        inputs
            .trend
            .as_ref()
            .map(|t| t.years.iter().copied().zip(t.counts.iter().copied()).collect())
    });
    match counts {
        Some(c) if !c.is_empty() => {
            s.push_str("| year | DAC tracts |\n|---:|---:|\n");
            for (y, n) in c {
                let _ = writeln!(s, "| {y} | {n} |");
            }
        }
        _ => s.push_str("_No yearly estimates available._\n"),
    }

    s.push_str("\n## Trend correlations\n\n");
    match &inputs.trend {
        Some(t) if !t.rows.is_empty() => {
            s.push_str("| feature | r | method |\n|---|---:|---|\n");
            for (f, r, m) in &t.rows {
                let _ = writeln!(s, "| {f} | {} | {m} |", f2(*r));
            }
        }
        _ => s.push_str("_No trend correlations available._\n"),
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Variant;
    use crate::models::Family;

    #[test]
    fn empty_inputs_give_notices() {
        let s = emit_report(&ReportInputs::default(), 10);
        assert_eq!(s.matches("_No ").count(), 5);
    }

    #[test]
    fn grid_section_has_one_row_per_variant() {
        let cells = Variant::ALL
            .iter()
            .enumerate()
            .map(|(i, _)| {
                Family::ALL
                    .iter()
                    .enumerate()
                    .map(|(j, _)| Some(0.5 + 0.01 * (i + j) as f64))
                    .collect()
            })
            .collect();
        let g = F1Grid::new(Variant::ALL.to_vec(), Family::ALL.to_vec(), cells);
        let s = emit_report(
            &ReportInputs {
                grid: Some(g),
                ..Default::default()
            },
            10,
        );
        let rows = s
            .lines()
            .filter(|l| l.starts_with("| ") && l.contains("**"))
            .count();
        assert_eq!(rows, 5);
        assert!(s.contains("| LI(R+W)+ACS |"));
    }

    #[test]
    fn tables_round_trip_through_csv() {
        let imp = "rank,feature,raw,relative,method\n1,a,4,1,gedeon\n2,b,1,0.25,gedeon\n";
        let t = read_importance("GBM / v2b", imp.as_bytes()).unwrap();
        assert_eq!(t.rows, vec![("a".into(), 1.0), ("b".into(), 0.25)]);
        let diag = "group,rank,indicator,median_delta,n_tracts\nFP,1,x,3,2\nFN,1,y,-5,4\nFN,2,z,,4\n";
        let d = read_diagnostics(diag.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[1].rows[1], ("z".into(), None));
        let trend = "series,r,method,2013,2014,2015\ndac_count,,,5,4,3\nf,-1,pearson,1,2,3\n";
        let t = read_trend(trend.as_bytes()).unwrap();
        assert_eq!(t.counts, vec![5, 4, 3]);
        let s = emit_report(
            &ReportInputs {
                trend: Some(t),
                ..Default::default()
            },
            10,
        );
        assert!(s.contains("| 2014 | 4 |"));
        assert!(s.contains("| f | -1.00 | pearson |"));
    }
}
