//! Source-file parsing and tract-level aggregation.
//!
//! Public census exports change column codes between releases, so every
//! parser is driven by a [`ColumnMap`] from logical field names
//! (`total_jobs`, `industry.7`, `income.3`, ...) to source column names.
//! The canonical tract-level files written by this module use the logical
//! names themselves as headers and are read back with [`ColumnMap::identity`].

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use crate::domain::{
    AcsRecord, BinGroup, DacRecord, Geocode, IncomeBins, IndicatorManifest, IndicatorVector, LodesCounts,
    LodesKind, LodesRecord, TractId, Validate, ValidationPolicy, Violation,
};
use crate::error::{Error, Result};

const LODES_RAC_MAP: &str = include_str!("../data/lodes_rac.map");
const LODES_WAC_MAP: &str = include_str!("../data/lodes_wac.map");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    LodesRac,
    LodesWac,
    Acs,
    Dac,
}

impl SourceKind {
    pub fn lodes(kind: LodesKind) -> Self {
        match kind {
            LodesKind::Rac => SourceKind::LodesRac,
            LodesKind::Wac => SourceKind::LodesWac,
        }
    }
}

/// Logical field -> source column name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub kind: SourceKind,
    entries: Vec<(String, String)>,
}

impl ColumnMap {
    pub fn new(kind: SourceKind, entries: Vec<(String, String)>) -> Result<Self> {
        let mut logical = std::collections::HashSet::new();
        let mut columns = std::collections::HashSet::new();
        for (l, c) in &entries {
            if !logical.insert(l.as_str()) {
                return Err(Error::Schema(format!("logical field {l:?} mapped twice")));
            }
            if !columns.insert(c.as_str()) {
                return Err(Error::Schema(format!("column {c:?} mapped twice")));
            }
        }
        Ok(Self { kind, entries })
    }

    /// Parse `logical_field = column_name` lines; `#` starts a comment.
    pub fn parse(kind: SourceKind, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (l, c) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("column map line {}: expected `field = column`", i + 1))
            })?;
            entries.push((l.trim().to_string(), c.trim().to_string()));
        }
        Self::new(kind, entries)
    }

    /// Map whose column names equal the logical names.
    pub fn identity(kind: SourceKind, schema: &[String]) -> Self {
        Self {
            kind,
            entries: schema.iter().map(|s| (s.clone(), s.clone())).collect(),
        }
    }

    /// Column codes of the public LODES release.
    pub fn default_lodes(kind: LodesKind) -> Self {
        let text = match kind {
            LodesKind::Rac => LODES_RAC_MAP,
            LodesKind::Wac => LODES_WAC_MAP,
        };
        Self::parse(SourceKind::lodes(kind), text).expect("bundled LODES map is valid")
    }

    pub fn default_acs(bins: &IncomeBins) -> Self {
        let mut entries = vec![
            ("geocode".into(), "GEOID".into()),
            ("total_households".into(), "households".into()),
            ("total_population".into(), "population".into()),
        ];
        for i in 1..=bins.len() {
            entries.push((format!("income.{i}"), format!("hh_income_{i:02}")));
        }
        Self {
            kind: SourceKind::Acs,
            entries,
        }
    }

    pub fn default_dac(manifest: &IndicatorManifest) -> Self {
        let mut entries = vec![
            ("geocode".into(), "GEOID".into()),
            ("dac".into(), "DAC_STATUS".into()),
        ];
        for n in manifest.names() {
            entries.push((n.clone(), n.clone()));
        }
        for n in manifest.names() {
            entries.push((format!("pct.{n}"), format!("pct_{n}")));
        }
        entries.push(("score".into(), "score".into()));
        Self {
            kind: SourceKind::Dac,
            entries,
        }
    }

    pub fn get(&self, logical: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(l, _)| l == logical)
            .map(|(_, c)| c.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Error naming every logical field of `schema` the map leaves unmapped.
    pub fn check_total(&self, schema: &[String]) -> Result<()> {
        let missing: Vec<&str> = schema
            .iter()
            .filter(|f| self.get(f).is_none())
            .map(String::as_str)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(format!(
                "column map does not cover: {}",
                missing.join(", ")
            )))
        }
    }
}

/// Logical fields of a LODES file, in canonical column order.
pub fn lodes_schema(kind: LodesKind) -> Vec<String> {
    let mut s = vec!["geocode".to_string(), "total_jobs".to_string()];
    for g in BinGroup::for_kind(kind) {
        for i in 1..=g.len() {
            s.push(format!("{}.{i}", g.key()));
        }
    }
    s
}

pub fn acs_schema(bins: &IncomeBins) -> Vec<String> {
    let mut s = vec![
        "geocode".to_string(),
        "total_households".to_string(),
        "total_population".to_string(),
    ];
    s.extend((1..=bins.len()).map(|i| format!("income.{i}")));
    s
}

/// Required DAC fields; `pct.<name>` and `score` columns are optional extras.
pub fn dac_schema(manifest: &IndicatorManifest) -> Vec<String> {
    let mut s = vec!["geocode".to_string(), "dac".to_string()];
    s.extend(manifest.names().iter().cloned());
    s
}

/// A non-fatal problem found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowWarning {
    pub line: u64,
    pub violation: Violation,
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub warnings: Vec<RowWarning>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    /// Field delimiter; detected from the header when `None`.
    pub delimiter: Option<u8>,
    pub policy: ValidationPolicy,
}

/// Open a file, transparently decompressing gzip.
pub fn open_input(path: &Path) -> Result<Box<dyn Read + Send>> {
    let file = File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let magic = reader.fill_buf()?;
    if magic.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(MultiGzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn detect_delimiter(header: &[u8]) -> u8 {
    let line = header.split(|&b| b == b'\n').next().unwrap_or(header);
    let tabs = line.iter().filter(|&&b| b == b'\t').count();
    let commas = line.iter().filter(|&&b| b == b',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

fn csv_reader<R: Read>(input: R, delimiter: Option<u8>) -> Result<csv::Reader<BufReader<R>>> {
    let mut buf = BufReader::with_capacity(1 << 16, input);
    let delim = match delimiter {
        Some(d) => d,
        None => detect_delimiter(buf.fill_buf()?),
    };
    Ok(csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .flexible(false)
        .from_reader(buf))
}

/// Column positions resolved against a file header.
struct Resolved {
    index: HashMap<String, usize>,
}

impl Resolved {
    fn new(headers: &csv::StringRecord, map: &ColumnMap, required: &[String]) -> Result<Self> {
        let positions: HashMap<&str, usize> =
            headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let mut index = HashMap::new();
        for (logical, column) in map.entries() {
            match positions.get(column.as_str()) {
                Some(&i) => {
                    index.insert(logical.clone(), i);
                }
                None if required.contains(logical) => {
                    return Err(Error::Schema(format!(
                        "missing column {column:?} (mapped from {logical})"
                    )));
                }
                None => {}
            }
        }
        Ok(Self { index })
    }

    fn field<'r>(&self, rec: &'r csv::StringRecord, logical: &str) -> Option<&'r str> {
        self.index.get(logical).and_then(|&i| rec.get(i)).map(str::trim)
    }

    fn has(&self, logical: &str) -> bool {
        self.index.contains_key(logical)
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_count(rec: &csv::StringRecord, cols: &Resolved, logical: &str) -> Result<u64> {
    let raw = cols.field(rec, logical).unwrap_or("");
    raw.parse::<u64>().map_err(|_| {
        Error::row(
            line_of(rec),
            format!("{logical}: expected a non-negative integer count, got {raw:?}"),
        )
    })
}

fn parse_geo<G: Geocode>(rec: &csv::StringRecord, cols: &Resolved) -> Result<G> {
    let raw = cols.field(rec, "geocode").unwrap_or("");
    G::parse(raw).map_err(|e| Error::row(line_of(rec), e.to_string()))
}

fn check_record<T: Validate>(
    record: &T,
    line: u64,
    policy: &ValidationPolicy,
    warnings: &mut Vec<RowWarning>,
) -> Result<()> {
    let v = record.validate(policy);
    if let Some(err) = v.errors().next() {
        return Err(Error::row(line, err.to_string()));
    }
    warnings.extend(
        v.violations
            .into_iter()
            .map(|violation| RowWarning { line, violation }),
    );
    Ok(())
}

/// Parse a LODES RAC or WAC file into one record per row.
pub fn parse_lodes<G: Geocode, R: Read>(
    input: R,
    map: &ColumnMap,
    kind: LodesKind,
    opts: &ReadOptions,
) -> Result<Parsed<LodesRecord<G>>> {
    let schema = lodes_schema(kind);
    map.check_total(&schema)?;
    let mut reader = csv_reader(input, opts.delimiter)?;
    let cols = Resolved::new(reader.headers()?, map, &schema)?;
    let groups = BinGroup::for_kind(kind);
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let geo = parse_geo::<G>(&rec, &cols)?;
        let mut counts = LodesCounts {
            total_jobs: parse_count(&rec, &cols, "total_jobs")?,
            ..Default::default()
        };
        for &g in &groups {
            let bins = counts.group_mut(g);
            for (i, slot) in bins.iter_mut().enumerate() {
                *slot = parse_count(&rec, &cols, &format!("{}.{}", g.key(), i + 1))?;
            }
        }
        let record = LodesRecord { geo, kind, counts };
        check_record(&record, line_of(&rec), &opts.policy, &mut warnings)?;
        records.push(record);
    }
    Ok(Parsed { records, warnings })
}

/// Parse an ACS household-income file.
pub fn parse_acs<G: Geocode, R: Read>(
    input: R,
    map: &ColumnMap,
    bins: &IncomeBins,
    opts: &ReadOptions,
) -> Result<Parsed<AcsRecord<G>>> {
    let schema = acs_schema(bins);
    map.check_total(&schema)?;
    let mut reader = csv_reader(input, opts.delimiter)?;
    let cols = Resolved::new(reader.headers()?, map, &schema)?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let geo = parse_geo::<G>(&rec, &cols)?;
        let household_counts = (1..=bins.len())
            .map(|i| parse_count(&rec, &cols, &format!("income.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let record = AcsRecord {
            geo,
            household_counts,
            total_households: parse_count(&rec, &cols, "total_households")?,
            total_population: parse_count(&rec, &cols, "total_population")?,
        };
        check_record(&record, line_of(&rec), &opts.policy, &mut warnings)?;
        records.push(record);
    }
    Ok(Parsed { records, warnings })
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

fn parse_optional_real(rec: &csv::StringRecord, cols: &Resolved, logical: &str) -> Result<Option<f64>> {
    let raw = cols.field(rec, logical).unwrap_or("");
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::row(line_of(rec), format!("{logical}: expected a number, got {raw:?}")))
}

/// Parse a tract-level DAC file. Missing indicator values stay absent.
/// Percentile and score columns are read when the map names them and the
/// file carries them.
pub fn parse_dac<R: Read>(
    input: R,
    map: &ColumnMap,
    manifest: &IndicatorManifest,
    opts: &ReadOptions,
) -> Result<Parsed<DacRecord>> {
    let schema = dac_schema(manifest);
    map.check_total(&schema)?;
    let mut reader = csv_reader(input, opts.delimiter)?;
    let cols = Resolved::new(reader.headers()?, map, &schema)?;
    let pct_keys: Vec<String> = manifest.names().iter().map(|n| format!("pct.{n}")).collect();
    let has_pcts = pct_keys.iter().all(|k| cols.has(k));
    let names = manifest.shared_names();
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let tract = parse_geo::<TractId>(&rec, &cols)?;
        if !seen.insert(tract.clone()) {
            return Err(Error::row(line, format!("duplicate tract {tract}")));
        }
        let raw_flag = cols.field(&rec, "dac").unwrap_or("");
        let dac = parse_flag(raw_flag).ok_or_else(|| {
            Error::row(
                line,
                format!("dac flag must be one of 0,1,true,false; got {raw_flag:?}"),
            )
        })?;
        let values = manifest
            .names()
            .iter()
            .map(|n| parse_optional_real(&rec, &cols, n))
            .collect::<Result<Vec<_>>>()?;
        let percentiles = if has_pcts {
            Some(
                pct_keys
                    .iter()
                    .map(|k| parse_optional_real(&rec, &cols, k))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let score = if cols.has("score") {
            parse_optional_real(&rec, &cols, "score")?
        } else {
            None
        };
        let record = DacRecord {
            tract,
            indicators: IndicatorVector {
                names: names.clone(),
                values,
                percentiles,
            },
            dac,
            score,
        };
        check_record(&record, line, &opts.policy, &mut warnings)?;
        records.push(record);
    }
    Ok(Parsed { records, warnings })
}

/// Records that can be summed up to their enclosing tract.
pub trait TractAggregable {
    type Tract;
    fn aggregate_to_tract(records: &[Self]) -> Vec<Self::Tract>
    where
        Self: Sized;
}

impl<G: Geocode> TractAggregable for LodesRecord<G> {
    type Tract = LodesRecord<TractId>;

    fn aggregate_to_tract(records: &[Self]) -> Vec<Self::Tract> {
        let mut by_tract: BTreeMap<TractId, LodesRecord<TractId>> = BTreeMap::new();
        for r in records {
            debug_assert_eq!(r.kind, records[0].kind, "aggregation input mixes kinds");
            by_tract
                .entry(r.geo.tract())
                .or_insert_with(|| LodesRecord {
                    geo: r.geo.tract(),
                    kind: r.kind,
                    counts: LodesCounts {
                        firm_age: (r.kind == LodesKind::Wac).then_some([0; 5]),
                        firm_size: (r.kind == LodesKind::Wac).then_some([0; 5]),
                        ..Default::default()
                    },
                })
                .counts
                .add(&r.counts);
        }
        by_tract.into_values().collect()
    }
}

impl<G: Geocode> TractAggregable for AcsRecord<G> {
    type Tract = AcsRecord<TractId>;

    fn aggregate_to_tract(records: &[Self]) -> Vec<Self::Tract> {
        let mut by_tract: BTreeMap<TractId, AcsRecord<TractId>> = BTreeMap::new();
        for r in records {
            let acc = by_tract.entry(r.geo.tract()).or_insert_with(|| AcsRecord {
                geo: r.geo.tract(),
                household_counts: vec![0; r.household_counts.len()],
                total_households: 0,
                total_population: 0,
            });
            for (a, b) in acc.household_counts.iter_mut().zip(&r.household_counts) {
                *a += b;
            }
            acc.total_households += r.total_households;
            acc.total_population += r.total_population;
        }
        by_tract.into_values().collect()
    }
}

/// Group block or block-group records by tract and sum every count.
/// Output is sorted by tract id and independent of input order.
pub fn aggregate_to_tract<R: TractAggregable>(records: &[R]) -> Vec<R::Tract> {
    R::aggregate_to_tract(records)
}

fn header_for(map: &ColumnMap, schema: &[String]) -> Result<Vec<String>> {
    map.check_total(schema)?;
    Ok(schema
        .iter()
        .map(|f| map.get(f).expect("checked above").to_string())
        .collect())
}

/// Write LODES records with the column names of `map` in canonical order.
pub fn write_lodes<G: Geocode, W: Write>(
    records: &[LodesRecord<G>],
    kind: LodesKind,
    map: &ColumnMap,
    out: W,
) -> Result<()> {
    let schema = lodes_schema(kind);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_for(map, &schema)?)?;
    let groups = BinGroup::for_kind(kind);
    for r in records {
        let mut row = vec![r.geo.to_string(), r.counts.total_jobs.to_string()];
        for &g in &groups {
            match r.counts.group(g) {
                Some(bins) => row.extend(bins.iter().map(u64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), g.len())),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_acs<G: Geocode, W: Write>(
    records: &[AcsRecord<G>],
    bins: &IncomeBins,
    map: &ColumnMap,
    out: W,
) -> Result<()> {
    let schema = acs_schema(bins);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_for(map, &schema)?)?;
    for r in records {
        let mut row = vec![
            r.geo.to_string(),
            r.total_households.to_string(),
            r.total_population.to_string(),
        ];
        row.extend(r.household_counts.iter().map(u64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt_real(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write DAC records. Percentile columns are emitted when every record
/// carries percentiles; the score column when any record has a score.
pub fn write_dac<W: Write>(
    records: &[DacRecord],
    manifest: &IndicatorManifest,
    map: &ColumnMap,
    out: W,
) -> Result<()> {
    let mut schema = dac_schema(manifest);
    let with_pcts = !records.is_empty() && records.iter().all(|r| r.indicators.percentiles.is_some());
    let with_score = records.iter().any(|r| r.score.is_some());
    if with_pcts {
        schema.extend(manifest.names().iter().map(|n| format!("pct.{n}")));
    }
    if with_score {
        schema.push("score".into());
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_for(map, &schema)?)?;
    for r in records {
        let mut row = vec![r.tract.to_string(), u8::from(r.dac).to_string()];
        row.extend(r.indicators.values.iter().map(|v| opt_real(*v)));
        if with_pcts {
            let p = r.indicators.percentiles.as_ref().expect("checked above");
            row.extend(p.iter().map(|v| opt_real(*v)));
        }
        if with_score {
            row.push(opt_real(r.score));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Identity map for canonical DAC files, including the optional columns.
pub fn canonical_dac_map(manifest: &IndicatorManifest) -> ColumnMap {
    let mut schema = dac_schema(manifest);
    schema.extend(manifest.names().iter().map(|n| format!("pct.{n}")));
    schema.push("score".into());
    ColumnMap::identity(SourceKind::Dac, &schema)
}

pub fn canonical_lodes_map(kind: LodesKind) -> ColumnMap {
    ColumnMap::identity(SourceKind::lodes(kind), &lodes_schema(kind))
}

pub fn canonical_acs_map(bins: &IncomeBins) -> ColumnMap {
    ColumnMap::identity(SourceKind::Acs, &acs_schema(bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AcsBlockGroupRecord, BlockGroupId, BlockId};

    fn rac_csv(rows: &[(&str, u64, [u64; 3])]) -> String {
        let map = ColumnMap::default_lodes(LodesKind::Rac);
        let schema = lodes_schema(LodesKind::Rac);
        let header: Vec<&str> = schema.iter().map(|f| map.get(f).unwrap()).collect();
        let mut s = header.join(",") + "\n";
        for (geo, total, age) in rows {
            let mut fields = vec![geo.to_string(), total.to_string()];
            fields.extend(age.iter().map(u64::to_string));
            // every other group puts everything in its first bin
            for g in BinGroup::SHARED.iter().skip(1) {
                fields.push(total.to_string());
                fields.extend(std::iter::repeat_n("0".to_string(), g.len() - 1));
            }
            s += &fields.join(",");
            s += "\n";
        }
        s
    }

    #[test]
    fn parses_two_row_rac_file() {
        let text = rac_csv(&[
            ("530330001001000", 5, [2, 2, 1]),
            ("530330001001001", 7, [3, 3, 1]),
        ]);
        let p: Parsed<LodesRecord<BlockId>> = parse_lodes(
            text.as_bytes(),
            &ColumnMap::default_lodes(LodesKind::Rac),
            LodesKind::Rac,
            &ReadOptions {
                policy: ValidationPolicy::STRICT,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.records[0].counts.total_jobs, 5);
        assert_eq!(p.records[1].counts.total_jobs, 7);
        assert_eq!(p.records[0].counts.age, [2, 2, 1]);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn tab_delimiter_is_detected() {
        let text = rac_csv(&[("530330001001000", 5, [2, 2, 1])]).replace(',', "\t");
        let p: Parsed<LodesRecord<BlockId>> = parse_lodes(
            text.as_bytes(),
            &ColumnMap::default_lodes(LodesKind::Rac),
            LodesKind::Rac,
            &ReadOptions::default(),
        )
        .unwrap();
        assert_eq!(p.records.len(), 1);
    }

    #[test]
    fn wac_without_firm_columns_is_schema_error() {
        // a RAC-shaped file read as WAC
        let text = rac_csv(&[("530330001001000", 5, [2, 2, 1])]).replace("h_geocode", "w_geocode");
        let err = parse_lodes::<BlockId, _>(
            text.as_bytes(),
            &ColumnMap::default_lodes(LodesKind::Wac),
            LodesKind::Wac,
            &ReadOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::Schema(msg) => assert!(msg.contains("CFA01"), "{msg}"),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn non_numeric_count_reports_line() {
        let text = rac_csv(&[
            ("530330001001000", 5, [2, 2, 1]),
            ("530330001001001", 7, [3, 3, 1]),
        ])
        .replace("530330001001001,7,", "530330001001001,x7,");
        let err = parse_lodes::<BlockId, _>(
            text.as_bytes(),
            &ColumnMap::default_lodes(LodesKind::Rac),
            LodesKind::Rac,
            &ReadOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_geocode_is_row_error() {
        let text = rac_csv(&[("53033000100100", 5, [2, 2, 1])]);
        let err = parse_lodes::<BlockId, _>(
            text.as_bytes(),
            &ColumnMap::default_lodes(LodesKind::Rac),
            LodesKind::Rac,
            &ReadOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Row { line: 2, .. }));
    }

    fn acs_text(bins: &IncomeBins, counts: &[u64], total: u64) -> String {
        let map = ColumnMap::default_acs(bins);
        let header: Vec<&str> = acs_schema(bins)
            .iter()
            .map(|f| map.get(f).unwrap())
            .collect::<Vec<_>>();
        let mut row = vec!["530330001001".to_string(), total.to_string(), "300".to_string()];
        row.extend(counts.iter().map(u64::to_string));
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    #[test]
    fn acs_sum_rule_follows_policy() {
        let bins = IncomeBins::bundled();
        let mut counts = vec![7u64; 17];
        counts[0] = 120 - 7 * 16;
        let ok = acs_text(&bins, &counts, 120);
        let p: Parsed<AcsBlockGroupRecord> = parse_acs(
            ok.as_bytes(),
            &ColumnMap::default_acs(&bins),
            &bins,
            &ReadOptions::default(),
        )
        .unwrap();
        assert_eq!(p.records.len(), 1);
        assert!(p.warnings.is_empty());

        counts[0] -= 1; // sums to 119
        let off = acs_text(&bins, &counts, 120);
        let lax: Parsed<AcsBlockGroupRecord> = parse_acs(
            off.as_bytes(),
            &ColumnMap::default_acs(&bins),
            &bins,
            &ReadOptions::default(),
        )
        .unwrap();
        assert_eq!(lax.warnings.len(), 1);
        let strict = parse_acs::<BlockGroupId, _>(
            off.as_bytes(),
            &ColumnMap::default_acs(&bins),
            &bins,
            &ReadOptions {
                policy: ValidationPolicy::STRICT,
                ..Default::default()
            },
        );
        assert!(strict.is_err());
    }

    #[test]
    fn header_only_acs_is_empty() {
        let bins = IncomeBins::bundled();
        let map = ColumnMap::default_acs(&bins);
        let header: Vec<&str> = acs_schema(&bins).iter().map(|f| map.get(f).unwrap()).collect();
        let text = header.join(",") + "\n";
        let p: Parsed<AcsBlockGroupRecord> =
            parse_acs(text.as_bytes(), &map, &bins, &ReadOptions::default()).unwrap();
        assert!(p.records.is_empty());
    }

    fn dac_text(manifest: &IndicatorManifest, rows: &[(&str, &str)]) -> String {
        let mut s = format!("GEOID,DAC_STATUS,{}\n", manifest.names().join(","));
        for (tract, flag) in rows {
            let vals: Vec<String> = (0..manifest.len())
                .map(|i| format!("{}", i as f64 * 0.5))
                .collect();
            s += &format!("{tract},{flag},{}\n", vals.join(","));
        }
        s
    }

    #[test]
    fn dac_flags_and_duplicates() {
        let m = IndicatorManifest::bundled();
        let map = ColumnMap::default_dac(&m);
        let text = dac_text(
            &m,
            &[
                ("53033000100", "1"),
                ("53033000200", "False"),
                ("53033000300", "true"),
            ],
        );
        let p = parse_dac(text.as_bytes(), &map, &m, &ReadOptions::default()).unwrap();
        assert_eq!(p.records.iter().filter(|r| r.dac).count(), 2);
        assert!(p.records[0].indicators.percentiles.is_none());

        let bad = dac_text(&m, &[("53033000100", "yes")]);
        assert!(matches!(
            parse_dac(bad.as_bytes(), &map, &m, &ReadOptions::default()),
            Err(Error::Row { .. })
        ));
        let dup = dac_text(&m, &[("53033000100", "1"), ("53033000100", "0")]);
        assert!(parse_dac(dup.as_bytes(), &map, &m, &ReadOptions::default()).is_err());
    }

    #[test]
    fn dac_missing_values_are_absent() {
        let m = IndicatorManifest::bundled();
        let map = ColumnMap::default_dac(&m);
        let mut text = dac_text(&m, &[("53033000100", "1")]);
        text = text.replacen(",0,", ",,", 1);
        let p = parse_dac(text.as_bytes(), &map, &m, &ReadOptions::default()).unwrap();
        assert_eq!(p.records[0].indicators.values[0], None);
        assert_eq!(p.records[0].indicators.values[1], Some(0.5));
    }

    #[test]
    fn aggregation_sums_blocks_by_tract() {
        let text = rac_csv(&[
            ("530330001001000", 5, [2, 2, 1]),
            ("530330002001000", 4, [1, 2, 1]),
            ("530330001002000", 7, [3, 3, 1]),
        ]);
        let p: Parsed<LodesRecord<BlockId>> = parse_lodes(
            text.as_bytes(),
            &ColumnMap::default_lodes(LodesKind::Rac),
            LodesKind::Rac,
            &ReadOptions::default(),
        )
        .unwrap();
        let tracts = aggregate_to_tract(&p.records);
        assert_eq!(tracts.len(), 2);
        assert_eq!(tracts[0].geo.as_str(), "53033000100");
        assert_eq!(tracts[0].counts.total_jobs, 12);
        assert_eq!(tracts[0].counts.age, [5, 5, 2]);
        assert_eq!(tracts[1].counts.total_jobs, 4);
        assert!(tracts[0].counts.firm_age.is_none());
    }

    #[test]
    fn canonical_round_trip_is_field_identical() {
        let text = rac_csv(&[
            ("530330001001000", 5, [2, 2, 1]),
            ("530330002001000", 4, [1, 2, 1]),
        ]);
        let p: Parsed<LodesRecord<BlockId>> = parse_lodes(
            text.as_bytes(),
            &ColumnMap::default_lodes(LodesKind::Rac),
            LodesKind::Rac,
            &ReadOptions::default(),
        )
        .unwrap();
        let tracts = aggregate_to_tract(&p.records);
        let map = canonical_lodes_map(LodesKind::Rac);
        let mut buf = Vec::new();
        write_lodes(&tracts, LodesKind::Rac, &map, &mut buf).unwrap();
        let back: Parsed<LodesRecord<TractId>> =
            parse_lodes(buf.as_slice(), &map, LodesKind::Rac, &ReadOptions::default()).unwrap();
        assert_eq!(back.records, tracts);

        let m = IndicatorManifest::bundled();
        let dac = parse_dac(
            dac_text(&m, &[("53033000100", "1"), ("53033000200", "0")]).as_bytes(),
            &ColumnMap::default_dac(&m),
            &m,
            &ReadOptions::default(),
        )
        .unwrap()
        .records;
        let mut buf = Vec::new();
        let cmap = canonical_dac_map(&m);
        write_dac(&dac, &m, &cmap, &mut buf).unwrap();
        let back = parse_dac(buf.as_slice(), &cmap, &m, &ReadOptions::default()).unwrap();
        assert_eq!(back.records, dac);
    }

    #[test]
    fn column_map_rejects_duplicates_and_reports_gaps() {
        assert!(ColumnMap::parse(SourceKind::Acs, "a = x\nb = x\n").is_err());
        let m = ColumnMap::parse(SourceKind::Acs, "geocode = GEOID # comment\n").unwrap();
        let err = m.check_total(&acs_schema(&IncomeBins::bundled())).unwrap_err();
        assert!(err.to_string().contains("total_households"));
    }
}
