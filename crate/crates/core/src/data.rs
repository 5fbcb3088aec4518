//! Samples, label schemas and dataset ingestion.
//!
//! Datasets are JSON-lines files, one sample per line:
//!
//! ```text
//! {"id":"fra-0","lon":2.1,"lat":48.3,"country":"FRA","label":"corn","doys":[121,126],"refl":[[...10...],[...10...]]}
//! ```
//!
//! Serialization is canonical: keys in the order above, no whitespace and
//! shortest round-trip decimal numbers, so `load -> write -> load` is a fixed
//! point and re-writing a canonical file reproduces it byte for byte.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of Sentinel-2 bands carried by every observation.
pub const BAND_COUNT: usize = 10;

/// Length of a single-date hyperspectral vector.
pub const HYPER_BANDS: usize = 242;

/// Upper bound accepted for unitless surface reflectance.
pub const MAX_REFLECTANCE: f64 = 1.5;

/// Sentinel-2 bands in the fixed order used by feature rows, checkpoints and
/// importance maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    B2,
    B3,
    B4,
    B8,
    B5,
    B6,
    B7,
    B8A,
    B11,
    B12,
}

impl Band {
    pub const ALL: [Band; BAND_COUNT] = [
        Band::B2,
        Band::B3,
        Band::B4,
        Band::B8,
        Band::B5,
        Band::B6,
        Band::B7,
        Band::B8A,
        Band::B11,
        Band::B12,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Band> {
        Band::ALL.get(index).copied()
    }

    pub const fn name(self) -> &'static str {
        match self {
            Band::B2 => "B2",
            Band::B3 => "B3",
            Band::B4 => "B4",
            Band::B8 => "B8",
            Band::B5 => "B5",
            Band::B6 => "B6",
            Band::B7 => "B7",
            Band::B8A => "B8A",
            Band::B11 => "B11",
            Band::B12 => "B12",
        }
    }

    /// Central wavelength in nanometres.
    pub const fn wavelength_nm(self) -> f64 {
        match self {
            Band::B2 => 490.0,
            Band::B3 => 560.0,
            Band::B4 => 665.0,
            Band::B8 => 842.0,
            Band::B5 => 705.0,
            Band::B6 => 740.0,
            Band::B7 => 783.0,
            Band::B8A => 865.0,
            Band::B11 => 1610.0,
            Band::B12 => 2190.0,
        }
    }
}

/// Irregularly sampled reflectance observations of one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralTimeSeries {
    doys: Vec<i32>,
    refl: Vec<[f64; BAND_COUNT]>,
}

impl SpectralTimeSeries {
    pub fn new(doys: Vec<i32>, refl: Vec<[f64; BAND_COUNT]>) -> Result<Self> {
        if doys.len() != refl.len() {
            return Err(Error::Validation(format!(
                "{} doys but {} reflectance rows",
                doys.len(),
                refl.len()
            )));
        }
        if let Some(&d) = doys.iter().find(|&&d| !(1..=365).contains(&d)) {
            return Err(Error::Validation(format!("doy {d} outside 1..=365")));
        }
        if let Some(w) = doys.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "doys not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        for (row, d) in refl.iter().zip(&doys) {
            if let Some(v) = row
                .iter()
                .find(|v| !v.is_finite() || **v < 0.0 || **v > MAX_REFLECTANCE)
            {
                return Err(Error::Validation(format!(
                    "reflectance {v} at doy {d} outside [0, {MAX_REFLECTANCE}]"
                )));
            }
        }
        Ok(SpectralTimeSeries { doys, refl })
    }

    pub fn doys(&self) -> &[i32] {
        &self.doys
    }

    pub fn reflectance(&self) -> &[[f64; BAND_COUNT]] {
        &self.refl
    }

    pub fn len(&self) -> usize {
        self.doys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doys.is_empty()
    }

    /// Iterates `(doy, reflectance)` pairs in time order.
    pub fn observations(&self) -> impl Iterator<Item = (i32, &[f64; BAND_COUNT])> {
        self.doys.iter().copied().zip(self.refl.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub country: String,
    pub label: usize,
    pub series: SpectralTimeSeries,
    pub hyper: Option<Vec<f64>>,
}

/// Ordered class names with exactly one "Other" class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSchema {
    classes: Vec<String>,
    other_index: usize,
}

impl LabelSchema {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let unique: BTreeSet<&str> = classes.iter().map(String::as_str).collect();
        if unique.len() != classes.len() {
            return Err(Error::Schema("class names must be unique".into()));
        }
        let others: Vec<usize> = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.eq_ignore_ascii_case("other"))
            .map(|(i, _)| i)
            .collect();
        match others.as_slice() {
            [i] => Ok(LabelSchema {
                other_index: *i,
                classes,
            }),
            [] => Err(Error::Schema("schema has no \"other\" class".into())),
            _ => Err(Error::Schema(
                "\"other\" class listed more than once".into(),
            )),
        }
    }

    /// The seven-class schema: six major crops plus "other".
    pub fn crop_globe() -> Self {
        LabelSchema::new([
            "corn",
            "soybeans",
            "rice",
            "wheat",
            "sugarcane",
            "cotton",
            "other",
        ])
        .expect("static schema is valid")
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn other_index(&self) -> usize {
        self.other_index
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for LabelSchema {
    type Error = Error;

    fn try_from(classes: Vec<String>) -> Result<Self> {
        LabelSchema::new(classes)
    }
}

impl From<LabelSchema> for Vec<String> {
    fn from(schema: LabelSchema) -> Self {
        schema.classes
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub schema: LabelSchema,
    pub samples: Vec<Sample>,
    pub region: String,
}

impl Dataset {
    pub fn new(schema: LabelSchema, region: impl Into<String>) -> Self {
        Dataset {
            schema,
            samples: Vec::new(),
            region: region.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples per class, indexed like the schema.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Wire representation of one JSON line. Field order is the canonical key order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    lon: f64,
    lat: f64,
    country: String,
    label: String,
    doys: Vec<i32>,
    refl: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hyper: Option<Vec<f64>>,
}

fn record_to_sample(rec: SampleRecord, schema: &LabelSchema) -> Result<Sample> {
    let label = schema
        .index_of(&rec.label)
        .ok_or_else(|| Error::UnknownLabel(rec.label.clone()))?;
    let mut refl = Vec::with_capacity(rec.refl.len());
    for row in &rec.refl {
        let row: [f64; BAND_COUNT] = row.as_slice().try_into().map_err(|_| {
            Error::Validation(format!(
                "reflectance row has {} values, expected {BAND_COUNT}",
                row.len()
            ))
        })?;
        refl.push(row);
    }
    let series = SpectralTimeSeries::new(rec.doys, refl)?;
    if let Some(h) = &rec.hyper {
        if h.len() != HYPER_BANDS && h.len() != 2 * HYPER_BANDS {
            return Err(Error::Validation(format!(
                "hyperspectral vector has length {}, expected {} or {}",
                h.len(),
                HYPER_BANDS,
                2 * HYPER_BANDS
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite hyperspectral value".into()));
        }
    }
    Ok(Sample {
        id: rec.id,
        lon: rec.lon,
        lat: rec.lat,
        country: rec.country,
        label,
        series,
        hyper: rec.hyper,
    })
}

fn sample_to_record(sample: &Sample, schema: &LabelSchema) -> SampleRecord {
    SampleRecord {
        id: sample.id.clone(),
        lon: sample.lon,
        lat: sample.lat,
        country: sample.country.clone(),
        label: schema.classes[sample.label].clone(),
        doys: sample.series.doys.clone(),
        refl: sample.series.refl.iter().map(|r| r.to_vec()).collect(),
        hyper: sample.hyper.clone(),
    }
}

/// Parses one JSON line against a schema. `line` is 1-based and only used for
/// error reporting.
pub fn parse_sample_line(text: &str, line: usize, schema: &LabelSchema) -> Result<Sample> {
    let rec: SampleRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    record_to_sample(rec, schema)
}

/// Canonical single-line JSON form of a sample (no trailing newline).
pub fn sample_to_line(sample: &Sample, schema: &LabelSchema) -> Result<String> {
    Ok(serde_json::to_string(&sample_to_record(sample, schema))?)
}

/// A line that failed to parse or validate.
#[derive(Debug)]
pub struct LineError {
    pub line: usize,
    pub error: Error,
}

/// Result of a lenient load: valid samples plus every rejected line.
#[derive(Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub rejected: Vec<LineError>,
}

impl Loaded {
    /// Fails with the first rejected line, if any.
    pub fn into_strict(self) -> Result<Dataset> {
        match self.rejected.into_iter().next() {
            None => Ok(self.dataset),
            Some(LineError { line, error }) => Err(match error {
                e @ Error::Parse { .. } => e,
                other => Error::Validation(format!("line {line}: {other}")),
            }),
        }
    }
}

/// Parses JSON-lines text. Blank lines are skipped; every other line either
/// becomes a sample or a [`LineError`].
pub fn parse_dataset(text: &str, schema: &LabelSchema, region: &str) -> Loaded {
    let mut dataset = Dataset::new(schema.clone(), region);
    let mut rejected = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_sample_line(raw, line, schema) {
            Ok(s) => dataset.samples.push(s),
            Err(error) => rejected.push(LineError { line, error }),
        }
    }
    Loaded { dataset, rejected }
}

/// Loads a JSON-lines dataset. The region name is the file stem.
pub fn load_dataset(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<Loaded> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let region = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let loaded = parse_dataset(&text, schema, &region);
    for r in &loaded.rejected {
        log::warn!("{}: line {}: {}", path.display(), r.line, r.error);
    }
    Ok(loaded)
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    for s in &ds.samples {
        w.write_all(sample_to_line(s, &ds.schema)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset_to(ds, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    Identity,
    ReassignToOther,
    DropClasses,
}

/// How predictions from a source-region model are reconciled with the label
/// set of a target region before scoring.
///
/// `affected` holds source-schema indices. With `ReassignToOther`, predictions
/// of those classes become the target's "other". With `DropClasses`, target
/// ground-truth rows of those classes are removed from evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAlignmentRule {
    pub mode: AlignMode,
    pub affected: BTreeSet<usize>,
}

impl ClassAlignmentRule {
    pub fn identity() -> Self {
        ClassAlignmentRule {
            mode: AlignMode::Identity,
            affected: BTreeSet::new(),
        }
    }

    pub fn reassign_to_other(affected: impl IntoIterator<Item = usize>) -> Self {
        ClassAlignmentRule {
            mode: AlignMode::ReassignToOther,
            affected: affected.into_iter().collect(),
        }
    }

    pub fn drop_classes(affected: impl IntoIterator<Item = usize>) -> Self {
        ClassAlignmentRule {
            mode: AlignMode::DropClasses,
            affected: affected.into_iter().collect(),
        }
    }

    /// Builds a rule from class names looked up in `source`.
    pub fn by_names(mode: AlignMode, names: &[&str], source: &LabelSchema) -> Result<Self> {
        let affected = names
            .iter()
            .map(|n| {
                source
                    .index_of(n)
                    .ok_or_else(|| Error::Schema(format!("class `{n}` not in source schema")))
            })
            .collect::<Result<_>>()?;
        Ok(ClassAlignmentRule { mode, affected })
    }

    pub fn validate(&self, source: &LabelSchema) -> Result<()> {
        if let Some(&bad) = self.affected.iter().find(|&&i| i >= source.len()) {
            return Err(Error::Schema(format!(
                "alignment rule references class {bad}, source schema has {} classes",
                source.len()
            )));
        }
        if self.mode == AlignMode::Identity && !self.affected.is_empty() {
            return Err(Error::Schema(
                "identity alignment takes no affected classes".into(),
            ));
        }
        Ok(())
    }
}

/// Maps a source class index to the target schema by name.
fn map_class(index: usize, source: &LabelSchema, target: &LabelSchema) -> Result<usize> {
    let name = source
        .name(index)
        .ok_or_else(|| Error::Schema(format!("prediction {index} outside source schema")))?;
    if index == source.other_index() {
        return Ok(target.other_index());
    }
    target.index_of(name).ok_or_else(|| {
        Error::Schema(format!(
            "source class `{name}` has no counterpart in the target schema"
        ))
    })
}

/// Converts source-schema predictions into target-schema predictions.
pub fn align_predictions(
    preds: &[usize],
    source: &LabelSchema,
    target: &LabelSchema,
    rule: &ClassAlignmentRule,
) -> Result<Vec<usize>> {
    rule.validate(source)?;
    if rule.mode == AlignMode::Identity && source == target {
        if let Some(&p) = preds.iter().find(|&&p| p >= source.len()) {
            return Err(Error::Schema(format!(
                "prediction {p} outside source schema"
            )));
        }
        return Ok(preds.to_vec());
    }
    preds
        .iter()
        .map(|&p| {
            if rule.mode == AlignMode::ReassignToOther && rule.affected.contains(&p) {
                Ok(target.other_index())
            } else {
                map_class(p, source, target)
            }
        })
        .collect()
}

/// Ground truth and predictions in the target schema, ready to be scored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedLabels {
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
    /// Rows removed by a `DropClasses` rule.
    pub excluded: usize,
}

/// Applies a rule to a scored evaluation set. `truth` is in the target schema,
/// `preds` in the source schema.
pub fn align_evaluation(
    truth: &[usize],
    preds: &[usize],
    source: &LabelSchema,
    target: &LabelSchema,
    rule: &ClassAlignmentRule,
) -> Result<AlignedLabels> {
    if truth.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} predictions",
            truth.len(),
            preds.len()
        )));
    }
    let mapped = align_predictions(preds, source, target, rule)?;
    let dropped: BTreeSet<usize> = if rule.mode == AlignMode::DropClasses {
        rule.affected
            .iter()
            .filter_map(|&i| source.name(i).and_then(|n| target.index_of(n)))
            .collect()
    } else {
        BTreeSet::new()
    };
    let mut out = AlignedLabels {
        truth: Vec::with_capacity(truth.len()),
        pred: Vec::with_capacity(truth.len()),
        excluded: 0,
    };
    for (&t, &p) in truth.iter().zip(&mapped) {
        if t >= target.len() {
            return Err(Error::Schema(format!("label {t} outside target schema")));
        }
        if dropped.contains(&t) {
            out.excluded += 1;
        } else {
            out.truth.push(t);
            out.pred.push(p);
        }
    }
    Ok(out)
}

/// Seeded partition of `0..n` into `round(fraction * n)` train indices and
/// the rest, both ascending.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if n == 0 {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::Tag::Split, &[]));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    Ok((0..n).partition(|&i| in_train[i]))
}

/// Seeded train/test partition. Train receives `round(fraction * N)` samples;
/// both halves keep the original sample order.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(ds.len(), train_fraction, seed)?;
    let pick = |idx: &[usize]| {
        let mut out = Dataset::new(ds.schema.clone(), ds.region.clone());
        out.samples = idx.iter().map(|&i| ds.samples[i].clone()).collect();
        out
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(label: &str, doys: &[i32]) -> String {
        let rows: Vec<String> = doys
            .iter()
            .map(|_| format!("[{}]", ["0.1"; 10].join(",")))
            .collect();
        format!(
            r#"{{"id":"a","lon":1.5,"lat":-2.0,"country":"FRA","label":"{label}","doys":{doys:?},"refl":[{}]}}"#,
            rows.join(",")
        )
    }

    #[test]
    fn band_order_is_fixed() {
        let names: Vec<_> = Band::ALL.iter().map(|b| b.name()).collect();
        assert_eq!(
            names,
            ["B2", "B3", "B4", "B8", "B5", "B6", "B7", "B8A", "B11", "B12"]
        );
        for (i, b) in Band::ALL.iter().enumerate() {
            assert_eq!(b.index(), i);
            assert_eq!(Band::from_index(i), Some(*b));
        }
        assert_eq!(Band::from_index(10), None);
    }

    #[test]
    fn empty_text_gives_empty_dataset() {
        let loaded = parse_dataset("", &LabelSchema::crop_globe(), "x");
        assert!(loaded.dataset.is_empty());
        assert!(loaded.rejected.is_empty());
    }

    #[test]
    fn single_line_is_echoed() {
        let loaded = parse_dataset(&line("corn", &[121, 126]), &LabelSchema::crop_globe(), "x");
        assert!(loaded.rejected.is_empty());
        assert_eq!(loaded.dataset.len(), 1);
        assert_eq!(loaded.dataset.samples[0].series.len(), 2);
        assert_eq!(loaded.dataset.samples[0].label, 0);
    }

    #[test]
    fn bad_lines_are_reported_with_line_numbers() {
        let schema = LabelSchema::crop_globe();
        let text = [
            line("corn", &[121, 126]),
            "{not json".to_string(),
            line("corn", &[126, 121]),
            line("barley", &[121]),
            line("wheat", &[5]),
        ]
        .join("\n");
        let loaded = parse_dataset(&text, &schema, "x");
        assert_eq!(loaded.dataset.len(), 2);
        let lines: Vec<_> = loaded.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, [2, 3, 4]);
        assert!(matches!(
            loaded.rejected[0].error,
            Error::Parse { line: 2, .. }
        ));
        assert!(matches!(loaded.rejected[1].error, Error::Validation(_)));
        assert!(matches!(loaded.rejected[2].error, Error::UnknownLabel(_)));
        assert!(loaded.into_strict().is_err());
    }

    #[test]
    fn wrong_band_count_rejected() {
        let schema = LabelSchema::crop_globe();
        let text = r#"{"id":"a","lon":0,"lat":0,"country":"X","label":"corn","doys":[1],"refl":[[0.1,0.2]]}"#;
        let loaded = parse_dataset(text, &schema, "x");
        assert!(matches!(loaded.rejected[0].error, Error::Validation(_)));
    }

    #[test]
    fn hyper_length_validated() {
        let schema = LabelSchema::crop_globe();
        let base = line("corn", &[10]);
        let with = |n: usize| {
            let h = vec!["0.5"; n].join(",");
            format!("{},\"hyper\":[{h}]}}", &base[..base.len() - 1])
        };
        assert!(parse_dataset(&with(242), &schema, "x").rejected.is_empty());
        assert!(parse_dataset(&with(484), &schema, "x").rejected.is_empty());
        assert_eq!(parse_dataset(&with(100), &schema, "x").rejected.len(), 1);
    }

    #[test]
    fn schema_requires_single_other() {
        assert!(LabelSchema::new(["a", "b"]).is_err());
        assert!(LabelSchema::new(["a", "other", "Other"]).is_err());
        assert!(LabelSchema::new(["a", "a", "other"]).is_err());
        let s = LabelSchema::new(["other", "cotton"]).unwrap();
        assert_eq!(s.other_index(), 0);
    }

    #[test]
    fn identity_alignment_is_noop() {
        let s = LabelSchema::crop_globe();
        let out = align_predictions(&[0, 3, 6], &s, &s, &ClassAlignmentRule::identity()).unwrap();
        assert_eq!(out, [0, 3, 6]);
    }

    #[test]
    fn soybean_prediction_becomes_other_in_binary_target() {
        let source = LabelSchema::crop_globe();
        // A region whose map only distinguishes sugarcane and cotton.
        let target = LabelSchema::new(["sugarcane", "cotton", "other"]).unwrap();
        let rule = ClassAlignmentRule::by_names(
            AlignMode::ReassignToOther,
            &["corn", "soybeans", "rice", "wheat"],
            &source,
        )
        .unwrap();
        let out = align_predictions(&[1, 4, 5, 6, 3], &source, &target, &rule).unwrap();
        assert_eq!(out, [2, 0, 1, 2, 2]);
        assert!(out.iter().all(|&p| p < target.len()));
    }

    #[test]
    fn unmapped_class_without_rule_is_an_error() {
        let source = LabelSchema::crop_globe();
        let target = LabelSchema::new(["cotton", "other"]).unwrap();
        let rule = ClassAlignmentRule::reassign_to_other([0]);
        assert!(align_predictions(&[1], &source, &target, &rule).is_err());
    }

    #[test]
    fn rule_outside_source_schema_rejected() {
        let s = LabelSchema::crop_globe();
        let rule = ClassAlignmentRule::reassign_to_other([9]);
        assert!(matches!(
            align_predictions(&[0], &s, &s, &rule),
            Err(Error::Schema(_))
        ));
        assert!(ClassAlignmentRule::by_names(AlignMode::DropClasses, &["barley"], &s).is_err());
    }

    #[test]
    fn drop_classes_excludes_ground_truth_rows() {
        let s = LabelSchema::crop_globe();
        let rule =
            ClassAlignmentRule::by_names(AlignMode::DropClasses, &["sugarcane", "cotton"], &s)
                .unwrap();
        let truth = [0, 4, 5, 1, 4, 6, 2, 5, 5];
        let preds = [0, 0, 5, 1, 1, 6, 2, 3, 5];
        let expected_drop = truth.iter().filter(|&&t| t == 4 || t == 5).count();
        let a = align_evaluation(&truth, &preds, &s, &s, &rule).unwrap();
        assert_eq!(a.excluded, expected_drop);
        assert_eq!(a.truth, [0, 1, 6, 2]);
        assert_eq!(a.pred, [0, 1, 6, 2]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let mut ds = Dataset::new(LabelSchema::crop_globe(), "r");
        for i in 0..10 {
            ds.samples.push(Sample {
                id: format!("s{i}"),
                lon: 0.0,
                lat: 0.0,
                country: "X".into(),
                label: i % 7,
                series: SpectralTimeSeries::new(vec![100], vec![[0.1; 10]]).unwrap(),
                hyper: None,
            });
        }
        let (a, b) = split_dataset(&ds, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (c, d) = split_dataset(&ds, 0.8, 3).unwrap();
        let ids = |d: &Dataset| d.samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&c));
        assert_eq!(ids(&b), ids(&d));
        assert!(split_dataset(&ds, 1.0, 0).is_err());
        assert!(split_dataset(&ds, 0.0, 0).is_err());
        let empty = Dataset::new(LabelSchema::crop_globe(), "r");
        assert!(split_dataset(&empty, 0.5, 0).is_err());
    }
}
