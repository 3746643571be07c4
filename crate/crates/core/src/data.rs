//! Multi-source corpora with tri-state labels.
//!
//! File layout of a corpus directory:
//!
//! * `features.csv`: `id,f0,f1,...,f{d-1}`
//! * `labels.csv`: `id,source,<attr1>,<attr2>,...` with cells `1`, `0` or empty
//! * `boxes.csv` (optional): `id,x,y,w,h,img_w,img_h`

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::fmt_f64;

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const BOXES_FILE: &str = "boxes.csv";
/// Suffixes of the provenance columns in a completed label file.
pub const PSEUDO_SUFFIX: &str = "_pseudo";
pub const POSTERIOR_SUFFIX: &str = "_posterior";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub id: String,
    pub index: usize,
}

/// Annotation state of one binary attribute on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TriLabel {
    Positive,
    Negative,
    #[default]
    Missing,
}

impl TriLabel {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            TriLabel::Positive
        } else {
            TriLabel::Negative
        }
    }

    /// `Some(true)` for positive, `Some(false)` for negative, `None` when missing.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            TriLabel::Positive => Some(true),
            TriLabel::Negative => Some(false),
            TriLabel::Missing => None,
        }
    }

    pub fn is_missing(self) -> bool {
        self == TriLabel::Missing
    }

    pub fn parse_cell(cell: &str) -> Result<Self> {
        match cell.trim() {
            "1" => Ok(TriLabel::Positive),
            "0" => Ok(TriLabel::Negative),
            "" => Ok(TriLabel::Missing),
            other => Err(Error::Schema(format!("unknown label value `{other}`"))),
        }
    }

    pub fn as_cell(self) -> &'static str {
        match self {
            TriLabel::Positive => "1",
            TriLabel::Negative => "0",
            TriLabel::Missing => "",
        }
    }
}

/// Face bounding box in pixels, with the size of the image it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub img_w: f64,
    pub img_h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub source: String,
    pub features: Vec<f64>,
    /// Indexed by attribute registry position.
    pub labels: Vec<TriLabel>,
    pub face_box: Option<FaceBox>,
}

impl AsRef<[f64]> for Sample {
    fn as_ref(&self) -> &[f64] {
        &self.features
    }
}

/// An immutable, validated collection of samples sharing one attribute registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    registry: Vec<Attribute>,
    samples: Vec<Sample>,
    dim: usize,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness, feature dimension and label arity.
    pub fn new(attribute_ids: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        let registry: Vec<Attribute> = attribute_ids
            .into_iter()
            .enumerate()
            .map(|(index, id)| {
                if seen.insert(id.clone()) {
                    Ok(Attribute { id, index })
                } else {
                    Err(Error::Schema(format!("duplicate attribute `{id}`")))
                }
            })
            .collect::<Result<_>>()?;

        let dim = samples.first().map_or(0, |s| s.features.len());
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.features.len(),
                    context: format!("features of sample `{}`", s.id),
                });
            }
            if s.labels.len() != registry.len() {
                return Err(Error::Schema(format!(
                    "sample `{}` has {} labels for {} attributes",
                    s.id,
                    s.labels.len(),
                    registry.len()
                )));
            }
        }
        Ok(Corpus {
            registry,
            samples,
            dim,
        })
    }

    pub fn registry(&self) -> &[Attribute] {
        &self.registry
    }

    pub fn attribute_ids(&self) -> Vec<String> {
        self.registry.iter().map(|a| a.id.clone()).collect()
    }

    pub fn attribute_index(&self, id: &str) -> Option<usize> {
        self.registry.iter().position(|a| a.id == id)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension (0 for an empty corpus).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Labels of one attribute across all samples, in sample order.
    pub fn column(&self, attribute: usize) -> Vec<TriLabel> {
        self.samples.iter().map(|s| s.labels[attribute]).collect()
    }

    /// Same samples with a replaced label matrix (`labels[sample][attribute]`).
    pub fn with_labels(&self, labels: Vec<Vec<TriLabel>>) -> Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(Error::Schema(format!(
                "{} label rows for {} samples",
                labels.len(),
                self.samples.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, l)| Sample {
                labels: l,
                ..s.clone()
            })
            .collect();
        Corpus::new(self.attribute_ids(), samples)
    }

    /// Keeps the samples for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Self {
        Corpus {
            registry: self.registry.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            dim: self.dim,
        }
    }

    /// Attaches boxes by sample id; ids absent from `boxes` keep `None`.
    pub fn with_boxes(mut self, boxes: &HashMap<String, FaceBox>) -> Self {
        for s in &mut self.samples {
            if let Some(b) = boxes.get(&s.id) {
                s.face_box = Some(*b);
            }
        }
        self
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let corpus = load_corpus(&dir.join(FEATURES_FILE), &dir.join(LABELS_FILE))?;
        let boxes_path = dir.join(BOXES_FILE);
        if boxes_path.exists() {
            let boxes = load_boxes(File::open(boxes_path)?)?;
            Ok(corpus.with_boxes(&boxes))
        } else {
            Ok(corpus)
        }
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_features(self, File::create(dir.join(FEATURES_FILE))?)?;
        write_labels(self, File::create(dir.join(LABELS_FILE))?)?;
        if self.samples.iter().any(|s| s.face_box.is_some()) {
            write_boxes(self, File::create(dir.join(BOXES_FILE))?)?;
        }
        Ok(())
    }
}

/// Loads a corpus from a feature file and a label file.
///
/// Samples without a label row get an empty source and all-MISSING labels.
pub fn load_corpus(features_path: &Path, labels_path: &Path) -> Result<Corpus> {
    let features = read_features(File::open(features_path)?)?;
    let labels = read_labels(File::open(labels_path)?)?;
    assemble(features, labels)
}

struct LabelTable {
    attributes: Vec<String>,
    rows: HashMap<String, (String, Vec<TriLabel>)>,
}

fn assemble(features: Vec<(String, Vec<f64>)>, labels: LabelTable) -> Result<Corpus> {
    let ids: HashSet<&str> = features.iter().map(|(id, _)| id.as_str()).collect();
    if let Some(stray) = labels.rows.keys().find(|id| !ids.contains(id.as_str())) {
        return Err(Error::UnknownSample(stray.clone()));
    }
    let n_attr = labels.attributes.len();
    let mut rows = labels.rows;
    let samples = features
        .into_iter()
        .map(|(id, features)| {
            let (source, labels) = rows
                .remove(&id)
                .unwrap_or_else(|| (String::new(), vec![TriLabel::Missing; n_attr]));
            Sample {
                id,
                source,
                features,
                labels,
                face_box: None,
            }
        })
        .collect();
    Corpus::new(labels.attributes, samples)
}

fn read_features<R: Read>(reader: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::Schema("feature file must start with an `id` column".into()));
    }
    let dim = header.len() - 1;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        if record.len() - 1 != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: record.len().saturating_sub(1),
                context: format!("feature row `{id}`"),
            });
        }
        let values = record
            .iter()
            .skip(1)
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("bad feature value `{cell}` in row `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((id, values));
    }
    Ok(out)
}

fn read_labels<R: Read>(reader: R) -> Result<LabelTable> {
    let mut buf = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut buf)?;
    if buf.trim().is_empty() {
        return Ok(LabelTable {
            attributes: Vec::new(),
            rows: HashMap::new(),
        });
    }
    let mut rdr = csv::ReaderBuilder::new().from_reader(buf.as_bytes());
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") || header.get(1) != Some("source") {
        return Err(Error::Schema(
            "label file header must start with `id,source`".into(),
        ));
    }
    let cols: Vec<usize> = (2..header.len())
        .filter(|&i| !header[i].ends_with(PSEUDO_SUFFIX) && !header[i].ends_with(POSTERIOR_SUFFIX))
        .collect();
    let attributes: Vec<String> = cols.iter().map(|&i| header[i].to_string()).collect();
    let mut rows = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let id = record[0].to_string();
        let source = record[1].to_string();
        let labels = cols
            .iter()
            .map(|&i| TriLabel::parse_cell(record.get(i).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(id.clone(), (source, labels)).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(LabelTable { attributes, rows })
}

pub fn write_features<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend((0..corpus.dim()).map(|j| format!("f{j}")));
    wtr.write_record(&header)?;
    for s in corpus.samples() {
        let mut row = vec![s.id.clone()];
        row.extend(s.features.iter().map(|&v| fmt_f64(v)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_labels<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "source".to_string()];
    header.extend(corpus.attribute_ids());
    wtr.write_record(&header)?;
    for s in corpus.samples() {
        let mut row = vec![s.id.as_str(), s.source.as_str()];
        row.extend(s.labels.iter().map(|l| l.as_cell()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_boxes<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "x", "y", "w", "h", "img_w", "img_h"])?;
    for s in corpus.samples() {
        if let Some(b) = s.face_box {
            let mut row = vec![s.id.clone()];
            row.extend([b.x, b.y, b.w, b.h, b.img_w, b.img_h].map(fmt_f64));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_boxes<R: Read>(reader: R) -> Result<HashMap<String, FaceBox>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        img_w: f64,
        img_h: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = HashMap::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        let b = FaceBox {
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
            img_w: r.img_w,
            img_h: r.img_h,
        };
        if out.insert(r.id.clone(), b).is_some() {
            return Err(Error::DuplicateId(r.id));
        }
    }
    Ok(out)
}

/// Unions several corpora into one.
///
/// The registry is the union of the input registries in first-seen order.
/// A sample keeps its source tag; attributes its corpus never annotated
/// become MISSING.
pub fn merge(corpora: &[Corpus]) -> Result<Corpus> {
    let mut attribute_ids: Vec<String> = Vec::new();
    for c in corpora {
        for a in c.registry() {
            if !attribute_ids.contains(&a.id) {
                attribute_ids.push(a.id.clone());
            }
        }
    }
    let dim = corpora
        .iter()
        .find(|c| !c.is_empty())
        .map_or(0, Corpus::dim);

    let mut samples = Vec::new();
    for c in corpora {
        if !c.is_empty() && c.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.dim(),
                context: "merged corpora".into(),
            });
        }
        let map: Vec<Option<usize>> = attribute_ids
            .iter()
            .map(|id| c.attribute_index(id))
            .collect();
        for s in c.samples() {
            let labels = map
                .iter()
                .map(|m| m.map_or(TriLabel::Missing, |j| s.labels[j]))
                .collect();
            samples.push(Sample {
                labels,
                ..s.clone()
            });
        }
    }
    Corpus::new(attribute_ids, samples)
}
