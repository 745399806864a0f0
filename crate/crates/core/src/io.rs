//! Reading and writing feature tables, probability tables, detection files,
//! manifests and model artifacts.
//!
//! Tables are comma-separated with a mandatory header; detections and
//! manifests are JSON. Parsers work on in-memory text so every load is a pure
//! function of the file bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KgdgError, Result};
use crate::learn::{ModelKind, SymbolicModel};
use crate::model::{
    validate_probability, BoundingBox, DRGrade, Detection, DomainDataset, DomainId, FeatureSet, FeatureVector,
    LabeledExample, ProbabilityVector, VeinFeatures, LESION_COLUMNS, VEIN_COLUMNS,
};

pub const MODEL_MAGIC: &[u8] = b"KGDG1\n";

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KgdgError::io(path, e))
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| KgdgError::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| KgdgError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| KgdgError::io(&tmp, e))?;
    f.sync_all().map_err(|e| KgdgError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| KgdgError::io(path, e))
}

const ID_COLUMNS: [&str; 3] = ["image_id", "domain", "grade"];

struct Header {
    index: BTreeMap<String, usize>,
}

impl Header {
    fn parse(record: &csv::StringRecord, allowed: &[&str]) -> Result<Header> {
        let mut index = BTreeMap::new();
        for (i, name) in record.iter().enumerate() {
            let name = name.trim();
            if !allowed.contains(&name) {
                return Err(KgdgError::SchemaMismatch(format!("unexpected column `{name}`")));
            }
            if index.insert(name.to_string(), i).is_some() {
                return Err(KgdgError::SchemaMismatch(format!("column `{name}` repeated")));
            }
        }
        Ok(Header { index })
    }

    fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn require(&self, names: &[&str]) -> Result<()> {
        match names.iter().find(|n| !self.has(n)) {
            Some(n) => Err(KgdgError::MissingColumn(n.to_string())),
            None => Ok(()),
        }
    }

    fn cell<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> &'r str {
        rec.get(self.index[name]).unwrap_or("").trim()
    }
}

fn cell_err(line: usize, column: &str, reason: impl Into<String>) -> KgdgError {
    KgdgError::NonNumericCell { line, column: column.to_string(), reason: reason.into() }
}

fn parse_count(raw: &str, line: usize, column: &str) -> Result<u32> {
    raw.parse::<u32>().map_err(|_| cell_err(line, column, format!("`{raw}` is not a nonnegative integer")))
}

fn parse_flag(raw: &str, line: usize, column: &str) -> Result<bool> {
    match raw {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(cell_err(line, column, format!("`{raw}` is not a 0/1 flag"))),
    }
}

fn parse_real(raw: &str, line: usize, column: &str, lo: f64, hi: f64) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| cell_err(line, column, format!("`{raw}` is not a number")))?;
    if !v.is_finite() || v < lo || v > hi {
        return Err(cell_err(line, column, format!("range violation: {v} outside [{lo}, {hi}]")));
    }
    Ok(v)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes())
}

fn csv_err(e: csv::Error) -> KgdgError {
    KgdgError::Malformed(e.to_string())
}

/// Parses a feature table. The schema (lesions-only or lesions+vein) is
/// inferred from the header.
pub fn parse_feature_table(text: &str) -> Result<(FeatureSet, Vec<LabeledExample>)> {
    let mut rdr = csv_reader(text);
    let allowed: Vec<&str> = ID_COLUMNS.iter().chain(&LESION_COLUMNS).chain(&VEIN_COLUMNS).copied().collect();
    let header = Header::parse(rdr.headers().map_err(csv_err)?, &allowed)?;
    header.require(&ID_COLUMNS)?;
    header.require(&LESION_COLUMNS)?;
    let set = if VEIN_COLUMNS.iter().any(|c| header.has(c)) {
        header.require(&VEIN_COLUMNS)?;
        FeatureSet::LesionsVein
    } else {
        FeatureSet::LesionsOnly
    };

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row_no + 2;
        let c = |name: &str| header.cell(&rec, name);
        let image_id = c("image_id").to_string();
        if image_id.is_empty() {
            return Err(cell_err(line, "image_id", "empty image id"));
        }
        let domain = DomainId::new(c("domain")).map_err(|_| cell_err(line, "domain", "invalid domain"))?;
        let grade_raw = c("grade");
        let grade = grade_raw
            .parse::<i64>()
            .ok()
            .and_then(|g| DRGrade::new(g).ok())
            .ok_or_else(|| cell_err(line, "grade", format!("`{grade_raw}` is not a grade in 0..=4")))?;
        let quadrants = parse_count(c("hemorrhage_quadrants"), line, "hemorrhage_quadrants")?;
        if quadrants > 4 {
            return Err(cell_err(line, "hemorrhage_quadrants", "range violation: more than 4 quadrants"));
        }
        let vein = match set {
            FeatureSet::LesionsOnly => None,
            FeatureSet::LesionsVein => Some(VeinFeatures {
                tortuosity: parse_real(c("vein_tortuosity"), line, "vein_tortuosity", 0.0, f64::MAX)?,
                caliber_mean: parse_real(c("vein_caliber_mean"), line, "vein_caliber_mean", 0.0, f64::MAX)?,
                branch_angle_mean: parse_real(c("vein_branch_angle_mean"), line, "vein_branch_angle_mean", 0.0, 180.0)?,
            }),
        };
        let features = FeatureVector {
            microaneurysm_count: parse_count(c("microaneurysm_count"), line, "microaneurysm_count")?,
            exudate_count: parse_count(c("exudate_count"), line, "exudate_count")?,
            hard_hemorrhage_count: parse_count(c("hard_hemorrhage_count"), line, "hard_hemorrhage_count")?,
            soft_hemorrhage_count: parse_count(c("soft_hemorrhage_count"), line, "soft_hemorrhage_count")?,
            cotton_wool_count: parse_count(c("cotton_wool_count"), line, "cotton_wool_count")?,
            subhyaloid_present: parse_flag(c("subhyaloid_present"), line, "subhyaloid_present")?,
            neovascularization_present: parse_flag(
                c("neovascularization_present"),
                line,
                "neovascularization_present",
            )?,
            hemorrhage_quadrants: quadrants as u8,
            vein,
        };
        if !seen.insert(image_id.clone()) {
            return Err(KgdgError::DuplicateImageId(image_id));
        }
        out.push(LabeledExample { image_id, domain, grade, features, neural_probs: None });
    }
    Ok((set, out))
}

pub fn load_feature_table(path: &Path) -> Result<Vec<LabeledExample>> {
    parse_feature_table(&read_text(path)?).map(|(_, ex)| ex)
}

/// Serializes examples; the vein columns are written when every example
/// carries vein features.
pub fn format_feature_table(examples: &[LabeledExample]) -> Result<String> {
    let with_vein = !examples.is_empty() && examples.iter().all(|e| e.features.vein.is_some());
    if !with_vein && examples.iter().any(|e| e.features.vein.is_some()) {
        return Err(KgdgError::SchemaMismatch("vein features present on only some examples".into()));
    }
    let set = if with_vein { FeatureSet::LesionsVein } else { FeatureSet::LesionsOnly };
    let mut s = String::new();
    let mut header: Vec<String> = ID_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(set.columns());
    s.push_str(&header.join(","));
    s.push('\n');
    for e in examples {
        let f = &e.features;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            e.image_id,
            e.domain,
            e.grade,
            f.microaneurysm_count,
            f.exudate_count,
            f.hard_hemorrhage_count,
            f.soft_hemorrhage_count,
            f.cotton_wool_count,
            f.subhyaloid_present as u8,
            f.neovascularization_present as u8,
            f.hemorrhage_quadrants
        ));
        if let Some(v) = f.vein {
            s.push_str(&format!(",{},{},{}", v.tortuosity, v.caliber_mean, v.branch_angle_mean));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_feature_table(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    write_atomic(path, format_feature_table(examples)?.as_bytes())
}

/// Per-image deep-branch probabilities plus the ids that needed
/// renormalization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbabilityTable {
    pub rows: BTreeMap<String, ProbabilityVector>,
    pub renormalized: Vec<String>,
}

const PROB_COLUMNS: [&str; 6] = ["image_id", "p0", "p1", "p2", "p3", "p4"];

pub fn parse_probability_table(text: &str) -> Result<ProbabilityTable> {
    let mut rdr = csv_reader(text);
    let header = Header::parse(rdr.headers().map_err(csv_err)?, &PROB_COLUMNS)?;
    header.require(&PROB_COLUMNS)?;
    let mut table = ProbabilityTable::default();
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row_no + 2;
        let id = header.cell(&rec, "image_id").to_string();
        let mut vals = [0.0; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let col = PROB_COLUMNS[k + 1];
            let raw = header.cell(&rec, col);
            *v = raw.parse().map_err(|_| cell_err(line, col, format!("`{raw}` is not a number")))?;
        }
        let (p, warn) = validate_probability(&vals)?;
        if warn.is_some() {
            table.renormalized.push(id.clone());
        }
        if table.rows.insert(id.clone(), p).is_some() {
            return Err(KgdgError::DuplicateImageId(id));
        }
    }
    Ok(table)
}

pub fn load_probability_table(path: &Path) -> Result<ProbabilityTable> {
    parse_probability_table(&read_text(path)?)
}

pub fn format_probability_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a ProbabilityVector)>) -> String {
    let mut s = PROB_COLUMNS.join(",");
    s.push('\n');
    for (id, p) in rows {
        let a = p.as_array();
        s.push_str(&format!("{id},{},{},{},{},{}\n", a[0], a[1], a[2], a[3], a[4]));
    }
    s
}

/// Attaches deep-branch probabilities to every example.
pub fn join_probabilities(examples: &mut [LabeledExample], table: &BTreeMap<String, ProbabilityVector>) -> Result<()> {
    for e in examples.iter_mut() {
        let p = table.get(&e.image_id).ok_or_else(|| KgdgError::UnknownImageId(e.image_id.clone()))?;
        e.neural_probs = Some(*p);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    pub lesion: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

pub fn parse_detections(text: &str) -> Result<BTreeMap<String, Vec<Detection>>> {
    let records: Vec<DetectionRecord> =
        serde_json::from_str(text).map_err(|e| KgdgError::Malformed(format!("detections: {e}")))?;
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in records {
        let lesion = r.lesion.parse()?;
        let bbox = BoundingBox::new(r.x, r.y, r.w, r.h)?;
        out.entry(r.image_id).or_default().push(Detection::new(lesion, bbox, r.score)?);
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    parse_detections(&read_text(path)?)
}

pub fn format_detections(dets: &BTreeMap<String, Vec<Detection>>) -> Result<String> {
    let records: Vec<DetectionRecord> = dets
        .iter()
        .flat_map(|(id, ds)| {
            ds.iter().map(move |d| DetectionRecord {
                image_id: id.clone(),
                lesion: d.lesion.as_str().to_string(),
                x: d.bbox.x(),
                y: d.bbox.y(),
                w: d.bbox.w(),
                h: d.bbox.h(),
                score: d.score(),
            })
        })
        .collect();
    serde_json::to_string_pretty(&records).map_err(|e| KgdgError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDomain {
    pub name: DomainId,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
}

/// Domain list for an experiment. Relative paths resolve against the
/// manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub domains: Vec<ManifestDomain>,
    #[serde(default)]
    pub seed_list: Vec<u64>,
    /// Set by the synthetic generator; reports use it to annotate
    /// comparisons against published numbers.
    #[serde(default)]
    pub synthetic: bool,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(KgdgError::InvalidConfig("manifest lists no domains".into()));
        }
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(&d.name) {
                return Err(KgdgError::InvalidConfig(format!("domain `{}` listed twice", d.name)));
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut m: Manifest = serde_json::from_str(text).map_err(|e| KgdgError::InvalidConfig(format!("manifest: {e}")))?;
    m.validate()?;
    for d in m.domains.iter_mut() {
        d.features = base_dir.join(&d.features);
        d.probabilities = d.probabilities.as_ref().map(|p| base_dir.join(p));
        d.detections = d.detections.as_ref().map(|p| base_dir.join(p));
    }
    Ok(m)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&read_text(path)?, base)
}

/// Reads one manifest domain, joining its probability table when present.
/// Every example must carry the manifest's domain name.
pub fn load_domain(entry: &ManifestDomain) -> Result<DomainDataset> {
    let mut examples = load_feature_table(&entry.features)?;
    if let Some(e) = examples.iter().find(|e| e.domain != entry.name) {
        return Err(KgdgError::Malformed(format!(
            "image `{}` tagged `{}` inside domain `{}`",
            e.image_id, e.domain, entry.name
        )));
    }
    if let Some(p) = &entry.probabilities {
        let table = load_probability_table(p)?;
        join_probabilities(&mut examples, &table.rows)?;
    }
    Ok(DomainDataset { domain: entry.name.clone(), examples })
}

/// A trained symbolic model with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model_kind: ModelKind,
    pub feature_schema: Vec<String>,
    pub train_fingerprint: String,
    pub parameters: SymbolicModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    model_kind: ModelKind,
    feature_schema: Vec<String>,
    train_fingerprint: String,
    checksum: String,
    parameters: SymbolicModel,
}

fn artifact_checksum(kind: ModelKind, fingerprint: &str, params: &SymbolicModel) -> Result<String> {
    let body = serde_json::to_vec(&(kind, fingerprint, params)).map_err(|e| KgdgError::Malformed(e.to_string()))?;
    Ok(sha256_hex(&body))
}

impl ModelArtifact {
    pub fn new(model: SymbolicModel, train_fingerprint: String) -> Self {
        ModelArtifact {
            model_kind: model.kind(),
            feature_schema: model.schema().to_vec(),
            train_fingerprint,
            parameters: model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let env = Envelope {
            model_kind: self.model_kind,
            feature_schema: self.feature_schema.clone(),
            train_fingerprint: self.train_fingerprint.clone(),
            checksum: artifact_checksum(self.model_kind, &self.train_fingerprint, &self.parameters)?,
            parameters: self.parameters.clone(),
        };
        let mut out = MODEL_MAGIC.to_vec();
        serde_json::to_writer(&mut out, &env).map_err(|e| KgdgError::Malformed(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body =
            bytes.strip_prefix(MODEL_MAGIC).ok_or_else(|| KgdgError::CorruptArtifact("missing KGDG1 header".into()))?;
        let env: Envelope = serde_json::from_slice(body).map_err(|e| KgdgError::CorruptArtifact(e.to_string()))?;
        if env.model_kind != env.parameters.kind() {
            return Err(KgdgError::SchemaMismatch("model kind disagrees with parameters".into()));
        }
        if env.feature_schema != env.parameters.schema() {
            return Err(KgdgError::SchemaMismatch("feature schema disagrees with the model's trained inputs".into()));
        }
        env.parameters.check_consistency()?;
        let fp_ok = env.train_fingerprint.len() == 64 && env.train_fingerprint.bytes().all(|b| b.is_ascii_hexdigit());
        if !fp_ok {
            return Err(KgdgError::CorruptArtifact("malformed training fingerprint".into()));
        }
        if artifact_checksum(env.model_kind, &env.train_fingerprint, &env.parameters)? != env.checksum {
            return Err(KgdgError::CorruptArtifact("checksum mismatch".into()));
        }
        Ok(ModelArtifact {
            model_kind: env.model_kind,
            feature_schema: env.feature_schema,
            train_fingerprint: env.train_fingerprint,
            parameters: env.parameters,
        })
    }
}

pub fn save_model(model: &ModelArtifact, path: &Path) -> Result<()> {
    write_atomic(path, &model.to_bytes()?)
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = fs::read(path).map_err(|e| KgdgError::io(path, e))?;
    ModelArtifact::from_bytes(&bytes)
}
