//! Samples, demographic groups and dataset manifests.
//!
//! A manifest is UTF-8 JSONL, one record per line with the fixed key order
//! `id, image_path, label, gender, race, provenance, split`. Demographic annotation is
//! mandatory: an unknown or missing gender/race token is a hard error, never a ninth bucket.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn token(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "M" => Some(Gender::Male),
            "F" => Some(Gender::Female),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Race {
    Black,
    White,
    Asian,
    Others,
}

impl Race {
    pub const ALL: [Race; 4] = [Race::Black, Race::White, Race::Asian, Race::Others];

    pub fn token(self) -> &'static str {
        match self {
            Race::Black => "Black",
            Race::White => "White",
            Race::Asian => "Asian",
            Race::Others => "Others",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Race::ALL.into_iter().find(|r| r.token() == s)
    }

    /// Single-letter prefix used in fused group codes.
    pub fn initial(self) -> char {
        match self {
            Race::Black => 'B',
            Race::White => 'W',
            Race::Asian => 'A',
            Race::Others => 'O',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One of the eight gender × race intersection groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemographicGroup {
    pub gender: Gender,
    pub race: Race,
}

impl DemographicGroup {
    pub const COUNT: usize = 8;

    /// Canonical order: B-M, B-F, W-M, W-F, A-M, A-F, O-M, O-F.
    pub const ALL: [DemographicGroup; 8] = {
        const fn g(race: Race, gender: Gender) -> DemographicGroup {
            DemographicGroup { gender, race }
        }
        [
            g(Race::Black, Gender::Male),
            g(Race::Black, Gender::Female),
            g(Race::White, Gender::Male),
            g(Race::White, Gender::Female),
            g(Race::Asian, Gender::Male),
            g(Race::Asian, Gender::Female),
            g(Race::Others, Gender::Male),
            g(Race::Others, Gender::Female),
        ]
    };

    pub fn new(gender: Gender, race: Race) -> Self {
        Self { gender, race }
    }

    /// Position in [`DemographicGroup::ALL`]; also the demographic-head class index.
    pub fn index(self) -> usize {
        self.race.index() * 2 + self.gender.index()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Fused report code such as `B-M`.
    pub fn code(self) -> String {
        format!("{}-{}", self.race.initial(), self.gender.token())
    }
}

impl fmt::Display for DemographicGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}, {})", self.code(), self.gender.token(), self.race.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original,
    Synthetic,
}

impl Provenance {
    pub fn token(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub label: Label,
    pub group: DemographicGroup,
    pub provenance: Provenance,
    pub split: Split,
}

impl SampleRecord {
    pub fn real(id: impl Into<String>, image_path: impl Into<PathBuf>, group: DemographicGroup, split: Split) -> Self {
        Self {
            id: id.into(),
            image_path: image_path.into(),
            label: Label::Real,
            group,
            provenance: Provenance::Original,
            split,
        }
    }
}

/// Wire form of a manifest line; field order is the canonical key order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    image_path: String,
    label: u8,
    gender: String,
    race: String,
    provenance: String,
    split: String,
}

impl RawRecord {
    fn from_record(r: &SampleRecord) -> Self {
        Self {
            id: r.id.clone(),
            image_path: r.image_path.to_string_lossy().into_owned(),
            label: r.label.as_u8(),
            gender: r.group.gender.token().into(),
            race: r.group.race.token().into(),
            provenance: r.provenance.token().into(),
            split: r.split.token().into(),
        }
    }

    fn into_record(self) -> std::result::Result<SampleRecord, String> {
        let label = Label::from_u8(self.label)
            .ok_or_else(|| format!("unknown label `{}` (expected 0 or 1)", self.label))?;
        let gender = Gender::from_token(&self.gender)
            .ok_or_else(|| format!("unknown gender `{}` (expected M or F)", self.gender))?;
        let race = Race::from_token(&self.race).ok_or_else(|| {
            format!("unknown race `{}` (expected Black, White, Asian or Others)", self.race)
        })?;
        let provenance = match self.provenance.as_str() {
            "original" => Provenance::Original,
            "synthetic" => Provenance::Synthetic,
            other => return Err(format!("unknown provenance `{other}`")),
        };
        let split = match self.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(format!("unknown split `{other}`")),
        };
        Ok(SampleRecord {
            id: self.id,
            image_path: PathBuf::from(self.image_path),
            label,
            group: DemographicGroup::new(gender, race),
            provenance,
            split,
        })
    }
}

/// An ordered, validated list of sample records. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    records: Vec<SampleRecord>,
    source_name: String,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>, source_name: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.provenance == Provenance::Synthetic && r.label != Label::Fake {
                return Err(Error::invalid(format!(
                    "synthetic sample `{}` must be labeled fake",
                    r.id
                )));
            }
        }
        Ok(Self {
            records,
            source_name: source_name.into(),
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Parses JSONL text. `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path, source_name: impl Into<String>) -> Result<Self> {
        Self::read(BufReader::new(text.as_bytes()), origin, source_name)
    }

    fn read(reader: impl BufRead, origin: &Path, source_name: impl Into<String>) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                message,
            };
            let raw: RawRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let rec = raw.into_record().map_err(parse_err)?;
            if !seen.insert(rec.id.clone()) {
                return Err(parse_err(Error::DuplicateId(rec.id).to_string()));
            }
            records.push(rec);
        }
        Self::new(records, source_name)
    }

    /// Canonical JSONL: compact objects in fixed key order, one per line, `\n`-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            // RawRecord contains only strings and integers; serialization cannot fail.
            out.push_str(&serde_json::to_string(&RawRecord::from_record(r)).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Loads and validates a JSONL manifest; the source name is the file stem.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DatasetManifest::read(BufReader::new(file), path, name)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.write(path)
}

/// Sample ids per intersection group. All eight keys are always present.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupPartition {
    blocks: [Vec<String>; DemographicGroup::COUNT],
}

impl GroupPartition {
    pub fn block(&self, group: DemographicGroup) -> &[String] {
        &self.blocks[group.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (DemographicGroup, &[String])> {
        DemographicGroup::ALL
            .into_iter()
            .map(move |g| (g, self.blocks[g.index()].as_slice()))
    }
}

pub fn partition_by_group(manifest: &DatasetManifest) -> GroupPartition {
    let mut part = GroupPartition::default();
    for r in manifest.records() {
        part.blocks[r.group.index()].push(r.id.clone());
    }
    part
}

/// `(group, label) -> count` table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetStats {
    counts: [[usize; 2]; DemographicGroup::COUNT],
}

impl DatasetStats {
    pub fn get(&self, group: DemographicGroup, label: Label) -> usize {
        self.counts[group.index()][label.index()]
    }

    pub fn group_total(&self, group: DemographicGroup) -> usize {
        self.counts[group.index()].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

pub fn dataset_stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for r in manifest.records() {
        stats.counts[r.group.index()][r.label.index()] += 1;
    }
    stats
}
