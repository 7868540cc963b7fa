//! Input catalogs: per-source mention corpora, entity embeddings, technology
//! labels and category maps.
//!
//! Every catalog assigns dense ids by sorting the raw string ids, so two loads
//! of the same data always agree on ids regardless of file order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DBPEDIA_RESOURCE: &str = "http://dbpedia.org/resource/";

/// The crawled data source a mention file came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Website,
    Patent,
    Jobs,
    Twitter,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Website, Source::Patent, Source::Jobs, Source::Twitter];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Website => "website",
            Source::Patent => "patent",
            Source::Jobs => "jobs",
            Source::Twitter => "twitter",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Source::ALL.into_iter().find(|src| src.as_str() == s).ok_or_else(|| {
            Error::Invalid(format!(
                "unknown source '{s}' (expected website, patent, jobs or twitter)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionRecord {
    pub company: String,
    pub entity: String,
    pub count: u64,
    pub source: Source,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct MentionLine {
    company: String,
    entity: String,
    count: i64,
}

/// Strips the DBpedia resource prefix so entity ids are bare URI tails.
pub fn entity_id(raw: &str) -> &str {
    raw.strip_prefix(DBPEDIA_RESOURCE).unwrap_or(raw)
}

/// All mentions from one source, merged per (company, entity) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCorpus {
    pub source: Source,
    /// Sorted by (company, entity); no duplicate pairs.
    pub records: Vec<MentionRecord>,
    pub company_index: BTreeMap<String, usize>,
    pub entity_index: BTreeMap<String, usize>,
}

impl SourceCorpus {
    /// Builds a corpus from raw records, summing duplicate pairs.
    pub fn from_records<I>(source: Source, records: I) -> Self
    where
        I: IntoIterator<Item = (String, String, u64)>,
    {
        let mut merged: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (company, entity, count) in records {
            *merged.entry((company, entity)).or_default() += count;
        }
        let companies: BTreeSet<&String> = merged.keys().map(|(c, _)| c).collect();
        let entities: BTreeSet<&String> = merged.keys().map(|(_, e)| e).collect();
        let company_index = companies.into_iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        let entity_index = entities.into_iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let records = merged
            .into_iter()
            .map(|((company, entity), count)| MentionRecord {
                company,
                entity,
                count,
                source,
            })
            .collect();
        SourceCorpus {
            source,
            records,
            company_index,
            entity_index,
        }
    }

    pub fn n_companies(&self) -> usize {
        self.company_index.len()
    }

    pub fn n_entities(&self) -> usize {
        self.entity_index.len()
    }

    pub fn total_count(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Company ids in dense-id order.
    pub fn company_ids(&self) -> Vec<&str> {
        self.company_index.keys().map(String::as_str).collect()
    }

    pub fn entity_ids(&self) -> Vec<&str> {
        self.entity_index.keys().map(String::as_str).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = MentionLine {
                company: r.company.clone(),
                entity: r.entity.clone(),
                count: r.count as i64,
            };
            out.push_str(&serde_json::to_string(&line).expect("mention line serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses a JSON-lines mention file for one source.
pub fn parse_mentions(path: impl AsRef<Path>, source: Source) -> Result<SourceCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mentions_str(&text, source, &path.display().to_string())
}

/// Same as [`parse_mentions`] over in-memory text; `what` names the input in errors.
pub fn parse_mentions_str(text: &str, source: Source, what: &str) -> Result<SourceCorpus> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MentionLine = serde_json::from_str(line).map_err(|e| Error::parse(what, lineno, e.to_string()))?;
        if parsed.count < 1 {
            return Err(Error::parse(
                what,
                lineno,
                format!("count must be >= 1, got {}", parsed.count),
            ));
        }
        let company = parsed.company.trim();
        let entity = entity_id(parsed.entity.trim());
        if company.is_empty() || entity.is_empty() {
            return Err(Error::parse(what, lineno, "empty company or entity"));
        }
        raw.push((company.to_owned(), entity.to_owned(), parsed.count as u64));
    }
    Ok(SourceCorpus::from_records(source, raw))
}

/// Fixed-dimension real vectors keyed by entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dim must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value in embedding '{id}'")));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("dim={}\n", self.dim);
        for (id, v) in &self.vectors {
            out.push_str(id);
            out.push('\t');
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings_str(&text, &path.display().to_string())
}

pub fn parse_embeddings_str(text: &str, what: &str) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(what, 1, "missing 'dim=<D>' header"))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(what, 1, format!("bad header '{header}'")))?;
    let mut table = EmbeddingTable::new(dim)?;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(what, lineno, "expected '<entity>\\t<values>'"))?;
        let id = entity_id(id.trim());
        if id.is_empty() {
            return Err(Error::parse(what, lineno, "empty entity id"));
        }
        let vector = values
            .split(',')
            .map(|v| {
                // tolerate typographic minus signs
                let v = v.trim().replace('\u{2212}', "-");
                v.parse::<f64>()
                    .map_err(|_| Error::parse(what, lineno, format!("bad value '{v}' for '{id}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if table.contains(id) {
            return Err(Error::parse(what, lineno, format!("duplicate entity '{id}'")));
        }
        table.insert(id, vector)?;
    }
    Ok(table)
}

/// Entity id → is-technology.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TechLabelSet {
    pub labels: BTreeMap<String, bool>,
}

impl TechLabelSet {
    pub fn get(&self, id: &str) -> Option<bool> {
        self.labels.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn technologies(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().filter(|(_, &t)| t).map(|(k, _)| k.as_str())
    }
}

/// Company (or technology) id → its set of categories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMap {
    pub categories: BTreeMap<String, BTreeSet<String>>,
}

impl CategoryMap {
    pub fn get(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, category: impl Into<String>) {
        self.categories.entry(id.into()).or_default().insert(category.into());
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// Reads a two-column CSV, skipping an optional header equal to `header`.
/// Yields (1-based line, first, second).
fn read_pairs(text: &str, what: &str, header: [&str; 2]) -> Result<Vec<(usize, String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = |r: &csv::StringRecord| r.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(i + 1);
            Error::parse(what, line, e.to_string())
        })?;
        if rec.len() != 2 {
            return Err(Error::parse(
                what,
                line(&rec),
                format!("expected 2 columns, found {}", rec.len()),
            ));
        }
        if i == 0 && rec[0] == *header[0] && rec[1] == *header[1] {
            continue;
        }
        out.push((line(&rec), rec[0].to_owned(), rec[1].to_owned()));
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<TechLabelSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels_str(&text, &path.display().to_string())
}

pub fn parse_labels_str(text: &str, what: &str) -> Result<TechLabelSet> {
    let mut set = TechLabelSet::default();
    for (line, entity, label) in read_pairs(text, what, ["entity", "label"])? {
        let label = match label.as_str() {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(what, line, format!("label must be 0 or 1, got '{other}'"))),
        };
        let entity = entity_id(&entity).to_owned();
        if entity.is_empty() {
            return Err(Error::parse(what, line, "empty entity id"));
        }
        match set.labels.get(&entity) {
            Some(&prev) if prev != label => {
                return Err(Error::parse(what, line, format!("conflicting labels for '{entity}'")))
            }
            _ => {
                set.labels.insert(entity, label);
            }
        }
    }
    Ok(set)
}

pub fn load_categories(path: impl AsRef<Path>) -> Result<CategoryMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_categories_str(&text, &path.display().to_string())
}

pub fn parse_categories_str(text: &str, what: &str) -> Result<CategoryMap> {
    let mut map = CategoryMap::default();
    for (line, id, category) in read_pairs(text, what, ["id", "category"])? {
        if id.is_empty() {
            return Err(Error::parse(what, line, "empty id"));
        }
        if category.is_empty() {
            return Err(Error::parse(what, line, format!("empty category for '{id}'")));
        }
        map.insert(entity_id(&id), category);
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceStats {
    pub source: Source,
    pub companies: usize,
    pub entities: usize,
    pub records: usize,
    pub total_count: u64,
}

/// Coverage of the mention corpora by the embedding and label catalogs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub per_source: Vec<SourceStats>,
    pub missing_embeddings: Vec<String>,
    pub missing_labels: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.missing_embeddings.is_empty() && self.missing_labels.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "source,companies,entities,records,total_count")?;
        for s in &self.per_source {
            writeln!(
                f,
                "{},{},{},{},{}",
                s.source, s.companies, s.entities, s.records, s.total_count
            )?;
        }
        writeln!(f, "missing_embeddings={}", self.missing_embeddings.len())?;
        for id in &self.missing_embeddings {
            writeln!(f, "  {id}")?;
        }
        writeln!(f, "missing_labels={}", self.missing_labels.len())?;
        for id in &self.missing_labels {
            writeln!(f, "  {id}")?;
        }
        Ok(())
    }
}

pub fn validate_corpus(
    corpora: &[SourceCorpus],
    embeddings: &EmbeddingTable,
    labels: &TechLabelSet,
) -> ValidationReport {
    let per_source = corpora
        .iter()
        .map(|c| SourceStats {
            source: c.source,
            companies: c.n_companies(),
            entities: c.n_entities(),
            records: c.records.len(),
            total_count: c.total_count(),
        })
        .collect();
    let mentioned: BTreeSet<&str> = corpora
        .iter()
        .flat_map(|c| c.entity_index.keys().map(String::as_str))
        .collect();
    let missing_embeddings = mentioned
        .iter()
        .filter(|e| !embeddings.contains(e))
        .map(|e| e.to_string())
        .collect();
    let missing_labels = mentioned
        .iter()
        .filter(|e| labels.get(e).is_none())
        .map(|e| e.to_string())
        .collect();
    ValidationReport {
        per_source,
        missing_embeddings,
        missing_labels,
    }
}
