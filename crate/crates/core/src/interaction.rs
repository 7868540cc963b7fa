//! Company × technology interaction matrix.
//!
//! Each source is weighted with tf-idf (companies are the documents), the
//! per-source matrices are combined with source weights, and columns are then
//! restricted to entities classified as technologies. An absent entry means
//! the pair was never observed; observed entries are always strictly positive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Source, SourceCorpus};
use crate::error::{Error, Result};

/// Stored value for an observed pair whose tf-idf is exactly zero (df = N).
pub const OBSERVED_ZERO: f64 = 1e-9;

/// Sparse row: (column id, value) sorted by column id.
pub type SparseVector = Vec<(usize, f64)>;

/// Raw tf-idf: `count * ln(n_docs / df)`.
pub fn tfidf_value(count: u64, n_docs: usize, df: usize) -> f64 {
    count as f64 * (n_docs as f64 / df as f64).ln()
}

/// Per-source weights for the combined importance function.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceWeights(BTreeMap<Source, f64>);

impl Default for SourceWeights {
    fn default() -> Self {
        SourceWeights(Source::ALL.iter().map(|&s| (s, 1.0)).collect())
    }
}

impl SourceWeights {
    pub fn new(weights: impl IntoIterator<Item = (Source, f64)>) -> Result<Self> {
        let map: BTreeMap<Source, f64> = weights.into_iter().collect();
        if let Some((s, w)) = map.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Invalid(format!(
                "weight for {s} must be finite and nonnegative, got {w}"
            )));
        }
        Ok(SourceWeights(map))
    }

    /// Weight of a source; sources not listed weigh 0.
    pub fn get(&self, source: Source) -> f64 {
        self.0.get(&source).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, source: Source, weight: f64) -> Result<()> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Invalid(format!(
                "weight for {source} must be finite and nonnegative, got {weight}"
            )));
        }
        self.0.insert(source, weight);
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SourceWeights(self.0.iter().map(|(&s, &w)| (s, w * factor)).collect())
    }
}

/// tf-idf matrix of one source, indexed by that source's own catalogs.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMatrix {
    pub source: Source,
    pub company_ids: Vec<String>,
    pub entity_ids: Vec<String>,
    /// (company, entity, value), sorted, value > 0.
    pub entries: Vec<(usize, usize, f64)>,
}

pub fn tfidf_source(corpus: &SourceCorpus) -> SourceMatrix {
    let n_docs = corpus.n_companies();
    let mut df = vec![0usize; corpus.n_entities()];
    for r in &corpus.records {
        df[corpus.entity_index[&r.entity]] += 1;
    }
    let entries = corpus
        .records
        .iter()
        .map(|r| {
            let c = corpus.company_index[&r.company];
            let e = corpus.entity_index[&r.entity];
            let v = tfidf_value(r.count, n_docs, df[e]);
            (c, e, if v > 0.0 { v } else { OBSERVED_ZERO })
        })
        .collect();
    SourceMatrix {
        source: corpus.source,
        company_ids: corpus.company_ids().into_iter().map(String::from).collect(),
        entity_ids: corpus.entity_ids().into_iter().map(String::from).collect(),
        entries,
    }
}

/// Sparse company × technology matrix with sorted string catalogs.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    company_ids: Vec<String>,
    tech_ids: Vec<String>,
    rows: Vec<SparseVector>,
}

impl InteractionMatrix {
    /// Builds a matrix from string-keyed entries. Catalogs are the sorted
    /// distinct ids of `companies`/`techs` plus any id used by an entry.
    pub fn from_entries<I>(companies: &[String], techs: &[String], entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, f64)>,
    {
        let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (c, t, v) in entries {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!(
                    "entry ({c}, {t}) must be finite and positive, got {v}"
                )));
            }
            if cells.insert((c.clone(), t.clone()), v).is_some() {
                return Err(Error::Invalid(format!("duplicate entry ({c}, {t})")));
            }
        }
        let company_ids: Vec<String> = companies
            .iter()
            .cloned()
            .chain(cells.keys().map(|(c, _)| c.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let tech_ids: Vec<String> = techs
            .iter()
            .cloned()
            .chain(cells.keys().map(|(_, t)| t.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rows = vec![Vec::new(); company_ids.len()];
        for ((c, t), v) in cells {
            let ci = company_ids.binary_search(&c).expect("company in catalog");
            let ti = tech_ids.binary_search(&t).expect("tech in catalog");
            rows[ci].push((ti, v));
        }
        for row in &mut rows {
            row.sort_by_key(|&(t, _)| t);
        }
        Ok(InteractionMatrix {
            company_ids,
            tech_ids,
            rows,
        })
    }

    pub fn n_companies(&self) -> usize {
        self.company_ids.len()
    }

    pub fn n_techs(&self) -> usize {
        self.tech_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nnz() == 0
    }

    pub fn company_ids(&self) -> &[String] {
        &self.company_ids
    }

    pub fn tech_ids(&self) -> &[String] {
        &self.tech_ids
    }

    pub fn company_index(&self, id: &str) -> Option<usize> {
        self.company_ids.binary_search_by(|c| c.as_str().cmp(id)).ok()
    }

    pub fn tech_index(&self, id: &str) -> Option<usize> {
        self.tech_ids.binary_search_by(|t| t.as_str().cmp(id)).ok()
    }

    pub fn row(&self, company: usize) -> &[(usize, f64)] {
        &self.rows[company]
    }

    pub fn get(&self, company: usize, tech: usize) -> Option<f64> {
        let row = &self.rows[company];
        row.binary_search_by_key(&tech, |&(t, _)| t).ok().map(|i| row[i].1)
    }

    pub fn is_observed(&self, company: usize, tech: usize) -> bool {
        self.get(company, tech).is_some()
    }

    /// Observed entries as (company, tech, value) in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(c, row)| row.iter().map(move |&(t, v)| (c, t, v)))
    }

    /// Observed entries of one technology column, sorted by company.
    pub fn column(&self, tech: usize) -> SparseVector {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(c, row)| row.binary_search_by_key(&tech, |&(t, _)| t).ok().map(|i| (c, row[i].1)))
            .collect()
    }

    /// Keeps only the technology columns accepted by `keep`, reindexing the
    /// surviving columns in their original (sorted) order.
    pub fn retain_techs(&self, keep: impl Fn(&str) -> bool) -> InteractionMatrix {
        let mut remap = vec![None; self.tech_ids.len()];
        let mut tech_ids = Vec::new();
        for (i, id) in self.tech_ids.iter().enumerate() {
            if keep(id) {
                remap[i] = Some(tech_ids.len());
                tech_ids.push(id.clone());
            }
        }
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().filter_map(|&(t, v)| remap[t].map(|nt| (nt, v))).collect())
            .collect();
        InteractionMatrix {
            company_ids: self.company_ids.clone(),
            tech_ids,
            rows,
        }
    }

    /// Drops companies and technologies without any observed entry.
    pub fn prune_empty(&self) -> InteractionMatrix {
        let mut used = vec![false; self.tech_ids.len()];
        for (_, t, _) in self.entries() {
            used[t] = true;
        }
        let cols = self.retain_techs_by_index(&used);
        let keep_rows: Vec<usize> = (0..cols.rows.len()).filter(|&c| !cols.rows[c].is_empty()).collect();
        InteractionMatrix {
            company_ids: keep_rows.iter().map(|&c| cols.company_ids[c].clone()).collect(),
            tech_ids: cols.tech_ids.clone(),
            rows: keep_rows.iter().map(|&c| cols.rows[c].clone()).collect(),
        }
    }

    fn retain_techs_by_index(&self, keep: &[bool]) -> InteractionMatrix {
        let kept: BTreeSet<&str> = self
            .tech_ids
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(id, _)| id.as_str())
            .collect();
        self.retain_techs(|id| kept.contains(id))
    }

    /// Text form: `companies=<n> techs=<m>` header, then one
    /// `<company>\t<tech>\t<value>` line per observed entry. Companies and
    /// technologies without entries cannot be represented and are omitted.
    pub fn to_text(&self) -> Result<String> {
        let pruned = self.prune_empty();
        for id in pruned.company_ids.iter().chain(&pruned.tech_ids) {
            if id.contains(['\t', '\n', '\r']) {
                return Err(Error::Invalid(format!("id {id:?} contains a tab or newline")));
            }
        }
        let mut out = format!("companies={} techs={}\n", pruned.n_companies(), pruned.n_techs());
        for (c, t, v) in pruned.entries() {
            writeln!(out, "{}\t{}\t{}", pruned.company_ids[c], pruned.tech_ids[t], v).expect("write to string");
        }
        Ok(out)
    }

    pub fn parse_text(text: &str, what: &str) -> Result<InteractionMatrix> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(what, 1, "missing header"))?;
        let (n, m) = parse_header(header).ok_or_else(|| Error::parse(what, 1, format!("bad header '{header}'")))?;
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(c), Some(t), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(what, i + 1, "expected 3 tab-separated fields"));
            };
            let v: f64 = v
                .parse()
                .map_err(|_| Error::parse(what, i + 1, format!("bad value '{v}'")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::parse(what, i + 1, format!("value must be positive, got {v}")));
            }
            entries.push((c.to_owned(), t.to_owned(), v));
        }
        let matrix =
            InteractionMatrix::from_entries(&[], &[], entries).map_err(|e| Error::parse(what, 0, e.to_string()))?;
        if matrix.n_companies() != n || matrix.n_techs() != m {
            return Err(Error::parse(
                what,
                1,
                format!(
                    "header declares {n}x{m} but entries span {}x{}",
                    matrix.n_companies(),
                    matrix.n_techs()
                ),
            ));
        }
        Ok(matrix)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<InteractionMatrix> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        InteractionMatrix::parse_text(&text, &path.display().to_string())
    }
}

fn parse_header(header: &str) -> Option<(usize, usize)> {
    let mut parts = header.split_whitespace();
    let n = parts.next()?.strip_prefix("companies=")?.parse().ok()?;
    let m = parts.next()?.strip_prefix("techs=")?.parse().ok()?;
    parts.next().is_none().then_some((n, m))
}

/// Weighted sum of per-source matrices over the union of their catalogs.
///
/// Sources are accumulated in [`Source`] order so the floating-point result
/// does not depend on the order of `matrices`.
pub fn combine_sources(matrices: &[SourceMatrix], weights: &SourceWeights) -> Result<InteractionMatrix> {
    if matrices.iter().all(|m| weights.get(m.source) == 0.0) && !matrices.is_empty() {
        return Err(Error::Invalid("all source weights are zero".into()));
    }
    let mut ordered: Vec<&SourceMatrix> = matrices.iter().collect();
    ordered.sort_by_key(|m| m.source);

    let mut companies = BTreeSet::new();
    let mut cells: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for m in &ordered {
        let w = weights.get(m.source);
        companies.extend(m.company_ids.iter().cloned());
        for &(c, e, v) in &m.entries {
            *cells
                .entry((m.company_ids[c].as_str(), m.entity_ids[e].as_str()))
                .or_insert(0.0) += w * v;
        }
    }
    let companies: Vec<String> = companies.into_iter().collect();
    InteractionMatrix::from_entries(
        &companies,
        &[],
        cells.into_iter().map(|((c, t), v)| {
            // every zero-weight observation is still an observation
            let v = if v > 0.0 { v } else { OBSERVED_ZERO };
            (c.to_owned(), t.to_owned(), v)
        }),
    )
}

/// Keeps only columns classified as technologies; unlisted entities are
/// treated as non-technologies.
pub fn filter_technologies(m: &InteractionMatrix, predictions: &BTreeMap<String, bool>) -> InteractionMatrix {
    m.retain_techs(|id| predictions.get(id).copied().unwrap_or(false))
}

pub fn company_tfidf_vector(m: &InteractionMatrix, company: &str) -> Result<SparseVector> {
    let c = m.company_index(company).ok_or_else(|| Error::Unknown {
        kind: "company",
        id: company.to_owned(),
    })?;
    Ok(m.row(c).to_vec())
}
