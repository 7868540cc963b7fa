//! Ranked answers to company → technology, company → company and
//! technology → company queries, from a trained model or from the raw
//! tf-idf matrix.
//!
//! Every list is sorted by descending score with ties broken by ascending
//! id, and never contains the query itself.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::interaction::InteractionMatrix;
use crate::nn::dot;
use crate::recommender::RecommenderModel;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query: String,
    pub k: usize,
    pub items: Vec<RankedItem>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// How company similarity is derived from a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComComSimilarity {
    /// Cosine between learned company factors.
    #[default]
    FactorCosine,
    /// Cosine between rows of the predicted score matrix.
    ScoreRowCosine,
}

/// Orders `(catalog index, score)` candidates and keeps the first `k`.
/// Catalogs are sorted, so ascending index is ascending id.
fn top_k(mut candidates: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    candidates.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    candidates.truncate(k);
    candidates
}

fn ranked(query: &str, k: usize, items: Vec<(usize, f64)>, ids: &[String]) -> RankedList {
    RankedList {
        query: query.to_owned(),
        k,
        items: top_k(items, k)
            .into_iter()
            .map(|(i, score)| RankedItem {
                id: ids[i].clone(),
                score,
            })
            .collect(),
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot(a, b) / (na * nb))
}

/// Technologies for a company by predicted score. With `include_observed`
/// false only technologies absent from the company's row of `matrix` are
/// ranked (discovery); otherwise all are (ranking).
pub fn retrieve_com_tech(
    model: &RecommenderModel,
    matrix: &InteractionMatrix,
    company: &str,
    k: usize,
    include_observed: bool,
) -> Result<RankedList> {
    let c = model.company_index(company)?;
    let observed: BTreeSet<&str> = match matrix.company_index(company) {
        Some(mc) => matrix
            .row(mc)
            .iter()
            .map(|&(t, _)| matrix.tech_ids()[t].as_str())
            .collect(),
        None => BTreeSet::new(),
    };
    let mut candidates = Vec::with_capacity(model.n_techs());
    for (t, id) in model.tech_ids().iter().enumerate() {
        if include_observed || !observed.contains(id.as_str()) {
            candidates.push((t, model.score(c, t)?));
        }
    }
    Ok(ranked(company, k, candidates, model.tech_ids()))
}

/// Other companies by similarity to `company`.
pub fn retrieve_com_com(
    model: &RecommenderModel,
    company: &str,
    k: usize,
    similarity: ComComSimilarity,
) -> Result<RankedList> {
    let q = model.company_index(company)?;
    let rows: Vec<Vec<f64>> = match similarity {
        ComComSimilarity::FactorCosine => (0..model.n_companies())
            .map(|c| model.companies.row(c).to_vec())
            .collect(),
        ComComSimilarity::ScoreRowCosine => {
            let p = model.predict_matrix()?;
            (0..p.rows()).map(|c| p.row(c).to_vec()).collect()
        }
    };
    if dot(&rows[q], &rows[q]) == 0.0 {
        return Err(Error::Invalid(format!(
            "company '{company}' has a zero-norm representation"
        )));
    }
    let candidates = (0..rows.len())
        .filter(|&c| c != q)
        .map(|c| (c, cosine(&rows[q], &rows[c]).unwrap_or(0.0)))
        .collect();
    Ok(ranked(company, k, candidates, model.company_ids()))
}

/// Companies for a technology by predicted score.
pub fn retrieve_tech_com(model: &RecommenderModel, tech: &str, k: usize) -> Result<RankedList> {
    let t = model.tech_index(tech)?;
    let candidates = (0..model.n_companies())
        .map(|c| model.score(c, t).map(|s| (c, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ranked(tech, k, candidates, model.company_ids()))
}

fn matrix_company(matrix: &InteractionMatrix, company: &str) -> Result<usize> {
    matrix.company_index(company).ok_or_else(|| Error::Unknown {
        kind: "company",
        id: company.to_owned(),
    })
}

/// A company's observed technologies ordered by their tf-idf weight.
pub fn tfidf_retrieve_com_tech(matrix: &InteractionMatrix, company: &str, k: usize) -> Result<RankedList> {
    let c = matrix_company(matrix, company)?;
    Ok(ranked(company, k, matrix.row(c).to_vec(), matrix.tech_ids()))
}

/// `Σ min(a_t, b_t) / Σ max(a_t, b_t)` over two sorted sparse vectors with
/// nonnegative values; 0 when both are empty.
pub fn weighted_jaccard(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut num, mut den) = (0.0, 0.0);
    while i < a.len() || j < b.len() {
        let ka = a.get(i).map(|x| x.0);
        let kb = b.get(j).map(|x| x.0);
        match (ka, kb) {
            (Some(x), Some(y)) if x == y => {
                num += a[i].1.min(b[j].1);
                den += a[i].1.max(b[j].1);
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                den += a[i].1;
                i += 1;
            }
            (Some(_), None) => {
                den += a[i].1;
                i += 1;
            }
            _ => {
                den += b[j].1;
                j += 1;
            }
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Other companies by tf-idf weighted Jaccard similarity of their rows.
pub fn tfidf_retrieve_com_com(matrix: &InteractionMatrix, company: &str, k: usize) -> Result<RankedList> {
    let q = matrix_company(matrix, company)?;
    let candidates = (0..matrix.n_companies())
        .filter(|&c| c != q)
        .map(|c| (c, weighted_jaccard(matrix.row(q), matrix.row(c))))
        .collect();
    Ok(ranked(company, k, candidates, matrix.company_ids()))
}

/// Companies that mention a technology, by tf-idf weight.
pub fn tfidf_retrieve_tech_com(matrix: &InteractionMatrix, tech: &str, k: usize) -> Result<RankedList> {
    let t = matrix.tech_index(tech).ok_or_else(|| Error::Unknown {
        kind: "technology",
        id: tech.to_owned(),
    })?;
    Ok(ranked(tech, k, matrix.column(t), matrix.company_ids()))
}

/// Uniform interface over model-based and tf-idf retrieval.
pub trait Retriever {
    fn name(&self) -> String;
    fn company_ids(&self) -> &[String];
    fn tech_ids(&self) -> &[String];
    fn com_tech(&self, company: &str, k: usize, include_observed: bool) -> Result<RankedList>;
    fn com_com(&self, company: &str, k: usize) -> Result<RankedList>;
    fn tech_com(&self, tech: &str, k: usize) -> Result<RankedList>;
}

pub struct ModelRetriever<'a> {
    pub model: &'a RecommenderModel,
    pub matrix: &'a InteractionMatrix,
    pub similarity: ComComSimilarity,
    pub name: String,
}

impl<'a> ModelRetriever<'a> {
    pub fn new(model: &'a RecommenderModel, matrix: &'a InteractionMatrix) -> Self {
        ModelRetriever {
            model,
            matrix,
            similarity: ComComSimilarity::default(),
            name: model.variant.tag().to_owned(),
        }
    }
}

impl Retriever for ModelRetriever<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn company_ids(&self) -> &[String] {
        self.model.company_ids()
    }

    fn tech_ids(&self) -> &[String] {
        self.model.tech_ids()
    }

    fn com_tech(&self, company: &str, k: usize, include_observed: bool) -> Result<RankedList> {
        retrieve_com_tech(self.model, self.matrix, company, k, include_observed)
    }

    fn com_com(&self, company: &str, k: usize) -> Result<RankedList> {
        retrieve_com_com(self.model, company, k, self.similarity)
    }

    fn tech_com(&self, tech: &str, k: usize) -> Result<RankedList> {
        retrieve_tech_com(self.model, tech, k)
    }
}

pub struct TfidfRetriever<'a> {
    pub matrix: &'a InteractionMatrix,
}

impl Retriever for TfidfRetriever<'_> {
    fn name(&self) -> String {
        "tfidf".into()
    }

    fn company_ids(&self) -> &[String] {
        self.matrix.company_ids()
    }

    fn tech_ids(&self) -> &[String] {
        self.matrix.tech_ids()
    }

    /// Observed technologies only; unobserved ones are unreachable.
    fn com_tech(&self, company: &str, k: usize, _include_observed: bool) -> Result<RankedList> {
        tfidf_retrieve_com_tech(self.matrix, company, k)
    }

    fn com_com(&self, company: &str, k: usize) -> Result<RankedList> {
        tfidf_retrieve_com_com(self.matrix, company, k)
    }

    fn tech_com(&self, tech: &str, k: usize) -> Result<RankedList> {
        tfidf_retrieve_tech_com(self.matrix, tech, k)
    }
}
