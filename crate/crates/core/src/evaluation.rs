//! Category-overlap precision at k and task-level reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::corpus::CategoryMap;
use crate::error::{Error, Result};
use crate::retrieval::Retriever;

pub const DEFAULT_KS: [usize; 4] = [5, 10, 15, 20];

/// How a query's categories are compared with a result's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overlap {
    /// Number of shared categories.
    #[default]
    Intersection,
    /// Size of the union. Rewards results with many categories whether or
    /// not they match; kept for comparison only.
    Union,
}

/// Mean overlap over the first `k` results. Missing results and results
/// without categories contribute 0.
///
/// # Panics
/// If `k` is 0.
pub fn p_at_k<S: AsRef<str>>(
    query: &BTreeSet<String>,
    results: &[S],
    categories: &CategoryMap,
    k: usize,
    overlap: Overlap,
) -> f64 {
    assert!(k >= 1, "p_at_k needs k >= 1");
    let empty = BTreeSet::new();
    let total: usize = results
        .iter()
        .take(k)
        .map(|r| {
            let cats = categories.get(r.as_ref()).unwrap_or(&empty);
            match overlap {
                Overlap::Intersection => query.intersection(cats).count(),
                Overlap::Union if cats.is_empty() => 0,
                Overlap::Union => query.union(cats).count(),
            }
        })
        .sum();
    total as f64 / k as f64
}

/// Mean of [`p_at_k`] over `queries`, each answered by `retrieve`.
pub fn p_at_k_set<F>(queries: &[String], mut retrieve: F, categories: &CategoryMap, k: usize) -> Result<f64>
where
    F: FnMut(&str) -> Result<Vec<String>>,
{
    if queries.is_empty() {
        return Err(Error::Invalid("no queries to evaluate".into()));
    }
    let empty = BTreeSet::new();
    let mut sum = 0.0;
    for q in queries {
        let results = retrieve(q)?;
        sum += p_at_k(
            categories.get(q).unwrap_or(&empty),
            &results,
            categories,
            k,
            Overlap::Intersection,
        );
    }
    Ok(sum / queries.len() as f64)
}

/// Reciprocal rank of the first relevant id, 0 if none appears.
pub fn reciprocal_rank<S: AsRef<str>>(results: &[S], relevant: &BTreeSet<String>) -> f64 {
    results
        .iter()
        .position(|r| relevant.contains(r.as_ref()))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ComCom,
    TechCom,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::ComCom => "com-com",
            Task::TechCom => "tech-com",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "com-com" => Ok(Task::ComCom),
            "tech-com" => Ok(Task::TechCom),
            other => Err(Error::Invalid(format!(
                "unknown task '{other}' (expected com-com or tech-com)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub task: Task,
    pub model: String,
    pub ks: Vec<usize>,
    /// Query id and its value for each entry of `ks`.
    pub per_query: Vec<(String, Vec<f64>)>,
    pub means: BTreeMap<usize, f64>,
    pub skipped: usize,
}

impl PrecisionReport {
    pub fn n_queries(&self) -> usize {
        self.per_query.len()
    }

    pub const CSV_HEADER: &'static str = "task,model,k,mean_p_at_k,n_queries";

    /// Data rows, without header.
    pub fn csv_rows(&self) -> Vec<String> {
        self.ks
            .iter()
            .map(|k| {
                format!(
                    "{},{},{},{},{}",
                    self.task,
                    self.model,
                    k,
                    self.means[k],
                    self.n_queries()
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in self.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// Side-by-side table of several reports on the same task.
pub fn format_table(reports: &[PrecisionReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}", first.task.as_str());
    for k in &first.ks {
        out.push_str(&format!("  {:>8}", format!("P@{k}")));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{:<width$}", r.model));
        for k in &r.ks {
            out.push_str(&format!("  {:>8.4}", r.means.get(k).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "queries: {} (skipped without categories: {})\n",
        first.n_queries(),
        first.skipped
    ));
    out
}

/// Runs every categorized company (com-com) or technology (tech-com) as a
/// query. Results are categorized through the same map.
pub fn evaluate_task(
    task: Task,
    retriever: &dyn Retriever,
    categories: &CategoryMap,
    ks: &[usize],
) -> Result<PrecisionReport> {
    evaluate_task_with(task, retriever, categories, ks, Overlap::Intersection)
}

/// [`evaluate_task`] with a chosen overlap measure.
pub fn evaluate_task_with(
    task: Task,
    retriever: &dyn Retriever,
    categories: &CategoryMap,
    ks: &[usize],
    overlap: Overlap,
) -> Result<PrecisionReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Invalid("k values must be nonempty and >= 1".into()));
    }
    let candidates = match task {
        Task::ComCom => retriever.company_ids(),
        Task::TechCom => retriever.tech_ids(),
    };
    let (queries, skipped): (Vec<&String>, Vec<&String>) = candidates
        .iter()
        .partition(|id| categories.get(id).is_some_and(|c| !c.is_empty()));
    if queries.is_empty() {
        return Err(Error::Invalid(format!(
            "{task}: none of the {} queries has a category",
            candidates.len()
        )));
    }
    let kmax = *ks.iter().max().unwrap();
    let mut per_query = Vec::with_capacity(queries.len());
    for q in queries {
        let list = match task {
            Task::ComCom => retriever.com_com(q, kmax)?,
            Task::TechCom => retriever.tech_com(q, kmax)?,
        };
        let ids = list.ids();
        let own = categories.get(q).unwrap();
        let values: Vec<f64> = ks.iter().map(|&k| p_at_k(own, &ids, categories, k, overlap)).collect();
        per_query.push((q.clone(), values));
    }
    let means = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let sum: f64 = per_query.iter().map(|(_, v)| v[i]).sum();
            (k, sum / per_query.len() as f64)
        })
        .collect();
    Ok(PrecisionReport {
        task,
        model: retriever.name(),
        ks: ks.to_vec(),
        per_query,
        means,
        skipped: skipped.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::InteractionMatrix;
    use crate::retrieval::TfidfRetriever;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn cats() -> CategoryMap {
        let mut m = CategoryMap::default();
        m.insert("r1", "A");
        m.insert("r2", "B");
        m.insert("r2", "C");
        m.insert("r4", "A");
        m.insert("r4", "B");
        m
    }

    #[test]
    fn overlap_example() {
        let p = p_at_k(
            &set(&["A", "B"]),
            &["r1", "r2", "r3"],
            &cats(),
            3,
            Overlap::Intersection,
        );
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn maximal_and_zero_overlap() {
        let q = set(&["A", "B"]);
        assert_eq!(p_at_k(&q, &["r4", "r4"], &cats(), 2, Overlap::Intersection), 2.0);
        assert_eq!(
            p_at_k(&set(&["Z"]), &["r1", "r2"], &cats(), 2, Overlap::Intersection),
            0.0
        );
    }

    #[test]
    fn short_list_is_padded() {
        let p = p_at_k(&set(&["A"]), &["r1"], &cats(), 4, Overlap::Intersection);
        assert_eq!(p, 0.25);
    }

    #[test]
    fn union_form() {
        // {A,B} ∪ {A} = 2, {A,B} ∪ {B,C} = 3, uncategorized = 0
        let p = p_at_k(&set(&["A", "B"]), &["r1", "r2", "r3"], &cats(), 3, Overlap::Union);
        assert!((p - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn set_mean() {
        let mut c = cats();
        c.insert("q1", "A");
        c.insert("q2", "Z");
        let queries = vec!["q1".to_string(), "q2".to_string()];
        let p = p_at_k_set(&queries, |_| Ok(vec!["r4".into()]), &c, 1).unwrap();
        assert_eq!(p, 0.5);
        assert!(p_at_k_set(&[], |_| Ok(vec![]), &c, 1).is_err());
    }

    #[test]
    fn reciprocal_rank_first_hit() {
        assert_eq!(reciprocal_rank(&["x", "y", "z"], &set(&["z", "y"])), 0.5);
        assert_eq!(reciprocal_rank(&["x"], &set(&["q"])), 0.0);
    }

    fn homophily() -> (InteractionMatrix, CategoryMap) {
        let mut entries = Vec::new();
        let mut c = CategoryMap::default();
        for i in 0..8 {
            let cluster = i / 4;
            c.insert(format!("c{i}"), format!("k{cluster}"));
            for t in 0..3 {
                entries.push((format!("c{i}"), format!("t{cluster}{t}"), 1.0));
            }
        }
        (InteractionMatrix::from_entries(&[], &[], entries).unwrap(), c)
    }

    #[test]
    fn homophily_world_is_perfect_within_cluster() {
        let (m, c) = homophily();
        let r = evaluate_task(Task::ComCom, &TfidfRetriever { matrix: &m }, &c, &[1, 2, 3]).unwrap();
        assert_eq!(r.means.values().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
        assert_eq!(r.n_queries(), 8);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn union_overlap_is_selectable() {
        let (m, c) = homophily();
        let r = evaluate_task_with(Task::ComCom, &TfidfRetriever { matrix: &m }, &c, &[1], Overlap::Union).unwrap();
        // one category each, always shared: union size 1
        assert_eq!(r.means[&1], 1.0);
    }

    #[test]
    fn single_k_report_and_skips() {
        let (m, mut c) = homophily();
        c.categories.remove("c0");
        let r = evaluate_task(Task::ComCom, &TfidfRetriever { matrix: &m }, &c, &[5]).unwrap();
        assert_eq!(r.means.len(), 1);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.csv_rows().len(), 1);
        assert!(r
            .to_csv()
            .starts_with("task,model,k,mean_p_at_k,n_queries\ncom-com,tfidf,5,"));
        let err = evaluate_task(Task::TechCom, &TfidfRetriever { matrix: &m }, &c, &[5]);
        assert!(err.is_err());
    }
}
