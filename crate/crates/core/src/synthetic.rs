//! Generated worlds with known structure, for tests, benchmarks and the
//! bundled example data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{CategoryMap, EmbeddingTable, Source, SourceCorpus, DBPEDIA_RESOURCE};
use crate::error::{Error, Result};
use crate::interaction::{combine_sources, tfidf_source, InteractionMatrix, SourceWeights};
use crate::nn::Matrix;

#[derive(Debug, Clone)]
pub struct ClusterWorldConfig {
    pub clusters: usize,
    pub companies_per_cluster: usize,
    pub techs_per_cluster: usize,
    /// Probability that a company mentions a technology of its own cluster.
    pub mention_prob: f64,
    /// Probability that a company mentions a technology of another cluster.
    pub noise_prob: f64,
    /// Fraction of within-cluster mentions hidden from the observed corpus.
    pub withhold: f64,
    pub max_count: u64,
    pub sources: Vec<Source>,
    pub semantic_dim: usize,
    /// Spread of technology vectors around their cluster centre.
    pub semantic_noise: f64,
    pub seed: u64,
}

impl Default for ClusterWorldConfig {
    fn default() -> Self {
        ClusterWorldConfig {
            clusters: 2,
            companies_per_cluster: 10,
            techs_per_cluster: 15,
            mention_prob: 0.5,
            noise_prob: 0.0,
            withhold: 0.0,
            max_count: 5,
            sources: vec![Source::Website],
            semantic_dim: 8,
            semantic_noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterWorld {
    pub corpora: Vec<SourceCorpus>,
    /// Combined tf-idf of the observed corpora over the full catalogs.
    pub matrix: InteractionMatrix,
    /// Within-cluster mentions removed from the corpora, per company.
    pub withheld: BTreeMap<String, BTreeSet<String>>,
    pub semantic: EmbeddingTable,
    /// Cluster label of every company and technology.
    pub categories: CategoryMap,
}

pub fn company_name(i: usize) -> String {
    format!("c{i:03}")
}

pub fn tech_name(i: usize) -> String {
    format!("t{i:03}")
}

pub fn cluster_name(k: usize) -> String {
    format!("cluster{k}")
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Companies and technologies split into clusters; companies mention
/// technologies of their own cluster, plus optional cross-cluster noise.
/// Every company keeps at least one observed within-cluster mention.
pub fn cluster_world(config: &ClusterWorldConfig) -> Result<ClusterWorld> {
    if config.clusters == 0 || config.companies_per_cluster == 0 || config.techs_per_cluster == 0 {
        return Err(Error::Invalid("cluster world needs nonzero sizes".into()));
    }
    if config.sources.is_empty() || config.max_count == 0 || config.semantic_dim == 0 {
        return Err(Error::Invalid(
            "cluster world needs sources, counts and a semantic dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.clusters * config.companies_per_cluster;
    let m = config.clusters * config.techs_per_cluster;
    let companies: Vec<String> = (0..n).map(company_name).collect();
    let techs: Vec<String> = (0..m).map(tech_name).collect();
    let company_cluster = |c: usize| c / config.companies_per_cluster;
    let tech_cluster = |t: usize| t / config.techs_per_cluster;

    let mut categories = CategoryMap::default();
    for (c, id) in companies.iter().enumerate() {
        categories.insert(id.clone(), cluster_name(company_cluster(c)));
    }
    for (t, id) in techs.iter().enumerate() {
        categories.insert(id.clone(), cluster_name(tech_cluster(t)));
    }

    let mut records: BTreeMap<Source, Vec<(String, String, u64)>> = BTreeMap::new();
    let mut withheld: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (c, company) in companies.iter().enumerate() {
        let k = company_cluster(c);
        let own: Vec<usize> = (k * config.techs_per_cluster..(k + 1) * config.techs_per_cluster).collect();
        let mut mentioned: Vec<usize> = own
            .iter()
            .copied()
            .filter(|_| rng.random_bool(config.mention_prob))
            .collect();
        if mentioned.is_empty() {
            mentioned.push(own[rng.random_range(0..own.len())]);
        }
        let mut hidden: Vec<usize> = mentioned
            .iter()
            .copied()
            .filter(|_| rng.random_bool(config.withhold))
            .collect();
        if hidden.len() == mentioned.len() {
            hidden.pop();
        }
        let noise: Vec<usize> = (0..m)
            .filter(|&t| tech_cluster(t) != k)
            .filter(|_| rng.random_bool(config.noise_prob))
            .collect();
        for t in mentioned.iter().chain(&noise) {
            let count = rng.random_range(1..=config.max_count);
            let source = config.sources[rng.random_range(0..config.sources.len())];
            if hidden.contains(t) {
                continue;
            }
            records
                .entry(source)
                .or_default()
                .push((company.clone(), techs[*t].clone(), count));
        }
        if !hidden.is_empty() {
            withheld.insert(company.clone(), hidden.iter().map(|&t| techs[t].clone()).collect());
        }
    }

    let centres: Vec<Vec<f64>> = (0..config.clusters)
        .map(|_| gaussian(&mut rng, config.semantic_dim))
        .collect();
    let mut semantic = EmbeddingTable::new(config.semantic_dim)?;
    for (t, id) in techs.iter().enumerate() {
        let v = centres[tech_cluster(t)]
            .iter()
            .zip(gaussian(&mut rng, config.semantic_dim))
            .map(|(c, z)| c + config.semantic_noise * z)
            .collect();
        semantic.insert(id.clone(), v)?;
    }

    let corpora: Vec<SourceCorpus> = records
        .into_iter()
        .map(|(source, recs)| SourceCorpus::from_records(source, recs))
        .collect();
    let per_source: Vec<_> = corpora.iter().map(tfidf_source).collect();
    let combined = combine_sources(&per_source, &SourceWeights::default())?;
    let entries: Vec<(String, String, f64)> = combined
        .entries()
        .map(|(c, t, v)| (combined.company_ids()[c].clone(), combined.tech_ids()[t].clone(), v))
        .collect();
    let matrix = InteractionMatrix::from_entries(&companies, &techs, entries)?;
    Ok(ClusterWorld {
        corpora,
        matrix,
        withheld,
        semantic,
        categories,
    })
}

/// Two unit-variance Gaussian blobs whose centres are `separation` apart.
/// The first half of the rows is labelled 1.
pub fn gaussian_blobs(n: usize, dim: usize, separation: f64, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = separation / (2.0 * (dim as f64).sqrt());
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i < n / 2;
        let sign = if positive { 1.0 } else { -1.0 };
        data.extend(gaussian(&mut rng, dim).into_iter().map(|z| z + sign * offset));
        labels.push(if positive { 1.0 } else { 0.0 });
    }
    (
        Matrix::from_vec(n, dim, data).expect("blob data has n * dim entries"),
        labels,
    )
}

/// Paths of an on-disk example corpus.
#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub mentions: Vec<(Source, PathBuf)>,
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    pub categories: PathBuf,
}

pub const FIXTURE_GENERIC_ENTITIES: usize = 16;

fn generic_entity(i: usize) -> String {
    format!("Topic_{i}")
}

/// A 20-company, two-cluster corpus spread over website and jobs mentions,
/// with generic non-technology entities mixed in. Technology embeddings
/// are shifted along the first axis, generic ones against it. Every
/// fourth generic entity and the last technology of each cluster are
/// left unlabelled.
pub fn write_fixture(dir: impl AsRef<Path>, seed: u64) -> Result<FixtureFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = ClusterWorldConfig {
        clusters: 2,
        companies_per_cluster: 10,
        techs_per_cluster: 12,
        mention_prob: 0.5,
        noise_prob: 0.03,
        sources: vec![Source::Website, Source::Jobs],
        semantic_dim: 8,
        seed,
        ..ClusterWorldConfig::default()
    };
    let world = cluster_world(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);

    let mut mentions = Vec::new();
    for corpus in &world.corpora {
        let mut recs: Vec<(String, String, u64)> = corpus
            .records
            .iter()
            .map(|r| {
                let entity = if rng.random_bool(0.5) {
                    format!("{DBPEDIA_RESOURCE}{}", r.entity)
                } else {
                    r.entity.clone()
                };
                (r.company.clone(), entity, r.count)
            })
            .collect();
        for company in corpus.company_ids() {
            for g in 0..FIXTURE_GENERIC_ENTITIES {
                if rng.random_bool(0.25) {
                    recs.push((company.to_owned(), generic_entity(g), rng.random_range(1..=3)));
                }
            }
        }
        let path = dir.join(format!("{}.jsonl", corpus.source));
        let text = SourceCorpus::from_records(corpus.source, recs).to_jsonl();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        mentions.push((corpus.source, path));
    }

    let dim = config.semantic_dim + 1;
    let mut embeddings = EmbeddingTable::new(dim)?;
    for (id, v) in world.semantic.iter() {
        let mut row = vec![2.0 + 0.3 * gaussian(&mut rng, 1)[0]];
        row.extend_from_slice(v);
        embeddings.insert(id, row)?;
    }
    for g in 0..FIXTURE_GENERIC_ENTITIES {
        let mut row = gaussian(&mut rng, dim);
        row[0] = -2.0 + 0.3 * row[0];
        embeddings.insert(generic_entity(g), row)?;
    }
    let emb_path = dir.join("embeddings.tsv");
    fs::write(&emb_path, embeddings.to_tsv()).map_err(|e| Error::io(&emb_path, e))?;

    let mut labels = String::from("entity,label\n");
    let techs: Vec<&str> = world.semantic.iter().map(|(id, _)| id).collect();
    for (i, t) in techs.iter().enumerate() {
        if (i + 1) % config.techs_per_cluster != 0 {
            labels.push_str(&format!("{t},1\n"));
        }
    }
    for g in (0..FIXTURE_GENERIC_ENTITIES).filter(|g| g % 4 != 3) {
        labels.push_str(&format!("{},0\n", generic_entity(g)));
    }
    let labels_path = dir.join("labels.csv");
    fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;

    let mut cats = String::from("id,category\n");
    for (id, set) in &world.categories.categories {
        for c in set {
            cats.push_str(&format!("{id},{c}\n"));
        }
    }
    let cats_path = dir.join("categories.csv");
    fs::write(&cats_path, cats).map_err(|e| Error::io(&cats_path, e))?;

    Ok(FixtureFiles {
        mentions,
        embeddings: emb_path,
        labels: labels_path,
        categories: cats_path,
    })
}
