//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Each check returns a short summary of what it measured.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use techscape::classifier::{auc, cross_validate, Block, ClassifierConfig, ClassifierHead, Mode};
use techscape::corpus::{CategoryMap, EmbeddingTable, Source, SourceCorpus};
use techscape::evaluation::{evaluate_task, p_at_k, reciprocal_rank, Overlap, Task};
use techscape::gradcheck::{classifier_case, recommender_case, TOLERANCE};
use techscape::interaction::{combine_sources, tfidf_source, InteractionMatrix, SourceWeights, OBSERVED_ZERO};
use techscape::nn::{dropout, Linear, Matrix};
use techscape::recommender::{hinge_loss, train, RecommenderModel, TrainConfig, Variant};
use techscape::retrieval::{retrieve_com_tech, weighted_jaccard, ModelRetriever, Retriever};
use techscape::synthetic::{cluster_world, gaussian_blobs, ClusterWorld, ClusterWorldConfig};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("{what} took {took:.1?}, limit {limit:?}"))
}

fn gradient_suite() -> Result<String, String> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (err, vec_err) = classifier_case(seed);
        ensure(err < TOLERANCE && vec_err < TOLERANCE, || {
            format!("classifier seed {seed}: relative error {err:.2e}, vector {vec_err:.2e}")
        })?;
        worst = worst.max(err);
    }
    for variant in Variant::ALL {
        for seed in 0..20 {
            let (err, vec_err) = recommender_case(variant, seed);
            ensure(err < TOLERANCE && vec_err < TOLERANCE, || {
                format!("{variant} seed {seed}: relative error {err:.2e}, vector {vec_err:.2e}")
            })?;
            worst = worst.max(err);
        }
    }
    within(start, Duration::from_secs(60), "gradient suite")?;
    Ok(format!("6 models x 20 seeds, worst relative error {worst:.1e}"))
}

/// Exact expected P@k of a uniformly random ranking: every rank holds each
/// candidate with equal probability, so the mean overlap of the candidates.
fn random_ranking_p_at_k(task: Task, retriever: &dyn Retriever, categories: &CategoryMap) -> f64 {
    let ids = match task {
        Task::ComCom => retriever.company_ids(),
        Task::TechCom => retriever.tech_ids(),
    };
    let companies = retriever.company_ids();
    let mut total = 0.0;
    let mut queries = 0;
    for q in ids {
        let Some(own) = categories.get(q) else { continue };
        let candidates: Vec<&String> = match task {
            Task::ComCom => companies.iter().filter(|c| *c != q).collect(),
            Task::TechCom => companies.iter().collect(),
        };
        let overlap: usize = candidates
            .iter()
            .map(|c| categories.get(c).map_or(0, |cats| cats.intersection(own).count()))
            .sum();
        total += overlap as f64 / candidates.len() as f64;
        queries += 1;
    }
    total / queries as f64
}

fn cluster_recovery() -> Result<String, String> {
    let start = Instant::now();
    let world = cluster_world(&ClusterWorldConfig {
        clusters: 2,
        companies_per_cluster: 10,
        techs_per_cluster: 15,
        mention_prob: 0.9,
        seed: 0,
        ..ClusterWorldConfig::default()
    })
    .map_err(|e| e.to_string())?;
    ensure(world.matrix.n_companies() == 20 && world.matrix.n_techs() == 30, || {
        format!("world is {} x {}", world.matrix.n_companies(), world.matrix.n_techs())
    })?;
    let config = TrainConfig {
        d: 16,
        margin: 0.05,
        epochs: 300,
        seed: 0,
        ..TrainConfig::default()
    };
    let model =
        train(&world.matrix, Some(&world.semantic), Variant::SemanticPlusMf, &config).map_err(|e| e.to_string())?;
    let retriever = ModelRetriever::new(&model, &world.matrix);
    let mut summary = Vec::new();
    for task in [Task::ComCom, Task::TechCom] {
        let report = evaluate_task(task, &retriever, &world.categories, &[5]).map_err(|e| e.to_string())?;
        let p = report.means[&5];
        let control = random_ranking_p_at_k(task, &retriever, &world.categories);
        ensure(p >= 0.9 && p >= 2.0 * control, || {
            format!("{task} P@5 {p:.3}, random control {control:.3}")
        })?;
        summary.push(format!("{task} P@5 {p:.3} (random {control:.3})"));
    }
    within(start, Duration::from_secs(120), "cluster recovery")?;
    Ok(summary.join(", "))
}

/// Expected reciprocal rank of the first of `relevant` items when `total`
/// items are shuffled uniformly.
fn random_order_reciprocal_rank(total: usize, relevant: usize) -> f64 {
    // none_before = P(no relevant item among the first r - 1)
    let mut none_before = 1.0;
    let mut expected = 0.0;
    for r in 1..=total - relevant + 1 {
        let none_through = none_before * (total - relevant - (r - 1)) as f64 / (total - (r - 1)) as f64;
        expected += (none_before - none_through) / r as f64;
        none_before = none_through;
    }
    expected
}

fn withheld_recovery_world(seed: u64) -> Result<ClusterWorld, String> {
    cluster_world(&ClusterWorldConfig {
        clusters: 6,
        companies_per_cluster: 10,
        techs_per_cluster: 15,
        mention_prob: 0.6,
        noise_prob: 0.02,
        withhold: 0.3,
        seed,
        ..ClusterWorldConfig::default()
    })
    .map_err(|e| e.to_string())
}

fn withheld_recovery() -> Result<String, String> {
    let (mut model_sum, mut baseline_sum) = (0.0, 0.0);
    let mut per_seed = Vec::new();
    for seed in 0..5 {
        let world = withheld_recovery_world(seed)?;
        let config = TrainConfig {
            d: 16,
            margin: 0.05,
            epochs: 200,
            seed,
            ..TrainConfig::default()
        };
        let model =
            train(&world.matrix, Some(&world.semantic), Variant::SemanticPlusMf, &config).map_err(|e| e.to_string())?;
        let (mut model_rr, mut baseline_rr) = (0.0, 0.0);
        for (company, hidden) in &world.withheld {
            let ranked =
                retrieve_com_tech(&model, &world.matrix, company, usize::MAX, false).map_err(|e| e.to_string())?;
            model_rr += reciprocal_rank(&ranked.ids(), hidden);
            // tf-idf only orders observed technologies, so every withheld one
            // sits in a random completion of the unobserved remainder
            baseline_rr += random_order_reciprocal_rank(ranked.len(), hidden.len());
        }
        let n = world.withheld.len() as f64;
        let (m, b) = (model_rr / n, baseline_rr / n);
        per_seed.push(format!("{:.2}", m / b));
        model_sum += m;
        baseline_sum += b;
    }
    let (model_mrr, baseline_mrr) = (model_sum / 5.0, baseline_sum / 5.0);
    let ratio = model_mrr / baseline_mrr;
    ensure(ratio > 3.0, || {
        format!(
            "MRR {model_mrr:.3} vs baseline {baseline_mrr:.3}: ratio {ratio:.2} (per seed {})",
            per_seed.join(" ")
        )
    })?;
    Ok(format!(
        "MRR {model_mrr:.3} vs tf-idf {baseline_mrr:.3}, ratio {ratio:.2} (per seed {})",
        per_seed.join(" ")
    ))
}

fn brute_p_at_k(query: &[String], results: &[String], categories: &BTreeMap<String, Vec<String>>, k: usize) -> f64 {
    let mut shared = 0;
    for i in 0..k {
        let Some(r) = results.get(i) else { continue };
        for c in categories.get(r).map(Vec::as_slice).unwrap_or(&[]) {
            if query.contains(c) {
                shared += 1;
            }
        }
    }
    shared as f64 / k as f64
}

fn brute_jaccard(a: &[f64], b: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..a.len() {
        num += a[i].min(b[i]);
        den += a[i].max(b[i]);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn metric_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pick = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..5)
            .filter(|_| rng.random_bool(0.35))
            .map(|c| format!("cat{c}"))
            .collect()
    };
    for instance in 0..100 {
        let n = rng.random_range(1..=15);
        let k = rng.random_range(1..=10);
        let mut brute_cats = BTreeMap::new();
        let mut cats = CategoryMap::default();
        for i in 0..15 {
            // some items stay uncategorized
            if rng.random_bool(0.8) {
                let set = pick(&mut rng);
                for c in &set {
                    cats.insert(format!("item{i}"), c.clone());
                }
                brute_cats.insert(format!("item{i}"), set);
            }
        }
        let results: Vec<String> = (0..n).map(|_| format!("item{}", rng.random_range(0..15))).collect();
        let query = pick(&mut rng);
        let query_set: BTreeSet<String> = query.iter().cloned().collect();
        let got = p_at_k(&query_set, &results, &cats, k, Overlap::Intersection);
        let want = brute_p_at_k(&query, &results, &brute_cats, k);
        ensure(got == want, || {
            format!("instance {instance}: p_at_k {got} vs brute force {want}")
        })?;

        let dense = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(0.01..5.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let (a, b) = (dense(&mut rng), dense(&mut rng));
        let sparse = |v: &[f64]| {
            v.iter()
                .copied()
                .enumerate()
                .filter(|(_, x)| *x > 0.0)
                .collect::<Vec<_>>()
        };
        let got = weighted_jaccard(&sparse(&a), &sparse(&b));
        let want = brute_jaccard(&a, &b);
        ensure(got == want, || {
            format!("instance {instance}: jaccard {got} vs brute force {want}")
        })?;
    }
    Ok("100 instances, p_at_k and weighted Jaccard identical to brute force".into())
}

fn tfidf_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sources = [Source::Website, Source::Patent, Source::Jobs];
    let weights = [0.7, 1.3, 2.0];
    let mut raw: Vec<Vec<(usize, usize, u64)>> = Vec::new();
    for _ in sources {
        // duplicates are allowed and must be summed
        let n = rng.random_range(8..20);
        raw.push(
            (0..n)
                .map(|_| (rng.random_range(0..5), rng.random_range(0..8), rng.random_range(1..10)))
                .collect(),
        );
    }
    let corpora: Vec<SourceCorpus> = sources
        .iter()
        .zip(&raw)
        .map(|(&s, recs)| {
            SourceCorpus::from_records(
                s,
                recs.iter().map(|&(c, e, n)| (format!("co{c}"), format!("ent{e}"), n)),
            )
        })
        .collect();
    let per_source: Vec<_> = corpora.iter().map(tfidf_source).collect();
    let w = SourceWeights::new(sources.iter().copied().zip(weights)).map_err(|e| e.to_string())?;
    let combined = combine_sources(&per_source, &w).map_err(|e| e.to_string())?;

    let mut expected = [[0.0f64; 8]; 5];
    let mut observed = [[false; 8]; 5];
    for (recs, weight) in raw.iter().zip(weights) {
        let mut counts = [[0u64; 8]; 5];
        for &(c, e, n) in recs {
            counts[c][e] += n;
        }
        let docs = (0..5).filter(|&c| counts[c].iter().any(|&n| n > 0)).count() as f64;
        for e in 0..8 {
            let df = (0..5).filter(|&c| counts[c][e] > 0).count() as f64;
            for c in 0..5 {
                if counts[c][e] > 0 {
                    expected[c][e] += weight * counts[c][e] as f64 * (docs / df).ln();
                    observed[c][e] = true;
                }
            }
        }
    }
    let mut cells = 0;
    for c in 0..5 {
        for e in 0..8 {
            let got = combined
                .company_index(&format!("co{c}"))
                .zip(combined.tech_index(&format!("ent{e}")))
                .and_then(|(ci, ti)| combined.get(ci, ti));
            match (observed[c][e], got) {
                (false, None) => {}
                (true, Some(v)) => {
                    let want = if expected[c][e] > 0.0 {
                        expected[c][e]
                    } else {
                        OBSERVED_ZERO
                    };
                    ensure((v - want).abs() <= 1e-9, || format!("co{c}/ent{e}: {v} vs {want}"))?;
                    cells += 1;
                }
                (obs, got) => return Err(format!("co{c}/ent{e}: observed {obs}, matrix holds {got:?}")),
            }
        }
    }
    Ok(format!("{cells} observed cells within 1e-9 across 3 sources"))
}

fn classifier_sanity() -> Result<String, String> {
    let start = Instant::now();
    let (x, labels) = gaussian_blobs(200, 16, 8.0, 3);
    let config = ClassifierConfig {
        h1: 32,
        h2: 16,
        epochs: 200,
        seed: 3,
        ..ClassifierConfig::default()
    };
    let report = cross_validate(&x, &labels, 5, &config).map_err(|e| e.to_string())?;
    let accuracy = report.mean.accuracy;
    let auc = report.mean.auc.ok_or("no AUC: a fold held a single class")?;
    ensure(accuracy >= 0.95 && auc >= 0.99, || {
        format!("accuracy {accuracy:.3}, AUC {auc:.4}")
    })?;
    within(start, Duration::from_secs(30), "5-fold training")?;
    Ok(format!("accuracy {accuracy:.3}, AUC {auc:.4}"))
}

fn determinism() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = common::run_pipeline(a.path(), 5)?;
    let second = common::run_pipeline(b.path(), 5)?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    let other = common::run_pipeline(a.path(), 6)?;
    let model = |arts: &[(String, Vec<u8>)]| arts.iter().find(|(n, _)| n == "out/model.txt").map(|(_, b)| b.clone());
    ensure(model(&other) != model(&first), || {
        "a different seed produced the same model".into()
    })?;
    Ok(format!("{} artifacts byte-identical", first.len()))
}

fn random_model(variant: Variant, seed: u64) -> (RecommenderModel, InteractionMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m, dim) = (rng.random_range(2..6), rng.random_range(4..9), 3);
    let mut entries = Vec::new();
    for c in 0..n {
        let first = rng.random_range(0..m - 1);
        entries.push((format!("c{c}"), format!("t{first}"), 1.0));
        for t in 0..m - 1 {
            if t != first && rng.random_bool(0.3) {
                entries.push((format!("c{c}"), format!("t{t}"), rng.random_range(0.1..2.0)));
            }
        }
    }
    let techs: Vec<String> = (0..m).map(|t| format!("t{t}")).collect();
    let matrix = InteractionMatrix::from_entries(&[], &techs, entries).expect("positive entries");
    let mut table = EmbeddingTable::new(dim).expect("nonzero dim");
    for t in &techs {
        table
            .insert(t.clone(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .expect("fixed dim");
    }
    let config = TrainConfig {
        d: 4,
        seed,
        projection_hidden: vec![3],
        projection_relu: true,
        ..TrainConfig::default()
    };
    let mut model = RecommenderModel::init(variant, &matrix, Some(&table), &config).expect("valid config");
    let params: Vec<f64> = model.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    model.set_params(&params).expect("same length");
    (model, matrix)
}

fn invariant_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..50 {
        let variant = Variant::ALL[seed as usize % 5];
        let (model, matrix) = random_model(variant, seed);

        // hinge monotone in the margin
        let c = rng.random_range(0..matrix.n_companies());
        let pos = matrix.row(c)[0].0;
        let neg = (0..matrix.n_techs())
            .find(|&t| !matrix.is_observed(c, t))
            .expect("one unobserved");
        let mut last = 0.0;
        for margin in [0.01, 0.1, 0.5, 1.0, 3.0] {
            let h = hinge_loss(&model, &matrix, c, pos, neg, margin).map_err(|e| e.to_string())?;
            ensure(h >= last, || {
                format!("hinge fell from {last} to {h} at margin {margin}")
            })?;
            last = h;
        }

        // truncation prefix and tie-break
        let id = &model.company_ids()[c];
        let full = retrieve_com_tech(&model, &matrix, id, usize::MAX, true).map_err(|e| e.to_string())?;
        for k in 1..=full.len() {
            let top = retrieve_com_tech(&model, &matrix, id, k, true).map_err(|e| e.to_string())?;
            ensure(top.items[..] == full.items[..k], || {
                format!("top-{k} is not a prefix for {id}")
            })?;
        }
        let mut flat = model.clone();
        flat.companies.data_mut().iter_mut().for_each(|x| *x = 0.0);
        if variant == Variant::Mf {
            let ids = retrieve_com_tech(&flat, &matrix, id, usize::MAX, true)
                .map_err(|e| e.to_string())?
                .ids();
            ensure(ids == model.tech_ids(), || {
                format!("tied scores not in id order: {ids:?}")
            })?;
        }

        // persistence
        let text = model.to_text().map_err(|e| e.to_string())?;
        let back = RecommenderModel::parse_text(&text).map_err(|e| e.to_string())?;
        ensure(back == model, || {
            format!("{variant} model changed through its text form")
        })?;
    }

    // AUC under strictly increasing transforms
    for _ in 0..50 {
        let n = rng.random_range(4..40);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-20..20)) / 4.0).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let base = auc(&scores, &labels).expect("both classes");
        let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 5.0).collect();
        let moved = auc(&mapped, &labels).expect("both classes");
        ensure((moved - base).abs() < 1e-12, || format!("AUC {base} became {moved}"))?;
    }

    // batch norm output statistics with gamma 1, beta 0
    for seed in 0..50 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut block = Block::new(Linear::glorot(4, 3, &mut r), 1e-5, 0.1);
        let n = r.random_range(2..40);
        let x = Matrix::uniform(n, 4, 2.0, &mut r);
        let z = block.linear.forward_batch(&x);
        let y = block.forward(&x, Mode::Train).map_err(|e| e.to_string())?;
        for j in 0..3 {
            let mu = (0..n).map(|i| z[(i, j)]).sum::<f64>() / n as f64;
            let sigma2 = (0..n).map(|i| (z[(i, j)] - mu).powi(2)).sum::<f64>() / n as f64;
            let pre: Vec<f64> = (0..n).map(|i| (y[(i, j)] / (1.0 - y[(i, j)])).ln()).collect();
            let mean = pre.iter().sum::<f64>() / n as f64;
            let var = pre.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            ensure(
                mean.abs() < 1e-6 && (var - sigma2 / (sigma2 + 1e-5)).abs() < 1e-5,
                || format!("batch norm mean {mean:.2e}, variance {var} for sigma2 {sigma2}"),
            )?;
        }
    }

    // dropout: expectation kept in training, identity in evaluation
    for rate in [0.1, 0.2, 0.5] {
        let mut x = vec![1.0; 20_000];
        dropout(&mut x, rate, &mut rng);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        ensure((mean - 1.0).abs() < 0.02, || format!("dropout {rate}: mean {mean}"))?;
        let config = ClassifierConfig {
            h1: 8,
            h2: 4,
            dropout_rate: rate,
            ..ClassifierConfig::default()
        };
        let mut head = ClassifierHead::init(5, &config, &mut rng).map_err(|e| e.to_string())?;
        let batch = Matrix::uniform(6, 5, 1.0, &mut rng);
        let a = head
            .forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1))
            .map_err(|e| e.to_string())?;
        let b = head
            .forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(2))
            .map_err(|e| e.to_string())?;
        ensure(a == b, || format!("dropout {rate} active in evaluation"))?;
        let text = head.to_text();
        let back = ClassifierHead::parse_text(&text).map_err(|e| e.to_string())?;
        ensure(back == head, || "classifier changed through its text form".into())?;
    }
    Ok("hinge, AUC, batch norm, dropout, prefix, tie-break, persistence".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("gradient suite", gradient_suite),
        ("synthetic-cluster recovery", cluster_recovery),
        ("withheld-technology recovery", withheld_recovery),
        ("metric oracle", metric_oracle),
        ("tf-idf oracle", tfidf_oracle),
        ("classifier sanity", classifier_sanity),
        ("determinism", determinism),
        ("invariant suite", invariant_suite),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{took:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
