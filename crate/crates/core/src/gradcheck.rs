//! Central finite differences for checking hand-written gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ClassifierConfig, ClassifierHead, Mode};
use crate::corpus::EmbeddingTable;
use crate::interaction::InteractionMatrix;
use crate::nn::{Linear, Matrix};
use crate::recommender::{HingeForm, RecommenderModel, TrainConfig, Variant};

/// Central-difference estimate of `∂f/∂p_i` for every parameter.
pub fn central_differences(params: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps entries that are zero
/// in both (parameters the loss does not touch) from dividing 0 by 0.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, floor)` over whole vectors.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(floor)
}

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Entries below this magnitude in both gradients compare absolutely; at
/// step 1e-4 the central difference carries ~1e-10 truncation error of its own.
pub const FLOOR: f64 = 1e-5;

/// Classifier head with random shapes and parameters against finite
/// differences of the train-mode loss. Returns (max entry, whole vector)
/// relative errors.
pub fn classifier_case(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..=8);
    let batch = rng.random_range(2..=6);
    let config = ClassifierConfig {
        h1: rng.random_range(2..=8),
        h2: rng.random_range(2..=8),
        dropout_rate: 0.0,
        ..ClassifierConfig::default()
    };
    let mut head = ClassifierHead::init(dim, &config, &mut rng).unwrap();
    // move gamma/beta/biases off their defaults so every path is exercised
    let mut params = head.params();
    for p in params.iter_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    head.set_params(&params).unwrap();
    let x = Matrix::uniform(batch, dim, 2.0, &mut rng);
    let mut labels: Vec<f64> = (0..batch).map(|_| f64::from(rng.random_bool(0.5))).collect();
    labels[0] = 1.0;
    labels[1] = 0.0;

    let (_, grad) = head.loss_and_grad(&x, &labels, Mode::Train, &mut rng).unwrap();
    let numeric = central_differences(&params, STEP, |p| {
        let mut h = head.clone();
        h.set_params(p).unwrap();
        h.loss_and_grad(&x, &labels, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .0
    });
    let analytic = grad.to_vec();
    (
        max_relative_error(&analytic, &numeric, FLOOR),
        vector_relative_error(&analytic, &numeric, FLOOR),
    )
}

fn random_world(rng: &mut ChaCha8Rng) -> (InteractionMatrix, EmbeddingTable) {
    let n = rng.random_range(2..=5);
    let m = rng.random_range(3..=6);
    let mut entries = Vec::new();
    for c in 0..n {
        // at least one observed and one unobserved technology per company
        let pos = rng.random_range(0..m - 1);
        entries.push((format!("c{c}"), format!("t{pos}"), 1.0));
        for t in 0..m - 1 {
            if t != pos && rng.random_bool(0.3) {
                entries.push((format!("c{c}"), format!("t{t}"), rng.random_range(0.1..3.0)));
            }
        }
    }
    let techs: Vec<String> = (0..m).map(|t| format!("t{t}")).collect();
    let matrix = InteractionMatrix::from_entries(&[], &techs, entries).unwrap();
    let dim = rng.random_range(2..=6);
    let mut table = EmbeddingTable::new(dim).unwrap();
    for t in &techs {
        table
            .insert(t.clone(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
    }
    (matrix, table)
}

/// Smallest |pre-activation| across a rectified chain, to stay off kinks.
fn min_abs_preactivation(layers: &[Linear], input: &[f64], relu: bool) -> f64 {
    let mut h = input.to_vec();
    let mut min = f64::INFINITY;
    for (i, l) in layers.iter().enumerate() {
        let z = l.forward(&h);
        if relu && i + 1 < layers.len() {
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
            h = z.iter().map(|v| v.max(0.0)).collect();
        } else {
            h = z;
        }
    }
    min
}

/// One active hinge term of a random world, with every rectifier at least
/// 1e-2 away from its kink.
pub fn recommender_case(variant: Variant, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let (matrix, table) = random_world(&mut rng);
        let config = TrainConfig {
            d: rng.random_range(1..=8),
            seed: rng.random(),
            projection_hidden: if rng.random_bool(0.5) {
                vec![rng.random_range(1..=5)]
            } else {
                vec![]
            },
            projection_relu: rng.random_bool(0.5),
            ..TrainConfig::default()
        };
        let mut model = RecommenderModel::init(variant, &matrix, Some(&table), &config).unwrap();
        let mut params = model.params();
        for p in params.iter_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        model.set_params(&params).unwrap();

        let c = rng.random_range(0..matrix.n_companies());
        let row = matrix.row(c);
        let pos = row[rng.random_range(0..row.len())].0;
        let negs: Vec<usize> = (0..matrix.n_techs()).filter(|&t| !matrix.is_observed(c, t)).collect();
        let neg = negs[rng.random_range(0..negs.len())];

        let kink_free = [pos, neg].iter().all(|&t| {
            let tech = model.final_tech_embedding(t).unwrap();
            let mut x = model.companies.row(c).to_vec();
            x.extend_from_slice(&tech);
            let scorer_ok = model.scorer.is_empty() || min_abs_preactivation(&model.scorer, &x, true) > 1e-2;
            let proj_ok = model
                .semantic
                .as_ref()
                .is_none_or(|s| min_abs_preactivation(&model.projection, s.row(t), model.projection_relu) > 1e-2);
            scorer_ok && proj_ok
        });
        let margin = 0.5;
        let (loss, grad) = model.hinge_grad(c, pos, neg, margin, HingeForm::Pairwise, 1.0).unwrap();
        if loss <= 1e-3 || !kink_free {
            continue;
        }
        let numeric = central_differences(&params, STEP, |p| {
            let mut m = model.clone();
            m.set_params(p).unwrap();
            margin - m.score(c, pos).unwrap() + m.score(c, neg).unwrap()
        });
        let analytic = grad.to_dense(&model);
        return (
            max_relative_error(&analytic, &numeric, FLOOR),
            vector_relative_error(&analytic, &numeric, FLOOR),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let g = central_differences(&[1.0, -2.0], 1e-3, |p| p[0] * p[0] + 3.0 * p[1]);
        assert!((g[0] - 2.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
        assert_eq!(vector_relative_error(&[0.0], &[0.0], 1e-9), 0.0);
    }
}
