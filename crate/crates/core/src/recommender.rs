//! Semantic-aware matrix factorization and its baseline variants.
//!
//! Companies and technologies live in a shared `d`-dimensional space. A
//! technology's final embedding is its raw factor `e`, its projected semantic
//! vector `s_k = W_k(...(W_1 s_0 + b_1)...) + b_k`, or their sum, depending on
//! the [`Variant`]. Scores are dot products, an MLP over `[c ‖ t]`, or both
//! (NCF). Training is pairwise: for each observed (company, technology) pair
//! an unobserved technology is sampled and the hinge
//! `max(0, m - score(pos) + score(neg))` is minimized with plain SGD.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::interaction::InteractionMatrix;
use crate::nn::{dot, Linear, LinearGrad, Matrix, TensorFile, TensorWriter};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Mf,
    Mlp,
    Ncf,
    SemanticOnly,
    SemanticPlusMf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Mf,
        Variant::Mlp,
        Variant::Ncf,
        Variant::SemanticOnly,
        Variant::SemanticPlusMf,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Mf => "MF",
            Variant::Mlp => "MLP",
            Variant::Ncf => "NCF",
            Variant::SemanticOnly => "SemanticOnly",
            Variant::SemanticPlusMf => "SemanticPlusMF",
        }
    }

    pub fn uses_semantic(self) -> bool {
        matches!(self, Variant::SemanticOnly | Variant::SemanticPlusMf)
    }

    pub fn uses_raw_tech(self) -> bool {
        !matches!(self, Variant::SemanticOnly)
    }

    pub fn uses_scorer(self) -> bool {
        matches!(self, Variant::Mlp | Variant::Ncf)
    }

    pub fn uses_dot(self) -> bool {
        !matches!(self, Variant::Mlp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.to_ascii_lowercase().as_str() {
            "mf" | "gmf" => Variant::Mf,
            "mlp" => Variant::Mlp,
            "ncf" => Variant::Ncf,
            "semanticonly" | "semantic" | "bert" => Variant::SemanticOnly,
            "semanticplusmf" | "semantic+mf" | "mf+bert" => Variant::SemanticPlusMf,
            _ => {
                return Err(Error::Invalid(format!(
                    "unknown variant '{s}' (expected MF, MLP, NCF, SemanticOnly or SemanticPlusMF)"
                )))
            }
        };
        Ok(v)
    }
}

/// Which hinge to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HingeForm {
    /// `max(0, m - score(pos) + score(neg))`.
    Pairwise,
    /// `max(0, m + observed(pos) - score(neg))`, with the positive anchored at
    /// its observed value.
    /// Kept for comparison only; it pushes negative scores up without bound.
    ObservedAnchor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub d: usize,
    pub seed: u64,
    /// Hidden widths of the semantic projection; the last layer always maps to `d`.
    pub projection_hidden: Vec<usize>,
    /// Insert rectifiers between projection layers.
    pub projection_relu: bool,
    /// Start the projection with zero mean over the technology catalog.
    /// Under the pairwise loss a shared offset in the technology vectors acts
    /// as a per-company bias that never receives gradient.
    pub center_projection: bool,
    /// Hidden widths of the MLP scorer; `None` means `[d, d/2]`.
    pub scorer_hidden: Option<Vec<usize>>,
    pub hinge: HingeForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.01,
            learning_rate: 0.05,
            epochs: 50,
            negatives_per_positive: 1,
            d: 64,
            seed: 42,
            projection_hidden: Vec::new(),
            projection_relu: false,
            center_projection: true,
            scorer_hidden: None,
            hinge: HingeForm::Pairwise,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Invalid(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::Invalid("embedding size d must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Invalid("negatives_per_positive must be at least 1".into()));
        }
        if self.projection_hidden.contains(&0) || self.scorer_layers().contains(&0) {
            return Err(Error::Invalid("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn scorer_layers(&self) -> Vec<usize> {
        self.scorer_hidden
            .clone()
            .unwrap_or_else(|| vec![self.d, (self.d / 2).max(1)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommenderModel {
    pub variant: Variant,
    pub d: usize,
    company_ids: Vec<String>,
    tech_ids: Vec<String>,
    /// n × d company factors.
    pub companies: Matrix,
    /// m × d raw technology factors.
    pub techs: Matrix,
    /// m × s semantic vectors aligned with `tech_ids` (semantic variants only).
    pub semantic: Option<Matrix>,
    pub projection: Vec<Linear>,
    pub projection_relu: bool,
    /// Layers of the MLP scorer over `[c ‖ t]`, ending in one output unit.
    pub scorer: Vec<Linear>,
}

/// Intermediate values of a layer chain, kept for backpropagation.
struct ChainCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

fn chain_forward(layers: &[Linear], input: &[f64], relu_between: bool) -> (Vec<f64>, ChainCache) {
    let mut cache = ChainCache {
        inputs: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(layers.len()),
    };
    let mut h = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let z = layer.forward(&h);
        cache.inputs.push(h);
        h = if relu_between && i + 1 < layers.len() {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        cache.pre.push(z);
    }
    (h, cache)
}

fn chain_backward(
    layers: &[Linear],
    cache: &ChainCache,
    grad_out: &[f64],
    relu_between: bool,
    grads: &mut [LinearGrad],
) -> Vec<f64> {
    let mut g = grad_out.to_vec();
    for i in (0..layers.len()).rev() {
        if relu_between && i + 1 < layers.len() {
            for (gv, &z) in g.iter_mut().zip(&cache.pre[i]) {
                if z <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        g = layers[i].backward(&cache.inputs[i], &g, &mut grads[i]);
    }
    g
}

/// Shifts the final bias so the chain's outputs over `inputs` average to zero.
fn center_last_bias(layers: &mut [Linear], inputs: &Matrix, relu_between: bool) {
    let Some(width) = layers.last().map(Linear::output_dim) else {
        return;
    };
    let mut mean = vec![0.0; width];
    for r in 0..inputs.rows() {
        let (out, _) = chain_forward(layers, inputs.row(r), relu_between);
        for (m, v) in mean.iter_mut().zip(out) {
            *m += v / inputs.rows() as f64;
        }
    }
    let last = layers.last_mut().expect("checked above");
    for (b, m) in last.bias.iter_mut().zip(mean) {
        *b -= m;
    }
}

/// Gradient of one hinge term with respect to every parameter it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeGrad {
    pub company: usize,
    pub pos: usize,
    pub neg: usize,
    pub d_company: Vec<f64>,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
    pub projection: Vec<LinearGrad>,
    pub scorer: Vec<LinearGrad>,
}

impl HingeGrad {
    /// Dense gradient laid out like [`RecommenderModel::params`].
    pub fn to_dense(&self, model: &RecommenderModel) -> Vec<f64> {
        let d = model.d;
        let mut c = Matrix::zeros(model.n_companies(), d);
        c.row_mut(self.company).copy_from_slice(&self.d_company);
        let mut e = Matrix::zeros(model.n_techs(), d);
        for (t, g) in [(self.pos, &self.d_pos), (self.neg, &self.d_neg)] {
            for (dst, v) in e.row_mut(t).iter_mut().zip(g) {
                *dst += v;
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(c.data());
        out.extend_from_slice(e.data());
        for g in self.projection.iter().chain(&self.scorer) {
            g.push_params(&mut out);
        }
        out
    }
}

impl RecommenderModel {
    /// Seeded initialization. Draw order is C, E, projection, scorer so that
    /// variants sharing a seed share their factor matrices.
    pub fn init(
        variant: Variant,
        matrix: &InteractionMatrix,
        semantic: Option<&EmbeddingTable>,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 0.1 / (d as f64).sqrt();
        let companies = Matrix::uniform(matrix.n_companies(), d, bound, &mut rng);
        let techs = Matrix::uniform(matrix.n_techs(), d, bound, &mut rng);

        let (semantic, projection) = if variant.uses_semantic() {
            let table =
                semantic.ok_or_else(|| Error::Invalid(format!("variant {variant} requires semantic embeddings")))?;
            let missing: Vec<String> = matrix
                .tech_ids()
                .iter()
                .filter(|t| !table.contains(t))
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(Error::Missing {
                    what: "semantic vectors",
                    ids: missing,
                });
            }
            let rows: Vec<Vec<f64>> = matrix
                .tech_ids()
                .iter()
                .map(|t| table.get(t).expect("checked").to_vec())
                .collect();
            let sem = Matrix::from_vec(rows.len(), table.dim(), rows.concat())?;
            let mut widths = vec![table.dim()];
            widths.extend(&config.projection_hidden);
            widths.push(d);
            let mut layers: Vec<Linear> = widths
                .windows(2)
                .map(|w| Linear::glorot(w[0], w[1], &mut rng))
                .collect();
            if config.center_projection {
                center_last_bias(&mut layers, &sem, config.projection_relu);
            }
            (Some(sem), layers)
        } else {
            (None, Vec::new())
        };

        let scorer = if variant.uses_scorer() {
            let mut widths = vec![2 * d];
            widths.extend(config.scorer_layers());
            widths.push(1);
            widths
                .windows(2)
                .map(|w| Linear::glorot(w[0], w[1], &mut rng))
                .collect()
        } else {
            Vec::new()
        };

        Ok(RecommenderModel {
            variant,
            d,
            company_ids: matrix.company_ids().to_vec(),
            tech_ids: matrix.tech_ids().to_vec(),
            companies,
            techs,
            semantic,
            projection,
            projection_relu: config.projection_relu,
            scorer,
        })
    }

    pub fn n_companies(&self) -> usize {
        self.company_ids.len()
    }

    pub fn n_techs(&self) -> usize {
        self.tech_ids.len()
    }

    pub fn company_ids(&self) -> &[String] {
        &self.company_ids
    }

    pub fn tech_ids(&self) -> &[String] {
        &self.tech_ids
    }

    pub fn company_index(&self, id: &str) -> Result<usize> {
        self.company_ids
            .binary_search_by(|c| c.as_str().cmp(id))
            .map_err(|_| Error::Unknown {
                kind: "company",
                id: id.to_owned(),
            })
    }

    pub fn tech_index(&self, id: &str) -> Result<usize> {
        self.tech_ids
            .binary_search_by(|t| t.as_str().cmp(id))
            .map_err(|_| Error::Unknown {
                kind: "technology",
                id: id.to_owned(),
            })
    }

    fn check_ids(&self, company: usize, tech: usize) -> Result<()> {
        if company >= self.n_companies() {
            return Err(Error::Unknown {
                kind: "company",
                id: company.to_string(),
            });
        }
        self.check_tech(tech)
    }

    fn check_tech(&self, tech: usize) -> Result<()> {
        if tech >= self.n_techs() {
            return Err(Error::Unknown {
                kind: "technology",
                id: tech.to_string(),
            });
        }
        Ok(())
    }

    fn projection_cached(&self, tech: usize) -> Result<(Vec<f64>, ChainCache)> {
        let sem = self.semantic.as_ref().ok_or_else(|| Error::Missing {
            what: "semantic vectors",
            ids: vec![self.tech_ids.get(tech).cloned().unwrap_or_default()],
        })?;
        Ok(chain_forward(&self.projection, sem.row(tech), self.projection_relu))
    }

    /// Projected semantic vector `s_k` of a technology.
    pub fn semantic_projection(&self, tech: usize) -> Result<Vec<f64>> {
        self.check_tech(tech)?;
        Ok(self.projection_cached(tech)?.0)
    }

    /// The technology representation each variant scores with.
    pub fn final_tech_embedding(&self, tech: usize) -> Result<Vec<f64>> {
        self.check_tech(tech)?;
        Ok(self.tech_forward(tech)?.0)
    }

    fn tech_forward(&self, tech: usize) -> Result<(Vec<f64>, Option<ChainCache>)> {
        match self.variant {
            Variant::Mf | Variant::Mlp | Variant::Ncf => Ok((self.techs.row(tech).to_vec(), None)),
            Variant::SemanticOnly => {
                let (s, cache) = self.projection_cached(tech)?;
                Ok((s, Some(cache)))
            }
            Variant::SemanticPlusMf => {
                let (mut s, cache) = self.projection_cached(tech)?;
                for (a, b) in s.iter_mut().zip(self.techs.row(tech)) {
                    *a += b;
                }
                Ok((s, Some(cache)))
            }
        }
    }

    fn scorer_input(&self, company: usize, tech_vec: &[f64]) -> Vec<f64> {
        let mut x = self.companies.row(company).to_vec();
        x.extend_from_slice(tech_vec);
        x
    }

    /// Output of the MLP scorer alone (MLP and NCF variants).
    pub fn mlp_term(&self, company: usize, tech: usize) -> Result<f64> {
        self.check_ids(company, tech)?;
        if !self.variant.uses_scorer() {
            return Ok(0.0);
        }
        let t = self.tech_forward(tech)?.0;
        Ok(chain_forward(&self.scorer, &self.scorer_input(company, &t), true).0[0])
    }

    /// Dot-product term `c · t` (zero for the MLP variant).
    pub fn dot_term(&self, company: usize, tech: usize) -> Result<f64> {
        self.check_ids(company, tech)?;
        if !self.variant.uses_dot() {
            return Ok(0.0);
        }
        let t = self.tech_forward(tech)?.0;
        Ok(dot(self.companies.row(company), &t))
    }

    pub fn score(&self, company: usize, tech: usize) -> Result<f64> {
        self.check_ids(company, tech)?;
        let t = self.tech_forward(tech)?.0;
        Ok(self.score_with(company, &t))
    }

    fn score_with(&self, company: usize, tech_vec: &[f64]) -> f64 {
        let mut s = 0.0;
        if self.variant.uses_dot() {
            s += dot(self.companies.row(company), tech_vec);
        }
        if self.variant.uses_scorer() {
            s += chain_forward(&self.scorer, &self.scorer_input(company, tech_vec), true).0[0];
        }
        s
    }

    /// All n × m scores, observed and unobserved alike.
    pub fn predict_matrix(&self) -> Result<Matrix> {
        let tech_vecs: Vec<Vec<f64>> = (0..self.n_techs())
            .map(|t| self.tech_forward(t).map(|(v, _)| v))
            .collect::<Result<_>>()?;
        let mut out = Matrix::zeros(self.n_companies(), self.n_techs());
        for c in 0..self.n_companies() {
            for (t, v) in tech_vecs.iter().enumerate() {
                out[(c, t)] = self.score_with(c, v);
            }
        }
        Ok(out)
    }

    /// Accumulates `coef * d score(company, tech)` into `grad`, routing the
    /// technology-side gradient into `d_tech`.
    fn accumulate_score_grad(
        &self,
        company: usize,
        tech: usize,
        coef: f64,
        d_company: &mut [f64],
        d_tech: &mut [f64],
        grad: &mut HingeGrad,
    ) -> Result<()> {
        let (t, proj_cache) = self.tech_forward(tech)?;
        let mut g_t = vec![0.0; self.d];
        if self.variant.uses_dot() {
            let c = self.companies.row(company);
            for k in 0..self.d {
                d_company[k] += coef * t[k];
                g_t[k] += coef * c[k];
            }
        }
        if self.variant.uses_scorer() {
            let x = self.scorer_input(company, &t);
            let (_, cache) = chain_forward(&self.scorer, &x, true);
            let g_x = chain_backward(&self.scorer, &cache, &[coef], true, &mut grad.scorer);
            for k in 0..self.d {
                d_company[k] += g_x[k];
                g_t[k] += g_x[self.d + k];
            }
        }
        if self.variant.uses_raw_tech() {
            for k in 0..self.d {
                d_tech[k] += g_t[k];
            }
        }
        if let Some(cache) = proj_cache {
            chain_backward(
                &self.projection,
                &cache,
                &g_t,
                self.projection_relu,
                &mut grad.projection,
            );
        }
        Ok(())
    }

    fn zero_grad(&self, company: usize, pos: usize, neg: usize) -> HingeGrad {
        HingeGrad {
            company,
            pos,
            neg,
            d_company: vec![0.0; self.d],
            d_pos: vec![0.0; self.d],
            d_neg: vec![0.0; self.d],
            projection: self.projection.iter().map(LinearGrad::zeros_like).collect(),
            scorer: self.scorer.iter().map(LinearGrad::zeros_like).collect(),
        }
    }

    /// Pairwise hinge value and gradient for one (company, pos, neg) triple.
    /// `observed_pos` is the matrix value of the positive pair, used only by
    /// [`HingeForm::ObservedAnchor`].
    pub fn hinge_grad(
        &self,
        company: usize,
        pos: usize,
        neg: usize,
        margin: f64,
        form: HingeForm,
        observed_pos: f64,
    ) -> Result<(f64, HingeGrad)> {
        self.check_ids(company, pos)?;
        self.check_tech(neg)?;
        let s_neg = self.score(company, neg)?;
        let (loss, coef_pos, coef_neg) = match form {
            HingeForm::Pairwise => {
                let s_pos = self.score(company, pos)?;
                (margin - s_pos + s_neg, -1.0, 1.0)
            }
            HingeForm::ObservedAnchor => (margin + observed_pos - s_neg, 0.0, -1.0),
        };
        let mut grad = self.zero_grad(company, pos, neg);
        if loss <= 0.0 {
            return Ok((0.0, grad));
        }
        let mut d_company = vec![0.0; self.d];
        let mut d_pos = vec![0.0; self.d];
        let mut d_neg = vec![0.0; self.d];
        if coef_pos != 0.0 {
            self.accumulate_score_grad(company, pos, coef_pos, &mut d_company, &mut d_pos, &mut grad)?;
        }
        self.accumulate_score_grad(company, neg, coef_neg, &mut d_company, &mut d_neg, &mut grad)?;
        grad.d_company = d_company;
        grad.d_pos = d_pos;
        grad.d_neg = d_neg;
        Ok((loss, grad))
    }

    fn apply(&mut self, grad: &HingeGrad, lr: f64) {
        for (p, g) in self.companies.row_mut(grad.company).iter_mut().zip(&grad.d_company) {
            *p -= lr * g;
        }
        for (t, g) in [(grad.pos, &grad.d_pos), (grad.neg, &grad.d_neg)] {
            for (p, gv) in self.techs.row_mut(t).iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
        for (layer, g) in self.projection.iter_mut().zip(&grad.projection) {
            layer.step(g, lr);
        }
        for (layer, g) in self.scorer.iter_mut().zip(&grad.scorer) {
            layer.step(g, lr);
        }
    }

    /// Trainable parameters flattened: C, E, projection layers, scorer layers.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.companies.data());
        out.extend_from_slice(self.techs.data());
        for l in self.projection.iter().chain(&self.scorer) {
            l.push_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(Error::Invalid(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let (c, rest) = params.split_at(self.companies.data().len());
        self.companies.data_mut().copy_from_slice(c);
        let (e, mut rest) = rest.split_at(self.techs.data().len());
        self.techs.data_mut().copy_from_slice(e);
        for l in self.projection.iter_mut().chain(self.scorer.iter_mut()) {
            rest = l.pull_params(rest);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.companies.is_finite()
            && self.techs.is_finite()
            && self.projection.iter().chain(&self.scorer).all(Linear::is_finite)
    }

    pub fn to_text(&self) -> Result<String> {
        let header = format!(
            "variant={} d={} n={} m={} version={FORMAT_VERSION} semantic_dim={} projection_layers={} projection_relu={} scorer_layers={}",
            self.variant.tag(),
            self.d,
            self.n_companies(),
            self.n_techs(),
            self.semantic.as_ref().map_or(0, Matrix::cols),
            self.projection.len(),
            self.projection_relu,
            self.scorer.len(),
        );
        let mut w = TensorWriter::new(&header);
        w.ids("companies", &self.company_ids)?;
        w.ids("techs", &self.tech_ids)?;
        w.matrix("company_factors", &self.companies);
        w.matrix("tech_factors", &self.techs);
        if let Some(sem) = &self.semantic {
            w.matrix("semantic", sem);
        }
        for (i, l) in self.projection.iter().enumerate() {
            w.linear(&format!("projection.{i}"), l);
        }
        for (i, l) in self.scorer.iter().enumerate() {
            w.linear(&format!("scorer.{i}"), l);
        }
        Ok(w.finish())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut f = TensorFile::parse(text)?;
        let fields = f.header_fields();
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("missing header field '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad header field '{k}'")))
        };
        let version = num("version")?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Format(format!(
                "version mismatch: file has {version}, expected {FORMAT_VERSION}"
            )));
        }
        let variant: Variant = get("variant")?
            .parse()
            .map_err(|e: Error| Error::Format(e.to_string()))?;
        let (d, n, m) = (num("d")?, num("n")?, num("m")?);
        let semantic_dim = num("semantic_dim")?;
        let projection_layers = num("projection_layers")?;
        let scorer_layers = num("scorer_layers")?;
        let projection_relu = match get("projection_relu")? {
            "true" => true,
            "false" => false,
            other => return Err(Error::Format(format!("bad projection_relu '{other}'"))),
        };
        drop(fields);
        if d == 0 {
            return Err(Error::Format("d must be positive".into()));
        }

        let company_ids = f.take_ids("companies", n)?;
        let tech_ids = f.take_ids("techs", m)?;
        let companies = f.take_matrix("company_factors", n, d)?;
        let techs = f.take_matrix("tech_factors", m, d)?;
        let semantic = if variant.uses_semantic() {
            Some(f.take_matrix("semantic", m, semantic_dim)?)
        } else {
            None
        };
        let projection = take_chain(&mut f, "projection", projection_layers, semantic_dim, d)?;
        let scorer = take_chain(&mut f, "scorer", scorer_layers, 2 * d, 1)?;
        f.finish()?;
        if variant.uses_semantic() == projection.is_empty() || variant.uses_scorer() == scorer.is_empty() {
            return Err(Error::Format(format!("layer stacks do not match variant {variant}")));
        }
        for ids in [&company_ids, &tech_ids] {
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format("id catalogs must be sorted and unique".into()));
            }
        }
        let model = RecommenderModel {
            variant,
            d,
            company_ids,
            tech_ids,
            companies,
            techs,
            semantic,
            projection,
            projection_relu,
            scorer,
        };
        if !model.is_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RecommenderModel::parse_text(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Reads `count` chained layers `{name}.{i}` from `input` to `output` width.
fn take_chain(f: &mut TensorFile, name: &str, count: usize, input: usize, output: usize) -> Result<Vec<Linear>> {
    let mut layers = Vec::with_capacity(count);
    let mut width = input;
    for i in 0..count {
        let key = format!("{name}.{i}");
        let out = f
            .shape(&format!("{key}.weight"))
            .map(|(rows, _)| rows)
            .ok_or_else(|| Error::Format(format!("missing section [{key}.weight]")))?;
        layers.push(f.take_linear(&key, width, out)?);
        width = out;
    }
    if count > 0 && width != output {
        return Err(Error::Format(format!(
            "{name} ends at width {width}, expected {output}"
        )));
    }
    Ok(layers)
}

/// Hinge value for one triple; errors if the positive pair is unobserved or
/// the negative pair is observed.
pub fn hinge_loss(
    model: &RecommenderModel,
    matrix: &InteractionMatrix,
    company: usize,
    pos: usize,
    neg: usize,
    margin: f64,
) -> Result<f64> {
    if !matrix.is_observed(company, pos) {
        return Err(Error::Invalid(format!(
            "positive pair ({company}, {pos}) is not observed"
        )));
    }
    if matrix.is_observed(company, neg) {
        return Err(Error::Invalid(format!("negative pair ({company}, {neg}) is observed")));
    }
    Ok((margin - model.score(company, pos)? + model.score(company, neg)?).max(0.0))
}

/// Sum of squared residuals over observed entries only.
pub fn squared_loss(model: &RecommenderModel, matrix: &InteractionMatrix) -> Result<f64> {
    let mut total = 0.0;
    for (c, t, v) in matrix.entries() {
        let r = v - model.score(c, t)?;
        total += r * r;
    }
    Ok(total)
}

/// Uniform draw from the technologies `company` has not been observed with.
pub fn sample_negative(matrix: &InteractionMatrix, company: usize, rng: &mut impl Rng) -> Result<usize> {
    let row = matrix.row(company);
    let unobserved = matrix.n_techs() - row.len();
    if unobserved == 0 {
        return Err(Error::Invalid(format!(
            "company '{}' is observed with every technology",
            matrix.company_ids()[company]
        )));
    }
    // map the k-th unobserved slot onto a column id by skipping observed ones
    let mut idx = rng.random_range(0..unobserved);
    for &(t, _) in row {
        if t <= idx {
            idx += 1;
        } else {
            break;
        }
    }
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

pub fn train(
    matrix: &InteractionMatrix,
    semantic: Option<&EmbeddingTable>,
    variant: Variant,
    config: &TrainConfig,
) -> Result<RecommenderModel> {
    train_with_progress(matrix, semantic, variant, config, |_| {})
}

/// Pairwise SGD over shuffled observed pairs; `on_epoch` sees each epoch's
/// mean hinge loss.
pub fn train_with_progress(
    matrix: &InteractionMatrix,
    semantic: Option<&EmbeddingTable>,
    variant: Variant,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(EpochLoss),
) -> Result<RecommenderModel> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix(
            "no observed company/technology pairs to train on".into(),
        ));
    }
    let mut model = RecommenderModel::init(variant, matrix, semantic, config)?;
    // init consumed its own stream; training draws from a separate one
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let saturated: Vec<bool> = (0..matrix.n_companies())
        .map(|c| matrix.row(c).len() == matrix.n_techs())
        .collect();
    let mut pairs: Vec<(usize, usize, f64)> = matrix.entries().filter(|&(c, _, _)| !saturated[c]).collect();
    if pairs.len() < matrix.nnz() {
        log::warn!(
            "{} pairs skipped: their companies observe every technology",
            matrix.nnz() - pairs.len()
        );
    }
    if pairs.is_empty() {
        return Err(Error::EmptyMatrix(
            "every company observes every technology; no negatives to sample".into(),
        ));
    }
    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for &(c, pos, value) in &pairs {
            for _ in 0..config.negatives_per_positive {
                let neg = sample_negative(matrix, c, &mut rng)?;
                let (loss, grad) = model.hinge_grad(c, pos, neg, config.margin, config.hinge, value)?;
                if loss > 0.0 {
                    model.apply(&grad, config.learning_rate);
                }
                total += loss;
            }
        }
        if !model.is_finite() {
            return Err(Error::NonFinite(format!("{variant} model at epoch {epoch}")));
        }
        let mean_loss = total / (pairs.len() * config.negatives_per_positive) as f64;
        log::debug!("{variant} epoch {epoch} mean hinge {mean_loss}");
        on_epoch(EpochLoss { epoch, mean_loss });
    }
    Ok(model)
}
