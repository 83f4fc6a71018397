use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{softmax_in_place, Instance, TokenId, OOV};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    BowLogistic,
    AttnEmbed,
}

/// Shape and initialization of a prediction module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModuleConfig {
    pub kind: PredictorKind,
    pub dim: usize,
    pub attn_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModuleConfig {
    fn default() -> Self {
        ModuleConfig {
            kind: PredictorKind::AttnEmbed,
            dim: 32,
            attn_dim: 5,
            init_scale: 0.05,
            seed: 0,
        }
    }
}

impl ModuleConfig {
    pub fn bow() -> Self {
        ModuleConfig {
            kind: PredictorKind::BowLogistic,
            ..Self::default()
        }
    }

    pub fn attn() -> Self {
        Self::default()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PredictorKind::AttnEmbed && (self.dim == 0 || self.attn_dim == 0) {
            return Err(Error::Config("attention module needs dim and attn_dim > 0".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Offsets into the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Layout {
    pub emb: usize,
    pub proj: usize,
    pub proj_bias: usize,
    pub ctx: usize,
    pub out: usize,
    pub out_bias: usize,
    pub len: usize,
}

/// Discriminative classifier over token sequences.
///
/// `bow_logistic` holds an `L x V` weight matrix and a bias. `attn_embed`
/// holds an embedding table `V x d`, an attention projection `a x d` with
/// bias, a context vector of length `a` and an output layer `L x d` with
/// bias. Output layers start at zero so a fresh module predicts uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionModule {
    pub(crate) config: ModuleConfig,
    pub(crate) num_labels: usize,
    pub(crate) vocab_size: usize,
    pub(crate) params: Vec<f64>,
    /// Frozen copy of the initial embedding table.
    pub(crate) pretrained: Vec<f64>,
    pub(crate) layout: Layout,
}

/// Intermediate values of one attention forward pass.
struct AttnTrace {
    hidden: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    pooled: Vec<f64>,
}

impl PredictionModule {
    pub fn new(config: ModuleConfig, num_labels: usize, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if num_labels < 2 {
            return Err(Error::Config("prediction module needs at least two labels".into()));
        }
        let layout = Self::layout(&config, num_labels, vocab_size);
        let mut params = vec![0.0; layout.len];
        if config.kind == PredictorKind::AttnEmbed {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let s = config.init_scale;
            for p in &mut params[layout.emb..layout.out] {
                *p = if s > 0.0 { rng.random_range(-s..s) } else { 0.0 };
            }
        }
        let pretrained = match config.kind {
            PredictorKind::AttnEmbed => params[layout.emb..layout.proj].to_vec(),
            PredictorKind::BowLogistic => Vec::new(),
        };
        Ok(PredictionModule {
            config,
            num_labels,
            vocab_size,
            params,
            pretrained,
            layout,
        })
    }

    fn layout(config: &ModuleConfig, l: usize, v: usize) -> Layout {
        match config.kind {
            PredictorKind::BowLogistic => Layout {
                emb: 0,
                proj: 0,
                proj_bias: 0,
                ctx: 0,
                out: 0,
                out_bias: l * v,
                len: l * v + l,
            },
            PredictorKind::AttnEmbed => {
                let (d, a) = (config.dim, config.attn_dim);
                let emb = 0;
                let proj = emb + v * d;
                let proj_bias = proj + a * d;
                let ctx = proj_bias + a;
                let out = ctx + a;
                let out_bias = out + l * d;
                Layout {
                    emb,
                    proj,
                    proj_bias,
                    ctx,
                    out,
                    out_bias,
                    len: out_bias + l,
                }
            }
        }
    }

    /// Replaces the embedding table (and its frozen copy) with pretrained
    /// vectors, row-major `V x d`.
    pub fn set_pretrained_embeddings(&mut self, table: Vec<f64>) -> Result<()> {
        if self.config.kind != PredictorKind::AttnEmbed {
            return Err(Error::Config("pretrained vectors need an attention module".into()));
        }
        if table.len() != self.vocab_size * self.config.dim {
            return Err(Error::Config(format!(
                "embedding table has {} values, expected {}",
                table.len(),
                self.vocab_size * self.config.dim
            )));
        }
        self.params[self.layout.emb..self.layout.proj].copy_from_slice(&table);
        self.pretrained = table;
        Ok(())
    }

    pub fn kind(&self) -> PredictorKind {
        self.config.kind
    }

    pub fn config(&self) -> &ModuleConfig {
        &self.config
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn emb_row<'a>(table: &'a [f64], t: TokenId, d: usize, zero: &'a [f64]) -> &'a [f64] {
        if t == OOV {
            zero
        } else {
            &table[t as usize * d..(t as usize + 1) * d]
        }
    }

    fn attn_forward(&self, tokens: &[TokenId]) -> AttnTrace {
        let (d, a) = (self.dim(), self.config.attn_dim);
        let lay = &self.layout;
        let table = &self.params[lay.emb..lay.proj];
        let proj = &self.params[lay.proj..lay.proj_bias];
        let pb = &self.params[lay.proj_bias..lay.ctx];
        let ctx = &self.params[lay.ctx..lay.out];
        let zero = vec![0.0; d];
        let mut hidden = Vec::with_capacity(tokens.len());
        let mut scores = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let e = Self::emb_row(table, t, d, &zero);
            let h: Vec<f64> = (0..a)
                .map(|k| {
                    let row = &proj[k * d..(k + 1) * d];
                    (pb[k] + row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>()).tanh()
                })
                .collect();
            scores.push(ctx.iter().zip(&h).map(|(c, x)| c * x).sum::<f64>());
            hidden.push(h);
        }
        let mut alpha = scores;
        if !alpha.is_empty() {
            softmax_in_place(&mut alpha);
        }
        let mut pooled = vec![0.0; d];
        for (&t, &w) in tokens.iter().zip(&alpha) {
            let e = Self::emb_row(table, t, d, &zero);
            for (p, x) in pooled.iter_mut().zip(e) {
                *p += w * x;
            }
        }
        AttnTrace { hidden, alpha, pooled }
    }

    fn logits(&self, tokens: &[TokenId]) -> (Vec<f64>, Option<AttnTrace>) {
        let l = self.num_labels;
        let lay = &self.layout;
        let bias = &self.params[lay.out_bias..lay.out_bias + l];
        match self.config.kind {
            PredictorKind::BowLogistic => {
                let v = self.vocab_size;
                let mut z = bias.to_vec();
                for &t in tokens.iter().filter(|&&t| t != OOV) {
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc += self.params[c * v + t as usize];
                    }
                }
                (z, None)
            }
            PredictorKind::AttnEmbed => {
                let d = self.dim();
                let trace = self.attn_forward(tokens);
                let out = &self.params[lay.out..lay.out_bias];
                let z = (0..l)
                    .map(|c| bias[c] + out[c * d..(c + 1) * d].iter().zip(&trace.pooled).map(|(w, x)| w * x).sum::<f64>())
                    .collect();
                (z, Some(trace))
            }
        }
    }

    /// Label distribution for a token sequence. Every coordinate is kept
    /// strictly positive.
    pub fn predict_tokens(&self, tokens: &[TokenId]) -> Vec<f64> {
        let (mut z, _) = self.logits(tokens);
        softmax_in_place(&mut z);
        for p in &mut z {
            if *p < 1e-300 {
                *p = 1e-300;
            }
        }
        z
    }

    pub fn predict(&self, instance: &Instance) -> Vec<f64> {
        self.predict_tokens(&instance.tokens)
    }

    /// Normalized attention weight of each token position. Bag-of-words
    /// modules have no attention and return uniform weights.
    pub fn attention_weights(&self, instance: &Instance) -> Vec<f64> {
        let n = instance.tokens.len();
        match self.config.kind {
            PredictorKind::BowLogistic => vec![1.0 / n as f64; n],
            PredictorKind::AttnEmbed => self.attn_forward(&instance.tokens).alpha,
        }
    }

    /// Document embedding. The flag is true when every token was OOV and
    /// the vector is zero.
    pub fn embed(&self, instance: &Instance, mode: EmbedMode) -> Result<(Vec<f64>, bool)> {
        if self.config.kind != PredictorKind::AttnEmbed {
            return Err(Error::Config("embeddings need an attention module".into()));
        }
        let d = self.dim();
        let all_oov = instance.tokens.iter().all(|&t| t == OOV);
        let v = match mode {
            EmbedMode::CurrentPooled => self.attn_forward(&instance.tokens).pooled,
            EmbedMode::PretrainedMean => {
                let zero = vec![0.0; d];
                let mut m = vec![0.0; d];
                for &t in &instance.tokens {
                    for (a, x) in m.iter_mut().zip(Self::emb_row(&self.pretrained, t, d, &zero)) {
                        *a += x;
                    }
                }
                let n = instance.tokens.len().max(1) as f64;
                m.iter_mut().for_each(|a| *a /= n);
                m
            }
        };
        Ok((v, all_oov))
    }

    /// Weighted soft cross-entropy `-weight * sum_l y_l ln p_l` of one
    /// instance, accumulating its parameter gradient into `grad` when given.
    pub fn loss_and_grad(&self, tokens: &[TokenId], target: &[f64], weight: f64, grad: Option<&mut [f64]>) -> f64 {
        let l = self.num_labels;
        let (mut p, trace) = self.logits(tokens);
        softmax_in_place(&mut p);
        let loss = -weight
            * target
                .iter()
                .zip(&p)
                .filter(|(y, _)| **y > 0.0)
                .map(|(y, q)| y * floored_ln(*q))
                .sum::<f64>();
        let Some(grad) = grad else {
            return loss;
        };
        let mass: f64 = target.iter().sum();
        let dz: Vec<f64> = (0..l).map(|c| weight * (mass * p[c] - target[c])).collect();
        let lay = self.layout;
        for c in 0..l {
            grad[lay.out_bias + c] += dz[c];
        }
        match self.config.kind {
            PredictorKind::BowLogistic => {
                let v = self.vocab_size;
                for &t in tokens.iter().filter(|&&t| t != OOV) {
                    for c in 0..l {
                        grad[c * v + t as usize] += dz[c];
                    }
                }
            }
            PredictorKind::AttnEmbed => self.attn_backward(tokens, trace.as_ref().unwrap(), &dz, grad),
        }
        loss
    }

    fn attn_backward(&self, tokens: &[TokenId], tr: &AttnTrace, dz: &[f64], grad: &mut [f64]) {
        let (d, a, l) = (self.dim(), self.config.attn_dim, self.num_labels);
        let lay = self.layout;
        let table = &self.params[lay.emb..lay.proj];
        let proj = &self.params[lay.proj..lay.proj_bias];
        let ctx = &self.params[lay.ctx..lay.out];
        let out = &self.params[lay.out..lay.out_bias];
        let zero = vec![0.0; d];

        let mut dpool = vec![0.0; d];
        for c in 0..l {
            for k in 0..d {
                grad[lay.out + c * d + k] += dz[c] * tr.pooled[k];
                dpool[k] += out[c * d + k] * dz[c];
            }
        }
        let dalpha: Vec<f64> = tokens
            .iter()
            .map(|&t| Self::emb_row(table, t, d, &zero).iter().zip(&dpool).map(|(e, g)| e * g).sum())
            .collect();
        let mean: f64 = tr.alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
        for (j, &t) in tokens.iter().enumerate() {
            let ds = tr.alpha[j] * (dalpha[j] - mean);
            let e = Self::emb_row(table, t, d, &zero);
            let mut de: Vec<f64> = dpool.iter().map(|g| tr.alpha[j] * g).collect();
            for k in 0..a {
                let h = tr.hidden[j][k];
                grad[lay.ctx + k] += ds * h;
                let du = ds * ctx[k] * (1.0 - h * h);
                grad[lay.proj_bias + k] += du;
                for m in 0..d {
                    grad[lay.proj + k * d + m] += du * e[m];
                    de[m] += du * proj[k * d + m];
                }
            }
            if t != OOV {
                let base = lay.emb + t as usize * d;
                for m in 0..d {
                    grad[base + m] += de[m];
                }
            }
        }
    }

    /// Fills every parameter uniformly in `(-scale, scale)`; used for
    /// gradient-check fixtures where zero output layers hide gradients.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            *p = rng.random_range(-scale..scale);
        }
        if self.config.kind == PredictorKind::AttnEmbed {
            self.pretrained = self.params[self.layout.emb..self.layout.proj].to_vec();
        }
    }
}

/// `ln p` floored at `ln 1e-300`; NaN passes through.
fn floored_ln(p: f64) -> f64 {
    if p < 1e-300 {
        1e-300f64.ln()
    } else {
        p.ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    PretrainedMean,
    CurrentPooled,
}

/// Cosine similarity; `None` if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Compares analytic gradients of the weighted soft cross-entropy with
/// central finite differences. Returns the max relative error
/// `|a - n| / max(|a|, |n|, 1e-8)` over all parameters.
pub fn gradient_check(module: &PredictionModule, tokens: &[TokenId], target: &[f64], eps: f64) -> f64 {
    let mut analytic = vec![0.0; module.params.len()];
    module.loss_and_grad(tokens, target, 1.0, Some(&mut analytic));
    let mut probe = module.clone();
    let mut worst: f64 = 0.0;
    for i in 0..module.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + eps;
        let up = probe.loss_and_grad(tokens, target, 1.0, None);
        probe.params[i] = orig - eps;
        let down = probe.loss_and_grad(tokens, target, 1.0, None);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}
