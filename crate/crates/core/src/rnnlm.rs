//! A small word-level Elman RNN language model and the enrichment of
//! under-represented NE embeddings with category-weighted donor embeddings.
//!
//! The network is `h_t = tanh(W_x e_in[x_t] + W_h h_{t-1} + b_h)` followed by
//! a full softmax over `e_out h_t + b_out`. Every sentence starts from a zero
//! hidden state, is fed `<s> w_1 .. w_n` and predicts `w_1 .. w_n </s>`.
//! All arithmetic is in `f64`.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CountClass, CountThresholds, NeInventory};
use crate::ngram::{BOS, EOS, UNK};
use crate::seed::rng_for;

const CHECKPOINT_MAGIC: &str = "nebias-rnnlm";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RnnError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid RNN LM configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    DivergenceDetected { epoch: usize },
    #[error("donor `{0}` is not in the model vocabulary")]
    DonorNotInVocab(String),
    #[error("donor `{0}` is not a richly represented inventory NE")]
    DonorNotRR(String),
    #[error("donor list is empty")]
    EmptyDonors,
    #[error("invalid enrichment weights m_same={m_same}, m_diff={m_diff}")]
    InvalidWeights { m_same: f64, m_diff: f64 },
    #[error("model embeddings have already been enriched")]
    AlreadyEnriched,
    #[error("checkpoint line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RnnError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Truncation length for backpropagation through time.
    pub bptt: usize,
    /// Global gradient-norm clipping threshold per update.
    pub clip_norm: f64,
    /// Weights start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 24,
            learning_rate: 0.1,
            epochs: 5,
            bptt: 8,
            clip_norm: 5.0,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(RnnError::InvalidConfig(
                "embed_dim and hidden_dim must be at least 1".into(),
            ));
        }
        if self.bptt == 0 {
            return Err(RnnError::InvalidConfig("bptt must be at least 1".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("init_scale", self.init_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(RnnError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Named parameter blocks, all stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tensor {
    /// `V × embed_dim`
    InputEmbedding,
    /// `hidden_dim × embed_dim`
    RecurrentInput,
    /// `hidden_dim × hidden_dim`
    Recurrent,
    /// `hidden_dim`
    HiddenBias,
    /// `V × hidden_dim`
    OutputEmbedding,
    /// `V`
    OutputBias,
}

impl Tensor {
    pub const ALL: [Tensor; 6] = [
        Tensor::InputEmbedding,
        Tensor::RecurrentInput,
        Tensor::Recurrent,
        Tensor::HiddenBias,
        Tensor::OutputEmbedding,
        Tensor::OutputBias,
    ];

    fn name(self) -> &'static str {
        match self {
            Tensor::InputEmbedding => "e_in",
            Tensor::RecurrentInput => "w_x",
            Tensor::Recurrent => "w_h",
            Tensor::HiddenBias => "b_h",
            Tensor::OutputEmbedding => "e_out",
            Tensor::OutputBias => "b_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub e_in: Vec<f64>,
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b_h: Vec<f64>,
    pub e_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Params {
    fn zeros(v: usize, d: usize, dh: usize) -> Self {
        Self {
            e_in: vec![0.0; v * d],
            w_x: vec![0.0; dh * d],
            w_h: vec![0.0; dh * dh],
            b_h: vec![0.0; dh],
            e_out: vec![0.0; v * dh],
            b_out: vec![0.0; v],
        }
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        match t {
            Tensor::InputEmbedding => &self.e_in,
            Tensor::RecurrentInput => &self.w_x,
            Tensor::Recurrent => &self.w_h,
            Tensor::HiddenBias => &self.b_h,
            Tensor::OutputEmbedding => &self.e_out,
            Tensor::OutputBias => &self.b_out,
        }
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut Vec<f64> {
        match t {
            Tensor::InputEmbedding => &mut self.e_in,
            Tensor::RecurrentInput => &mut self.w_x,
            Tensor::Recurrent => &mut self.w_h,
            Tensor::HiddenBias => &mut self.b_h,
            Tensor::OutputEmbedding => &mut self.e_out,
            Tensor::OutputBias => &mut self.b_out,
        }
    }

    fn norm_sq(&self) -> f64 {
        Tensor::ALL
            .iter()
            .flat_map(|&t| self.tensor(t))
            .map(|x| x * x)
            .sum()
    }

    fn fill_zero(&mut self) {
        for t in Tensor::ALL {
            self.tensor_mut(t).fill(0.0);
        }
    }

    fn all_finite(&self) -> bool {
        Tensor::ALL
            .iter()
            .all(|&t| self.tensor(t).iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Perplexity of the randomly initialised model on the training data.
    pub initial_perplexity: f64,
    /// Training perplexity after each epoch.
    pub epoch_perplexities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLmModel {
    config: RnnConfig,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    params: Params,
    enriched: bool,
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in logits.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in logits.iter_mut() {
        *x /= sum;
    }
}

impl RnnLmModel {
    /// Builds a randomly initialised model over `<s>`, `</s>`, `<unk>` and
    /// `words` (duplicates and the special symbols are skipped).
    pub fn new<S: AsRef<str>>(words: &[S], config: RnnConfig) -> Result<Self> {
        config.validate()?;
        let mut vocab: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
        let mut ids: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        for w in words {
            let w = w.as_ref();
            if !ids.contains_key(w) {
                ids.insert(w.to_string(), vocab.len() as u32);
                vocab.push(w.to_string());
            }
        }
        let (v, d, dh) = (vocab.len(), config.embed_dim, config.hidden_dim);
        let mut params = Params::zeros(v, d, dh);
        let mut rng = rng_for(config.seed, "rnnlm-init");
        let s = config.init_scale;
        for t in [
            Tensor::InputEmbedding,
            Tensor::RecurrentInput,
            Tensor::Recurrent,
            Tensor::OutputEmbedding,
        ] {
            for x in params.tensor_mut(t).iter_mut() {
                *x = rng.random_range(-s..=s);
            }
        }
        Ok(Self {
            config,
            vocab,
            ids,
            params,
            enriched: false,
        })
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(2)
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn is_enriched(&self) -> bool {
        self.enriched
    }

    pub fn input_embedding(&self, word: &str) -> Option<&[f64]> {
        let d = self.config.embed_dim;
        self.id(word)
            .map(|i| &self.params.e_in[i as usize * d..(i as usize + 1) * d])
    }

    pub fn output_embedding(&self, word: &str) -> Option<&[f64]> {
        let dh = self.config.hidden_dim;
        self.id(word)
            .map(|i| &self.params.e_out[i as usize * dh..(i as usize + 1) * dh])
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.hidden_dim]
    }

    /// One recurrent step: returns the new hidden state.
    pub fn advance(&self, hidden: &[f64], word: u32) -> Vec<f64> {
        let (d, dh) = (self.config.embed_dim, self.config.hidden_dim);
        let x = &self.params.e_in[word as usize * d..(word as usize + 1) * d];
        let mut h = self.params.b_h.clone();
        for (i, hi) in h.iter_mut().enumerate() {
            let wx = &self.params.w_x[i * d..(i + 1) * d];
            let wh = &self.params.w_h[i * dh..(i + 1) * dh];
            let mut acc = *hi;
            for k in 0..d {
                acc += wx[k] * x[k];
            }
            for k in 0..dh {
                acc += wh[k] * hidden[k];
            }
            *hi = acc.tanh();
        }
        h
    }

    /// Next-word probabilities given a hidden state.
    pub fn distribution(&self, hidden: &[f64]) -> Vec<f64> {
        let dh = self.config.hidden_dim;
        let mut out = self.params.b_out.clone();
        for (w, o) in out.iter_mut().enumerate() {
            let row = &self.params.e_out[w * dh..(w + 1) * dh];
            *o += row.iter().zip(hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        softmax_in_place(&mut out);
        out
    }

    /// Next-word distributions at every step of `<s> tokens </s>` under
    /// teacher forcing (`tokens.len() + 1` vectors).
    pub fn step_distributions<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Vec<f64>> {
        let mut h = self.advance(&self.initial_hidden(), 0);
        let mut out = Vec::with_capacity(tokens.len() + 1);
        out.push(self.distribution(&h));
        for t in tokens {
            h = self.advance(&h, self.id_or_unk(t.as_ref()));
            out.push(self.distribution(&h));
        }
        out
    }

    /// Natural-log probability of `<s> tokens </s>`; OOV words map to `<unk>`.
    pub fn sentence_logprob<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let ids = self.encode(tokens);
        -self.sequence_loss(&ids, None).0
    }

    fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(0);
        ids.extend(tokens.iter().map(|t| self.id_or_unk(t.as_ref())));
        ids.push(1);
        ids
    }

    /// Cross-entropy (natural log, summed) of `sentences`, each scored from a
    /// fresh hidden state.
    pub fn loss<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> f64 {
        sentences
            .iter()
            .map(|s| self.sequence_loss(&self.encode(s), None).0)
            .sum()
    }

    /// Loss and its exact gradient with untruncated backpropagation.
    pub fn loss_and_gradient<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> (f64, Params) {
        let (v, d, dh) = (self.vocab.len(), self.config.embed_dim, self.config.hidden_dim);
        let mut grads = Params::zeros(v, d, dh);
        let mut total = 0.0;
        for s in sentences {
            let ids = self.encode(s);
            let h0 = self.initial_hidden();
            total += self.chunk(&ids, &h0, Some(&mut grads)).0;
        }
        (total, grads)
    }

    /// Scores a full id sequence `<s> .. </s>` in chunks of `bptt` steps,
    /// accumulating gradients per chunk when `grads` is given.
    fn sequence_loss(&self, ids: &[u32], grads: Option<&mut Params>) -> (f64, Vec<f64>) {
        let h0 = self.initial_hidden();
        self.chunk(ids, &h0, grads)
    }

    /// Forward (and optionally backward) pass over `ids`, where `ids[t]`
    /// predicts `ids[t + 1]`. Returns the summed loss and the last hidden
    /// state.
    fn chunk(&self, ids: &[u32], h0: &[f64], grads: Option<&mut Params>) -> (f64, Vec<f64>) {
        let steps = ids.len().saturating_sub(1);
        let (d, dh) = (self.config.embed_dim, self.config.hidden_dim);
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
        hs.push(h0.to_vec());
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut loss = 0.0;
        for t in 0..steps {
            let h = self.advance(&hs[t], ids[t]);
            let p = self.distribution(&h);
            loss -= p[ids[t + 1] as usize].ln();
            hs.push(h);
            probs.push(p);
        }
        let last = hs[steps].clone();
        let Some(g) = grads else {
            return (loss, last);
        };
        let mut dh_next = vec![0.0; dh];
        let mut dh_vec = vec![0.0; dh];
        let mut dz = vec![0.0; dh];
        for t in (0..steps).rev() {
            let h = &hs[t + 1];
            let h_prev = &hs[t];
            let mut dlogits = std::mem::take(&mut probs[t]);
            dlogits[ids[t + 1] as usize] -= 1.0;
            dh_vec.copy_from_slice(&dh_next);
            for (w, &dl) in dlogits.iter().enumerate() {
                g.b_out[w] += dl;
                let row = &self.params.e_out[w * dh..(w + 1) * dh];
                let grow = &mut g.e_out[w * dh..(w + 1) * dh];
                for k in 0..dh {
                    grow[k] += dl * h[k];
                    dh_vec[k] += dl * row[k];
                }
            }
            for k in 0..dh {
                dz[k] = dh_vec[k] * (1.0 - h[k] * h[k]);
            }
            let x = ids[t] as usize;
            let xe = &self.params.e_in[x * d..(x + 1) * d];
            dh_next.fill(0.0);
            for i in 0..dh {
                let dzi = dz[i];
                g.b_h[i] += dzi;
                let gwx = &mut g.w_x[i * d..(i + 1) * d];
                for k in 0..d {
                    gwx[k] += dzi * xe[k];
                }
                let gwh = &mut g.w_h[i * dh..(i + 1) * dh];
                let wh = &self.params.w_h[i * dh..(i + 1) * dh];
                for k in 0..dh {
                    gwh[k] += dzi * h_prev[k];
                    dh_next[k] += dzi * wh[k];
                }
                let wx = &self.params.w_x[i * d..(i + 1) * d];
                let gx = &mut g.e_in[x * d..(x + 1) * d];
                for k in 0..d {
                    gx[k] += dzi * wx[k];
                }
            }
        }
        (loss, last)
    }

    fn apply(&mut self, grads: &Params) {
        let norm = grads.norm_sq().sqrt();
        let scale = if norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        let step = self.config.learning_rate * scale;
        for t in Tensor::ALL {
            let g = grads.tensor(t);
            for (p, gi) in self.params.tensor_mut(t).iter_mut().zip(g) {
                *p -= step * gi;
            }
        }
    }

    /// Perplexity over `sentences`, counting one prediction per token plus
    /// one for `</s>`.
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> f64 {
        let n: usize = sentences.iter().map(|s| s.len() + 1).sum();
        if n == 0 {
            return f64::NAN;
        }
        (self.loss(sentences) / n as f64).exp()
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(w, "embed_dim {}", c.embed_dim)?;
        writeln!(w, "hidden_dim {}", c.hidden_dim)?;
        writeln!(w, "learning_rate {:.16e}", c.learning_rate)?;
        writeln!(w, "epochs {}", c.epochs)?;
        writeln!(w, "bptt {}", c.bptt)?;
        writeln!(w, "clip_norm {:.16e}", c.clip_norm)?;
        writeln!(w, "init_scale {:.16e}", c.init_scale)?;
        writeln!(w, "seed {}", c.seed)?;
        writeln!(w, "enriched {}", u8::from(self.enriched))?;
        writeln!(w, "vocab {}", self.vocab.len())?;
        for word in &self.vocab {
            writeln!(w, "{word}")?;
        }
        for t in Tensor::ALL {
            let data = self.params.tensor(t);
            let cols = self.tensor_cols(t);
            writeln!(w, "tensor {} {} {}", t.name(), data.len() / cols, cols)?;
            for row in data.chunks(cols) {
                let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    fn tensor_cols(&self, t: Tensor) -> usize {
        match t {
            Tensor::InputEmbedding | Tensor::RecurrentInput => self.config.embed_dim,
            Tensor::Recurrent | Tensor::OutputEmbedding => self.config.hidden_dim,
            Tensor::HiddenBias | Tensor::OutputBias => 1,
        }
    }
}

/// Trains a model on `corpus`.
pub fn train_rnnlm(corpus: &Corpus, config: &RnnConfig) -> Result<(RnnLmModel, TrainReport)> {
    train_rnnlm_with_vocab(corpus, config, std::iter::empty::<&str>())
}

/// Trains a model whose vocabulary also contains `extra_vocab`, so that
/// words absent from the corpus still own embedding rows.
pub fn train_rnnlm_with_vocab<'a>(
    corpus: &'a Corpus,
    config: &RnnConfig,
    extra_vocab: impl IntoIterator<Item = &'a str>,
) -> Result<(RnnLmModel, TrainReport)> {
    if corpus.is_empty() || corpus.total_tokens() == 0 {
        return Err(RnnError::EmptyCorpus);
    }
    let mut words: BTreeSet<&str> = corpus.counts().keys().map(String::as_str).collect();
    words.extend(extra_vocab);
    let words: Vec<&str> = words.into_iter().collect();
    let mut model = RnnLmModel::new(&words, *config)?;

    let sentences: Vec<Vec<u32>> = corpus
        .utterances()
        .iter()
        .map(|u| model.encode(&u.tokens))
        .collect();
    let predictions: usize = sentences.iter().map(|s| s.len() - 1).sum();
    let eval = |m: &RnnLmModel| -> f64 {
        let loss: f64 = sentences.iter().map(|s| m.sequence_loss(s, None).0).sum();
        (loss / predictions as f64).exp()
    };

    let initial_perplexity = eval(&model);
    let mut epoch_perplexities = Vec::with_capacity(config.epochs);
    let (v, d, dh) = (model.vocab.len(), config.embed_dim, config.hidden_dim);
    let mut grads = Params::zeros(v, d, dh);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = rng_for(config.seed, &format!("rnnlm-epoch-{epoch}"));
        order.shuffle(&mut rng);
        for &si in &order {
            let ids = &sentences[si];
            let mut h = model.initial_hidden();
            let mut start = 0;
            while start + 1 < ids.len() {
                let end = (start + config.bptt).min(ids.len() - 1);
                grads.fill_zero();
                let (loss, h_last) = model.chunk(&ids[start..=end], &h, Some(&mut grads));
                if !loss.is_finite() {
                    return Err(RnnError::DivergenceDetected { epoch });
                }
                model.apply(&grads);
                h = h_last;
                start = end;
            }
        }
        if !model.params.all_finite() {
            return Err(RnnError::DivergenceDetected { epoch });
        }
        let ppl = eval(&model);
        if !ppl.is_finite() {
            return Err(RnnError::DivergenceDetected { epoch });
        }
        log::debug!("rnnlm epoch {epoch}: perplexity {ppl:.4}");
        epoch_perplexities.push(ppl);
    }
    Ok((
        model,
        TrainReport {
            initial_perplexity,
            epoch_perplexities,
        },
    ))
}

pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<RnnLmModel> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut started = false;
    let mut next = || -> Result<(usize, String)> {
        loop {
            match lines.next() {
                Some((n, l)) => {
                    let l = l?;
                    // leading `#` lines are provenance comments
                    if !started && l.starts_with('#') {
                        continue;
                    }
                    started = true;
                    return Ok((n, l));
                }
                None => {
                    return Err(RnnError::Parse {
                        line: 0,
                        message: "unexpected end of checkpoint".into(),
                    })
                }
            }
        }
    };
    let perr = |line: usize, message: String| RnnError::Parse { line, message };

    let (n, header) = next()?;
    if header.trim() != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
        return Err(perr(n, format!("unsupported header `{header}`")));
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (n, l) = next()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v.trim().to_string())),
            _ => Err(perr(n, format!("expected `{key} <value>`"))),
        }
    };
    fn num<T: std::str::FromStr>(n: usize, v: &str) -> Result<T> {
        v.parse().map_err(|_| RnnError::Parse {
            line: n,
            message: format!("bad value `{v}`"),
        })
    }
    let (n, v) = field("embed_dim")?;
    let embed_dim = num(n, &v)?;
    let (n, v) = field("hidden_dim")?;
    let hidden_dim = num(n, &v)?;
    let (n, v) = field("learning_rate")?;
    let learning_rate = num(n, &v)?;
    let (n, v) = field("epochs")?;
    let epochs = num(n, &v)?;
    let (n, v) = field("bptt")?;
    let bptt = num(n, &v)?;
    let (n, v) = field("clip_norm")?;
    let clip_norm = num(n, &v)?;
    let (n, v) = field("init_scale")?;
    let init_scale = num(n, &v)?;
    let (n, v) = field("seed")?;
    let seed = num(n, &v)?;
    let (n, v) = field("enriched")?;
    let enriched = num::<u8>(n, &v)? != 0;
    let (n, v) = field("vocab")?;
    let vsize: usize = num(n, &v)?;
    let config = RnnConfig {
        embed_dim,
        hidden_dim,
        learning_rate,
        epochs,
        bptt,
        clip_norm,
        init_scale,
        seed,
    };
    config.validate().map_err(|e| perr(n, e.to_string()))?;

    let mut vocab = Vec::with_capacity(vsize);
    let mut ids = HashMap::with_capacity(vsize);
    for _ in 0..vsize {
        let (n, w) = next()?;
        let w = w.trim().to_string();
        if w.is_empty() || ids.insert(w.clone(), vocab.len() as u32).is_some() {
            return Err(perr(n, format!("bad or duplicate vocabulary word `{w}`")));
        }
        vocab.push(w);
    }
    if vocab.len() < 3 || vocab[0] != BOS || vocab[1] != EOS || vocab[2] != UNK {
        return Err(perr(n, "vocabulary must start with <s> </s> <unk>".into()));
    }

    let mut model = RnnLmModel {
        config,
        vocab,
        ids,
        params: Params::zeros(vsize, embed_dim, hidden_dim),
        enriched,
    };
    for t in Tensor::ALL {
        let cols = model.tensor_cols(t);
        let rows = model.params.tensor(t).len() / cols;
        let (n, l) = next()?;
        if l.trim() != format!("tensor {} {} {}", t.name(), rows, cols) {
            return Err(perr(
                n,
                format!("expected `tensor {} {rows} {cols}`", t.name()),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, l) = next()?;
            let row: Vec<f64> = l
                .split_whitespace()
                .map(|s| num::<f64>(n, s))
                .collect::<Result<_>>()?;
            if row.len() != cols || row.iter().any(|x| !x.is_finite()) {
                return Err(perr(n, format!("expected {cols} finite values")));
            }
            data.extend(row);
        }
        *model.params.tensor_mut(t) = data;
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSide {
    Input,
    Output,
    #[default]
    Both,
}

impl EmbeddingSide {
    fn input(self) -> bool {
        matches!(self, EmbeddingSide::Input | EmbeddingSide::Both)
    }

    fn output(self) -> bool {
        matches!(self, EmbeddingSide::Output | EmbeddingSide::Both)
    }
}

impl std::str::FromStr for EmbeddingSide {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "input" => Ok(EmbeddingSide::Input),
            "output" => Ok(EmbeddingSide::Output),
            "both" => Ok(EmbeddingSide::Both),
            _ => Err(format!("expected input, output or both, got `{s}`")),
        }
    }
}

/// Which donors contribute to a given target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DonorScope {
    /// Every target uses the whole donor list.
    #[default]
    Global,
    /// A target only uses donors of its own category.
    SameCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrichmentConfig {
    /// Explicit donor list. When empty, [`select_donors`] picks
    /// `num_donors` at random.
    pub rr_ne_donors: Vec<String>,
    pub num_donors: usize,
    pub donor_seed: u64,
    pub ur_target_max_count: u64,
    pub m_same: f64,
    pub m_diff: f64,
    pub apply_to: EmbeddingSide,
    pub donor_scope: DonorScope,
    /// Permits an empty donor set, which leaves every target unchanged.
    pub allow_empty_donors: bool,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        Self {
            rr_ne_donors: Vec::new(),
            num_donors: 5,
            donor_seed: 0,
            ur_target_max_count: 7,
            m_same: 0.7,
            m_diff: 0.3,
            apply_to: EmbeddingSide::Both,
            donor_scope: DonorScope::Global,
            allow_empty_donors: false,
        }
    }
}

/// `(e_u + Σ m_c e_c) / (|C| + 1)`.
pub fn enrich_vector(target: &[f64], donors: &[(&[f64], f64)]) -> Vec<f64> {
    let mut out = target.to_vec();
    for (e, m) in donors {
        for (o, x) in out.iter_mut().zip(e.iter()) {
            *o += m * x;
        }
    }
    let denom = (donors.len() + 1) as f64;
    for o in out.iter_mut() {
        *o /= denom;
    }
    out
}

/// Picks `n` donors uniformly at random among the richly represented
/// inventory NEs present in the model vocabulary.
pub fn select_donors(
    model: &RnnLmModel,
    inventory: &NeInventory,
    thresholds: &CountThresholds,
    n: usize,
    seed: u64,
) -> Vec<String> {
    let mut candidates: Vec<&str> = inventory
        .rich(thresholds)
        .filter(|e| model.id(&e.surface).is_some())
        .map(|e| e.surface.as_str())
        .collect();
    candidates.sort_unstable();
    let mut rng = rng_for(seed, "enrichment-donors");
    let k = n.min(candidates.len());
    let mut picked: Vec<String> = index::sample(&mut rng, candidates.len(), k)
        .iter()
        .map(|i| candidates[i].to_string())
        .collect();
    picked.sort();
    picked
}

/// Result of an enrichment: the new model and the rows that changed.
#[derive(Debug, Clone, PartialEq)]
pub struct Enrichment {
    pub model: RnnLmModel,
    pub donors: Vec<String>,
    pub targets: Vec<String>,
}

/// Replaces the embedding rows of every inventory NE with count
/// `<= ur_target_max_count` by the donor-weighted average. All enriched rows
/// are computed from the original embeddings; every other parameter is left
/// untouched.
pub fn enrich_embeddings(
    model: &RnnLmModel,
    inventory: &NeInventory,
    thresholds: &CountThresholds,
    config: &EnrichmentConfig,
) -> Result<Enrichment> {
    if model.enriched {
        return Err(RnnError::AlreadyEnriched);
    }
    let (ms, md) = (config.m_same, config.m_diff);
    if !(0.0 <= md && md <= ms && ms <= 1.0) {
        return Err(RnnError::InvalidWeights {
            m_same: ms,
            m_diff: md,
        });
    }
    let donors = if config.rr_ne_donors.is_empty() {
        select_donors(
            model,
            inventory,
            thresholds,
            config.num_donors,
            config.donor_seed,
        )
    } else {
        config.rr_ne_donors.clone()
    };
    if donors.is_empty() && !config.allow_empty_donors {
        return Err(RnnError::EmptyDonors);
    }
    let mut donor_info = Vec::with_capacity(donors.len());
    for d in &donors {
        let id = model
            .id(d)
            .ok_or_else(|| RnnError::DonorNotInVocab(d.clone()))?;
        let ne = inventory
            .get(d)
            .filter(|e| thresholds.class_of(e.train_count) == CountClass::RichlyRepresented)
            .ok_or_else(|| RnnError::DonorNotRR(d.clone()))?;
        donor_info.push((id as usize, ne.category));
    }

    let mut targets: Vec<(usize, &str)> = inventory
        .entities()
        .iter()
        .filter(|e| e.train_count <= config.ur_target_max_count)
        .filter_map(|e| model.id(&e.surface).map(|id| (id as usize, e.surface.as_str())))
        .collect();
    targets.sort_by(|a, b| a.1.cmp(b.1));

    let mut out = model.clone();
    let (d, dh) = (model.config.embed_dim, model.config.hidden_dim);
    let sides: [(bool, Tensor, usize); 2] = [
        (config.apply_to.input(), Tensor::InputEmbedding, d),
        (config.apply_to.output(), Tensor::OutputEmbedding, dh),
    ];
    for &(tid, surface) in &targets {
        let category = inventory
            .get(surface)
            .map(|e| e.category)
            .expect("target comes from the inventory");
        let weights: Vec<(usize, f64)> = donor_info
            .iter()
            .filter(|(_, c)| config.donor_scope == DonorScope::Global || *c == category)
            .map(|&(id, c)| (id, if c == category { ms } else { md }))
            .collect();
        for &(enabled, tensor, cols) in &sides {
            if !enabled {
                continue;
            }
            let src = model.params.tensor(tensor);
            let row = |i: usize| &src[i * cols..(i + 1) * cols];
            let contributions: Vec<(&[f64], f64)> =
                weights.iter().map(|&(id, m)| (row(id), m)).collect();
            let new_row = enrich_vector(row(tid), &contributions);
            out.params.tensor_mut(tensor)[tid * cols..(tid + 1) * cols].copy_from_slice(&new_row);
        }
    }
    out.enriched = true;
    Ok(Enrichment {
        model: out,
        donors,
        targets: targets.into_iter().map(|(_, s)| s.to_string()).collect(),
    })
}
