// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small seeded decoder-only transformer with a hookable residual stream.
//!
//! Pre-norm blocks update the residual stream additively:
//!
//! ```text
//! a      = MHA(LN1(h))
//! f      = FFN(LN2(h + a))
//! h_next = h + a + f
//! ```
//!
//! `hidden[0]` is the token + position embedding and `hidden[l]` (l ≥ 1) the
//! stream after block `l`. A hook registered for layer `l` rewrites
//! `hidden[l]` before it is recorded and before block `l + 1` reads it.
//! Logits are `unembed(hidden[n_layers])`, where `unembed` applies the final
//! layer norm and the unembedding matrix; the same map is what a logit lens
//! applies to intermediate layers.
//!
//! Parameters are drawn once from a ChaCha8 stream seeded by the config:
//! every weight matrix is uniform on `±1/sqrt(fan_in)`, embeddings uniform
//! on `±1`, layer-norm gains `1 ± 0.1` and offsets `±0.1`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actv::{self, Container, Section};
use crate::error::{Error, Result};
use crate::numkit::dot;

pub type TokenId = u32;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Splits text into toy tokens.
///
/// Whitespace separates tokens and is dropped. A bracketed chunk such as
/// `<|im_start|>`, `[INST]` or `[EQUALITY]` (opening `<`/`[` up to the
/// matching closer, no whitespace inside) is one token. Any other
/// non-alphanumeric character is a token on its own; runs of alphanumerics
/// form words.
pub fn split_tokens(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let c = text[i..].chars().next().expect("in bounds");
        let w = c.len_utf8();
        if c.is_whitespace() {
            i += w;
            continue;
        }
        if c == '<' || c == '[' {
            let closer = if c == '<' { b'>' } else { b']' };
            let end = text[i + 1..]
                .char_indices()
                .take_while(|(_, ch)| !ch.is_whitespace())
                .find(|&(k, _)| bytes[i + 1 + k] == closer)
                .map(|(k, _)| i + 1 + k + 1);
            if let Some(end) = end {
                if end - i >= 3 {
                    out.push(&text[i..end]);
                    i = end;
                    continue;
                }
            }
        }
        if c.is_alphanumeric() || c == '_' {
            let end = text[i..]
                .char_indices()
                .find(|&(_, ch)| !(ch.is_alphanumeric() || ch == '_'))
                .map_or(text.len(), |(k, _)| i + k);
            out.push(&text[i..end]);
            i = end;
        } else {
            out.push(&text[i..i + w]);
            i += w;
        }
    }
    out
}

/// Token list with `<unk>` and `<eos>` always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Duplicate tokens are an error. Missing special tokens are appended.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidConfig("vocab must not be empty".into()));
        }
        let mut vocab = Vocab {
            tokens: Vec::with_capacity(tokens.len() + 2),
            index: HashMap::new(),
        };
        for t in tokens {
            if vocab.index.contains_key(&t) {
                return Err(Error::InvalidConfig(format!("duplicate vocab token `{t}`")));
            }
            vocab.push(t);
        }
        for special in [UNK_TOKEN, EOS_TOKEN] {
            if !vocab.index.contains_key(special) {
                vocab.push(special.to_string());
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len() as TokenId);
        self.tokens.push(t);
    }

    /// Special tokens first, then every distinct token of `texts` in order of
    /// first appearance.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        vocab.push(UNK_TOKEN.into());
        vocab.push(EOS_TOKEN.into());
        for text in texts {
            for piece in split_tokens(text) {
                if !vocab.index.contains_key(piece) {
                    vocab.push(piece.to_string());
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn unk(&self) -> TokenId {
        self.index[UNK_TOKEN]
    }

    pub fn eos(&self) -> TokenId {
        self.index[EOS_TOKEN]
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_tokens(text)
            .into_iter()
            .map(|p| self.id(p).unwrap_or_else(|| self.unk()))
            .collect()
    }

    /// Tokens joined by single spaces.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The whitespace-normalized form that `detokenize(tokenize(text))` returns
/// for in-vocabulary text.
pub fn normalize_text(text: &str) -> String {
    split_tokens(text).join(" ")
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

fn default_layers() -> usize {
    8
}
fn default_d_model() -> usize {
    64
}
fn default_heads() -> usize {
    4
}
fn default_d_ff() -> usize {
    256
}
fn default_max_seq() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLmConfig {
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_max_seq")]
    pub max_seq: usize,
    pub seed: u64,
    pub vocab: Vec<String>,
}

impl ToyLmConfig {
    pub fn new(vocab: &Vocab, seed: u64) -> Self {
        Self {
            n_layers: default_layers(),
            d_model: default_d_model(),
            n_heads: default_heads(),
            d_ff: default_d_ff(),
            max_seq: default_max_seq(),
            seed,
            vocab: vocab.tokens().to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_seq == 0 {
            return bad("all sizes must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers > u16::MAX as usize {
            return bad("n_layers exceeds u16".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Dense `out × in` weight, row-major; `apply` computes `W x`.
#[derive(Debug, Clone, PartialEq)]
struct Linear {
    out: usize,
    inp: usize,
    w: Vec<f64>,
}

impl Linear {
    fn random(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (inp as f64).sqrt();
        Self {
            out,
            inp,
            w: uniform_vec(out * inp, a, rng),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w.chunks_exact(self.inp).map(|row| dot(row, x)).collect()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.inp..(i + 1) * self.inp]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn random(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gain: uniform_vec(d, 0.1, rng).into_iter().map(|g| 1.0 + g).collect(),
            bias: uniform_vec(d, 0.1, rng),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: LayerNorm,
    w_in: Linear,
    b_in: Vec<f64>,
    w_out: Linear,
    b_out: Vec<f64>,
}

fn uniform_vec(n: usize, a: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Per-layer residual rewrite: receives the `[seq][d_model]` stream after a block.
pub type HookFn<'a> = dyn Fn(&mut [Vec<f64>]) + Send + Sync + 'a;

/// Residual-stream hooks keyed by layer (0 = embeddings).
#[derive(Default)]
pub struct Hooks<'a> {
    by_layer: BTreeMap<usize, Box<HookFn<'a>>>,
}

impl<'a> Hooks<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `f` at `layer`, replacing any previous hook there.
    pub fn at(mut self, layer: usize, f: impl Fn(&mut [Vec<f64>]) + Send + Sync + 'a) -> Self {
        self.by_layer.insert(layer, Box::new(f));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.by_layer.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_layer.keys().copied()
    }

    fn run(&self, layer: usize, stream: &mut [Vec<f64>]) {
        if let Some(f) = self.by_layer.get(&layer) {
            f(stream);
        }
    }
}

impl std::fmt::Debug for Hooks<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hooks").field("layers", &self.by_layer.keys().collect::<Vec<_>>()).finish()
    }
}

/// Everything one forward pass records.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<TokenId>,
    /// `hidden[layer][position]`, `n_layers + 1` layers.
    pub hidden: Vec<Vec<Vec<f64>>>,
    /// Next-token logits per position.
    pub logits: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Hidden state at the final position of `layer`.
    pub fn last(&self, layer: usize) -> &[f64] {
        self.hidden[layer].last().expect("non-empty sequence")
    }

    pub fn last_logits(&self) -> &[f64] {
        self.logits.last().expect("non-empty sequence")
    }
}

/// Sampling parameters for [`ToyLm::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub repetition_penalty: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            repetition_penalty: 1.0,
            max_new_tokens: 20,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument("temperature must be ≥ 0".into()));
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::InvalidArgument("repetition_penalty must be ≥ 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument("max_new_tokens must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// CTRL-style penalty: positive logits are divided, negative ones multiplied.
pub fn apply_repetition_penalty(logits: &mut [f64], seen: &[TokenId], penalty: f64) {
    if penalty == 1.0 {
        return;
    }
    let mut done = vec![false; logits.len()];
    for &t in seen {
        let i = t as usize;
        if i < logits.len() && !done[i] {
            done[i] = true;
            let l = &mut logits[i];
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    config: ToyLmConfig,
    vocab: Vocab,
    tok_emb: Vec<Vec<f64>>,
    pos_emb: Vec<Vec<f64>>,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    unembed_w: Linear,
}

impl ToyLm {
    pub fn build(config: ToyLmConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::new(config.vocab.clone())?;
        let (d, ff, v) = (config.d_model, config.d_ff, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let tok_emb = (0..v).map(|_| uniform_vec(d, 1.0, &mut rng)).collect();
        let pos_emb = (0..config.max_seq).map(|_| uniform_vec(d, 0.1, &mut rng)).collect();
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::random(d, &mut rng),
                wq: Linear::random(d, d, &mut rng),
                wk: Linear::random(d, d, &mut rng),
                wv: Linear::random(d, d, &mut rng),
                wo: Linear::random(d, d, &mut rng),
                ln2: LayerNorm::random(d, &mut rng),
                w_in: Linear::random(ff, d, &mut rng),
                b_in: uniform_vec(ff, 0.02, &mut rng),
                w_out: Linear::random(d, ff, &mut rng),
                b_out: uniform_vec(d, 0.02, &mut rng),
            })
            .collect();
        let ln_final = LayerNorm::random(d, &mut rng);
        let unembed_w = Linear::random(v, d, &mut rng);

        let mut config = config;
        config.vocab = vocab.tokens().to_vec();
        Ok(Self {
            config,
            vocab,
            tok_emb,
            pos_emb,
            blocks,
            ln_final,
            unembed_w,
        })
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.vocab.tokenize(text)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        self.vocab.detokenize(ids)
    }

    /// Named parameter tensors in a fixed order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let flat = |rows: &[Vec<f64>]| rows.concat();
        let mut out = vec![
            (
                "tok_emb".to_string(),
                vec![self.tok_emb.len(), self.config.d_model],
                flat(&self.tok_emb),
            ),
            (
                "pos_emb".to_string(),
                vec![self.pos_emb.len(), self.config.d_model],
                flat(&self.pos_emb),
            ),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let lin = |name: &str, l: &Linear| (format!("blocks.{i}.{name}"), vec![l.out, l.inp], l.w.clone());
            let vec1 = |name: &str, v: &Vec<f64>| (format!("blocks.{i}.{name}"), vec![v.len()], v.clone());
            out.push(vec1("ln1.gain", &b.ln1.gain));
            out.push(vec1("ln1.bias", &b.ln1.bias));
            out.push(lin("wq", &b.wq));
            out.push(lin("wk", &b.wk));
            out.push(lin("wv", &b.wv));
            out.push(lin("wo", &b.wo));
            out.push(vec1("ln2.gain", &b.ln2.gain));
            out.push(vec1("ln2.bias", &b.ln2.bias));
            out.push(lin("w_in", &b.w_in));
            out.push(vec1("b_in", &b.b_in));
            out.push(lin("w_out", &b.w_out));
            out.push(vec1("b_out", &b.b_out));
        }
        out.push(("ln_final.gain".into(), vec![self.config.d_model], self.ln_final.gain.clone()));
        out.push(("ln_final.bias".into(), vec![self.config.d_model], self.ln_final.bias.clone()));
        out.push((
            "unembed".into(),
            vec![self.unembed_w.out, self.unembed_w.inp],
            self.unembed_w.w.clone(),
        ));
        out
    }

    /// SHA-256 over every parameter (little-endian f64, fixed order), hex.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (_, _, values) in self.tensors() {
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("token sequence is empty".into()));
        }
        if tokens.len() > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
                statement: None,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocab")));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| {
                self.tok_emb[t as usize]
                    .iter()
                    .zip(&self.pos_emb[p])
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect()
    }

    fn attention(&self, block: &Block, stream: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (d, heads) = (self.config.d_model, self.config.n_heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let normed: Vec<Vec<f64>> = stream.iter().map(|h| block.ln1.apply(h)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|x| block.wq.apply(x)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|x| block.wk.apply(x)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|x| block.wv.apply(x)).collect();

        (0..stream.len())
            .map(|pos| {
                let mut mixed = vec![0.0; d];
                for h in 0..heads {
                    let r = h * dh..(h + 1) * dh;
                    // Causal: position `pos` attends to 0..=pos.
                    let scores: Vec<f64> = (0..=pos).map(|j| dot(&q[pos][r.clone()], &k[j][r.clone()]) * scale).collect();
                    let weights = softmax(&scores, 1.0);
                    for (j, w) in weights.iter().enumerate() {
                        for (m, vv) in mixed[r.clone()].iter_mut().zip(&v[j][r.clone()]) {
                            *m += w * vv;
                        }
                    }
                }
                block.wo.apply(&mixed)
            })
            .collect()
    }

    fn feed_forward(&self, block: &Block, x: &[f64]) -> Vec<f64> {
        let normed = block.ln2.apply(x);
        let hidden: Vec<f64> = block
            .w_in
            .apply(&normed)
            .iter()
            .zip(&block.b_in)
            .map(|(z, b)| gelu(z + b))
            .collect();
        block
            .w_out
            .apply(&hidden)
            .iter()
            .zip(&block.b_out)
            .map(|(z, b)| z + b)
            .collect()
    }

    /// The attention and feed-forward contributions of block `layer`
    /// (1-based) applied to `stream`, as `(mha, ffn)` per position.
    pub fn block_contributions(&self, layer: usize, stream: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let block = &self.blocks[layer - 1];
        let mha = self.attention(block, stream);
        let ffn = stream
            .iter()
            .zip(&mha)
            .map(|(h, a)| {
                let mid: Vec<f64> = h.iter().zip(a).map(|(x, y)| x + y).collect();
                self.feed_forward(block, &mid)
            })
            .collect();
        (mha, ffn)
    }

    pub fn forward(&self, tokens: &[TokenId], hooks: Option<&Hooks<'_>>) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        let mut stream = self.embed(tokens);
        if let Some(h) = hooks {
            h.run(0, &mut stream);
        }
        let mut hidden = Vec::with_capacity(self.config.n_layers + 1);
        hidden.push(stream.clone());
        for layer in 1..=self.config.n_layers {
            let (mha, ffn) = self.block_contributions(layer, &stream);
            for ((h, a), f) in stream.iter_mut().zip(&mha).zip(&ffn) {
                for ((x, y), z) in h.iter_mut().zip(a).zip(f) {
                    *x = *x + y + z;
                }
            }
            if let Some(h) = hooks {
                h.run(layer, &mut stream);
            }
            hidden.push(stream.clone());
        }
        let logits = stream.iter().map(|h| self.unembed(h)).collect();
        Ok(ForwardTrace {
            tokens: tokens.to_vec(),
            hidden,
            logits,
        })
    }

    /// Final layer norm followed by the unembedding matrix.
    pub fn unembed(&self, h: &[f64]) -> Vec<f64> {
        self.unembed_w.apply(&self.ln_final.apply(h))
    }

    /// The final layer norm alone, for callers that want the normalized state.
    pub fn final_norm(&self, h: &[f64]) -> Vec<f64> {
        self.ln_final.apply(h)
    }

    /// Row `token` of the unembedding matrix.
    pub fn unembedding_row(&self, token: TokenId) -> &[f64] {
        self.unembed_w.row(token as usize)
    }

    /// Generated ids (prompt excluded).
    ///
    /// Stops at `max_new_tokens`, at `<eos>`, or when the context reaches
    /// `max_seq`.
    pub fn generate(&self, prompt: &[TokenId], params: &GenParams, hooks: Option<&Hooks<'_>>) -> Result<Vec<TokenId>> {
        Ok(self.generate_steps(prompt, params, hooks)?.into_iter().map(|s| s.token).collect())
    }

    /// Like [`generate`](Self::generate) but also returns the raw
    /// (pre-penalty) next-token logits at every step.
    pub fn generate_steps(&self, prompt: &[TokenId], params: &GenParams, hooks: Option<&Hooks<'_>>) -> Result<Vec<GenStep>> {
        params.validate()?;
        self.check_tokens(prompt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut context = prompt.to_vec();
        let mut steps: Vec<GenStep> = Vec::new();
        let eos = self.vocab.eos();
        while steps.len() < params.max_new_tokens && context.len() < self.config.max_seq {
            let trace = self.forward(&context, hooks)?;
            let raw = trace.last_logits().to_vec();
            let mut logits = raw.clone();
            let emitted: Vec<TokenId> = steps.iter().map(|s| s.token).collect();
            apply_repetition_penalty(&mut logits, &emitted, params.repetition_penalty);
            let next = if params.temperature == 0.0 {
                argmax(&logits)
            } else {
                sample_index(&softmax(&logits, params.temperature), &mut rng)
            } as TokenId;
            steps.push(GenStep {
                token: next,
                logits: raw,
            });
            if next == eos {
                break;
            }
            context.push(next);
        }
        Ok(steps)
    }

    // -- weight files ------------------------------------------------------

    pub fn to_container(&self) -> Container {
        let tensors = self.tensors();
        let meta = serde_json::json!({
            "section": Section::Weights.tag(),
            "config": {
                "n_layers": self.config.n_layers,
                "d_model": self.config.d_model,
                "n_heads": self.config.n_heads,
                "d_ff": self.config.d_ff,
                "max_seq": self.config.max_seq,
                "seed": self.config.seed,
            },
            "vocab": self.vocab.tokens(),
            "tensors": tensors.iter().map(|(n, s, _)| serde_json::json!({"name": n, "shape": s})).collect::<Vec<_>>(),
        });
        let mut payload = Vec::new();
        for (_, _, values) in &tensors {
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        Container {
            d_model: self.config.d_model as u32,
            n_layers: self.config.n_layers as u32,
            count: tensors.len() as u64,
            meta,
            payload,
        }
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, actv::encode(&self.to_container()))?;
        Ok(())
    }

    /// Loads a weight file written by [`save_weights`](Self::save_weights)
    /// (or by an external trainer using the same layout).
    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let c = actv::decode(&std::fs::read(path)?)?;
        Self::from_container(&c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        Section::expect(&c.meta, Section::Weights)?;
        #[derive(Deserialize)]
        struct Shape {
            n_layers: usize,
            d_model: usize,
            n_heads: usize,
            d_ff: usize,
            max_seq: usize,
            seed: u64,
        }
        let shape: Shape = serde_json::from_value(c.meta["config"].clone())?;
        let vocab: Vec<String> = serde_json::from_value(c.meta["vocab"].clone())?;
        let config = ToyLmConfig {
            n_layers: shape.n_layers,
            d_model: shape.d_model,
            n_heads: shape.n_heads,
            d_ff: shape.d_ff,
            max_seq: shape.max_seq,
            seed: shape.seed,
            vocab,
        };
        // Build for shapes, then overwrite every tensor from the payload.
        let mut model = ToyLm::build(config)?;
        let expected = model.tensors();
        if c.payload.len() != expected.iter().map(|t| t.2.len() * 8).sum::<usize>() {
            return Err(Error::Format("weight payload size does not match config".into()));
        }
        let mut values = c.payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = values.by_ref().take(n).collect();
            crate::numkit::ensure_finite(&v, "weights")?;
            Ok(v)
        };
        let d = model.config.d_model;
        model.tok_emb = take(model.tok_emb.len() * d)?.chunks(d).map(<[f64]>::to_vec).collect();
        model.pos_emb = take(model.pos_emb.len() * d)?.chunks(d).map(<[f64]>::to_vec).collect();
        for b in &mut model.blocks {
            b.ln1.gain = take(d)?;
            b.ln1.bias = take(d)?;
            b.wq.w = take(b.wq.w.len())?;
            b.wk.w = take(b.wk.w.len())?;
            b.wv.w = take(b.wv.w.len())?;
            b.wo.w = take(b.wo.w.len())?;
            b.ln2.gain = take(d)?;
            b.ln2.bias = take(d)?;
            b.w_in.w = take(b.w_in.w.len())?;
            b.b_in = take(b.b_in.len())?;
            b.w_out.w = take(b.w_out.w.len())?;
            b.b_out = take(b.b_out.len())?;
        }
        model.ln_final.gain = take(d)?;
        model.ln_final.bias = take(d)?;
        model.unembed_w.w = take(model.unembed_w.w.len())?;
        Ok(model)
    }
}

/// One decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct GenStep {
    pub token: TokenId,
    pub logits: Vec<f64>,
}
