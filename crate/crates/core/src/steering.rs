// SPDX-License-Identifier: MIT OR Apache-2.0

//! Residual-stream steering of the toy model, distribution-shift reports,
//! logit-lens traces and steered generation.
//!
//! A plan adds `alpha · direction` to the residual stream right after the
//! chosen blocks. Directions are stored at unit norm, so `alpha` is measured
//! in units of the residual stream regardless of the learner that produced
//! the vector.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::concept_vectors::{Axis, ConceptVector, Method, VectorRegistry};
use crate::detection_analysis::principal_plane;
use crate::error::{Error, Result};
use crate::numkit::{self, dot};
use crate::toy_lm::{ForwardTrace, GenParams, Hooks, TokenId, ToyLm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionScope {
    #[default]
    AllPositions,
    LastPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub layer: usize,
    /// Unit direction.
    pub direction: Vec<f64>,
    pub alpha: f64,
    /// Free-form origin, e.g. `caa/eco/L3`.
    pub source: String,
}

/// Immutable once built; one injection per layer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SteeringPlan {
    injections: Vec<Injection>,
    pub scope: InjectionScope,
}

impl SteeringPlan {
    pub fn new(scope: InjectionScope) -> Self {
        Self {
            injections: Vec::new(),
            scope,
        }
    }

    /// Adds an injection; the direction is normalized.
    pub fn with(mut self, layer: usize, direction: &[f64], alpha: f64, source: impl Into<String>) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::NonFinite("alpha"));
        }
        numkit::ensure_finite(direction, "steering direction")?;
        if self.injections.iter().any(|i| i.layer == layer) {
            return Err(Error::InvalidArgument(format!("layer {layer} already has an injection")));
        }
        if let Some(first) = self.injections.first() {
            if first.direction.len() != direction.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.direction.len(),
                    found: direction.len(),
                });
            }
        }
        let (direction, _) = numkit::normalize(direction)?;
        self.injections.push(Injection {
            layer,
            direction,
            alpha,
            source: source.into(),
        });
        self.injections.sort_by_key(|i| i.layer);
        Ok(self)
    }

    /// Injects `v` at its own layer.
    pub fn with_vector(self, v: &ConceptVector, alpha: f64) -> Result<Self> {
        let source = v.key().to_string();
        self.with(v.layer, &v.direction, alpha, source)
    }

    /// One vector of the `(method, axis)` family per layer of `layers`,
    /// each injected at its own layer.
    pub fn band(reg: &VectorRegistry, method: Method, axis: Axis, layers: RangeInclusive<usize>, alpha: f64) -> Result<Self> {
        let mut plan = Self::default();
        let mut missing = Vec::new();
        for layer in layers {
            match reg.get(method, axis, layer) {
                Some(v) => plan = plan.with_vector(v, alpha)?,
                None => missing.push(format!("{method}/{axis}/L{layer}")),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingVectors(missing));
        }
        if plan.injections.is_empty() {
            return Err(Error::InvalidArgument("empty layer band".into()));
        }
        Ok(plan)
    }

    /// The same plan with every alpha multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.injections.iter_mut().for_each(|i| i.alpha *= factor);
        out
    }

    pub fn injections(&self) -> &[Injection] {
        &self.injections
    }

    pub fn is_empty(&self) -> bool {
        self.injections.is_empty()
    }

    /// True when no injection changes the stream.
    pub fn is_zero(&self) -> bool {
        self.injections.iter().all(|i| i.alpha == 0.0)
    }

    pub fn first_layer(&self) -> Option<usize> {
        self.injections.first().map(|i| i.layer)
    }

    pub fn validate(&self, model: &ToyLm) -> Result<()> {
        for i in &self.injections {
            if i.layer == 0 || i.layer > model.n_layers() {
                return Err(Error::LayerOutOfRange {
                    layer: i.layer,
                    n_layers: model.n_layers(),
                });
            }
            if i.direction.len() != model.d_model() {
                return Err(Error::DimensionMismatch {
                    expected: model.d_model(),
                    found: i.direction.len(),
                });
            }
        }
        Ok(())
    }

    /// Forward hooks for this plan. Zero-alpha injections register nothing.
    pub fn hooks(&self) -> Hooks<'_> {
        let scope = self.scope;
        self.injections
            .iter()
            .filter(|i| i.alpha != 0.0)
            .fold(Hooks::new(), |hooks, inj| {
                hooks.at(inj.layer, move |stream: &mut [Vec<f64>]| {
                    let start = match scope {
                        InjectionScope::AllPositions => 0,
                        InjectionScope::LastPosition => stream.len().saturating_sub(1),
                    };
                    for h in &mut stream[start..] {
                        for (x, u) in h.iter_mut().zip(&inj.direction) {
                            *x += inj.alpha * u;
                        }
                    }
                })
            })
    }

    /// The injection whose direction governs layer `j`: the nearest one at
    /// or before `j`, else the first.
    pub fn axis_for(&self, j: usize) -> Option<&Injection> {
        self.injections
            .iter()
            .rev()
            .find(|i| i.layer <= j)
            .or_else(|| self.injections.first())
    }

    pub fn describe(&self) -> String {
        if self.injections.is_empty() {
            return "none".into();
        }
        self.injections
            .iter()
            .map(|i| format!("L{}:{:+}:{}", i.layer, i.alpha, i.source))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Middle third of an `n_layers` model, 1-based and inclusive.
pub fn default_band(n_layers: usize) -> RangeInclusive<usize> {
    let lo = n_layers / 3 + 1;
    let hi = (2 * n_layers / 3).max(lo);
    lo..=hi.min(n_layers.max(1))
}

pub fn steer_forward(model: &ToyLm, tokens: &[TokenId], plan: &SteeringPlan) -> Result<ForwardTrace> {
    plan.validate(model)?;
    let hooks = plan.hooks();
    model.forward(tokens, (!hooks.is_empty()).then_some(&hooks))
}

/// KL(p ‖ q) between the temperature-1 softmaxes of two logit vectors, in nats.
pub fn kl_from_logits(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    kl.max(0.0)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

// ---------------------------------------------------------------------------
// Shift report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShift {
    pub layer: usize,
    /// Mean of `û·(steered − baseline)` over prompts at the last position.
    pub projected: f64,
    /// Centroid displacement in the baseline PCA plane of this layer.
    pub plane: [f64; 2],
    /// Direction used for `projected`.
    pub axis_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub plan: String,
    pub n_prompts: usize,
    pub layers: Vec<LayerShift>,
    /// Mean KL(steered ‖ baseline) of the final next-token distribution.
    pub kl: f64,
}

impl ShiftReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["layer", "projected", "plane_x", "plane_y", "kl", "axis"])?;
        for l in &self.layers {
            out.write_record([
                l.layer.to_string(),
                format!("{:.9}", l.projected),
                format!("{:.9}", l.plane[0]),
                format!("{:.9}", l.plane[1]),
                format!("{:.9}", self.kl),
                l.axis_source.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Compares steered and baseline last-token states over `prompts` at each
/// layer of `visualize`. `axes` overrides the projection direction per layer.
pub fn shift_report(
    model: &ToyLm,
    prompts: &[Vec<TokenId>],
    plan: &SteeringPlan,
    visualize: &[usize],
    axes: Option<&BTreeMap<usize, Vec<f64>>>,
) -> Result<ShiftReport> {
    plan.validate(model)?;
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("shift report needs at least one prompt".into()));
    }
    for &j in visualize {
        if j > model.n_layers() {
            return Err(Error::LayerOutOfRange {
                layer: j,
                n_layers: model.n_layers(),
            });
        }
    }
    let mut base = Vec::with_capacity(prompts.len());
    let mut steered = Vec::with_capacity(prompts.len());
    for p in prompts {
        base.push(model.forward(p, None)?);
        steered.push(steer_forward(model, p, plan)?);
    }
    let kl = base
        .iter()
        .zip(&steered)
        .map(|(b, s)| kl_from_logits(s.last_logits(), b.last_logits()))
        .sum::<f64>()
        / prompts.len() as f64;

    let d = model.d_model();
    let mut layers = Vec::with_capacity(visualize.len());
    for &j in visualize {
        let diffs: Vec<Vec<f64>> = base
            .iter()
            .zip(&steered)
            .map(|(b, s)| numkit::sub(s.last(j), b.last(j)))
            .collect();
        let mean_diff = numkit::mean_of(diffs.iter().map(Vec::as_slice), d);

        let (axis, axis_source) = match axes.and_then(|a| a.get(&j)) {
            Some(a) => (numkit::normalize(a)?.0, format!("custom/L{j}")),
            None => match plan.axis_for(j) {
                Some(inj) => (inj.direction.clone(), inj.source.clone()),
                None => (vec![0.0; d], "none".into()),
            },
        };
        if axis.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: axis.len(),
            });
        }
        let projected = dot(&axis, &mean_diff);

        let plane = if prompts.len() >= 3 {
            let rows: Vec<&[f64]> = base.iter().map(|b| b.last(j)).collect();
            match principal_plane(&rows) {
                Ok((_, ax, _)) => [dot(&ax[0], &mean_diff), dot(&ax[1], &mean_diff)],
                Err(Error::RankDeficient) => [0.0, 0.0],
                Err(e) => return Err(e),
            }
        } else {
            [0.0, 0.0]
        };
        layers.push(LayerShift {
            layer: j,
            projected,
            plane,
            axis_source,
        });
    }
    Ok(ShiftReport {
        plan: plan.describe(),
        n_prompts: prompts.len(),
        layers,
        kl,
    })
}

// ---------------------------------------------------------------------------
// Logit lens
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensCandidate {
    pub id: TokenId,
    pub token: String,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensLayer {
    pub layer: usize,
    pub top: Vec<LensCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensTrace {
    pub k: usize,
    pub plan: String,
    pub layers: Vec<LensLayer>,
}

impl LensTrace {
    pub fn top_ids(&self, layer: usize) -> Option<Vec<TokenId>> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)
            .map(|l| l.top.iter().map(|c| c.id).collect())
    }

    /// One row per layer, `k` token columns.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["layer".to_string()];
        header.extend((1..=self.k).map(|i| format!("top{i}")));
        out.write_record(&header)?;
        for l in &self.layers {
            let mut rec = vec![l.layer.to_string()];
            rec.extend(l.top.iter().map(|c| format!("{}:{:.4}", c.token, c.logit)));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Top-`k` ids of `logits`, highest first, ties by lower id.
pub fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Unembeds the last-position state of every layer `1..=n_layers`.
pub fn lens_trace(model: &ToyLm, tokens: &[TokenId], k: usize, plan: Option<&SteeringPlan>) -> Result<LensTrace> {
    if k == 0 || k > model.vocab().len() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            model.vocab().len()
        )));
    }
    let trace = match plan {
        Some(p) => steer_forward(model, tokens, p)?,
        None => model.forward(tokens, None)?,
    };
    let layers = (1..=model.n_layers())
        .map(|layer| {
            let logits = model.unembed(trace.last(layer));
            let top = top_k(&logits, k)
                .into_iter()
                .map(|i| LensCandidate {
                    id: i as TokenId,
                    token: model.vocab().token(i as TokenId).unwrap_or("<unk>").to_string(),
                    logit: logits[i],
                })
                .collect();
            LensLayer { layer, top }
        })
        .collect();
    Ok(LensTrace {
        k,
        plan: plan.map_or_else(|| "none".into(), SteeringPlan::describe),
        layers,
    })
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Sampling defaults for steered generation.
pub fn steering_gen_params(seed: u64) -> GenParams {
    GenParams {
        temperature: 0.2,
        repetition_penalty: 1.2,
        max_new_tokens: 100,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub plan: String,
    pub params: GenParams,
    pub prompt: String,
    pub tokens: Vec<TokenId>,
    pub text: String,
}

impl Transcript {
    /// Plain text with a `#`-prefixed metadata header.
    pub fn render(&self) -> String {
        format!(
            "# plan: {}\n# temperature: {}\n# repetition_penalty: {}\n# max_new_tokens: {}\n# seed: {}\n# prompt: {}\n\n{}\n",
            self.plan,
            self.params.temperature,
            self.params.repetition_penalty,
            self.params.max_new_tokens,
            self.params.seed,
            self.prompt,
            self.text
        )
    }
}

pub fn steered_generate(model: &ToyLm, prompt: &[TokenId], plan: &SteeringPlan, params: &GenParams) -> Result<Transcript> {
    plan.validate(model)?;
    let hooks = plan.hooks();
    let tokens = model.generate(prompt, params, (!hooks.is_empty()).then_some(&hooks))?;
    Ok(Transcript {
        plan: plan.describe(),
        params: params.clone(),
        prompt: model.detokenize(prompt),
        text: model.detokenize(&tokens),
        tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha_scale: f64,
    pub steps: usize,
    /// Mean over decoding steps of KL(steered ‖ unsteered) on the same context.
    pub mean_kl: f64,
    pub text: String,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["alpha", "steps", "mean_kl"])?;
    for r in rows {
        out.write_record([r.alpha_scale.to_string(), r.steps.to_string(), format!("{:.9}", r.mean_kl)])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs `plan.scaled(a)` for each `a` and reports the mean per-step
/// divergence from an unsteered forward over the steered context.
pub fn alpha_sweep(model: &ToyLm, prompt: &[TokenId], plan: &SteeringPlan, alphas: &[f64], params: &GenParams) -> Result<Vec<SweepRow>> {
    plan.validate(model)?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &a in alphas {
        if !a.is_finite() {
            return Err(Error::NonFinite("alpha"));
        }
        let scaled = plan.scaled(a);
        let hooks = scaled.hooks();
        let steps = model.generate_steps(prompt, params, (!hooks.is_empty()).then_some(&hooks))?;
        let mut context = prompt.to_vec();
        let mut total = 0.0;
        for s in &steps {
            let base = model.forward(&context, None)?;
            total += kl_from_logits(&s.logits, base.last_logits());
            context.push(s.token);
        }
        let tokens: Vec<TokenId> = steps.iter().map(|s| s.token).collect();
        rows.push(SweepRow {
            alpha_scale: a,
            steps: steps.len(),
            mean_kl: if steps.is_empty() { 0.0 } else { total / steps.len() as f64 },
            text: model.detokenize(&tokens),
        });
    }
    Ok(rows)
}
