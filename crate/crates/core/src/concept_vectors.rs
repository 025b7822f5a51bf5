// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-(method, dimension, layer) concept vectors.
//!
//! Three learners turn the train split of an [`ActivationSet`] into a unit
//! direction whose positive side is the left-leaning concept:
//!
//! * **CAA**: normalized difference of class means.
//! * **RepE**: first principal component of paired left − right
//!   differences. Pairs are formed by sorting each class by
//!   `statement_ref` and zipping; unpaired surplus is dropped. Consecutive
//!   rows alternate sign so that centering keeps the contrast axis, and the
//!   result is oriented so the mean unsigned difference projects positively.
//! * **Probe**: L2 logistic regression with Left = 1; the normalized weight
//!   vector is the direction and the intercept is kept for detection.
//!
//! Every vector also stores the training centroid at its layer, which
//! detection uses to center projections.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation_store::ActivationSet;
use crate::actv::{self, Container, Section};
use crate::corpus::{Dimension, Leaning, Split};
use crate::error::{Error, Result};
use crate::numkit::{self, dot, ensure_finite, fit_logistic, mean_of, normalize, sub, Matrix};

/// Below this pre-normalization magnitude a learned vector is degenerate.
pub const DEGENERATE_NORM: f64 = 1e-10;
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Caa,
    Repe,
    Probe,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Caa, Method::Repe, Method::Probe];

    pub fn id(self) -> &'static str {
        match self {
            Method::Caa => "caa",
            Method::Repe => "repe",
            Method::Probe => "probe",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "caa" => Ok(Method::Caa),
            "repe" => Ok(Method::Repe),
            "probe" | "prob" => Ok(Method::Probe),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// What a vector was trained to separate: one dimension, or left vs right
/// pooled over all dimensions (the single-axis baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    Dim(Dimension),
    Pooled,
}

impl Axis {
    pub fn matches(self, d: Dimension) -> bool {
        match self {
            Axis::Dim(x) => x == d,
            Axis::Pooled => true,
        }
    }

    pub fn dimension(self) -> Option<Dimension> {
        match self {
            Axis::Dim(d) => Some(d),
            Axis::Pooled => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Dim(d) => write!(f, "{d}"),
            Axis::Pooled => f.write_str("all"),
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("all") {
            Ok(Axis::Pooled)
        } else {
            s.parse().map(Axis::Dim)
        }
    }
}

impl Serialize for Axis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Axis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// [`ActivationSet::id`] of the training data.
    pub set_id: String,
    /// Hash of the learner settings (method, lambda, template).
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVector {
    pub method: Method,
    pub axis: Axis,
    pub layer: usize,
    /// Unit vector; positive side = left-leaning concept.
    pub direction: Vec<f64>,
    /// Magnitude before normalization: ‖mean difference‖ for CAA, mean paired
    /// difference along the axis for RepE, ‖w‖ for the probe.
    pub raw_norm: f64,
    /// Centroid of the training records used.
    pub train_mean: Vec<f64>,
    /// Probe bias; zero for the other methods.
    pub intercept: f64,
    pub provenance: Provenance,
}

impl ConceptVector {
    pub fn key(&self) -> VectorKey {
        VectorKey {
            method: self.method,
            axis: self.axis,
            layer: self.layer,
        }
    }

    /// `(h − train_mean)·direction`.
    pub fn centered_projection(&self, h: &[f64]) -> f64 {
        dot(h, &self.direction) - dot(&self.train_mean, &self.direction)
    }
}

/// Learner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub lambda: f64,
    /// Hash of the prompt template the activations were extracted with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            template_hash: None,
        }
    }
}

impl LearnConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    fn hash(&self, method: Method) -> String {
        let lambda = if method == Method::Probe { self.lambda } else { 0.0 };
        let text = format!(
            "method={method};lambda={lambda:e};template={}",
            self.template_hash.as_deref().unwrap_or("-")
        );
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

// ---------------------------------------------------------------------------
// Training data selection
// ---------------------------------------------------------------------------

/// Train-split vectors of one layer, grouped by class and ordered by
/// `statement_ref`.
pub struct ClassData<'a> {
    pub axis: Axis,
    pub layer: usize,
    pub left: Vec<(u64, &'a [f64])>,
    pub right: Vec<(u64, &'a [f64])>,
    d_model: usize,
}

impl<'a> ClassData<'a> {
    pub fn gather(set: &'a ActivationSet, axis: Axis, layer: usize) -> Result<Self> {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for r in set.select(layer, axis.dimension(), Split::Train) {
            let entry = (r.statement_ref, r.vector.as_slice());
            match r.label {
                Leaning::Left => left.push(entry),
                Leaning::Right => right.push(entry),
            }
        }
        left.sort_by_key(|e| e.0);
        right.sort_by_key(|e| e.0);
        for (class, leaning) in [(&left, Leaning::Left), (&right, Leaning::Right)] {
            if class.is_empty() {
                return Err(Error::MissingClass {
                    axis: axis.to_string(),
                    layer,
                    leaning,
                });
            }
        }
        Ok(Self {
            axis,
            layer,
            left,
            right,
            d_model: set.d_model(),
        })
    }

    fn mean(&self, leaning: Leaning) -> Vec<f64> {
        let class = match leaning {
            Leaning::Left => &self.left,
            Leaning::Right => &self.right,
        };
        mean_of(class.iter().map(|e| e.1), self.d_model)
    }

    fn centroid(&self) -> Vec<f64> {
        mean_of(self.left.iter().chain(&self.right).map(|e| e.1), self.d_model)
    }

    /// Unsigned `left − right` rows of the sorted-zip pairing.
    pub fn paired_differences(&self) -> Vec<Vec<f64>> {
        self.left.iter().zip(&self.right).map(|(l, r)| sub(l.1, r.1)).collect()
    }
}

fn finish(
    method: Method,
    data: &ClassData<'_>,
    direction: Vec<f64>,
    raw_norm: f64,
    intercept: f64,
    set: &ActivationSet,
    cfg: &LearnConfig,
) -> ConceptVector {
    ConceptVector {
        method,
        axis: data.axis,
        layer: data.layer,
        direction,
        raw_norm,
        train_mean: data.centroid(),
        intercept,
        provenance: Provenance {
            set_id: set.id(),
            config_hash: cfg.hash(method),
        },
    }
}

// ---------------------------------------------------------------------------
// Learners
// ---------------------------------------------------------------------------

pub fn learn_caa(set: &ActivationSet, dimension: Dimension, layer: usize) -> Result<ConceptVector> {
    learn_with(Method::Caa, set, Axis::Dim(dimension), layer, &LearnConfig::default())
}

pub fn learn_repe(set: &ActivationSet, dimension: Dimension, layer: usize) -> Result<ConceptVector> {
    learn_with(Method::Repe, set, Axis::Dim(dimension), layer, &LearnConfig::default())
}

pub fn learn_probe(set: &ActivationSet, dimension: Dimension, layer: usize, lambda: f64) -> Result<ConceptVector> {
    learn_with(Method::Probe, set, Axis::Dim(dimension), layer, &LearnConfig::with_lambda(lambda))
}

/// Learns one vector for any method and axis.
pub fn learn_with(
    method: Method,
    set: &ActivationSet,
    axis: Axis,
    layer: usize,
    cfg: &LearnConfig,
) -> Result<ConceptVector> {
    let data = ClassData::gather(set, axis, layer)?;
    match method {
        Method::Caa => caa(&data, set, cfg),
        Method::Repe => repe(&data, set, cfg),
        Method::Probe => probe(&data, set, cfg),
    }
}

fn caa(data: &ClassData<'_>, set: &ActivationSet, cfg: &LearnConfig) -> Result<ConceptVector> {
    let diff = sub(&data.mean(Leaning::Left), &data.mean(Leaning::Right));
    let raw = numkit::norm(&diff);
    if !(raw > DEGENERATE_NORM) {
        return Err(Error::DegenerateVector(raw));
    }
    let direction = diff.iter().map(|x| x / raw).collect();
    Ok(finish(Method::Caa, data, direction, raw, 0.0, set, cfg))
}

fn repe(data: &ClassData<'_>, set: &ActivationSet, cfg: &LearnConfig) -> Result<ConceptVector> {
    let diffs = data.paired_differences();
    if diffs.len() < 2 {
        return Err(Error::TooFewPairs {
            needed: 2,
            found: diffs.len(),
        });
    }
    let signed: Vec<Vec<f64>> = diffs
        .iter()
        .enumerate()
        .map(|(i, d)| if i % 2 == 0 { d.clone() } else { d.iter().map(|x| -x).collect() })
        .collect();
    let mut direction = numkit::principal_component(&Matrix::from_rows(&signed)?)?;

    let mean_diff = mean_of(diffs.iter().map(Vec::as_slice), set.d_model());
    let mean_projection = dot(&mean_diff, &direction);
    if mean_projection < 0.0 {
        direction.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(finish(Method::Repe, data, direction, mean_projection.abs(), 0.0, set, cfg))
}

fn probe(data: &ClassData<'_>, set: &ActivationSet, cfg: &LearnConfig) -> Result<ConceptVector> {
    let rows: Vec<&[f64]> = data.left.iter().chain(&data.right).map(|e| e.1).collect();
    let labels: Vec<bool> = std::iter::repeat_n(true, data.left.len())
        .chain(std::iter::repeat_n(false, data.right.len()))
        .collect();
    let model = fit_logistic(&Matrix::from_rows(&rows)?, &labels, cfg.lambda)?;
    if !model.converged {
        return Err(Error::NoConvergence {
            iterations: model.iterations,
            grad_norm: model.grad_norm,
        });
    }
    let (direction, raw) = normalize(&model.weights).map_err(|_| Error::DegenerateVector(numkit::norm(&model.weights)))?;
    Ok(finish(Method::Probe, data, direction, raw, model.intercept, set, cfg))
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VectorKey {
    pub method: Method,
    pub axis: Axis,
    pub layer: usize,
}

impl fmt::Display for VectorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/L{}", self.method, self.axis, self.layer)
    }
}

/// At most one vector per (method, axis, layer).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorRegistry {
    vectors: BTreeMap<VectorKey, ConceptVector>,
}

impl VectorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `v`, returning the vector it replaced.
    pub fn insert(&mut self, v: ConceptVector) -> Option<ConceptVector> {
        self.vectors.insert(v.key(), v)
    }

    pub fn get(&self, method: Method, axis: Axis, layer: usize) -> Option<&ConceptVector> {
        self.vectors.get(&VectorKey { method, axis, layer })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConceptVector> {
        self.vectors.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &VectorKey> {
        self.vectors.keys()
    }

    pub fn d_model(&self) -> Option<usize> {
        self.vectors.values().next().map(|v| v.direction.len())
    }

    pub fn to_container(&self) -> Container {
        #[derive(Serialize)]
        struct Entry<'a> {
            method: Method,
            axis: Axis,
            layer: usize,
            provenance: &'a Provenance,
        }
        let d_model = self.d_model().unwrap_or(0);
        let entries: Vec<Entry<'_>> = self
            .vectors
            .values()
            .map(|v| Entry {
                method: v.method,
                axis: v.axis,
                layer: v.layer,
                provenance: &v.provenance,
            })
            .collect();
        let mut payload = Vec::with_capacity(self.len() * (16 + 16 * d_model));
        for v in self.vectors.values() {
            payload.extend_from_slice(&v.raw_norm.to_le_bytes());
            payload.extend_from_slice(&v.intercept.to_le_bytes());
            for x in v.direction.iter().chain(&v.train_mean) {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        Container {
            d_model: d_model as u32,
            n_layers: self.vectors.keys().map(|k| k.layer).max().unwrap_or(0) as u32,
            count: self.len() as u64,
            meta: serde_json::json!({
                "section": Section::Registry.tag(),
                "entries": entries,
            }),
            payload,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        Section::expect(&c.meta, Section::Registry)?;
        #[derive(Deserialize)]
        struct Entry {
            method: Method,
            axis: Axis,
            layer: usize,
            provenance: Provenance,
        }
        let entries: Vec<Entry> = serde_json::from_value(c.meta["entries"].clone())
            .map_err(|e| Error::Format(format!("registry entries: {e}")))?;
        if entries.len() as u64 != c.count {
            return Err(Error::Format("registry entry count disagrees with header".into()));
        }
        let d = c.d_model as usize;
        let mut values = c
            .payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let mut reg = VectorRegistry::new();
        for e in entries {
            let raw_norm = values.next().unwrap_or(f64::NAN);
            let intercept = values.next().unwrap_or(f64::NAN);
            let direction: Vec<f64> = values.by_ref().take(d).collect();
            let train_mean: Vec<f64> = values.by_ref().take(d).collect();
            ensure_finite(&[raw_norm, intercept], "registry")?;
            ensure_finite(&direction, "registry")?;
            ensure_finite(&train_mean, "registry")?;
            let v = ConceptVector {
                method: e.method,
                axis: e.axis,
                layer: e.layer,
                direction,
                raw_norm,
                train_mean,
                intercept,
                provenance: e.provenance,
            };
            if reg.insert(v).is_some() {
                return Err(Error::Format("duplicate registry key".into()));
            }
        }
        Ok(reg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, actv::encode(&self.to_container()))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&actv::decode(&std::fs::read(path)?)?)
    }
}

/// One key that failed in [`learn_all`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnFailure {
    pub key: VectorKey,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LearnOutcome {
    pub registry: VectorRegistry,
    pub failures: Vec<LearnFailure>,
}

/// Learns every (method, dimension, layer) combination. Failures are
/// collected per key instead of aborting.
pub fn learn_all(set: &ActivationSet, methods: &[Method], cfg: &LearnConfig) -> LearnOutcome {
    let mut out = LearnOutcome::default();
    let layers = set.layers();
    for &method in methods {
        for dim in Dimension::ALL {
            for &layer in &layers {
                let axis = Axis::Dim(dim);
                match learn_with(method, set, axis, layer, cfg) {
                    Ok(v) => {
                        out.registry.insert(v);
                    }
                    Err(e) => out.failures.push(LearnFailure {
                        key: VectorKey { method, axis, layer },
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }
    out
}

/// True when centered left-class train projections average at least as
/// high as right-class ones (the left-positive sign convention).
pub fn sign_convention_holds(v: &ConceptVector, set: &ActivationSet) -> bool {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for r in set.select(v.layer, v.axis.dimension(), Split::Train) {
        let k = r.label.code() as usize;
        sums[k] += v.centered_projection(&r.vector);
        counts[k] += 1;
    }
    counts[0] > 0 && counts[1] > 0 && sums[0] / counts[0] as f64 >= sums[1] / counts[1] as f64
}
