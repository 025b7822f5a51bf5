// SPDX-License-Identifier: MIT OR Apache-2.0

//! Labeled per-layer activation datasets.
//!
//! An [`ActivationSet`] holds one last-token hidden vector per
//! (statement, layer) together with the statement's labels. Sets come from
//! three places: [`extract`] runs the toy model over a statement set,
//! [`plant_synthetic`] builds data with known class directions, and
//! [`load_actv`] reads files written by this crate or by the external
//! exporter.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::actv::{self, Container, Section};
use crate::corpus::{compose_prompt, Dimension, Leaning, PromptTemplate, Split, StatementSet, Taxonomy};
use crate::error::{Error, Result};
use crate::numkit::{dot, ensure_finite, norm, normalize};
use crate::toy_lm::{ToyLm, Vocab};

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub statement_ref: u64,
    pub layer: usize,
    pub vector: Vec<f64>,
    pub label: Leaning,
    pub dimension: Dimension,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Toy,
    Planted,
    Exported,
}

fn unknown_model() -> String {
    "unknown".into()
}

fn exported() -> Source {
    Source::Exported
}

/// Set-level metadata; everything except `d_model`/`n_layers` travels in
/// the container's JSON block. Unrecognized keys survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMeta {
    #[serde(default = "unknown_model")]
    pub model_id: String,
    #[serde(skip)]
    pub d_model: usize,
    #[serde(skip)]
    pub n_layers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "exported")]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// Records plus metadata. Treated as immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub meta: ActivationMeta,
    pub records: Vec<ActivationRecord>,
}

impl ActivationSet {
    /// Validates shapes and finiteness.
    pub fn new(meta: ActivationMeta, records: Vec<ActivationRecord>) -> Result<Self> {
        for r in &records {
            if r.vector.len() != meta.d_model {
                return Err(Error::DimensionMismatch {
                    expected: meta.d_model,
                    found: r.vector.len(),
                });
            }
            if r.layer > meta.n_layers {
                return Err(Error::LayerOutOfRange {
                    layer: r.layer,
                    n_layers: meta.n_layers,
                });
            }
            ensure_finite(&r.vector, "activation record")?;
        }
        Ok(Self { meta, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_model(&self) -> usize {
        self.meta.d_model
    }

    /// Distinct layers present, ascending.
    pub fn layers(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.layer).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Distinct dimensions present.
    pub fn dimensions(&self) -> Vec<Dimension> {
        self.records.iter().map(|r| r.dimension).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn at_layer(&self, layer: usize) -> impl Iterator<Item = &ActivationRecord> {
        self.records.iter().filter(move |r| r.layer == layer)
    }

    pub fn select(
        &self,
        layer: usize,
        dimension: Option<Dimension>,
        split: Split,
    ) -> impl Iterator<Item = &ActivationRecord> {
        self.records.iter().filter(move |r| {
            r.layer == layer && r.split == split && dimension.is_none_or(|d| r.dimension == d)
        })
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.records.iter().any(|r| r.split == split)
    }

    /// Content hash (first 16 hex chars of SHA-256 over metadata and f64 values).
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.meta).expect("meta serializes"));
        h.update((self.meta.d_model as u64).to_le_bytes());
        h.update((self.meta.n_layers as u64).to_le_bytes());
        for r in &self.records {
            h.update(r.statement_ref.to_le_bytes());
            h.update((r.layer as u64).to_le_bytes());
            h.update([r.label.code(), r.dimension.code(), r.split.code()]);
            for v in &r.vector {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// The same set with every value rounded through `f32`, i.e. exactly what
    /// a save/load cycle yields.
    pub fn quantized(&self) -> ActivationSet {
        let mut out = self.clone();
        for r in &mut out.records {
            for v in &mut r.vector {
                *v = *v as f32 as f64;
            }
        }
        out
    }

    /// Returns a copy with every vector shifted by `offset`.
    pub fn translated(&self, offset: &[f64]) -> ActivationSet {
        let mut out = self.clone();
        for r in &mut out.records {
            for (v, o) in r.vector.iter_mut().zip(offset) {
                *v += o;
            }
        }
        out
    }

    // -- ACTV --------------------------------------------------------------

    pub fn to_container(&self) -> Container {
        let mut meta = serde_json::to_value(&self.meta).expect("meta serializes");
        let obj = meta.as_object_mut().expect("meta is an object");
        obj.insert("section".into(), Section::Activations.tag().into());
        obj.insert("labels".into(), serde_json::json!(["left", "right"]));
        obj.insert("dimensions".into(), serde_json::json!(["eco", "dip", "civil", "soc"]));
        obj.insert("splits".into(), serde_json::json!(["train", "test", "ood"]));

        let rec_len = Section::activation_record_len(self.meta.d_model as u32) as usize;
        let mut payload = Vec::with_capacity(self.records.len() * rec_len);
        for r in &self.records {
            payload.extend_from_slice(&r.statement_ref.to_le_bytes());
            payload.extend_from_slice(&(r.layer as u16).to_le_bytes());
            payload.extend_from_slice(&[r.label.code(), r.dimension.code(), r.split.code()]);
            for &v in &r.vector {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Container {
            d_model: self.meta.d_model as u32,
            n_layers: self.meta.n_layers as u32,
            count: self.records.len() as u64,
            meta,
            payload,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        Section::expect(&c.meta, Section::Activations)?;
        let mut meta_json = c.meta.clone();
        let obj = meta_json.as_object_mut().expect("validated object");
        for key in ["section", "labels", "dimensions", "splits"] {
            obj.remove(key);
        }
        let mut meta: ActivationMeta =
            serde_json::from_value(meta_json).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        meta.d_model = c.d_model as usize;
        meta.n_layers = c.n_layers as usize;

        let d = meta.d_model;
        let rec_len = Section::activation_record_len(c.d_model) as usize;
        let mut records = Vec::with_capacity(c.count as usize);
        for (i, rec) in c.payload.chunks_exact(rec_len).enumerate() {
            let bad = |what: &str| Error::Format(format!("record {i}: bad {what} code"));
            let statement_ref = u64::from_le_bytes(rec[0..8].try_into().expect("8 bytes"));
            let layer = u16::from_le_bytes([rec[8], rec[9]]) as usize;
            let label = Leaning::from_code(rec[10]).ok_or_else(|| bad("label"))?;
            let dimension = Dimension::from_code(rec[11]).ok_or_else(|| bad("dimension"))?;
            let split = Split::from_code(rec[12]).ok_or_else(|| bad("split"))?;
            let vector = rec[13..13 + 4 * d]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            records.push(ActivationRecord {
                statement_ref,
                layer,
                vector,
                label,
                dimension,
                split,
            });
        }
        ActivationSet::new(meta, records)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        actv::encode(&self.to_container())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&actv::decode(bytes)?)
    }
}

pub fn save_actv(set: &ActivationSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, set.to_bytes())?;
    Ok(())
}

pub fn load_actv(path: impl AsRef<Path>) -> Result<ActivationSet> {
    ActivationSet::from_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// Vocabulary covering every prompt `statements` produce under `templates`.
pub fn corpus_vocab(statements: &StatementSet, templates: &[&PromptTemplate], taxonomy: &Taxonomy) -> Result<Vocab> {
    let mut texts = Vec::with_capacity(statements.len() * templates.len());
    for tpl in templates {
        for stmt in statements.iter() {
            texts.push(compose_prompt(stmt, tpl, taxonomy)?);
        }
    }
    Ok(Vocab::from_texts(texts.iter().map(String::as_str)))
}

/// Runs every statement through `model` (after composing `template`) and
/// keeps the final-position hidden state of layers `1..=n_layers`.
pub fn extract(
    model: &ToyLm,
    statements: &StatementSet,
    template: &PromptTemplate,
    taxonomy: &Taxonomy,
) -> Result<ActivationSet> {
    if statements.is_empty() {
        return Err(Error::InvalidArgument("no statements to extract".into()));
    }
    let n_layers = model.n_layers();
    let max = model.config().max_seq;
    let mut records = Vec::with_capacity(statements.len() * n_layers);
    for (i, stmt) in statements.iter().enumerate() {
        let prompt = compose_prompt(stmt, template, taxonomy)?;
        let ids = model.tokenize(&prompt);
        if ids.len() > max {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max,
                statement: Some(i),
            });
        }
        if ids.is_empty() {
            return Err(Error::InvalidArgument(format!("statement {i} tokenizes to nothing")));
        }
        let trace = model.forward(&ids, None)?;
        for layer in 1..=n_layers {
            records.push(ActivationRecord {
                statement_ref: i as u64,
                layer,
                vector: trace.last(layer).to_vec(),
                label: stmt.leaning,
                dimension: stmt.dimension,
                split: stmt.split,
            });
        }
    }
    let meta = ActivationMeta {
        model_id: format!("toy-{}", &model.checksum()[..12]),
        d_model: model.d_model(),
        n_layers,
        seed: model.config().seed,
        source: Source::Toy,
        template_hash: Some(template.hash()),
        extra: BTreeMap::new(),
    };
    ActivationSet::new(meta, records)
}

// ---------------------------------------------------------------------------
// Planted directions
// ---------------------------------------------------------------------------

fn default_test_fraction() -> f64 {
    0.2
}

fn default_offset_scale() -> f64 {
    2.0
}

/// Parameters of the planted-direction generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub d_model: usize,
    pub n_layers: usize,
    /// Statements per side, per dimension.
    pub per_side: usize,
    /// Class offset `s` along the planted direction.
    pub signal: f64,
    /// Per-coordinate Gaussian noise `σ`.
    pub noise: f64,
    pub seed: u64,
    /// Explicit unit directions; a random orthonormal set is drawn when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<BTreeMap<Dimension, Vec<f64>>>,
    /// Share of each side's statements marked `test` (the last ones by index).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Per-coordinate scale of the shared per-layer offset.
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
}

impl PlantSpec {
    pub fn new(d_model: usize, n_layers: usize, per_side: usize, signal: f64, noise: f64, seed: u64) -> Self {
        Self {
            d_model,
            n_layers,
            per_side,
            signal,
            noise,
            seed,
            directions: None,
            test_fraction: default_test_fraction(),
            offset_scale: default_offset_scale(),
        }
    }

    fn validate_shape(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.d_model < Dimension::ALL.len() {
            return bad("d_model must be at least 4");
        }
        if self.n_layers == 0 || self.n_layers > u16::MAX as usize {
            return bad("n_layers must lie in 1..=65535");
        }
        if self.per_side == 0 {
            return bad("per_side must be at least 1");
        }
        if !(self.signal > 0.0 && self.signal.is_finite()) {
            return bad("signal must be > 0");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be ≥ 0");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if !(self.offset_scale >= 0.0 && self.offset_scale.is_finite()) {
            return bad("offset_scale must be ≥ 0");
        }
        Ok(())
    }

    fn check_unit(&self, dirs: &BTreeMap<Dimension, Vec<f64>>) -> Result<()> {
        if dirs.len() != Dimension::ALL.len() {
            return Err(Error::InvalidSpec("directions must cover all four dimensions".into()));
        }
        for (d, v) in dirs {
            if v.len() != self.d_model {
                return Err(Error::InvalidSpec(format!("direction for {d} has wrong length")));
            }
            ensure_finite(v, "planted direction").map_err(|e| Error::InvalidSpec(e.to_string()))?;
            if (norm(v) - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidSpec(format!("direction for {d} is not unit length")));
            }
        }
        Ok(())
    }
}

/// Draws four orthonormal vectors (Gaussian draws, modified Gram–Schmidt applied twice).
fn random_orthonormal(d_model: usize, rng: &mut ChaCha8Rng) -> Result<BTreeMap<Dimension, Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for _ in Dimension::ALL {
        let mut v: Vec<f64> = (0..d_model).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        basis.push(normalize(&v)?.0);
    }
    Ok(Dimension::ALL.into_iter().zip(basis).collect())
}

/// Planted-direction data: for dimension `d` and layer `l`, left vectors are
/// `base_l + s·v_d + ε` and right vectors `base_l − s·v_d + ε`, with
/// `ε ~ N(0, σ²I)` and one shared `base_l` per layer. Returns the set and
/// the planted directions. Directions must be mutually orthogonal.
pub fn plant_synthetic(spec: &PlantSpec) -> Result<(ActivationSet, BTreeMap<Dimension, Vec<f64>>)> {
    if let Some(dirs) = &spec.directions {
        spec.check_unit(dirs)?;
        let v: Vec<&Vec<f64>> = dirs.values().collect();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                if dot(v[i], v[j]).abs() > 1e-8 {
                    return Err(Error::InvalidSpec("supplied directions are not mutually orthogonal".into()));
                }
            }
        }
    }
    generate(spec, true)
}

/// Like [`plant_synthetic`] but admits overlapping (non-orthogonal) unit
/// directions, for building confounded fixtures.
pub fn plant_with_directions(spec: &PlantSpec) -> Result<(ActivationSet, BTreeMap<Dimension, Vec<f64>>)> {
    match &spec.directions {
        Some(dirs) => spec.check_unit(dirs)?,
        None => return Err(Error::InvalidSpec("explicit directions required".into())),
    }
    generate(spec, false)
}

fn generate(spec: &PlantSpec, orthogonal: bool) -> Result<(ActivationSet, BTreeMap<Dimension, Vec<f64>>)> {
    spec.validate_shape()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions = match &spec.directions {
        Some(d) => d.clone(),
        None => random_orthonormal(spec.d_model, &mut rng)?,
    };
    let bases: Vec<Vec<f64>> = (0..spec.n_layers)
        .map(|_| {
            (0..spec.d_model)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.offset_scale * z
                })
                .collect()
        })
        .collect();

    let n_test = (spec.per_side as f64 * spec.test_fraction).round() as usize;
    let mut records = Vec::with_capacity(8 * spec.per_side * spec.n_layers);
    for (di, dim) in Dimension::ALL.into_iter().enumerate() {
        let v = &directions[&dim];
        for (si, (label, sign)) in [(Leaning::Left, 1.0), (Leaning::Right, -1.0)].into_iter().enumerate() {
            for i in 0..spec.per_side {
                let statement_ref = (di * 2 * spec.per_side + si * spec.per_side + i) as u64;
                let split = if i >= spec.per_side - n_test { Split::Test } else { Split::Train };
                for (l, base) in bases.iter().enumerate() {
                    let vector = base
                        .iter()
                        .zip(v)
                        .map(|(b, x)| {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            b + sign * spec.signal * x + spec.noise * eps
                        })
                        .collect();
                    records.push(ActivationRecord {
                        statement_ref,
                        layer: l + 1,
                        vector,
                        label,
                        dimension: dim,
                        split,
                    });
                }
            }
        }
    }

    let mut extra = BTreeMap::new();
    extra.insert("signal".into(), spec.signal.into());
    extra.insert("noise".into(), spec.noise.into());
    extra.insert("per_side".into(), (spec.per_side as u64).into());
    extra.insert("orthogonal".into(), orthogonal.into());
    let meta = ActivationMeta {
        model_id: "planted".into(),
        d_model: spec.d_model,
        n_layers: spec.n_layers,
        seed: spec.seed,
        source: Source::Planted,
        template_hash: None,
        extra,
    };
    Ok((ActivationSet::new(meta, records)?, directions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{mean_of, sub};

    #[test]
    fn noiseless_pairs_differ_by_twice_signal() {
        let mut spec = PlantSpec::new(8, 3, 1, 1.5, 0.0, 5);
        spec.test_fraction = 0.0;
        let (set, dirs) = plant_synthetic(&spec).unwrap();
        assert_eq!(set.len(), 4 * 2 * 3);
        for layer in 1..=3 {
            for dim in Dimension::ALL {
                let pick = |label| {
                    set.at_layer(layer)
                        .find(|r| r.dimension == dim && r.label == label)
                        .unwrap()
                        .vector
                        .clone()
                };
                let diff = sub(&pick(Leaning::Left), &pick(Leaning::Right));
                for (a, b) in diff.iter().zip(&dirs[&dim]) {
                    assert!((a - 3.0 * b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn random_directions_orthonormal() {
        let (_, dirs) = plant_synthetic(&PlantSpec::new(16, 1, 2, 1.0, 1.0, 11)).unwrap();
        let v: Vec<_> = dirs.values().collect();
        for i in 0..4 {
            assert!((norm(v[i]) - 1.0).abs() <= 1e-12);
            for j in i + 1..4 {
                assert!(dot(v[i], v[j]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn class_means_track_direction() {
        let (s, sigma, n) = (1.0, 0.5, 400);
        let (set, dirs) = plant_synthetic(&PlantSpec::new(12, 1, n, s, sigma, 3)).unwrap();
        let bound = 3.0 * sigma * (2.0f64 / n as f64).sqrt();
        for dim in Dimension::ALL {
            let mean = |label| {
                let v: Vec<&[f64]> = set
                    .at_layer(1)
                    .filter(|r| r.dimension == dim && r.label == label)
                    .map(|r| r.vector.as_slice())
                    .collect();
                mean_of(v, 12)
            };
            let diff = sub(&mean(Leaning::Left), &mean(Leaning::Right));
            for (a, b) in diff.iter().zip(&dirs[&dim]) {
                assert!((a - 2.0 * s * b).abs() <= bound, "{a} vs {}", 2.0 * s * b);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(plant_synthetic(&PlantSpec::new(3, 1, 1, 1.0, 0.0, 0)).is_err());
        assert!(plant_synthetic(&PlantSpec::new(8, 1, 1, 0.0, 0.0, 0)).is_err());
        assert!(plant_synthetic(&PlantSpec::new(8, 1, 1, 1.0, -1.0, 0)).is_err());
        let mut spec = PlantSpec::new(4, 1, 1, 1.0, 0.0, 0);
        let e = |i: usize| (0..4).map(|k| if k == i { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let mut dirs: BTreeMap<_, _> = Dimension::ALL.into_iter().enumerate().map(|(i, d)| (d, e(i))).collect();
        dirs.insert(Dimension::Soc, e(0));
        spec.directions = Some(dirs.clone());
        assert!(matches!(plant_synthetic(&spec), Err(Error::InvalidSpec(_))));
        assert!(plant_with_directions(&spec).is_ok());
    }

    #[test]
    fn splits_marked_per_side() {
        let (set, _) = plant_synthetic(&PlantSpec::new(8, 2, 10, 1.0, 1.0, 1)).unwrap();
        let test = set.select(1, Some(Dimension::Eco), Split::Test).count();
        assert_eq!(test, 4);
        assert_eq!(set.select(2, None, Split::Train).count(), 64);
    }

    #[test]
    fn container_round_trip_preserves_metadata() {
        let (set, _) = plant_synthetic(&PlantSpec::new(6, 2, 3, 1.0, 0.3, 9)).unwrap();
        let back = ActivationSet::from_bytes(&set.to_bytes()).unwrap();
        assert_eq!(back, set.quantized());
        assert_eq!(back.to_bytes(), set.to_bytes());
        assert_eq!(back.meta.extra["per_side"], serde_json::json!(3));
    }

    #[test]
    fn wrong_section_rejected() {
        let (set, _) = plant_synthetic(&PlantSpec::new(6, 1, 1, 1.0, 0.0, 9)).unwrap();
        let mut c = set.to_container();
        c.meta["section"] = "registry".into();
        assert!(ActivationSet::from_container(&c).is_err());
    }
}
