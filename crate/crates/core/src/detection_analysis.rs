// SPDX-License-Identifier: MIT OR Apache-2.0

//! Detection accuracy, the single-axis baseline, cosine correlation grids,
//! disentanglement scores and 2-D PCA projections.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::activation_store::{plant_with_directions, ActivationSet, PlantSpec};
use crate::concept_vectors::{learn_with, Axis, ConceptVector, LearnConfig, Method, VectorRegistry};
use crate::corpus::{Dimension, Leaning, Split};
use crate::error::{Error, Result};
use crate::numkit::{self, dot, mean_of, sigmoid, Matrix};

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// CAA/RepE: Left iff the centered projection is strictly positive.
/// Probe: Left iff `sigmoid(raw_norm·(direction·h) + intercept) ≥ 0.5`.
pub fn classify(v: &ConceptVector, h: &[f64]) -> Result<Leaning> {
    if h.len() != v.direction.len() {
        return Err(Error::DimensionMismatch {
            expected: v.direction.len(),
            found: h.len(),
        });
    }
    let left = match v.method {
        Method::Caa | Method::Repe => v.centered_projection(h) > 0.0,
        Method::Probe => sigmoid(v.raw_norm * dot(&v.direction, h) + v.intercept) >= 0.5,
    };
    Ok(if left { Leaning::Left } else { Leaning::Right })
}

/// Accuracy of `v` over the records of `split` at its layer whose dimension
/// matches its axis. `None` when no record qualifies.
pub fn accuracy(v: &ConceptVector, set: &ActivationSet, split: Split) -> Result<Option<(f64, usize)>> {
    accuracy_on(v, set, v.axis.dimension(), split)
}

/// Like [`accuracy`] but over an explicit dimension filter.
pub fn accuracy_on(v: &ConceptVector, set: &ActivationSet, dimension: Option<Dimension>, split: Split) -> Result<Option<(f64, usize)>> {
    let mut hits = 0usize;
    let mut n = 0usize;
    for r in set.select(v.layer, dimension, split) {
        n += 1;
        if classify(v, &r.vector)? == r.label {
            hits += 1;
        }
    }
    Ok((n > 0).then(|| (hits as f64 / n as f64, n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEntry {
    pub method: Method,
    pub axis: Axis,
    pub layer: usize,
    pub split: Split,
    pub accuracy: f64,
    pub n: usize,
}

/// Best layer for one (method, dimension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestLayer {
    pub axis: Axis,
    pub layer: usize,
    pub accuracy: f64,
}

/// Mean and population variance of per-dimension best accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    pub variance: f64,
    pub best: Vec<BestLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub split: Split,
    pub entries: Vec<DetectionEntry>,
    pub summary: Vec<MethodSummary>,
}

impl DetectionReport {
    pub fn get(&self, method: Method, axis: Axis, layer: usize) -> Option<&DetectionEntry> {
        self.entries
            .iter()
            .find(|e| e.method == method && e.axis == axis && e.layer == layer)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["method", "dimension", "layer", "split", "accuracy", "n"])?;
        for e in &self.entries {
            out.write_record([
                e.method.to_string(),
                e.axis.to_string(),
                e.layer.to_string(),
                e.split.to_string(),
                format!("{:.6}", e.accuracy),
                e.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-method mean/variance rows.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["method", "split", "mean", "variance"])?;
        for s in &self.summary {
            out.write_record([
                s.method.to_string(),
                self.split.to_string(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.variance),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Accuracy of every registry vector on `split`, plus the per-method summary.
pub fn evaluate(reg: &VectorRegistry, set: &ActivationSet, split: Split) -> Result<DetectionReport> {
    if !set.has_split(split) {
        return Err(Error::EmptySplit(split));
    }
    if let Some(d) = reg.d_model() {
        if d != set.d_model() {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: set.d_model(),
            });
        }
    }
    let mut entries = Vec::new();
    for v in reg.iter() {
        if let Some((acc, n)) = accuracy(v, set, split)? {
            entries.push(DetectionEntry {
                method: v.method,
                axis: v.axis,
                layer: v.layer,
                split,
                accuracy: acc,
                n,
            });
        }
    }

    let mut best: BTreeMap<(Method, Axis), BestLayer> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.axis != Axis::Pooled) {
        let slot = best.entry((e.method, e.axis)).or_insert(BestLayer {
            axis: e.axis,
            layer: e.layer,
            accuracy: f64::NEG_INFINITY,
        });
        if e.accuracy > slot.accuracy {
            slot.layer = e.layer;
            slot.accuracy = e.accuracy;
        }
    }
    let mut summary = Vec::new();
    for method in Method::ALL {
        let rows: Vec<BestLayer> = best
            .iter()
            .filter(|((m, _), _)| *m == method)
            .map(|(_, b)| b.clone())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let mean = rows.iter().map(|b| b.accuracy).sum::<f64>() / n;
        let variance = rows.iter().map(|b| (b.accuracy - mean).powi(2)).sum::<f64>() / n;
        summary.push(MethodSummary {
            method,
            mean,
            variance,
            best: rows,
        });
    }
    Ok(DetectionReport { split, entries, summary })
}

// ---------------------------------------------------------------------------
// Single-axis baseline
// ---------------------------------------------------------------------------

/// One vector separating left from right with all dimensions pooled.
/// On a single-dimension set this is the ordinary per-dimension vector.
pub fn baseline_single_axis(set: &ActivationSet, layer: usize, method: Method, cfg: &LearnConfig) -> Result<ConceptVector> {
    learn_with(method, set, Axis::Pooled, layer, cfg)
}

/// Planted data where dimension pairs are confounded: eco-left overlaps
/// dip-right and civil-left overlaps soc-right, each with cosine `overlap`.
pub fn confound_fixture(seed: u64, overlap: f64) -> Result<(ActivationSet, BTreeMap<Dimension, Vec<f64>>)> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument("overlap must lie in [0, 1)".into()));
    }
    let d_model = 32;
    let e = |i: usize| -> Vec<f64> { (0..d_model).map(|k| if k == i { 1.0 } else { 0.0 }).collect() };
    let rest = (1.0 - overlap * overlap).sqrt();
    let partner = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| -overlap * x + rest * y).collect() };
    let mut directions = BTreeMap::new();
    directions.insert(Dimension::Eco, e(0));
    directions.insert(Dimension::Dip, partner(&e(0), &e(1)));
    directions.insert(Dimension::Civil, e(2));
    directions.insert(Dimension::Soc, partner(&e(2), &e(3)));

    let mut spec = PlantSpec::new(d_model, 2, 200, 4.0, 1.0, seed);
    spec.directions = Some(directions);
    plant_with_directions(&spec)
}

// ---------------------------------------------------------------------------
// Correlation grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGrid {
    pub layer: usize,
    pub method: Method,
    /// Concept names in grid order: Equality, Market, Globe, Nation, ...
    pub labels: Vec<String>,
    /// Dimension of each row/column.
    pub dimensions: Vec<Dimension>,
    pub matrix: Vec<Vec<f64>>,
}

impl CorrelationGrid {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.matrix) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|x| format!("{x:.6}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// 8×8 cosine grid over (dimension × side). The right-side concept of a
/// dimension is the negated stored direction.
pub fn correlation_grid(reg: &VectorRegistry, layer: usize, method: Method) -> Result<CorrelationGrid> {
    let mut missing = Vec::new();
    let mut dirs = Vec::new();
    for d in Dimension::ALL {
        match reg.get(method, Axis::Dim(d), layer) {
            Some(v) => dirs.push(&v.direction),
            None => missing.push(format!("{method}/{d}/L{layer}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingVectors(missing));
    }

    let mut base = [[0.0f64; 4]; 4];
    for i in 0..4 {
        base[i][i] = 1.0;
        for j in i + 1..4 {
            let c = numkit::cosine_similarity(dirs[i], dirs[j])?;
            base[i][j] = c;
            base[j][i] = c;
        }
    }

    let mut labels = Vec::with_capacity(8);
    let mut dimensions = Vec::with_capacity(8);
    for d in Dimension::ALL {
        labels.push(d.left_concept().to_string());
        labels.push(d.right_concept().to_string());
        dimensions.extend([d, d]);
    }
    let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
    let matrix = (0..8)
        .map(|a| (0..8).map(|b| sign(a) * sign(b) * base[a / 2][b / 2]).collect())
        .collect();
    Ok(CorrelationGrid {
        layer,
        method,
        labels,
        dimensions,
        matrix,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementScore {
    pub within_dim: f64,
    pub cross_dim: f64,
    pub gap: f64,
}

/// Mean |cos| among same-dimension and cross-dimension off-diagonal pairs.
pub fn disentanglement(grid: &CorrelationGrid) -> DisentanglementScore {
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    let n = grid.matrix.len();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let c = grid.matrix[a][b].abs();
            if grid.dimensions[a] == grid.dimensions[b] {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    let within_dim = if nw > 0 { within / nw as f64 } else { 0.0 };
    let cross_dim = if nc > 0 { cross / nc as f64 } else { 0.0 };
    DisentanglementScore {
        within_dim,
        cross_dim,
        gap: within_dim - cross_dim,
    }
}

// ---------------------------------------------------------------------------
// PCA projection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub statement_ref: u64,
    pub x: f64,
    pub y: f64,
    pub label: Leaning,
    pub dimension: Dimension,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub layer: usize,
    pub axes: [Vec<f64>; 2],
    /// Sample variance captured by each axis.
    pub variances: [f64; 2],
    pub mean: Vec<f64>,
    pub points: Vec<ProjectedPoint>,
}

impl Projection {
    /// Coordinates of `h` in this plane.
    pub fn project(&self, h: &[f64]) -> [f64; 2] {
        let c = numkit::sub(h, &self.mean);
        [dot(&c, &self.axes[0]), dot(&c, &self.axes[1])]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["x", "y", "label", "dimension", "split", "statement_ref"])?;
        for p in &self.points {
            out.write_record([
                format!("{:.6}", p.x),
                format!("{:.6}", p.y),
                p.label.to_string(),
                p.dimension.to_string(),
                p.split.to_string(),
                p.statement_ref.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Flips `v` so its largest-magnitude coordinate is positive.
fn orient(mut v: Vec<f64>) -> Vec<f64> {
    let k = (0..v.len()).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
    if v.get(k).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Top two principal axes of a point cloud. When the cloud is rank one the
/// second axis is an arbitrary deterministic unit vector orthogonal to the first.
pub fn principal_plane(rows: &[&[f64]]) -> Result<(Vec<f64>, [Vec<f64>; 2], [f64; 2])> {
    if rows.len() < 3 {
        return Err(Error::InvalidArgument(format!("PCA projection needs at least 3 points, got {}", rows.len())));
    }
    let m = Matrix::from_rows(rows)?;
    let mean = m.column_means();
    let centered = m.centered();
    let first = numkit::top_eigenvector(&centered, m.as_slice())?;
    let axis1 = orient(first.direction);

    let deflated_rows: Vec<Vec<f64>> = centered
        .row_iter()
        .map(|r| numkit::axpy(r, -dot(r, &axis1), &axis1))
        .collect();
    let deflated = Matrix::from_rows(&deflated_rows)?;
    let (axis2, var2) = match numkit::top_eigenvector(&deflated, m.as_slice()) {
        Ok(pc) => (orient(pc.direction), pc.variance),
        Err(Error::RankDeficient) => {
            let d = axis1.len();
            let k = (0..d).min_by(|&a, &b| axis1[a].abs().total_cmp(&axis1[b].abs())).unwrap_or(0);
            let e: Vec<f64> = (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
            let v = numkit::axpy(&e, -axis1[k], &axis1);
            (orient(numkit::normalize(&v)?.0), 0.0)
        }
        Err(e) => return Err(e),
    };
    Ok((mean, [axis1, axis2], [first.variance, var2]))
}

/// 2-D coordinates of every record at `layer` (optionally one dimension only).
pub fn pca_project(set: &ActivationSet, layer: usize, dimension: Option<Dimension>) -> Result<Projection> {
    let recs: Vec<_> = set
        .at_layer(layer)
        .filter(|r| dimension.is_none_or(|d| r.dimension == d))
        .collect();
    let rows: Vec<&[f64]> = recs.iter().map(|r| r.vector.as_slice()).collect();
    let (mean, axes, variances) = principal_plane(&rows)?;
    let mut proj = Projection {
        layer,
        axes,
        variances,
        mean,
        points: Vec::with_capacity(recs.len()),
    };
    for r in recs {
        let [x, y] = proj.project(&r.vector);
        proj.points.push(ProjectedPoint {
            statement_ref: r.statement_ref,
            x,
            y,
            label: r.label,
            dimension: r.dimension,
            split: r.split,
        });
    }
    Ok(proj)
}

/// Centroid of the vectors at `layer` with the given label and optional dimension.
pub fn class_centroid(set: &ActivationSet, layer: usize, label: Leaning, dimension: Option<Dimension>, split: Split) -> Option<Vec<f64>> {
    let rows: Vec<&[f64]> = set
        .select(layer, dimension, split)
        .filter(|r| r.label == label)
        .map(|r| r.vector.as_slice())
        .collect();
    (!rows.is_empty()).then(|| mean_of(rows, set.d_model()))
}
