// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subcommand implementations. Each writes its artifacts plus a
//! `manifest-<command>.json` into the output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use polvec_core::activation_store::{extract, load_actv, plant_synthetic, save_actv, ActivationSet, PlantSpec};
use polvec_core::concept_vectors::{learn_all, learn_with, Axis, LearnConfig, VectorRegistry};
use polvec_core::corpus::{
    compose_prompt, save_statements, split, synth_statements, Dimension, Leaning, PromptTemplate, Split, StatementSet, Taxonomy,
};
use polvec_core::detection_analysis::{accuracy, correlation_grid, disentanglement, evaluate, pca_project};
use polvec_core::steering::{
    alpha_sweep, default_band, lens_trace, shift_report, steered_generate, steering_gen_params, write_sweep_csv, SteeringPlan,
};
use polvec_core::toy_lm::{GenParams, TokenId, ToyLm, ToyLmConfig, Vocab};

use crate::config::{RunConfig, SourceKind};

const STEER_PROMPTS: usize = 8;
const LENS_PROMPTS: usize = 3;

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    /// Seconds since the Unix epoch; the only field that varies between runs.
    created_unix: u64,
}

pub struct Ctx {
    command: &'static str,
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Ctx {
    pub fn new(command: &'static str, mut cfg: RunConfig, out: PathBuf) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed()?;
        std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        cfg.out_dir = None;
        Ok(Self {
            command,
            cfg,
            out,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> PathBuf {
        let label = match path.strip_prefix(&self.out) {
            Ok(rel) => rel.display().to_string(),
            Err(_) => path.display().to_string(),
        };
        self.inputs.push((label, path.to_path_buf()));
        path.to_path_buf()
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.output(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.output(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn finish(self) -> Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|(label, p)| Ok(FileHash { path: label.clone(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|name| Ok(FileHash { path: name.clone(), sha256: sha256_file(&self.out.join(name))? }))
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: &self.cfg,
            inputs,
            outputs,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let path = self.out.join(format!("manifest-{}.json", self.command));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    // -- shared inputs -----------------------------------------------------

    fn taxonomy(&mut self) -> Result<Taxonomy> {
        match self.cfg.taxonomy.clone() {
            Some(p) => Ok(Taxonomy::load(self.input(&p))?),
            None => Ok(Taxonomy::default()),
        }
    }

    fn statements(&mut self, tax: &Taxonomy) -> Result<StatementSet> {
        match self.cfg.statements.clone() {
            Some(p) => {
                let p = self.input(&p);
                polvec_core::corpus::load_statements(&p, tax).with_context(|| format!("loading statements {}", p.display()))
            }
            None => {
                let raw = synth_statements(self.seed, self.cfg.synth.per_cell, tax)?;
                Ok(split(&raw, self.cfg.synth.test_fraction, self.seed)?)
            }
        }
    }

    fn template(&self) -> Result<PromptTemplate> {
        self.cfg.template.resolve()
    }

    fn toy_model(&mut self, statements: &StatementSet, tax: &Taxonomy) -> Result<ToyLm> {
        let toy = self.cfg.toy.clone().context("config error: this command needs a `toy` model source")?;
        if let Some(w) = &toy.weights {
            let w = self.input(w);
            return ToyLm::load_weights(&w).with_context(|| format!("loading weights {}", w.display()));
        }
        let template = self.template()?;
        let mut texts = Vec::new();
        for tpl in [&template, &PromptTemplate::full(), &PromptTemplate::detection()] {
            for stmt in statements.iter() {
                texts.push(compose_prompt(stmt, tpl, tax)?);
            }
        }
        texts.extend(self.cfg.prompts.iter().cloned());
        let vocab = Vocab::from_texts(texts.iter().map(String::as_str));
        let mut cfg = ToyLmConfig::new(&vocab, self.seed);
        cfg.n_layers = toy.n_layers;
        cfg.d_model = toy.d_model;
        cfg.n_heads = toy.n_heads;
        cfg.d_ff = toy.d_ff;
        cfg.max_seq = toy.max_seq;
        Ok(ToyLm::build(cfg)?)
    }

    fn activations(&mut self) -> Result<ActivationSet> {
        match self.cfg.source()? {
            SourceKind::Actv => {
                let p = self.cfg.actv.clone().expect("checked");
                let p = self.input(&p);
                load_actv(&p).with_context(|| format!("loading activations {}", p.display()))
            }
            SourceKind::Planted => {
                let p = self.cfg.planted.clone().expect("checked");
                let mut spec = PlantSpec::new(p.d_model, p.n_layers, p.per_side, p.signal, p.noise, self.seed);
                spec.test_fraction = p.test_fraction;
                spec.offset_scale = p.offset_scale;
                Ok(plant_synthetic(&spec)?.0)
            }
            SourceKind::Toy => {
                let tax = self.taxonomy()?;
                let statements = self.statements(&tax)?;
                let model = self.toy_model(&statements, &tax)?;
                Ok(extract(&model, &statements, &self.template()?, &tax)?)
            }
        }
    }

    fn registry(&mut self) -> Result<VectorRegistry> {
        let p = self.cfg.registry.clone().unwrap_or_else(|| self.out.join("registry.actv"));
        let p = self.input(&p);
        VectorRegistry::load(&p).with_context(|| format!("loading registry {} (run `learn` first?)", p.display()))
    }

    fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            lambda: self.cfg.lambda,
            template_hash: match self.cfg.source() {
                Ok(SourceKind::Toy) => self.template().ok().map(|t| t.hash()),
                _ => None,
            },
        }
    }

    fn layers_or(&self, all: &[usize]) -> Vec<usize> {
        if self.cfg.layers.is_empty() {
            all.to_vec()
        } else {
            self.cfg.layers.clone()
        }
    }

    /// Toy model, statements and taxonomy for the steering commands.
    fn steering_inputs(&mut self) -> Result<(ToyLm, StatementSet, Taxonomy)> {
        if self.cfg.source()? != SourceKind::Toy {
            bail!("config error: steering commands need the `toy` activation source");
        }
        let tax = self.taxonomy()?;
        let statements = self.statements(&tax)?;
        let model = self.toy_model(&statements, &tax)?;
        Ok((model, statements, tax))
    }

    fn plan(&mut self, model: &ToyLm, unit_alpha: bool) -> Result<SteeringPlan> {
        let spec = self.cfg.plan.clone().context("config error: this command needs a `plan`")?;
        let reg = self.registry()?;
        let layers: Vec<usize> = if spec.layers.is_empty() {
            default_band(model.n_layers()).collect()
        } else {
            spec.layers.clone()
        };
        let alpha = if unit_alpha { 1.0 } else { spec.alpha };
        let mut plan = SteeringPlan::new(spec.scope);
        let mut missing = Vec::new();
        for layer in layers {
            match reg.get(spec.method, Axis::Dim(spec.dimension), layer) {
                Some(v) => plan = plan.with_vector(v, alpha)?,
                None => missing.push(format!("{}/{}/L{layer}", spec.method, spec.dimension)),
            }
        }
        if !missing.is_empty() {
            return Err(polvec_core::Error::MissingVectors(missing).into());
        }
        plan.validate(model)?;
        Ok(plan)
    }

    /// Configured prompts, or right-leaning statements of the plan dimension.
    fn prompts(&self, model: &ToyLm, statements: &StatementSet, tax: &Taxonomy, limit: usize) -> Result<Vec<(String, Vec<TokenId>)>> {
        let texts: Vec<String> = if self.cfg.prompts.is_empty() {
            let dim = self.cfg.plan.as_ref().map(|p| p.dimension).or(self.cfg.dimension).unwrap_or(Dimension::Eco);
            let tpl = self.template()?;
            statements
                .iter()
                .filter(|s| s.dimension == dim && s.leaning == Leaning::Right)
                .take(limit)
                .map(|s| compose_prompt(s, &tpl, tax))
                .collect::<polvec_core::Result<_>>()?
        } else {
            self.cfg.prompts.clone()
        };
        if texts.is_empty() {
            bail!("no prompts available");
        }
        Ok(texts.into_iter().map(|t| { let ids = model.tokenize(&t); (t, ids) }).collect())
    }

    fn gen_params(&self) -> GenParams {
        self.cfg.generation.clone().unwrap_or_else(|| steering_gen_params(self.seed))
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn synth(ctx: &mut Ctx) -> Result<()> {
    let tax = ctx.taxonomy()?;
    let raw = synth_statements(ctx.seed, ctx.cfg.synth.per_cell, &tax)?;
    let set = split(&raw, ctx.cfg.synth.test_fraction, ctx.seed)?;
    let path = ctx.output("statements.csv");
    save_statements(&set, &path)?;
    Ok(())
}

pub fn extract_cmd(ctx: &mut Ctx) -> Result<()> {
    if ctx.cfg.source()? != SourceKind::Toy {
        bail!("config error: `extract` needs the `toy` activation source");
    }
    let tax = ctx.taxonomy()?;
    let statements = ctx.statements(&tax)?;
    let model = ctx.toy_model(&statements, &tax)?;
    let set = extract(&model, &statements, &ctx.template()?, &tax)?;
    let path = ctx.output("activations.actv");
    save_actv(&set, &path)?;
    let path = ctx.output("toy_model.actv");
    model.save_weights(&path)?;
    Ok(())
}

pub fn plant(ctx: &mut Ctx) -> Result<()> {
    if ctx.cfg.source()? != SourceKind::Planted {
        bail!("config error: `plant` needs the `planted` activation source");
    }
    let set = ctx.activations()?;
    let path = ctx.output("activations.actv");
    save_actv(&set, &path)?;
    Ok(())
}

#[derive(Serialize)]
struct LadderRow {
    lambda: f64,
    dimension: Dimension,
    layer: usize,
    weight_norm: f64,
    test_accuracy: Option<f64>,
}

pub fn learn(ctx: &mut Ctx) -> Result<()> {
    let set = ctx.activations()?;
    let cfg = ctx.learn_config();
    let outcome = learn_all(&set, &ctx.cfg.methods, &cfg);
    if outcome.registry.is_empty() {
        bail!("no vector could be learned: {:?}", outcome.failures);
    }
    let path = ctx.output("registry.actv");
    outcome.registry.save(&path)?;
    ctx.write_json("learn_failures.json", &outcome.failures)?;

    if !ctx.cfg.lambda_ladder.is_empty() {
        let layers = ctx.layers_or(&set.layers());
        let mut rows = Vec::new();
        for &lambda in &ctx.cfg.lambda_ladder {
            for dim in set.dimensions() {
                for &layer in &layers {
                    let v = learn_with(polvec_core::concept_vectors::Method::Probe, &set, Axis::Dim(dim), layer, &LearnConfig { lambda, ..cfg.clone() })?;
                    let acc = accuracy(&v, &set, Split::Test)?.map(|a| a.0);
                    rows.push(LadderRow {
                        lambda,
                        dimension: dim,
                        layer,
                        weight_norm: v.raw_norm,
                        test_accuracy: acc,
                    });
                }
            }
        }
        let mut w = ctx.create("lambda_ladder.csv")?;
        use std::io::Write;
        writeln!(w, "lambda,dimension,layer,weight_norm,test_accuracy")?;
        for r in rows {
            let acc = r.test_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(w, "{},{},{},{:.9},{}", r.lambda, r.dimension, r.layer, r.weight_norm, acc)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn detect(ctx: &mut Ctx) -> Result<()> {
    let set = ctx.activations()?;
    let reg = ctx.registry()?;
    let split = ctx.cfg.split.unwrap_or(Split::Test);
    let report = evaluate(&reg, &set, split)?;
    let w = ctx.create("detection.csv")?;
    report.write_csv(w)?;
    let w = ctx.create("detection_summary.csv")?;
    report.write_summary_csv(w)?;
    ctx.write_json("detection.json", &report)?;
    Ok(())
}

pub fn correlate(ctx: &mut Ctx) -> Result<()> {
    let reg = ctx.registry()?;
    let mut all_layers: Vec<usize> = reg.keys().map(|k| k.layer).collect();
    all_layers.dedup();
    all_layers.sort_unstable();
    all_layers.dedup();
    let layers = ctx.layers_or(&all_layers);
    let mut scores = BTreeMap::new();
    for method in ctx.cfg.methods.clone() {
        for &layer in &layers {
            let grid = correlation_grid(&reg, layer, method)?;
            let w = ctx.create(&format!("correlation_{method}_L{layer}.csv"))?;
            grid.write_csv(w)?;
            scores.insert(format!("{method}/L{layer}"), disentanglement(&grid));
        }
    }
    ctx.write_json("disentanglement.json", &scores)?;
    Ok(())
}

pub fn project(ctx: &mut Ctx) -> Result<()> {
    let set = ctx.activations()?;
    let layers = ctx.layers_or(&set.layers());
    let dim = ctx.cfg.dimension;
    for layer in layers {
        let p = pca_project(&set, layer, dim)?;
        let name = match dim {
            Some(d) => format!("projection_{d}_L{layer}.csv"),
            None => format!("projection_L{layer}.csv"),
        };
        let w = ctx.create(&name)?;
        p.write_csv(w)?;
    }
    Ok(())
}

pub fn steer(ctx: &mut Ctx) -> Result<()> {
    let (model, statements, tax) = ctx.steering_inputs()?;
    let plan = ctx.plan(&model, false)?;
    let prompts = ctx.prompts(&model, &statements, &tax, STEER_PROMPTS)?;
    let params = ctx.gen_params();

    let mut baseline = String::new();
    let mut steered = String::new();
    for (_, ids) in &prompts {
        baseline.push_str(&steered_generate(&model, ids, &SteeringPlan::default(), &params)?.render());
        baseline.push('\n');
        steered.push_str(&steered_generate(&model, ids, &plan, &params)?.render());
        steered.push('\n');
    }
    ctx.write_text("baseline.txt", &baseline)?;
    ctx.write_text("steered.txt", &steered)?;

    let ids: Vec<Vec<TokenId>> = prompts.into_iter().map(|p| p.1).collect();
    let first = plan.first_layer().expect("non-empty plan");
    let last = plan.injections().last().expect("non-empty plan").layer;
    let visualize = ctx.layers_or(&(first..=(last + 1).min(model.n_layers())).collect::<Vec<_>>());
    let report = shift_report(&model, &ids, &plan, &visualize, None)?;
    let w = ctx.create("shift.csv")?;
    report.write_csv(w)?;
    ctx.write_json("shift.json", &report)?;
    Ok(())
}

pub fn lens(ctx: &mut Ctx) -> Result<()> {
    let (model, statements, tax) = ctx.steering_inputs()?;
    let plan = if ctx.cfg.plan.is_some() { Some(ctx.plan(&model, false)?) } else { None };
    let prompts = ctx.prompts(&model, &statements, &tax, LENS_PROMPTS)?;
    let mut traces = Vec::new();
    for (i, (text, ids)) in prompts.iter().enumerate() {
        let trace = lens_trace(&model, ids, ctx.cfg.k, plan.as_ref())?;
        let w = ctx.create(&format!("lens_p{i}.csv"))?;
        trace.write_csv(w)?;
        traces.push(serde_json::json!({ "prompt": text, "trace": trace }));
    }
    ctx.write_json("lens.json", &traces)?;
    Ok(())
}

pub fn sweep(ctx: &mut Ctx) -> Result<()> {
    let (model, statements, tax) = ctx.steering_inputs()?;
    let plan = ctx.plan(&model, true)?;
    let prompts = ctx.prompts(&model, &statements, &tax, 1)?;
    let params = ctx.gen_params();
    let alphas = ctx.cfg.alphas.clone();
    let rows = alpha_sweep(&model, &prompts[0].1, &plan, &alphas, &params)?;
    let w = ctx.create("sweep.csv")?;
    write_sweep_csv(&rows, w)?;
    ctx.write_json("sweep.json", &rows)?;
    Ok(())
}
