//! Reproducible multi-source benchmark sweeps.
//!
//! A sweep builds a world of generative sources, trains a grid of suspect
//! classifiers on each source, verifies every suspect against every defender
//! under each configured decision method, and writes per-defender cell CSVs,
//! a summary CSV, and a machine-readable run manifest.
//!
//! Every random stream derives from `(base_seed, seed_index, role, indices)`
//! via [`crate::seed::mix`], so results never depend on worker-pool
//! scheduling: two runs of the same config produce byte-identical files. The
//! seed-derivation helpers are public so that a suspect trained through the
//! CLI (`generate` / `train` / `serve` / `verify`) lands on exactly the same
//! bits as the corresponding benchmark cell.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::{serve, HttpPredictClient};
use crate::learner::{train, LossKind, MlpClassifier, TrainConfig};
use crate::metrics::csv::{CellRow, SummaryRow};
use crate::metrics::{aggregate, average_blocks, ScoredVerdict};
use crate::seed;
use crate::stats::SignificanceConfig;
use crate::synth::{
    mix_datasets, sample_real, sample_synthetic, shared_prototypes, GeneratorSpec, LabeledDataset,
    PromptSpec, RealSourceSpec,
};
use crate::verifier::{random_verify, ShadowContext, Variant, VerificationConfig};
use crate::{Error, Result};

mod tag {
    pub const PROTOTYPES: u64 = 0xa1;
    pub const GENERATOR: u64 = 0xa2;
    pub const REAL: u64 = 0xa3;
    pub const SHADOW_PROMPT: u64 = 0xa4;
    pub const VALIDATION_PROMPT: u64 = 0xa5;
    pub const SUSPECT_PROMPT: u64 = 0xa6;
    pub const SUSPECT_DATA: u64 = 0xa7;
    pub const SUSPECT_INIT: u64 = 0xa8;
    pub const SUSPECT_SHUFFLE: u64 = 0xa9;
    pub const MIXED_DATA: u64 = 0xaa;
    pub const SHADOW_CONTEXT: u64 = 0xab;
    pub const RANDOM_METHOD: u64 = 0xac;
}

/// A decision rule evaluated by the sweep: one of the verification variants,
/// or the coin-flip baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMethod {
    Accuracy,
    Entropy,
    Similarity,
    Random,
}

impl DecisionMethod {
    /// Canonical order used everywhere output is written.
    pub const ALL: [DecisionMethod; 4] = [
        DecisionMethod::Accuracy,
        DecisionMethod::Entropy,
        DecisionMethod::Similarity,
        DecisionMethod::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecisionMethod::Accuracy => "accuracy",
            DecisionMethod::Entropy => "entropy",
            DecisionMethod::Similarity => "similarity",
            DecisionMethod::Random => "random",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            DecisionMethod::Accuracy => Some(Variant::Accuracy),
            DecisionMethod::Entropy => Some(Variant::Entropy),
            DecisionMethod::Similarity => Some(Variant::Similarity),
            DecisionMethod::Random => None,
        }
    }

    fn order_index(self) -> usize {
        Self::ALL.iter().position(|m| *m == self).unwrap()
    }
}

/// How the verifier reaches suspect models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// Call the model directly.
    InProcess,
    /// Serve each suspect over HTTP and query it through the wire protocol.
    Served,
}

/// One point of the suspect hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspectHyper {
    pub hidden_width: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
}

impl SuspectHyper {
    pub fn to_train_config(&self, epochs: usize, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            loss: self.loss,
            shuffle_seed,
        }
    }
}

/// Cartesian grid of suspect training configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuspectGrid {
    pub hidden_widths: Vec<Option<usize>>,
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub losses: Vec<LossKind>,
}

impl SuspectGrid {
    /// The full 64-point grid: 4 architectures x 2 batch sizes x 2 learning
    /// rates x 2 weight decays x 2 losses.
    pub fn full() -> Self {
        Self {
            hidden_widths: vec![None, Some(32), Some(64), Some(128)],
            batch_sizes: vec![64, 32],
            learning_rates: vec![0.1, 0.05],
            weight_decays: vec![1e-2, 1e-3],
            losses: vec![LossKind::CrossEntropy, LossKind::focal_default()],
        }
    }

    /// The 16-point fast grid: batch size and weight decay pinned.
    pub fn fast() -> Self {
        Self {
            hidden_widths: vec![None, Some(32), Some(64), Some(128)],
            batch_sizes: vec![64],
            learning_rates: vec![0.1, 0.05],
            weight_decays: vec![1e-3],
            losses: vec![LossKind::CrossEntropy, LossKind::focal_default()],
        }
    }

    /// Grid points in a fixed enumeration order.
    pub fn cells(&self) -> Vec<SuspectHyper> {
        let mut cells = Vec::new();
        for &hidden_width in &self.hidden_widths {
            for &batch_size in &self.batch_sizes {
                for &learning_rate in &self.learning_rates {
                    for &weight_decay in &self.weight_decays {
                        for &loss in &self.losses {
                            cells.push(SuspectHyper {
                                hidden_width,
                                batch_size,
                                learning_rate,
                                weight_decay,
                                loss,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells().is_empty()
    }
}

/// Full description of a benchmark sweep. This struct is the documented JSON
/// config-file schema: serialize it, edit it, pass it back via `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub noise_scale: f64,
    pub prompt_shift: f64,
    pub prototype_radius: f64,
    /// Number of simulated generators; each in turn plays the defender.
    pub num_generators: usize,
    /// Add the real-data stand-in as a suspect training source.
    pub include_real: bool,
    /// Add, per defender, suspects trained on a 50/50 mix of that defender's
    /// synthetic data and real data (truth: illegal).
    pub include_mixed: bool,
    pub suspect_n_per_class: usize,
    pub suspect_epochs: usize,
    pub grid: SuspectGrid,
    pub shadow_n_per_class: usize,
    pub val_n_per_class: usize,
    pub inference_batch_size: usize,
    pub alpha: f64,
    pub shadow_hidden_width: Option<usize>,
    pub shadow_train: TrainConfig,
    pub methods: Vec<DecisionMethod>,
    pub base_seed: u64,
    pub num_seeds: usize,
    /// Worker threads for training and verification; 0 means all cores.
    pub workers: usize,
    pub transport: Transport,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            num_classes: crate::synth::DEFAULT_NUM_CLASSES,
            dim: crate::synth::DEFAULT_DIM,
            noise_scale: crate::synth::DEFAULT_NOISE_SCALE,
            prompt_shift: crate::synth::DEFAULT_PROMPT_SHIFT,
            prototype_radius: crate::synth::DEFAULT_PROTOTYPE_RADIUS,
            num_generators: 4,
            include_real: true,
            include_mixed: false,
            suspect_n_per_class: 300,
            suspect_epochs: 30,
            grid: SuspectGrid::full(),
            shadow_n_per_class: 500,
            val_n_per_class: 100,
            inference_batch_size: 50,
            alpha: 0.05,
            shadow_hidden_width: Some(32),
            shadow_train: TrainConfig::default(),
            methods: vec![
                DecisionMethod::Accuracy,
                DecisionMethod::Entropy,
                DecisionMethod::Similarity,
                DecisionMethod::Random,
            ],
            base_seed: 0,
            num_seeds: 1,
            workers: 0,
            transport: Transport::InProcess,
        }
    }
}

impl BenchmarkConfig {
    /// Reduced smoke configuration: two sources, the 16-point grid.
    pub fn fast() -> Self {
        Self {
            num_generators: 2,
            include_real: false,
            grid: SuspectGrid::fast(),
            ..Self::default()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn source_count(&self) -> usize {
        self.num_generators + usize::from(self.include_real)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_generators == 0 {
            return Err(Error::InvalidConfig("at least one generator is required".into()));
        }
        if self.source_count() < 2 {
            return Err(Error::InvalidConfig(
                "at least two suspect sources are required (add generators or real data)".into(),
            ));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("suspect grid is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no decision methods configured".into()));
        }
        if self.num_seeds == 0 {
            return Err(Error::InvalidConfig("num_seeds must be at least 1".into()));
        }
        SignificanceConfig::new(self.alpha)?;
        Ok(())
    }

    /// Verification settings shared by every defender in a world.
    pub fn verification_config(&self, world: &World) -> VerificationConfig {
        VerificationConfig {
            shadow_n_per_class: self.shadow_n_per_class,
            val_n_per_class: self.val_n_per_class,
            inference_batch_size: self.inference_batch_size,
            significance: SignificanceConfig { alpha: self.alpha },
            variant: Variant::Accuracy,
            shadow_train: self.shadow_train.clone(),
            shadow_hidden_width: self.shadow_hidden_width,
            shadow_prompt: world.shadow_prompt.clone(),
            validation_prompt: world.validation_prompt.clone(),
        }
    }
}

/// All sources and prompts of one seeded benchmark world.
#[derive(Debug, Clone)]
pub struct World {
    pub seed_index: usize,
    pub generators: Vec<GeneratorSpec>,
    pub real: RealSourceSpec,
    pub shadow_prompt: PromptSpec,
    pub validation_prompt: PromptSpec,
    pub suspect_prompt: PromptSpec,
}

impl World {
    pub fn build(config: &BenchmarkConfig, seed_index: usize) -> Result<World> {
        let base = world_seed(config, seed_index);
        let prototypes = shared_prototypes(
            config.num_classes,
            config.dim,
            config.prototype_radius,
            seed::mix(&[base, tag::PROTOTYPES]),
        );
        let generators = (0..config.num_generators)
            .map(|g| {
                GeneratorSpec::with_default_transform(
                    format!("gen-{g}"),
                    prototypes.clone(),
                    config.noise_scale,
                    seed::mix(&[base, tag::GENERATOR, g as u64]),
                )
            })
            .collect();
        let real = RealSourceSpec::new(
            "real",
            prototypes,
            config.noise_scale,
            crate::synth::DEFAULT_HEAVY_TAIL_MIX,
            seed::mix(&[base, tag::REAL]),
        )?;
        Ok(World {
            seed_index,
            generators,
            real,
            shadow_prompt: PromptSpec::seeded(
                "shadow-prompt",
                config.num_classes,
                config.dim,
                config.prompt_shift,
                seed::mix(&[base, tag::SHADOW_PROMPT]),
            ),
            validation_prompt: PromptSpec::seeded(
                "validation-prompt",
                config.num_classes,
                config.dim,
                config.prompt_shift,
                seed::mix(&[base, tag::VALIDATION_PROMPT]),
            ),
            suspect_prompt: PromptSpec::seeded(
                "suspect-prompt",
                config.num_classes,
                config.dim,
                config.prompt_shift,
                seed::mix(&[base, tag::SUSPECT_PROMPT]),
            ),
        })
    }

    /// Regular suspect-source ids in cell order (generators, then real).
    pub fn source_ids(&self, config: &BenchmarkConfig) -> Vec<String> {
        let mut ids: Vec<String> = self.generators.iter().map(|g| g.id.clone()).collect();
        if config.include_real {
            ids.push(self.real.id.clone());
        }
        ids
    }
}

pub fn world_seed(config: &BenchmarkConfig, seed_index: usize) -> u64 {
    seed::mix(&[config.base_seed, 0x57_4f_52_4c_44, seed_index as u64])
}

pub fn suspect_data_seed(config: &BenchmarkConfig, seed_index: usize, source_index: usize) -> u64 {
    seed::mix(&[
        world_seed(config, seed_index),
        tag::SUSPECT_DATA,
        source_index as u64,
    ])
}

pub fn mixed_data_seed(config: &BenchmarkConfig, seed_index: usize, defender_index: usize) -> u64 {
    seed::mix(&[
        world_seed(config, seed_index),
        tag::MIXED_DATA,
        defender_index as u64,
    ])
}

/// `(init_seed, shuffle_seed)` of the suspect trained at a given grid cell.
pub fn suspect_train_seeds(
    config: &BenchmarkConfig,
    seed_index: usize,
    source_index: usize,
    cell_index: usize,
) -> (u64, u64) {
    let base = world_seed(config, seed_index);
    (
        seed::mix(&[base, tag::SUSPECT_INIT, source_index as u64, cell_index as u64]),
        seed::mix(&[base, tag::SUSPECT_SHUFFLE, source_index as u64, cell_index as u64]),
    )
}

pub fn shadow_context_seed(
    config: &BenchmarkConfig,
    seed_index: usize,
    defender_index: usize,
) -> u64 {
    seed::mix(&[
        world_seed(config, seed_index),
        tag::SHADOW_CONTEXT,
        defender_index as u64,
    ])
}

fn random_method_seed(
    config: &BenchmarkConfig,
    seed_index: usize,
    defender_index: usize,
    source_order: usize,
    cell_index: usize,
) -> u64 {
    seed::mix(&[
        world_seed(config, seed_index),
        tag::RANDOM_METHOD,
        defender_index as u64,
        source_order as u64,
        cell_index as u64,
    ])
}

/// Training source of a suspect population.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SuspectSource {
    /// Index into the regular source list (generators, then real).
    Regular(usize),
    /// 50/50 mix of the given defender's synthetic data and real data.
    Mixed(usize),
}

struct SuspectPopulation {
    source: SuspectSource,
    source_id: String,
    /// Position used for row ordering.
    source_order: usize,
    models: Vec<std::result::Result<MlpClassifier, String>>,
}

/// Everything `run_benchmark` leaves behind, plus in-memory copies of the
/// summaries for direct inspection.
#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summaries: Vec<SummaryRow>,
    pub total_cells: usize,
    pub failed_cells: usize,
}

/// Machine-readable record of a run: the full config plus derived inventory,
/// enough to reproduce the sweep exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: BenchmarkConfig,
    pub defender_ids: Vec<String>,
    pub source_ids: Vec<String>,
    pub total_cells: usize,
    pub failed_cells: usize,
    pub files: Vec<String>,
}

fn sample_regular_source(
    config: &BenchmarkConfig,
    world: &World,
    source_index: usize,
) -> Result<LabeledDataset> {
    let data_seed = suspect_data_seed(config, world.seed_index, source_index);
    if source_index < world.generators.len() {
        sample_synthetic(
            &world.generators[source_index],
            &world.suspect_prompt,
            config.suspect_n_per_class,
            data_seed,
        )
    } else {
        sample_real(&world.real, config.suspect_n_per_class, data_seed)
    }
}

fn sample_mixed_source(
    config: &BenchmarkConfig,
    world: &World,
    defender_index: usize,
) -> Result<LabeledDataset> {
    let data_seed = mixed_data_seed(config, world.seed_index, defender_index);
    let half = (config.suspect_n_per_class / 2).max(1);
    let synthetic = sample_synthetic(
        &world.generators[defender_index],
        &world.suspect_prompt,
        half,
        seed::mix(&[data_seed, 1]),
    )?;
    let real = sample_real(&world.real, half, seed::mix(&[data_seed, 2]))?;
    mix_datasets(&synthetic, &real, seed::mix(&[data_seed, 3]))
}

fn train_population(
    config: &BenchmarkConfig,
    world: &World,
    source: SuspectSource,
    source_order: usize,
) -> SuspectPopulation {
    let (source_id, seed_source_index, data) = match source {
        SuspectSource::Regular(i) => {
            let ids = world.source_ids(config);
            (ids[i].clone(), i, sample_regular_source(config, world, i))
        }
        SuspectSource::Mixed(d) => (
            format!("mixed:gen-{d}+real"),
            // Mixed populations get seed indices past the regular sources so
            // toggling include_real never shifts them.
            world.generators.len() + 1 + d,
            sample_mixed_source(config, world, d),
        ),
    };
    let cells = config.grid.cells();
    let models = match data {
        Err(e) => vec![Err(format!("sampling failed: {e}")); cells.len()],
        Ok(data) => cells
            .par_iter()
            .enumerate()
            .map(|(cell_index, hyper)| {
                let (init_seed, shuffle_seed) =
                    suspect_train_seeds(config, world.seed_index, seed_source_index, cell_index);
                let model = MlpClassifier::new(
                    config.dim,
                    hyper.hidden_width,
                    config.num_classes,
                    init_seed,
                );
                train(
                    model,
                    &data,
                    &hyper.to_train_config(config.suspect_epochs, shuffle_seed),
                )
                .map(|(trained, _)| trained)
                .map_err(|e| format!("training failed: {e}"))
            })
            .collect(),
    };
    SuspectPopulation {
        source,
        source_id,
        source_order,
        models,
    }
}

struct OrderedRow {
    key: (usize, usize, usize, usize, usize),
    row: CellRow,
}

#[allow(clippy::too_many_arguments)]
fn verify_population_against_defender(
    config: &BenchmarkConfig,
    world: &World,
    context: &std::result::Result<ShadowContext, String>,
    defender_index: usize,
    population: &SuspectPopulation,
    rows: &mut Vec<OrderedRow>,
) {
    // Mixed populations only face their own defender.
    if let SuspectSource::Mixed(d) = population.source {
        if d != defender_index {
            return;
        }
    }
    let truth_illegal = match population.source {
        SuspectSource::Regular(i) => i == defender_index,
        SuspectSource::Mixed(_) => true,
    };
    let defender_id = world.generators[defender_index].id.clone();
    let variants: Vec<Variant> = config.methods.iter().filter_map(|m| m.variant()).collect();

    let results: Vec<Vec<OrderedRow>> = population
        .models
        .par_iter()
        .enumerate()
        .map(|(cell_index, model)| {
            let mut out = Vec::new();
            let mut push = |method: DecisionMethod, row: CellRow| {
                out.push(OrderedRow {
                    key: (
                        world.seed_index,
                        defender_index,
                        population.source_order,
                        cell_index,
                        method.order_index(),
                    ),
                    row,
                });
            };
            let base_row = |method: DecisionMethod| CellRow {
                seed_index: world.seed_index,
                defender: defender_id.clone(),
                suspect_source: population.source_id.clone(),
                suspect_index: cell_index,
                method: method.name().into(),
                truth_illegal,
                verdict: None,
                g: None,
                g0: None,
                score: None,
                status: "ok".into(),
            };

            // The coin-flip baseline needs no access to the suspect at all.
            for &method in &config.methods {
                if method == DecisionMethod::Random {
                    let verdict = random_verify(random_method_seed(
                        config,
                        world.seed_index,
                        defender_index,
                        population.source_order,
                        cell_index,
                    ));
                    let mut row = base_row(method);
                    row.verdict = Some(verdict);
                    row.score = Some(match verdict {
                        crate::verifier::Verdict::Illegal => 1.0,
                        crate::verifier::Verdict::Legal => -1.0,
                    });
                    push(method, row);
                }
            }
            if variants.is_empty() {
                return out;
            }

            let fail_all = |out: &mut Vec<OrderedRow>, push_failed: &str| {
                for &method in &config.methods {
                    if method == DecisionMethod::Random {
                        continue;
                    }
                    let mut row = base_row(method);
                    row.status = format!("failed: {push_failed}");
                    out.push(OrderedRow {
                        key: (
                            world.seed_index,
                            defender_index,
                            population.source_order,
                            cell_index,
                            method.order_index(),
                        ),
                        row,
                    });
                }
            };

            let context = match context {
                Ok(c) => c,
                Err(e) => {
                    fail_all(&mut out, e);
                    return out;
                }
            };
            let model = match model {
                Ok(m) => m,
                Err(e) => {
                    fail_all(&mut out, e);
                    return out;
                }
            };
            let tag = format!("{}#{cell_index}", population.source_id);
            let reports = match config.transport {
                Transport::InProcess => context.reports_for(model, &tag, &variants),
                Transport::Served => serve(model.clone(), "127.0.0.1:0")
                    .and_then(|handle| {
                        let client = HttpPredictClient::new(handle.endpoint());
                        let reports = context.reports_for(&client, &tag, &variants);
                        handle.shutdown();
                        reports
                    }),
            };
            match reports {
                Ok(reports) => {
                    for report in reports {
                        let method = config
                            .methods
                            .iter()
                            .copied()
                            .find(|m| m.variant() == Some(report.variant))
                            .expect("report variant came from methods");
                        let mut row = base_row(method);
                        row.verdict = Some(report.verdict);
                        row.g = report.grubbs.map(|g| g.g);
                        row.g0 = report.grubbs.map(|g| g.g0);
                        row.score = Some(report.illegality_score);
                        push(method, row);
                    }
                }
                Err(e) => fail_all(&mut out, &e.to_string()),
            }
            out
        })
        .collect();
    for mut bundle in results {
        rows.append(&mut bundle);
    }
}

fn run_seed(config: &BenchmarkConfig, seed_index: usize, rows: &mut Vec<OrderedRow>) -> Result<()> {
    let world = World::build(config, seed_index)?;
    let verification = config.verification_config(&world);

    // Suspect populations: one per regular source, plus per-defender mixed
    // populations when configured. Regular populations are shared by every
    // defender, mirroring how one leaked dataset faces many verifiers.
    let mut sources: Vec<SuspectSource> = (0..config.source_count())
        .map(SuspectSource::Regular)
        .collect();
    if config.include_mixed {
        sources.extend((0..config.num_generators).map(SuspectSource::Mixed));
    }
    let populations: Vec<SuspectPopulation> = sources
        .par_iter()
        .enumerate()
        .map(|(order, &source)| train_population(config, &world, source, order))
        .collect();

    let contexts: Vec<std::result::Result<ShadowContext, String>> = (0..config.num_generators)
        .into_par_iter()
        .map(|d| {
            ShadowContext::prepare(
                &world.generators[d],
                &verification,
                shadow_context_seed(config, seed_index, d),
            )
            .map_err(|e| format!("shadow context failed: {e}"))
        })
        .collect();

    for (defender_index, context) in contexts.iter().enumerate() {
        for population in &populations {
            verify_population_against_defender(
                config,
                &world,
                context,
                defender_index,
                population,
                rows,
            );
        }
    }
    Ok(())
}

/// Recomputes summary rows from cell rows: pooled counts and metrics per
/// `(method, defender)` over all seeds, then one `(average)` row per method.
/// Failed cells are excluded. Ordering is canonical (method order, then
/// defender id), so recomputation from the CSVs is byte-stable.
pub fn summarize_rows(rows: &[CellRow]) -> Result<Vec<SummaryRow>> {
    let mut methods: Vec<&str> = Vec::new();
    for method in DecisionMethod::ALL {
        if rows.iter().any(|r| r.method == method.name()) {
            methods.push(method.name());
        }
    }
    let mut defenders: Vec<String> = Vec::new();
    for row in rows {
        if !defenders.contains(&row.defender) {
            defenders.push(row.defender.clone());
        }
    }
    defenders.sort();

    let mut out = Vec::new();
    for method in methods {
        let mut blocks = Vec::new();
        for defender in &defenders {
            let outcomes: Vec<(ScoredVerdict, bool)> = rows
                .iter()
                .filter(|r| {
                    r.method == method && &r.defender == defender && r.status == "ok"
                })
                .filter_map(|r| {
                    let verdict = r.verdict?;
                    let score = r.score?;
                    Some((
                        ScoredVerdict {
                            verdict,
                            illegality_score: score,
                        },
                        r.truth_illegal,
                    ))
                })
                .collect();
            if outcomes.is_empty() {
                continue;
            }
            let summary = aggregate(&outcomes)?;
            blocks.push(summary.clone());
            out.push(SummaryRow {
                method: method.into(),
                defender: defender.clone(),
                counts: Some(summary.counts),
                accuracy: summary.accuracy,
                f1: summary.f1,
                auroc: summary.auroc,
            });
        }
        if !blocks.is_empty() {
            let avg = average_blocks(&blocks)?;
            out.push(SummaryRow {
                method: method.into(),
                defender: "(average)".into(),
                counts: None,
                accuracy: avg.accuracy,
                f1: avg.f1,
                auroc: avg.auroc,
            });
        }
    }
    Ok(out)
}

/// Runs the full sweep and writes per-defender cell CSVs, `summary.csv`, and
/// `manifest.json` into `out_dir`.
pub fn run_benchmark(config: &BenchmarkConfig, out_dir: impl AsRef<Path>) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let out_dir = out_dir.as_ref().to_path_buf();
    std::fs::create_dir_all(&out_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;

    let mut ordered: Vec<OrderedRow> = Vec::new();
    pool.install(|| -> Result<()> {
        for seed_index in 0..config.num_seeds {
            run_seed(config, seed_index, &mut ordered)?;
        }
        Ok(())
    })?;
    ordered.sort_by_key(|r| r.key);
    let rows: Vec<CellRow> = ordered.into_iter().map(|r| r.row).collect();

    let failed_cells = rows.iter().filter(|r| r.status != "ok").count();
    let defender_ids: Vec<String> = (0..config.num_generators).map(|d| format!("gen-{d}")).collect();

    let mut files = Vec::new();
    for defender in &defender_ids {
        let path = out_dir.join(format!("cells_{defender}.csv"));
        let defender_rows: Vec<CellRow> = rows
            .iter()
            .filter(|r| &r.defender == defender)
            .cloned()
            .collect();
        crate::metrics::csv::write_cells_csv(&path, &defender_rows)?;
        files.push(path);
    }

    let summaries = summarize_rows(&rows)?;
    let summary_path = out_dir.join("summary.csv");
    crate::metrics::csv::write_summary_csv(&summary_path, &summaries)?;
    files.push(summary_path);

    let manifest = RunManifest {
        schema_version: 1,
        config: config.clone(),
        defender_ids,
        source_ids: World::build(config, 0)?.source_ids(config),
        total_cells: rows.len(),
        failed_cells,
        files: files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(manifest_path);

    Ok(BenchmarkOutcome {
        out_dir,
        files,
        summaries,
        total_cells: rows.len(),
        failed_cells,
    })
}

/// Reads every `cells_*.csv` under `dir` in name order.
pub fn read_all_cells(dir: impl AsRef<Path>) -> Result<Vec<CellRow>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .map(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("cells_") && n.ends_with(".csv")
                })
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no cells_*.csv files under {}",
            dir.as_ref().display()
        )));
    }
    let mut rows = Vec::new();
    for path in paths {
        rows.extend(crate::metrics::csv::read_cells_csv(&path)?);
    }
    Ok(rows)
}
