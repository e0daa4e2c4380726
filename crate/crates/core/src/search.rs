//! End-to-end search: supernet training driven by a sampling controller,
//! post-training model selection, and retraining of the winner.
//!
//! The training loop fills the archive with uniformly sampled
//! architectures first. Once the archive is full, each step picks a
//! random entry, moves it by the pure-novelty or novelty-plus-reward
//! update, writes it back, rounds it, and trains the supernet one step
//! on the rounded genotype. The random controller skips the archive
//! updates entirely and trains a fresh uniform sample every step (the
//! archive then just tracks the most recent samples for diagnostics).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{self, CellSpec, Genotype};
use crate::error::{Error, Result};
use crate::novelty::{self, Archive, NoveltyConfig};
use crate::oracle::{OracleConfig, TabularOracle};
use crate::supernet::{Batch, MicroDataset, SharedWeights, Split};

/// How architectures are sampled for supernet training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Controller {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "novelty")]
    Novelty,
    #[serde(rename = "novelty+reward")]
    NoveltyReward,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Random => "random",
            Controller::Novelty => "novelty",
            Controller::NoveltyReward => "novelty+reward",
        }
    }
}

/// How the final architecture is selected from the trained supernet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    #[serde(rename = "random-search")]
    RandomSearch,
    #[serde(rename = "evolution")]
    Evolution,
}

impl Selector {
    pub fn name(self) -> &'static str {
        match self {
            Selector::RandomSearch => "random-search",
            Selector::Evolution => "evolution",
        }
    }
}

/// Evolutionary-selection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EaParams {
    pub population_size: usize,
    pub tournament_size: usize,
    /// Probability that a child is mutated rather than copied.
    pub mutation_rate: f64,
}

impl Default for EaParams {
    fn default() -> Self {
        EaParams {
            population_size: 20,
            tournament_size: 5,
            mutation_rate: 1.0,
        }
    }
}

/// Full configuration of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Training epochs over the train split.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub archive_capacity: usize,
    pub controller: Controller,
    pub selector: Selector,
    /// Evaluation budget for the selection phase.
    pub selection_budget: usize,
    pub retrain_epochs: usize,
    /// Controller steps when driving an oracle instead of a dataset.
    pub controller_steps: usize,
    pub master_seed: u64,
    pub novelty: NoveltyConfig,
    pub ea: EaParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.05,
            hidden_dim: 8,
            archive_capacity: 100,
            controller: Controller::Novelty,
            selector: Selector::Evolution,
            selection_budget: 100,
            retrain_epochs: 20,
            controller_steps: 200,
            master_seed: 0,
            novelty: NoveltyConfig::default(),
            ea: EaParams::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1
            || self.batch_size < 1
            || self.hidden_dim < 1
            || self.archive_capacity < 1
            || self.selection_budget < 1
            || self.retrain_epochs < 1
            || self.controller_steps < 1
        {
            return Err(Error::InvalidConfig(
                "all search counts must be >= 1".into(),
            ));
        }
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        if !lr_ok {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and > 0".into(),
            ));
        }
        self.novelty.validate()?;
        if self.ea.population_size < 2 {
            return Err(Error::InvalidConfig("EA population must be >= 2".into()));
        }
        if self.ea.tournament_size < 1 {
            return Err(Error::InvalidConfig("EA tournament must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ea.mutation_rate) {
            return Err(Error::InvalidConfig(
                "EA mutation_rate must be in [0, 1]".into(),
            ));
        }
        if self.selector == Selector::Evolution && self.selection_budget < self.ea.population_size {
            return Err(Error::InvalidConfig(
                "selection_budget must cover the EA population".into(),
            ));
        }
        Ok(())
    }
}

/// Dataset description echoed into run results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub seed: u64,
    pub noise: f64,
    pub num_classes: usize,
    pub input_dim: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetInfo {
    fn from_dataset(d: &MicroDataset) -> Self {
        DatasetInfo {
            name: d.name.clone(),
            seed: d.seed,
            noise: d.noise,
            num_classes: d.num_classes,
            input_dim: d.input_dim,
            train: d.split_len(Split::Train),
            val: d.split_len(Split::Val),
            test: d.split_len(Split::Test),
        }
    }
}

/// One trace row, emitted at epoch boundaries (dataset runs) or at a
/// fixed step interval (oracle runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: Option<f64>,
    pub archive_diversity: f64,
    pub best_val_acc: Option<f64>,
}

/// Per-run training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTraces {
    pub records: Vec<TraceRecord>,
    pub fill_steps: usize,
    pub total_steps: usize,
}

/// Wall-clock section of a run result; everything else is a pure
/// function of (config, seed).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub train_s: f64,
    pub select_s: f64,
    pub retrain_s: f64,
    pub total_s: f64,
}

/// Everything a single run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub config: SearchConfig,
    pub spec: CellSpec,
    pub dataset: Option<DatasetInfo>,
    pub oracle: Option<OracleConfig>,
    /// Selected genotype in the line-oriented text format.
    pub selected_genotype: String,
    /// Selection-phase score of the winner (inherited validation
    /// accuracy, or the oracle value on oracle runs).
    pub selected_accuracy: f64,
    /// Test accuracy after retraining from fresh weights (oracle runs
    /// echo the oracle value; there is nothing to retrain).
    pub retrained_test_accuracy: f64,
    pub fill_steps: usize,
    pub total_steps: usize,
    pub loss_curve: Vec<f64>,
    pub diversity_trace: Vec<f64>,
    pub timing: Timing,
}

pub(crate) fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&master.to_le_bytes());
    bytes[8..].copy_from_slice(&tag.to_le_bytes());
    arch::fnv1a(&bytes)
}

const SEED_TAG_WEIGHTS: u64 = 1;
const SEED_TAG_TRAIN: u64 = 2;
const SEED_TAG_SELECT: u64 = 3;
const SEED_TAG_RETRAIN: u64 = 4;

/// Trains the supernet for `epochs * ceil(train / batch_size)` steps
/// under the configured controller. Returns the weights, the final
/// archive, and the per-epoch traces.
pub fn train_supernet(
    cfg: &SearchConfig,
    dataset: &MicroDataset,
    spec: &CellSpec,
) -> Result<(SharedWeights, Archive, TrainTraces)> {
    cfg.validate()?;
    let train_batches = dataset.batches(Split::Train, cfg.batch_size);
    let val_batches = dataset.batches(Split::Val, cfg.batch_size);
    if train_batches.is_empty() || val_batches.is_empty() {
        return Err(Error::InvalidConfig(
            "dataset splits must be non-empty".into(),
        ));
    }
    let steps_per_epoch = train_batches.len();
    let total_steps = cfg.epochs * steps_per_epoch;

    let mut weights = SharedWeights::init(
        spec,
        cfg.hidden_dim,
        dataset.input_dim,
        dataset.num_classes,
        derive_seed(cfg.master_seed, SEED_TAG_WEIGHTS),
    )?;
    let mut archive = Archive::new(spec.clone(), cfg.archive_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, SEED_TAG_TRAIN));

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut fill_steps = 0usize;
    let mut epoch_loss = 0.0;
    let mut best_val = 0.0f64;
    let mut val_rotation = 0usize;

    for step in 0..total_steps {
        let batch = &train_batches[step % steps_per_epoch];
        let genotype;
        if !archive.is_full() {
            genotype = arch::random_genotype(spec, &mut rng);
            let loss = weights.train_step(&genotype, batch, cfg.learning_rate)?;
            archive.push(arch::lift(&genotype, spec))?;
            fill_steps += 1;
            epoch_loss += loss;
        } else {
            match cfg.controller {
                Controller::Random => {
                    genotype = arch::random_genotype(spec, &mut rng);
                    let loss = weights.train_step(&genotype, batch, cfg.learning_rate)?;
                    let (m, _) = archive.sample(&mut rng)?;
                    archive.replace(m, arch::lift(&genotype, spec))?;
                    epoch_loss += loss;
                }
                Controller::Novelty => {
                    let (m, _) = archive.sample(&mut rng)?;
                    let updated = novelty::update_novelty(m, &archive, &cfg.novelty, &mut rng)?;
                    genotype = arch::round(&updated, spec)?;
                    archive.replace(m, updated)?;
                    let loss = weights.train_step(&genotype, batch, cfg.learning_rate)?;
                    epoch_loss += loss;
                }
                Controller::NoveltyReward => {
                    let (m, _) = archive.sample(&mut rng)?;
                    let updated = {
                        let weights_ref = &weights;
                        let val_ref = &val_batches;
                        let rotation = &mut val_rotation;
                        let mut eval = move |g: &Genotype| -> Result<f64> {
                            let b = val_ref[*rotation % val_ref.len()];
                            *rotation += 1;
                            weights_ref.inherited_accuracy(g, &[b])
                        };
                        novelty::update_combined(m, &archive, &cfg.novelty, &mut eval, &mut rng)?
                    };
                    genotype = arch::round(&updated, spec)?;
                    archive.replace(m, updated)?;
                    let loss = weights.train_step(&genotype, batch, cfg.learning_rate)?;
                    epoch_loss += loss;
                }
            }
        }
        if (step + 1) % steps_per_epoch == 0 {
            let epoch = step / steps_per_epoch;
            let acc = weights.inherited_accuracy(&genotype, &val_batches[..1])?;
            best_val = best_val.max(acc);
            records.push(TraceRecord {
                epoch,
                step: step + 1,
                loss: Some(epoch_loss / steps_per_epoch as f64),
                archive_diversity: archive.mean_pairwise_distance(),
                best_val_acc: Some(best_val),
            });
            epoch_loss = 0.0;
        }
    }

    Ok((
        weights,
        archive,
        TrainTraces {
            records,
            fill_steps,
            total_steps,
        },
    ))
}

/// Runs only the sampling controller against an oracle: the archive
/// evolves exactly as in supernet training, with the oracle standing in
/// for inherited accuracy in the reward term.
pub fn run_oracle_controller(
    cfg: &SearchConfig,
    oracle: &TabularOracle,
    spec: &CellSpec,
) -> Result<(Archive, TrainTraces)> {
    cfg.validate()?;
    let total_steps = cfg.controller_steps;
    let mut archive = Archive::new(spec.clone(), cfg.archive_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, SEED_TAG_TRAIN));
    let record_every = (total_steps / 20).max(1);
    let mut records = Vec::new();
    let mut fill_steps = 0usize;
    let mut best_score = 0.0f64;

    for step in 0..total_steps {
        let genotype;
        if !archive.is_full() {
            genotype = arch::random_genotype(spec, &mut rng);
            archive.push(arch::lift(&genotype, spec))?;
            fill_steps += 1;
        } else {
            match cfg.controller {
                Controller::Random => {
                    genotype = arch::random_genotype(spec, &mut rng);
                    let (m, _) = archive.sample(&mut rng)?;
                    archive.replace(m, arch::lift(&genotype, spec))?;
                }
                Controller::Novelty => {
                    let (m, _) = archive.sample(&mut rng)?;
                    let updated = novelty::update_novelty(m, &archive, &cfg.novelty, &mut rng)?;
                    genotype = arch::round(&updated, spec)?;
                    archive.replace(m, updated)?;
                }
                Controller::NoveltyReward => {
                    let (m, _) = archive.sample(&mut rng)?;
                    let mut eval = |g: &Genotype| oracle.eval(g);
                    let updated =
                        novelty::update_combined(m, &archive, &cfg.novelty, &mut eval, &mut rng)?;
                    genotype = arch::round(&updated, spec)?;
                    archive.replace(m, updated)?;
                }
            }
        }
        best_score = best_score.max(oracle.eval(&genotype)?);
        if (step + 1) % record_every == 0 || step + 1 == total_steps {
            records.push(TraceRecord {
                epoch: 0,
                step: step + 1,
                loss: None,
                archive_diversity: archive.mean_pairwise_distance(),
                best_val_acc: Some(best_score),
            });
        }
    }
    Ok((
        archive,
        TrainTraces {
            records,
            fill_steps,
            total_steps,
        },
    ))
}

/// Outcome of one selection phase.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub genotype: Genotype,
    pub accuracy: f64,
    /// Best score after each evaluation; non-decreasing by construction.
    pub best_curve: Vec<f64>,
    pub evaluations: usize,
}

/// Scores every candidate and keeps the first-seen maximum.
pub fn select_best_of<I, F>(candidates: I, eval: &mut F) -> Result<SelectionOutcome>
where
    I: IntoIterator<Item = Genotype>,
    F: FnMut(&Genotype) -> Result<f64>,
{
    let mut best: Option<(Genotype, f64)> = None;
    let mut curve = Vec::new();
    let mut evaluations = 0usize;
    for g in candidates {
        let acc = eval(&g)?;
        evaluations += 1;
        match &best {
            Some((_, b)) if acc <= *b => {}
            _ => best = Some((g, acc)),
        }
        curve.push(best.as_ref().expect("just set").1);
    }
    let (genotype, accuracy) =
        best.ok_or_else(|| Error::InvalidConfig("selection needs at least one candidate".into()))?;
    Ok(SelectionOutcome {
        genotype,
        accuracy,
        best_curve: curve,
        evaluations,
    })
}

/// Random search over `budget` uniform samples with a caller-supplied
/// evaluator.
pub fn select_random_with<F, R>(
    spec: &CellSpec,
    budget: usize,
    eval: &mut F,
    rng: &mut R,
) -> Result<SelectionOutcome>
where
    F: FnMut(&Genotype) -> Result<f64>,
    R: Rng,
{
    if budget < 1 {
        return Err(Error::InvalidConfig("selection budget must be >= 1".into()));
    }
    let candidates: Vec<Genotype> = (0..budget)
        .map(|_| arch::random_genotype(spec, rng))
        .collect();
    select_best_of(candidates, eval)
}

/// Resamples one uniformly chosen slot field (source or op) to a
/// different legal value. Fields with a single legal value are never
/// chosen, so the child always differs from the parent in exactly one
/// field.
pub fn mutate_genotype<R: Rng>(g: &Genotype, spec: &CellSpec, rng: &mut R) -> Genotype {
    #[derive(Clone, Copy)]
    enum Field {
        Source,
        Op,
    }
    let mut candidates: Vec<(usize, Field)> = Vec::new();
    for (i, (_, node, _, _)) in g.edges().enumerate() {
        if spec.legal_sources(node) >= 2 {
            candidates.push((i, Field::Source));
        }
        // K >= 2 always, so the op field is always mutable.
        candidates.push((i, Field::Op));
    }
    let (slot_idx, field) = candidates[rng.gen_range(0..candidates.len())];
    let mut edges: Vec<arch::Edge> = g.edges().map(|(_, _, _, e)| e).collect();
    let node = g
        .edges()
        .nth(slot_idx)
        .map(|(_, node, _, _)| node)
        .expect("slot index in range");
    let edge = &mut edges[slot_idx];
    match field {
        Field::Source => {
            let alternatives = spec.legal_sources(node) - 1;
            let mut pick = rng.gen_range(0..alternatives);
            if pick >= edge.source {
                pick += 1;
            }
            edge.source = pick;
        }
        Field::Op => {
            let alternatives = spec.num_ops() - 1;
            let mut pick = rng.gen_range(0..alternatives);
            if pick >= edge.op {
                pick += 1;
            }
            edge.op = pick;
        }
    }
    crate::oracle::genotype_from_flat(spec, &edges)
}

/// Regularized evolution: tournament parent selection, single-field
/// mutation, oldest-out replacement, best-ever bookkeeping.
///
/// `initial` seeds the starting population (topped up with uniform
/// samples if short); pass `None` for the default uniform
/// initialization. The budget counts evaluator calls, including the
/// initial population.
pub fn select_evolution_with<F, R>(
    spec: &CellSpec,
    ea: &EaParams,
    budget: usize,
    eval: &mut F,
    initial: Option<Vec<Genotype>>,
    rng: &mut R,
) -> Result<SelectionOutcome>
where
    F: FnMut(&Genotype) -> Result<f64>,
    R: Rng,
{
    if ea.population_size < 2 {
        return Err(Error::InvalidConfig("EA population must be >= 2".into()));
    }
    if budget < ea.population_size {
        return Err(Error::InvalidConfig(
            "budget must cover the initial population".into(),
        ));
    }
    let mut population: Vec<Genotype> = initial.unwrap_or_default();
    population.truncate(ea.population_size);
    while population.len() < ea.population_size {
        population.push(arch::random_genotype(spec, rng));
    }

    let mut curve = Vec::with_capacity(budget);
    let mut best: Option<(Genotype, f64)> = None;
    let mut scored: std::collections::VecDeque<(Genotype, f64)> =
        std::collections::VecDeque::with_capacity(ea.population_size);
    let mut evaluations = 0usize;
    for g in population {
        let acc = eval(&g)?;
        evaluations += 1;
        match &best {
            Some((_, b)) if acc <= *b => {}
            _ => best = Some((g.clone(), acc)),
        }
        curve.push(best.as_ref().expect("just set").1);
        scored.push_back((g, acc));
    }

    while evaluations < budget {
        let mut parent_idx = rng.gen_range(0..scored.len());
        for _ in 1..ea.tournament_size {
            let i = rng.gen_range(0..scored.len());
            if scored[i].1 > scored[parent_idx].1 {
                parent_idx = i;
            }
        }
        let parent = scored[parent_idx].0.clone();
        let child = if rng.gen::<f64>() < ea.mutation_rate {
            mutate_genotype(&parent, spec, rng)
        } else {
            parent
        };
        let acc = eval(&child)?;
        evaluations += 1;
        match &best {
            Some((_, b)) if acc <= *b => {}
            _ => best = Some((child.clone(), acc)),
        }
        curve.push(best.as_ref().expect("just set").1);
        scored.push_back((child, acc));
        scored.pop_front();
    }

    let (genotype, accuracy) = best.expect("population was non-empty");
    Ok(SelectionOutcome {
        genotype,
        accuracy,
        best_curve: curve,
        evaluations,
    })
}

/// Random-search model selection by inherited accuracy.
pub fn select_random<R: Rng>(
    weights: &SharedWeights,
    spec: &CellSpec,
    val_batches: &[Batch<'_>],
    budget: usize,
    rng: &mut R,
) -> Result<(Genotype, f64)> {
    let mut eval = |g: &Genotype| weights.inherited_accuracy(g, val_batches);
    let outcome = select_random_with(spec, budget, &mut eval, rng)?;
    Ok((outcome.genotype, outcome.accuracy))
}

/// Evolutionary model selection by inherited accuracy.
pub fn select_evolution<R: Rng>(
    weights: &SharedWeights,
    spec: &CellSpec,
    val_batches: &[Batch<'_>],
    cfg: &SearchConfig,
    rng: &mut R,
) -> Result<(Genotype, f64)> {
    let mut eval = |g: &Genotype| weights.inherited_accuracy(g, val_batches);
    let outcome = select_evolution_with(spec, &cfg.ea, cfg.selection_budget, &mut eval, None, rng)?;
    Ok((outcome.genotype, outcome.accuracy))
}

/// Full pipeline: train the supernet, select an architecture, retrain it
/// from fresh weights, and report test accuracy plus all traces.
pub fn run_pipeline(
    cfg: &SearchConfig,
    dataset: &MicroDataset,
    spec: &CellSpec,
) -> Result<RunResult> {
    run_pipeline_full(cfg, dataset, spec).map(|(r, _, _)| r)
}

/// [`run_pipeline`], also handing back the final archive and traces so
/// callers can snapshot them.
pub fn run_pipeline_full(
    cfg: &SearchConfig,
    dataset: &MicroDataset,
    spec: &CellSpec,
) -> Result<(RunResult, Archive, TrainTraces)> {
    let t0 = Instant::now();
    let (weights, archive, traces) = train_supernet(cfg, dataset, spec)?;
    let train_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let val_batches = dataset.batches(Split::Val, cfg.batch_size);
    let mut select_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, SEED_TAG_SELECT));
    let (selected, selected_accuracy) = match cfg.selector {
        Selector::RandomSearch => select_random(
            &weights,
            spec,
            &val_batches,
            cfg.selection_budget,
            &mut select_rng,
        )?,
        Selector::Evolution => {
            select_evolution(&weights, spec, &val_batches, cfg, &mut select_rng)?
        }
    };
    let select_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let retrain_seed = derive_seed(
        derive_seed(cfg.master_seed, SEED_TAG_RETRAIN),
        selected.content_hash(),
    );
    let mut fresh = SharedWeights::init(
        spec,
        cfg.hidden_dim,
        dataset.input_dim,
        dataset.num_classes,
        retrain_seed,
    )?;
    let train_batches = dataset.batches(Split::Train, cfg.batch_size);
    for _ in 0..cfg.retrain_epochs {
        for batch in &train_batches {
            fresh.train_step(&selected, batch, cfg.learning_rate)?;
        }
    }
    let test_batches = dataset.batches(Split::Test, cfg.batch_size);
    let retrained_test_accuracy = fresh.inherited_accuracy(&selected, &test_batches)?;
    let retrain_s = t2.elapsed().as_secs_f64();

    let result = RunResult {
        seed: cfg.master_seed,
        config: cfg.clone(),
        spec: spec.clone(),
        dataset: Some(DatasetInfo::from_dataset(dataset)),
        oracle: None,
        selected_genotype: arch::serialize(&selected, spec),
        selected_accuracy,
        retrained_test_accuracy,
        fill_steps: traces.fill_steps,
        total_steps: traces.total_steps,
        loss_curve: traces.records.iter().filter_map(|r| r.loss).collect(),
        diversity_trace: traces.records.iter().map(|r| r.archive_diversity).collect(),
        timing: Timing {
            train_s,
            select_s,
            retrain_s,
            total_s: t0.elapsed().as_secs_f64(),
        },
    };
    Ok((result, archive, traces))
}

/// Pipeline variant that studies controller dynamics on a tabular
/// oracle: the archive evolves as usual, selection is scored by the
/// oracle, and the evolutionary selector starts from architectures
/// sampled out of the final archive.
pub fn run_oracle_pipeline(
    cfg: &SearchConfig,
    oracle: &TabularOracle,
    spec: &CellSpec,
) -> Result<RunResult> {
    run_oracle_pipeline_full(cfg, oracle, spec).map(|(r, _, _)| r)
}

/// [`run_oracle_pipeline`], also handing back the final archive and traces.
pub fn run_oracle_pipeline_full(
    cfg: &SearchConfig,
    oracle: &TabularOracle,
    spec: &CellSpec,
) -> Result<(RunResult, Archive, TrainTraces)> {
    let t0 = Instant::now();
    let (archive, traces) = run_oracle_controller(cfg, oracle, spec)?;
    let train_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut select_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, SEED_TAG_SELECT));
    let mut eval = |g: &Genotype| oracle.eval(g);
    let outcome = match cfg.selector {
        Selector::RandomSearch => {
            select_random_with(spec, cfg.selection_budget, &mut eval, &mut select_rng)?
        }
        Selector::Evolution => {
            let initial: Vec<Genotype> = (0..cfg.ea.population_size)
                .map(|_| {
                    let (i, _) = archive.sample(&mut select_rng)?;
                    Ok(archive.rounded(i)?.clone())
                })
                .collect::<Result<_>>()?;
            select_evolution_with(
                spec,
                &cfg.ea,
                cfg.selection_budget,
                &mut eval,
                Some(initial),
                &mut select_rng,
            )?
        }
    };
    let select_s = t1.elapsed().as_secs_f64();

    let result = RunResult {
        seed: cfg.master_seed,
        config: cfg.clone(),
        spec: spec.clone(),
        dataset: None,
        oracle: Some(*oracle.config()),
        selected_genotype: arch::serialize(&outcome.genotype, spec),
        selected_accuracy: outcome.accuracy,
        retrained_test_accuracy: outcome.accuracy,
        fill_steps: traces.fill_steps,
        total_steps: traces.total_steps,
        loss_curve: Vec::new(),
        diversity_trace: traces.records.iter().map(|r| r.archive_diversity).collect(),
        timing: Timing {
            train_s,
            select_s,
            retrain_s: 0.0,
            total_s: t0.elapsed().as_secs_f64(),
        },
    };
    Ok((result, archive, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Op;
    use crate::oracle;
    use crate::supernet::{make_dataset, SplitSizes};

    fn tiny_search_spec() -> CellSpec {
        CellSpec::new(1, 2, 1, vec![Op::Zero, Op::Identity, Op::Tanh], 1).unwrap()
    }

    fn fast_config() -> SearchConfig {
        SearchConfig {
            epochs: 3,
            batch_size: 10,
            learning_rate: 0.1,
            hidden_dim: 4,
            archive_capacity: 8,
            controller: Controller::Novelty,
            selector: Selector::RandomSearch,
            selection_budget: 12,
            retrain_epochs: 3,
            controller_steps: 40,
            master_seed: 7,
            novelty: NoveltyConfig {
                k: 3,
                n: 4,
                ..NoveltyConfig::default()
            },
            ea: EaParams {
                population_size: 6,
                tournament_size: 3,
                mutation_rate: 1.0,
            },
        }
    }

    fn tiny_dataset() -> MicroDataset {
        make_dataset("blobs", SplitSizes::new(30, 18, 18), 0.3, 5).unwrap()
    }

    #[test]
    fn mutation_changes_exactly_one_field() {
        let spec =
            CellSpec::new(2, 3, 2, vec![Op::Zero, Op::Identity, Op::Tanh, Op::Relu], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let parent = arch::random_genotype(&spec, &mut rng);
            let child = mutate_genotype(&parent, &spec, &mut rng);
            child.validate(&spec).unwrap();
            let mut field_diffs = 0usize;
            for ((_, _, _, a), (_, _, _, b)) in parent.edges().zip(child.edges()) {
                if a.source != b.source {
                    field_diffs += 1;
                }
                if a.op != b.op {
                    field_diffs += 1;
                }
            }
            assert_eq!(field_diffs, 1);
        }
    }

    #[test]
    fn select_best_of_over_enumeration_matches_brute_force() {
        let spec = tiny_search_spec();
        let tab = oracle::TabularOracle::hash_smooth(&spec, 12).unwrap();
        let mut eval = |g: &Genotype| tab.eval(g);
        let outcome = select_best_of(oracle::enumerate(&spec).unwrap(), &mut eval).unwrap();
        let (bg, bv) =
            oracle::brute_force_argmax(&spec, |g| tab.eval(g), oracle::DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(outcome.genotype, bg);
        assert_eq!(outcome.accuracy, bv);
    }

    #[test]
    fn select_random_budget_one_returns_its_sample() {
        let spec = tiny_search_spec();
        let tab = oracle::TabularOracle::hash_smooth(&spec, 3).unwrap();
        let mut eval = |g: &Genotype| tab.eval(g);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let outcome = select_random_with(&spec, 1, &mut eval, &mut rng).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(8);
        let expected = arch::random_genotype(&spec, &mut rng2);
        assert_eq!(outcome.genotype, expected);
        assert_eq!(outcome.accuracy, tab.eval(&expected).unwrap());
        assert_eq!(outcome.evaluations, 1);
    }

    #[test]
    fn select_random_accuracy_matches_independent_recompute() {
        let spec = tiny_search_spec();
        let cfg = fast_config();
        let d = tiny_dataset();
        let (weights, _, _) = train_supernet(&cfg, &d, &spec).unwrap();
        let val = d.batches(Split::Val, cfg.batch_size);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (g, acc) = select_random(&weights, &spec, &val, 15, &mut rng).unwrap();
        assert_eq!(acc, weights.inherited_accuracy(&g, &val).unwrap());
    }

    #[test]
    fn evolution_best_curve_is_monotone() {
        let spec = tiny_search_spec();
        let tab = oracle::TabularOracle::hash_smooth(&spec, 17).unwrap();
        let mut eval = |g: &Genotype| tab.eval(g);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let outcome =
            select_evolution_with(&spec, &EaParams::default(), 120, &mut eval, None, &mut rng)
                .unwrap();
        assert_eq!(outcome.best_curve.len(), 120);
        for pair in outcome.best_curve.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert_eq!(outcome.accuracy, *outcome.best_curve.last().unwrap());
    }

    #[test]
    fn train_supernet_is_deterministic() {
        let spec = tiny_search_spec();
        let cfg = fast_config();
        let d = tiny_dataset();
        let (w1, a1, t1) = train_supernet(&cfg, &d, &spec).unwrap();
        let (w2, a2, t2) = train_supernet(&cfg, &d, &spec).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(a1.entries(), a2.entries());
        assert_eq!(t1, t2);
    }

    #[test]
    fn fill_phase_counts() {
        let spec = tiny_search_spec();
        let d = tiny_dataset();
        // Capacity below total steps: fill exactly `capacity` times.
        let cfg = fast_config();
        let (_, archive, traces) = train_supernet(&cfg, &d, &spec).unwrap();
        assert_eq!(traces.fill_steps, cfg.archive_capacity);
        assert_eq!(archive.len(), cfg.archive_capacity);

        // Capacity above total steps degenerates to pure random sampling.
        let cfg_big = SearchConfig {
            archive_capacity: 1000,
            ..fast_config()
        };
        let (_, archive, traces) = train_supernet(&cfg_big, &d, &spec).unwrap();
        assert_eq!(traces.total_steps, traces.fill_steps);
        assert_eq!(archive.len(), traces.total_steps);
    }

    #[test]
    fn selection_never_touches_weights() {
        let spec = tiny_search_spec();
        let cfg = fast_config();
        let d = tiny_dataset();
        let (weights, _, _) = train_supernet(&cfg, &d, &spec).unwrap();
        let snapshot = weights.clone();
        let val = d.batches(Split::Val, cfg.batch_size);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        select_random(&weights, &spec, &val, 10, &mut rng).unwrap();
        select_evolution(&weights, &spec, &val, &cfg, &mut rng).unwrap();
        assert_eq!(weights, snapshot);
    }

    #[test]
    fn pipeline_is_deterministic_and_echoes_config() {
        let spec = tiny_search_spec();
        let cfg = fast_config();
        let d = tiny_dataset();
        let r1 = run_pipeline(&cfg, &d, &spec).unwrap();
        let r2 = run_pipeline(&cfg, &d, &spec).unwrap();
        assert_eq!(r1.selected_genotype, r2.selected_genotype);
        assert_eq!(r1.selected_accuracy, r2.selected_accuracy);
        assert_eq!(r1.retrained_test_accuracy, r2.retrained_test_accuracy);
        assert_eq!(r1.loss_curve, r2.loss_curve);
        assert_eq!(r1.diversity_trace, r2.diversity_trace);
        assert_eq!(r1.config, cfg);
        let sel = arch::deserialize(&r1.selected_genotype, &spec).unwrap();
        sel.validate(&spec).unwrap();
    }

    #[test]
    fn oracle_pipeline_runs_all_controllers() {
        let spec = tiny_search_spec();
        let tab = oracle::TabularOracle::deceptive(&spec, 9).unwrap();
        for controller in [
            Controller::Random,
            Controller::Novelty,
            Controller::NoveltyReward,
        ] {
            for selector in [Selector::RandomSearch, Selector::Evolution] {
                let cfg = SearchConfig {
                    controller,
                    selector,
                    ..fast_config()
                };
                let r = run_oracle_pipeline(&cfg, &tab, &spec).unwrap();
                assert!(r.selected_accuracy > 0.0);
                assert!(r.dataset.is_none());
                assert_eq!(r.oracle, Some(*tab.config()));
                assert_eq!(r.retrained_test_accuracy, r.selected_accuracy);
            }
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = fast_config();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = fast_config();
        cfg.ea.population_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = fast_config();
        cfg.selector = Selector::Evolution;
        cfg.selection_budget = 3;
        assert!(cfg.validate().is_err());
        assert!(fast_config().validate().is_ok());
    }
}
