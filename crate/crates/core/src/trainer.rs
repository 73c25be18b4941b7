//! Maximum-likelihood training with sampled-softmax candidates and annealed
//! input noise.
//!
//! Memory follows the usual lagged scheme of memory-based temporal encoders:
//! when batch `b` is trained, the memory rows for batch `b − 1` are
//! recomputed on the tape from the detached states, so the memory cell
//! receives gradient through the loss of the batch that follows it. No
//! gradient reaches further back than that.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoder::{MemoryUpdate, NodeStates};
use crate::error::{Error, Result};
use crate::event_store::{inter_event_deltas, EventStream, FeatureKind, FeatureSchema, Interaction};
use crate::model::{Model, ModelConfig};
use crate::nn::Adam;
use crate::seeds::{stream_rng, Stream};
use crate::tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Candidate set size as a multiple of the batch size.
    pub candidate_multiplier: f64,
    pub noise_sigma_start: f64,
    pub noise_sigma_end: f64,
    pub seed: u64,
    pub disable_attention: bool,
    pub disable_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            epochs: 50,
            learning_rate: 1e-4,
            candidate_multiplier: 2.0,
            noise_sigma_start: 0.1,
            noise_sigma_end: 0.001,
            seed: 0,
            disable_attention: false,
            disable_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.candidate_multiplier >= 1.0 && self.candidate_multiplier.is_finite()) {
            return Err(Error::Argument(format!(
                "candidate_multiplier {} must be at least 1",
                self.candidate_multiplier
            )));
        }
        if !(self.noise_sigma_start >= self.noise_sigma_end && self.noise_sigma_end >= 0.0) {
            return Err(Error::Argument(format!(
                "noise sigmas must satisfy start ({}) >= end ({}) >= 0",
                self.noise_sigma_start, self.noise_sigma_end
            )));
        }
        Ok(())
    }

    fn candidate_target(&self) -> usize {
        (self.candidate_multiplier * self.batch_size as f64).ceil() as usize
    }
}

/// Geometric anneal from `noise_sigma_start` at step 0 to `noise_sigma_end`
/// at `total_steps`.
pub fn noise_sigma(step: u64, total_steps: u64, config: &TrainConfig) -> f64 {
    let (start, end) = (config.noise_sigma_start, config.noise_sigma_end);
    if config.disable_noise || start == 0.0 {
        return 0.0;
    }
    let total = total_steps.max(1);
    if step == 0 {
        return start;
    }
    if step >= total {
        return end;
    }
    start * (end / start).powf(step as f64 / total as f64)
}

/// The batch's true nodes plus uniformly drawn extras, `min(target,
/// num_nodes)` in total.
pub fn sample_candidates(
    num_nodes: usize,
    true_nodes: &BTreeSet<usize>,
    target_size: usize,
    rng: &mut impl Rng,
) -> Result<BTreeSet<usize>> {
    if target_size < true_nodes.len() {
        return Err(Error::Argument(format!(
            "candidate target {target_size} below the {} true nodes",
            true_nodes.len()
        )));
    }
    if let Some(&bad) = true_nodes.iter().find(|&&n| n >= num_nodes) {
        return Err(Error::Domain(format!("node {bad} outside universe of {num_nodes}")));
    }
    let mut out = true_nodes.clone();
    let want = target_size.min(num_nodes);
    if want == num_nodes {
        out.extend(0..num_nodes);
        return Ok(out);
    }
    let rest: Vec<usize> = (0..num_nodes).filter(|n| !true_nodes.contains(n)).collect();
    let extra = want - true_nodes.len();
    out.extend(index::sample(rng, rest.len(), extra).into_iter().map(|i| rest[i]));
    Ok(out)
}

/// Deltas and feature values with Gaussian noise on every numerical
/// quantity. Deltas are clamped at zero after noising.
fn noised_targets(
    schema: &FeatureSchema,
    batch: &[Interaction],
    deltas: &[f64],
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut ds = deltas.to_vec();
    let mut fs: Vec<Vec<f64>> = batch.iter().map(|x| x.features.clone()).collect();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
        for (d, f) in ds.iter_mut().zip(fs.iter_mut()) {
            *d = (*d + normal.sample(rng)).max(0.0);
            for (i, v) in f.iter_mut().enumerate() {
                if schema.kind(i) == FeatureKind::Numerical {
                    *v += normal.sample(rng);
                }
            }
        }
    }
    Ok((ds, fs))
}

fn check_batch(batch: &[Interaction], deltas: &[f64], candidates: &BTreeSet<usize>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if deltas.len() != batch.len() {
        return Err(Error::Argument(format!(
            "{} deltas for {} interactions",
            deltas.len(),
            batch.len()
        )));
    }
    for x in batch {
        for node in [x.src, x.dst] {
            if !candidates.contains(&node) {
                return Err(Error::Argument(format!(
                    "batch node {node} missing from the candidate set"
                )));
            }
        }
    }
    Ok(())
}

/// Negative log-likelihood of `batch` on the tape, with every categorical
/// normalized over `candidates` (sorted) embedded at the batch start time.
#[allow(clippy::too_many_arguments)]
fn loss_var(
    model: &Model,
    tape: &mut Tape,
    states: &NodeStates,
    memory: Var,
    batch: &[Interaction],
    deltas: &[f64],
    features: &[Vec<f64>],
    candidates: &[usize],
) -> Result<Var> {
    let row = |node: usize| candidates.binary_search(&node).expect("candidate checked");
    let src_rows: Vec<usize> = batch.iter().map(|x| row(x.src)).collect();
    let dst_rows: Vec<usize> = batch.iter().map(|x| row(x.dst)).collect();
    let (enc, dec) = (&model.encoder, &model.decoder);

    let z = enc.embed_var(tape, memory, states, candidates, batch[0].t);

    let src_logits = dec.reshape_var(tape, z);
    let src_logits = tape.transpose(src_logits);
    let src_lsm = tape.log_softmax_rows(src_logits);
    let src_lsm = tape.broadcast_rows(src_lsm, batch.len());
    let src_ll = tape.pick_cols(src_lsm, &src_rows);

    let dst_logits = dec.product_by_index(tape, z, &src_rows);
    let dst_lsm = tape.log_softmax_rows(dst_logits);
    let dst_ll = tape.pick_cols(dst_lsm, &dst_rows);

    let zs = tape.gather_rows(z, &src_rows);
    let zd = tape.gather_rows(z, &dst_rows);
    let h0 = dec.merge_var(tape, zs, zd);
    let tail_ll = dec.tail_log_likelihood(tape, h0, deltas, features)?;

    let all = tape.concat_cols(&[src_ll, dst_ll, tail_ll]);
    let total = tape.sum(all);
    Ok(tape.scale(total, -1.0))
}

/// Loss of one batch given the current node states.
pub fn batch_nll(
    model: &Model,
    states: &NodeStates,
    batch: &[Interaction],
    deltas: &[f64],
    candidates: &BTreeSet<usize>,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    check_batch(batch, deltas, candidates)?;
    let (ds, fs) = noised_targets(&model.schema, batch, deltas, sigma, rng)?;
    let cands: Vec<usize> = candidates.iter().copied().collect();
    let mut tape = Tape::new(&model.params);
    let memory = model.encoder.memory_var(&mut tape, states, None);
    let loss = loss_var(model, &mut tape, states, memory, batch, &ds, &fs, &cands)?;
    Ok(tape.value(loss).scalar())
}

/// Loss and weight gradients of one training step: the memory rows of the
/// `pending` batch are recomputed on the tape before `batch` is scored.
#[allow(clippy::too_many_arguments)]
pub fn batch_nll_gradients(
    model: &Model,
    states: &NodeStates,
    pending: &[Interaction],
    batch: &[Interaction],
    deltas: &[f64],
    candidates: &BTreeSet<usize>,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<(f64, Gradients)> {
    let out = step_tape(model, states, pending, batch, deltas, candidates, sigma, rng)?;
    Ok((out.loss, out.grads))
}

struct StepOutput {
    loss: f64,
    grads: Gradients,
    update: Option<(MemoryUpdate, crate::tape::Matrix)>,
}

#[allow(clippy::too_many_arguments)]
fn step_tape(
    model: &Model,
    states: &NodeStates,
    pending: &[Interaction],
    batch: &[Interaction],
    deltas: &[f64],
    candidates: &BTreeSet<usize>,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<StepOutput> {
    check_batch(batch, deltas, candidates)?;
    let (ds, fs) = noised_targets(&model.schema, batch, deltas, sigma, rng)?;
    let cands: Vec<usize> = candidates.iter().copied().collect();
    let mut tape = Tape::new(&model.params);
    let update = model.encoder.memory_update(&mut tape, states, pending)?;
    let memory = model.encoder.memory_var(&mut tape, states, update.as_ref());
    let loss = loss_var(model, &mut tape, states, memory, batch, &ds, &fs, &cands)?;
    let value = tape.value(loss).scalar();
    let grads = tape.backward(loss);
    let update = update.map(|u| {
        let rows = tape.value(u.rows).clone();
        (u, rows)
    });
    Ok(StepOutput {
        loss: value,
        grads,
        update,
    })
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean negative log-likelihood per interaction.
    pub mean_nll: f64,
    /// Noise level at the epoch's last step.
    pub sigma: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "{},{},{},{:.3}",
            self.epoch, self.mean_nll, self.sigma, self.wall_seconds
        )
    }
}

/// Resumable training state machine; each call to [`Trainer::step`] is one
/// optimizer update.
pub struct Trainer<'s> {
    model: Model,
    config: TrainConfig,
    stream: &'s EventStream,
    deltas: Vec<f64>,
    adam: Adam,
    states: NodeStates,
    pending: std::ops::Range<usize>,
    rng: ChaCha8Rng,
    step: u64,
    epoch_nll_sum: f64,
    epoch_events: u64,
    epoch_start: Instant,
}

impl<'s> Trainer<'s> {
    pub fn new(model_config: &ModelConfig, config: &TrainConfig, stream: &'s EventStream) -> Result<Self> {
        config.validate()?;
        if stream.is_empty() {
            return Err(Error::Argument("cannot train on an empty stream".into()));
        }
        let mut model_config = model_config.clone();
        model_config.disable_attention |= config.disable_attention;
        let model = Model::new(model_config, stream.schema().clone(), config.seed)?;
        let adam = Adam::new(&model.params, config.learning_rate);
        let states = model.fresh_states(stream.num_nodes(), stream.origin_time());
        Ok(Trainer {
            deltas: inter_event_deltas(stream)?,
            rng: stream_rng(config.seed, Stream::Train),
            model,
            config: config.clone(),
            stream,
            adam,
            states,
            pending: 0..0,
            step: 0,
            epoch_nll_sum: 0.0,
            epoch_events: 0,
            epoch_start: Instant::now(),
        })
    }

    /// Continue from a checkpoint taken on the same stream.
    pub fn resume(checkpoint: Checkpoint, stream: &'s EventStream) -> Result<Self> {
        if stream.is_empty() {
            return Err(Error::Argument("cannot train on an empty stream".into()));
        }
        if checkpoint.states.len() != stream.num_nodes() {
            return Err(Error::Checkpoint(format!(
                "checkpoint covers {} nodes, stream has {}",
                checkpoint.states.len(),
                stream.num_nodes()
            )));
        }
        if checkpoint.model.schema != *stream.schema() {
            return Err(Error::Checkpoint(
                "checkpoint schema differs from the stream schema".into(),
            ));
        }
        let mut trainer = Trainer {
            deltas: inter_event_deltas(stream)?,
            model: checkpoint.model,
            config: checkpoint.train_config,
            stream,
            adam: checkpoint.adam,
            states: checkpoint.states,
            pending: 0..0,
            rng: checkpoint.rng,
            step: checkpoint.step,
            epoch_nll_sum: checkpoint.epoch_nll_sum,
            epoch_events: checkpoint.epoch_events,
            epoch_start: Instant::now(),
        };
        let b = (trainer.step % trainer.batches_per_epoch()) as usize;
        if b > 0 {
            trainer.pending = trainer.batch_range(b - 1);
        }
        Ok(trainer)
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.stream.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.config.epochs as u64 * self.batches_per_epoch()
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn states(&self) -> &NodeStates {
        &self.states
    }

    fn batch_range(&self, b: usize) -> std::ops::Range<usize> {
        let bs = self.config.batch_size;
        b * bs..((b + 1) * bs).min(self.stream.len())
    }

    /// One optimizer update. Returns the epoch's record when the step
    /// completes an epoch.
    pub fn step(&mut self) -> Result<Option<EpochRecord>> {
        if self.is_done() {
            return Err(Error::Argument("training already finished".into()));
        }
        let bpe = self.batches_per_epoch();
        let epoch = (self.step / bpe) as usize;
        let b = (self.step % bpe) as usize;
        if b == 0 {
            self.states = self
                .model
                .fresh_states(self.stream.num_nodes(), self.stream.origin_time());
            self.pending = 0..0;
            self.epoch_nll_sum = 0.0;
            self.epoch_events = 0;
            self.epoch_start = Instant::now();
        }
        let range = self.batch_range(b);
        let interactions = self.stream.interactions();
        let batch = &interactions[range.clone()];
        let sigma = noise_sigma(self.step, self.total_steps(), &self.config);
        let true_nodes: BTreeSet<usize> = batch.iter().flat_map(|x| [x.src, x.dst]).collect();
        let target = self.config.candidate_target().max(true_nodes.len());
        let candidates = sample_candidates(self.stream.num_nodes(), &true_nodes, target, &mut self.rng)?;

        let out = step_tape(
            &self.model,
            &self.states,
            &interactions[self.pending.clone()],
            batch,
            &self.deltas[range.clone()],
            &candidates,
            sigma,
            &mut self.rng,
        )?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        self.adam.step(&mut self.model.params, &out.grads);
        if let Some((update, rows)) = &out.update {
            self.states.commit_memory(update, rows);
        }
        self.states.record_neighbors(batch);
        self.pending = range;
        self.epoch_nll_sum += out.loss;
        self.epoch_events += batch.len() as u64;
        self.step += 1;

        if b as u64 + 1 < bpe {
            return Ok(None);
        }
        // Fold the last batch into memory so the final states cover the
        // whole stream.
        let mut tape = Tape::new(&self.model.params);
        if let Some(update) =
            self.model
                .encoder
                .memory_update(&mut tape, &self.states, &interactions[self.pending.clone()])?
        {
            let rows = tape.value(update.rows).clone();
            self.states.commit_memory(&update, &rows);
        }
        self.pending = 0..0;
        Ok(Some(EpochRecord {
            epoch,
            mean_nll: self.epoch_nll_sum / self.epoch_events as f64,
            sigma,
            wall_seconds: self.epoch_start.elapsed().as_secs_f64(),
        }))
    }

    /// Run to completion, reporting every finished epoch.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::new();
        while !self.is_done() {
            if let Some(record) = self.step()? {
                log::info!(
                    "epoch {} mean nll {:.4} sigma {:.4}",
                    record.epoch,
                    record.mean_nll,
                    record.sigma
                );
                on_epoch(&record);
                log.push(record);
            }
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train_config: self.config.clone(),
            adam: self.adam.clone(),
            states: self.states.clone(),
            rng: self.rng.clone(),
            step: self.step,
            epoch_nll_sum: self.epoch_nll_sum,
            epoch_events: self.epoch_events,
        }
    }
}

/// Train from scratch; returns the final checkpoint and the run log.
pub fn train(
    stream: &EventStream,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model_config, config, stream)?;
    let log = trainer.run(|_| {})?;
    Ok((trainer.checkpoint(), log))
}
