//! Toy multi-task trainer showing loss descent on synthetic token tables.
//!
//! A "model" maps the embedding of the previous token through an
//! [`MtlLoraLayer`] to next-token logits over a small vocabulary. Each task
//! has its own deterministic successor rule; sequences start with a random
//! instruction prefix (masked out of the loss) followed by a completion that
//! follows the task's rule. Training minimizes the task-weighted completion
//! NLL with plain SGD, updating only adapter parameters.
//!
//! Batch size 4 with 4 accumulation steps. The learning-rate grid is the
//! usual `{1, 2, 5, 10}·1e-5` fine-tuning grid scaled by 1e3, since plain SGD
//! on a toy layer needs larger steps than Adam on a full model.

use serde::{Deserialize, Serialize};

use super::layers::AdapterLayer;
use super::{completion_nll, mtl_loss, CompletionBatch, Matrix, MtlLoraLayer, Result, TaskWeights};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    pub rank: usize,
    pub n_up: usize,
    pub tau: f64,
    /// Training sequences per task; unequal counts exercise the task weights.
    pub examples_per_task: Vec<usize>,
    pub instruction_len: usize,
    pub completion_len: usize,
    pub batch_size: usize,
    pub accumulation: usize,
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab: 12,
            embed_dim: 8,
            rank: 4,
            n_up: 2,
            tau: super::DEFAULT_TAU,
            examples_per_task: vec![48, 16, 32],
            instruction_len: 3,
            completion_len: 4,
            batch_size: 4,
            accumulation: 4,
            lr_grid: vec![1e-2, 2e-2, 5e-2, 1e-1],
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Sequence {
    task: usize,
    tokens: Vec<usize>,
    instruction_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyRun {
    pub lr: f64,
    /// Task-weighted training loss before training and after every epoch.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyReport {
    pub runs: Vec<ToyRun>,
    /// Index into `runs` with the lowest held-out loss.
    pub best: usize,
    pub best_heldout_loss: f64,
}

struct ToyModel {
    embeddings: Vec<Vec<f64>>,
    layer: MtlLoraLayer,
}

fn successor(task: usize, prev: usize, vocab: usize) -> usize {
    (prev * (task + 2) + task + 1) % vocab
}

fn make_sequences(cfg: &ToyConfig, counts: &[usize], rng: &mut SeededRng) -> Vec<Sequence> {
    let mut out = Vec::new();
    for (task, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let mut tokens: Vec<usize> =
                (0..cfg.instruction_len).map(|_| rng.below(cfg.vocab as u64) as usize).collect();
            for _ in 0..cfg.completion_len {
                let prev = *tokens.last().expect("instruction is nonempty");
                tokens.push(successor(task, prev, cfg.vocab));
            }
            out.push(Sequence { task, tokens, instruction_len: cfg.instruction_len });
        }
    }
    out
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl ToyModel {
    fn new(cfg: &ToyConfig, rng: &mut SeededRng) -> Result<Self> {
        let embeddings = (0..cfg.vocab)
            .map(|_| (0..cfg.embed_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let base = Matrix::uniform(cfg.vocab, cfg.embed_dim, -0.1, 0.1, rng);
        let layer = MtlLoraLayer::new(
            base,
            cfg.rank,
            cfg.examples_per_task.len(),
            cfg.n_up,
            cfg.tau,
            rng.next_u64(),
        )?;
        Ok(Self { embeddings, layer })
    }

    /// Completion NLL of one sequence and, if requested, its logit gradients
    /// per position (paired with the input position).
    fn sequence_loss(&self, seq: &Sequence, mut grads: Option<&mut Vec<(usize, Vec<f64>)>>) -> Result<f64> {
        let mut logprobs = Vec::new();
        let mut mask = Vec::new();
        for pos in 1..seq.tokens.len() {
            let x = &self.embeddings[seq.tokens[pos - 1]];
            let lp = log_softmax(&self.layer.mtl_forward(x, seq.task)?);
            let target = seq.tokens[pos];
            let is_completion = pos >= seq.instruction_len;
            logprobs.push(lp[target]);
            mask.push(is_completion);
            if let (Some(g), true) = (grads.as_deref_mut(), is_completion) {
                let mut d: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                d[target] -= 1.0;
                g.push((pos - 1, d));
            }
        }
        Ok(completion_nll(&CompletionBatch::new(logprobs, mask)?))
    }

    fn weighted_loss(&self, data: &[Sequence], weights: &TaskWeights) -> Result<f64> {
        let n_tasks = weights.weights().len();
        let mut sums = vec![0.0; n_tasks];
        let mut counts = vec![0usize; n_tasks];
        for seq in data {
            sums[seq.task] += self.sequence_loss(seq, None)?;
            counts[seq.task] += 1;
        }
        let per_task: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        mtl_loss(&per_task, weights)
    }

    /// One optimizer step over `batch`, gradients of Σ_t w_t · mean_t(NLL).
    fn step(&mut self, batch: &[&Sequence], weights: &TaskWeights, lr: f64) -> Result<()> {
        let n_tasks = weights.weights().len();
        let mut per_task_count = vec![0usize; n_tasks];
        for seq in batch {
            per_task_count[seq.task] += 1;
        }
        let mut task_grads: Vec<Option<Vec<Vec<f64>>>> = vec![None; n_tasks];
        for seq in batch {
            let mut logit_grads = Vec::new();
            self.sequence_loss(seq, Some(&mut logit_grads))?;
            let scale = weights.weights()[seq.task] / per_task_count[seq.task] as f64;
            for (input_pos, d) in logit_grads {
                let x = &self.embeddings[seq.tokens[input_pos]];
                let g: Vec<f64> = d.iter().map(|v| v * scale).collect();
                let groups = self.layer.gradients(x, seq.task, &g)?;
                match &mut task_grads[seq.task] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(groups) {
                            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        }
                    }
                    slot @ None => *slot = Some(groups),
                }
            }
        }
        for (task, grads) in task_grads.into_iter().enumerate() {
            let Some(grads) = grads else { continue };
            for (params, grad) in self.layer.param_groups_mut(task)?.into_iter().zip(grads) {
                params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
            }
        }
        Ok(())
    }
}

/// Train one model per learning rate; keep the one with the lowest
/// held-out loss.
pub fn run_toy_training(cfg: &ToyConfig) -> Result<ToyReport> {
    let mut rng = SeededRng::new(cfg.seed);
    let train = make_sequences(cfg, &cfg.examples_per_task, &mut rng);
    let heldout_counts = vec![8; cfg.examples_per_task.len()];
    let heldout = make_sequences(cfg, &heldout_counts, &mut rng);
    let weights = TaskWeights::from_counts(&cfg.examples_per_task)?;
    let init_seed = rng.next_u64();
    let effective_batch = (cfg.batch_size * cfg.accumulation).max(1);

    let mut runs = Vec::new();
    let mut best = (0, f64::INFINITY);
    for (i, &lr) in cfg.lr_grid.iter().enumerate() {
        let mut model = ToyModel::new(cfg, &mut SeededRng::new(init_seed))?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = SeededRng::new(init_seed ^ 0x5eed);
        let mut losses = vec![model.weighted_loss(&train, &weights)?];
        for _ in 0..cfg.epochs {
            shuffle_rng.shuffle(&mut order);
            for chunk in order.chunks(effective_batch) {
                let batch: Vec<&Sequence> = chunk.iter().map(|&j| &train[j]).collect();
                model.step(&batch, &weights, lr)?;
            }
            losses.push(model.weighted_loss(&train, &weights)?);
        }
        let heldout_loss = model.weighted_loss(&heldout, &weights)?;
        if heldout_loss < best.1 {
            best = (i, heldout_loss);
        }
        runs.push(ToyRun { lr, losses });
    }
    Ok(ToyReport { runs, best: best.0, best_heldout_loss: best.1 })
}
