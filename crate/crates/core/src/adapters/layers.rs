use serde::{Deserialize, Serialize};

use super::{AdapterError, Matrix, Result};
use crate::rng::SeededRng;

/// Default mixture temperature for MTL-LoRA.
pub const DEFAULT_TAU: f64 = 0.5;

/// Common surface used by the gradient checker and the toy trainer.
///
/// Trainable parameters are exposed as flat groups; `gradients` returns one
/// vector per group in the same order, given `∂loss/∂h`.
pub trait AdapterLayer {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, x: &[f64], task: usize) -> Result<Vec<f64>>;
    fn param_group_names(&self) -> Vec<String>;
    fn param_groups_mut(&mut self, task: usize) -> Result<Vec<&mut [f64]>>;
    fn gradients(&self, x: &[f64], task: usize, grad_out: &[f64]) -> Result<Vec<Vec<f64>>>;
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(AdapterError::Dimension(format!("{what}: expected length {expected}, got {got}")))
    }
}

fn add_scaled(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Down-projection init: uniform in ±1/√r.
fn init_down(rank: usize, k: usize, rng: &mut SeededRng) -> Matrix {
    let bound = 1.0 / (rank as f64).sqrt();
    Matrix::uniform(rank, k, -bound, bound, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraLayer {
    pub base: Matrix,
    pub down: Matrix,
    pub up: Matrix,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub down: Matrix,
    pub up: Matrix,
}

impl LoraLayer {
    /// Frozen `base` (d×k); `down` seeded, `up` zero so the layer starts as `base`.
    pub fn new(base: Matrix, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        let limit = base.rows().min(base.cols());
        if rank == 0 || rank > limit {
            return Err(AdapterError::RankTooLarge { rank, limit });
        }
        let down = init_down(rank, base.cols(), &mut SeededRng::new(seed));
        let up = Matrix::zeros(base.rows(), rank);
        Ok(Self { base, down, up, alpha })
    }

    pub fn from_parts(base: Matrix, down: Matrix, up: Matrix, alpha: f64) -> Result<Self> {
        let (d, k, r) = (base.rows(), base.cols(), down.rows());
        if down.cols() != k || up.rows() != d || up.cols() != r {
            return Err(AdapterError::Dimension(format!(
                "base {d}x{k}, A {}x{}, B {}x{}",
                down.rows(),
                down.cols(),
                up.rows(),
                up.cols()
            )));
        }
        if r == 0 || r > d.min(k) {
            return Err(AdapterError::RankTooLarge { rank: r, limit: d.min(k) });
        }
        if !alpha.is_finite() {
            return Err(AdapterError::NonFinite("alpha"));
        }
        Ok(Self { base, down, up, alpha })
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn lora_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.base.matvec(x)?;
        let delta = self.up.matvec(&self.down.matvec(x)?)?;
        add_scaled(&mut h, self.scale(), &delta);
        Ok(h)
    }

    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<LoraGrads> {
        check_len("grad_out", grad_out.len(), self.base.rows())?;
        let s = self.scale();
        let u = self.down.matvec(x)?;
        let mut up = Matrix::zeros(self.up.rows(), self.up.cols());
        up.add_outer(s, grad_out, &u);
        let du = self.up.t_matvec(grad_out)?;
        let mut down = Matrix::zeros(self.down.rows(), self.down.cols());
        down.add_outer(s, &du, x);
        Ok(LoraGrads { down, up })
    }
}

impl AdapterLayer for LoraLayer {
    fn input_dim(&self) -> usize {
        self.base.cols()
    }

    fn output_dim(&self) -> usize {
        self.base.rows()
    }

    fn forward(&self, x: &[f64], _task: usize) -> Result<Vec<f64>> {
        self.lora_forward(x)
    }

    fn param_group_names(&self) -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    fn param_groups_mut(&mut self, _task: usize) -> Result<Vec<&mut [f64]>> {
        Ok(vec![self.down.as_mut_slice(), self.up.as_mut_slice()])
    }

    fn gradients(&self, x: &[f64], _task: usize, grad_out: &[f64]) -> Result<Vec<Vec<f64>>> {
        let g = self.backward(x, grad_out)?;
        Ok(vec![g.down.as_slice().to_vec(), g.up.as_slice().to_vec()])
    }
}

/// Softmax of `logits / tau`.
pub fn mixture_weights(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(AdapterError::Temperature(tau));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Gradient of a loss w.r.t. the logits given the softmax output `weights`
/// and the upstream gradient `grad_weights`.
pub fn mixture_weights_backward(weights: &[f64], grad_weights: &[f64], tau: f64) -> Vec<f64> {
    let mean = dot(weights, grad_weights);
    weights
        .iter()
        .zip(grad_weights)
        .map(|(p, g)| p * (g - mean) / tau)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlLoraLayer {
    pub base: Matrix,
    /// Shared down-projection, r×k.
    pub down: Matrix,
    /// Per-task r×r transforms.
    pub task_transforms: Vec<Matrix>,
    /// Up-projections, each d×r.
    pub ups: Vec<Matrix>,
    /// Per-task mixture logits over the up-projections.
    pub mixture_logits: Vec<Vec<f64>>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlLoraGrads {
    pub down: Matrix,
    pub task_transform: Matrix,
    pub ups: Vec<Matrix>,
    pub logits: Vec<f64>,
}

struct MtlActivations {
    u: Vec<f64>,
    v: Vec<f64>,
    weights: Vec<f64>,
    up_outputs: Vec<Vec<f64>>,
}

impl MtlLoraLayer {
    /// Fresh layer: identity transforms, zero up-projections, zero logits.
    pub fn new(base: Matrix, rank: usize, n_tasks: usize, n_up: usize, tau: f64, seed: u64) -> Result<Self> {
        let limit = base.rows().min(base.cols());
        if rank == 0 || rank > limit {
            return Err(AdapterError::RankTooLarge { rank, limit });
        }
        if n_tasks == 0 || n_up == 0 {
            return Err(AdapterError::Dimension("need at least one task and one up-projection".into()));
        }
        if !(tau > 0.0) {
            return Err(AdapterError::Temperature(tau));
        }
        let down = init_down(rank, base.cols(), &mut SeededRng::new(seed));
        let d = base.rows();
        Ok(Self {
            base,
            down,
            task_transforms: vec![Matrix::identity(rank); n_tasks],
            ups: vec![Matrix::zeros(d, rank); n_up],
            mixture_logits: vec![vec![0.0; n_up]; n_tasks],
            tau,
        })
    }

    pub fn from_parts(
        base: Matrix,
        down: Matrix,
        task_transforms: Vec<Matrix>,
        ups: Vec<Matrix>,
        mixture_logits: Vec<Vec<f64>>,
        tau: f64,
    ) -> Result<Self> {
        let (d, k, r) = (base.rows(), base.cols(), down.rows());
        if down.cols() != k {
            return Err(AdapterError::Dimension(format!("A has {} columns, base has {k}", down.cols())));
        }
        if r == 0 || r > d.min(k) {
            return Err(AdapterError::RankTooLarge { rank: r, limit: d.min(k) });
        }
        if task_transforms.is_empty() || ups.is_empty() {
            return Err(AdapterError::Dimension("need at least one task and one up-projection".into()));
        }
        if task_transforms.iter().any(|l| l.rows() != r || l.cols() != r) {
            return Err(AdapterError::Dimension(format!("task transforms must be {r}x{r}")));
        }
        if ups.iter().any(|b| b.rows() != d || b.cols() != r) {
            return Err(AdapterError::Dimension(format!("up-projections must be {d}x{r}")));
        }
        if mixture_logits.len() != task_transforms.len()
            || mixture_logits.iter().any(|l| l.len() != ups.len())
        {
            return Err(AdapterError::Dimension("mixture logits must be n_tasks x n_up".into()));
        }
        if mixture_logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AdapterError::NonFinite("mixture logits"));
        }
        if !(tau > 0.0) {
            return Err(AdapterError::Temperature(tau));
        }
        Ok(Self { base, down, task_transforms, ups, mixture_logits, tau })
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn n_tasks(&self) -> usize {
        self.task_transforms.len()
    }

    pub fn n_up(&self) -> usize {
        self.ups.len()
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task < self.n_tasks() {
            Ok(())
        } else {
            Err(AdapterError::TaskIndex { index: task, n_tasks: self.n_tasks() })
        }
    }

    fn activations(&self, x: &[f64], task: usize) -> Result<MtlActivations> {
        self.check_task(task)?;
        let u = self.down.matvec(x)?;
        let v = self.task_transforms[task].matvec(&u)?;
        let weights = mixture_weights(&self.mixture_logits[task], self.tau)?;
        let up_outputs = self.ups.iter().map(|b| b.matvec(&v)).collect::<Result<_>>()?;
        Ok(MtlActivations { u, v, weights, up_outputs })
    }

    pub fn mtl_forward(&self, x: &[f64], task: usize) -> Result<Vec<f64>> {
        let act = self.activations(x, task)?;
        let mut h = self.base.matvec(x)?;
        for (w, out) in act.weights.iter().zip(&act.up_outputs) {
            add_scaled(&mut h, *w, out);
        }
        Ok(h)
    }

    pub fn backward(&self, x: &[f64], task: usize, grad_out: &[f64]) -> Result<MtlLoraGrads> {
        check_len("grad_out", grad_out.len(), self.base.rows())?;
        let act = self.activations(x, task)?;
        let r = self.rank();

        let mut ups = Vec::with_capacity(self.n_up());
        let mut grad_v = vec![0.0; r];
        for (b, &w) in self.ups.iter().zip(&act.weights) {
            let mut g = Matrix::zeros(b.rows(), r);
            g.add_outer(w, grad_out, &act.v);
            ups.push(g);
            add_scaled(&mut grad_v, w, &b.t_matvec(grad_out)?);
        }
        let grad_weights: Vec<f64> = act.up_outputs.iter().map(|o| dot(grad_out, o)).collect();
        let logits = mixture_weights_backward(&act.weights, &grad_weights, self.tau);

        let mut task_transform = Matrix::zeros(r, r);
        task_transform.add_outer(1.0, &grad_v, &act.u);
        let grad_u = self.task_transforms[task].t_matvec(&grad_v)?;
        let mut down = Matrix::zeros(r, self.down.cols());
        down.add_outer(1.0, &grad_u, x);

        Ok(MtlLoraGrads { down, task_transform, ups, logits })
    }
}

impl AdapterLayer for MtlLoraLayer {
    fn input_dim(&self) -> usize {
        self.base.cols()
    }

    fn output_dim(&self) -> usize {
        self.base.rows()
    }

    fn forward(&self, x: &[f64], task: usize) -> Result<Vec<f64>> {
        self.mtl_forward(x, task)
    }

    fn param_group_names(&self) -> Vec<String> {
        let mut names = vec!["A".to_string(), "Lambda".to_string()];
        names.extend((0..self.n_up()).map(|i| format!("B{i}")));
        names.push("logits".into());
        names
    }

    fn param_groups_mut(&mut self, task: usize) -> Result<Vec<&mut [f64]>> {
        self.check_task(task)?;
        let mut groups = vec![
            self.down.as_mut_slice(),
            self.task_transforms[task].as_mut_slice(),
        ];
        groups.extend(self.ups.iter_mut().map(Matrix::as_mut_slice));
        groups.push(self.mixture_logits[task].as_mut_slice());
        Ok(groups)
    }

    fn gradients(&self, x: &[f64], task: usize, grad_out: &[f64]) -> Result<Vec<Vec<f64>>> {
        let g = self.backward(x, task, grad_out)?;
        let mut groups = vec![g.down.as_slice().to_vec(), g.task_transform.as_slice().to_vec()];
        groups.extend(g.ups.iter().map(|m| m.as_slice().to_vec()));
        groups.push(g.logits);
        Ok(groups)
    }
}
