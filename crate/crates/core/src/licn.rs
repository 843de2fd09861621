//! Classification-head math for multitask contrastive classification.
//!
//! Task-specific image embeddings `T_I` (M × 5 × p) are scored against label
//! embeddings `T_q` (N_t × p) by dot product. Training uses a pairwise
//! sigmoid loss with learnable temperature `c` and bias `b`:
//!
//! ```text
//! L = 1/(M·N_t) Σ_ij softplus(-y_ij (c·z_ij - b)),   y_ij ∈ {-1, +1}
//! ```
//!
//! and tasks are combined with learnable log-variance weights,
//! `Σ_t exp(-s_t)·L_t + s_t`.
//!
//! The encoder that produces the embeddings is not part of this module. A
//! single shared linear projection can be fitted with [`fit_linear_head`]
//! as an end-to-end check of the gradients.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TASK_COUNT: usize = 5;
pub const DEFAULT_PROJECTION_DIM: usize = 512;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    Artist,
    Genre,
    Style,
    Media,
    Tags,
}

impl TaskId {
    pub const ALL: [TaskId; TASK_COUNT] = [
        TaskId::Artist,
        TaskId::Genre,
        TaskId::Style,
        TaskId::Media,
        TaskId::Tags,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn kind(self) -> TaskKind {
        match self {
            TaskId::Artist | TaskId::Genre | TaskId::Style => TaskKind::Multiclass,
            TaskId::Media | TaskId::Tags => TaskKind::Multilabel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Multiclass,
    Multilabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskId,
    pub kind: TaskKind,
}

impl From<TaskId> for TaskSpec {
    fn from(task: TaskId) -> Self {
        Self {
            task,
            kind: task.kind(),
        }
    }
}

/// Task-specific image embeddings and per-task label embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    image: Array3<f64>,
    labels: Vec<Array2<f64>>,
}

impl EmbeddingBatch {
    /// `image` is M × 5 × p; `labels[t]` is N_t × p.
    pub fn new(image: Array3<f64>, labels: Vec<Array2<f64>>) -> Result<Self> {
        let (_, tasks, p) = image.dim();
        if tasks != TASK_COUNT || labels.len() != TASK_COUNT {
            return Err(Error::ShapeMismatch(format!(
                "expected {TASK_COUNT} tasks, got image {tasks} / labels {}",
                labels.len()
            )));
        }
        for (t, l) in labels.iter().enumerate() {
            if l.ncols() != p {
                return Err(Error::DimMismatch {
                    expected: p,
                    actual: l.ncols(),
                })
                .map_err(|e| Error::ShapeMismatch(format!("task {t}: {e}")));
            }
        }
        if image.iter().chain(labels.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite embedding".into()));
        }
        Ok(Self { image, labels })
    }

    pub fn batch_size(&self) -> usize {
        self.image.dim().0
    }

    pub fn projection_dim(&self) -> usize {
        self.image.dim().2
    }

    pub fn image_task(&self, task: TaskId) -> ArrayView2<'_, f64> {
        self.image.slice(s![.., task.index(), ..])
    }

    pub fn labels(&self, task: TaskId) -> ArrayView2<'_, f64> {
        self.labels[task.index()].view()
    }
}

/// `±1` association matrix between batch images and candidate labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(Array2<f64>);

impl LabelMatrix {
    pub fn new(y: Array2<f64>) -> Result<Self> {
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidParameter("label entries must be ±1".into()));
        }
        Ok(Self(y))
    }

    /// Multiclass labels: row `i` is `+1` at `classes[i]`, `-1` elsewhere.
    pub fn one_hot(classes: &[usize], n: usize) -> Result<Self> {
        let mut y = Array2::from_elem((classes.len(), n), -1.0);
        for (i, &c) in classes.iter().enumerate() {
            if c >= n {
                return Err(Error::InvalidParameter(format!("class {c} >= {n}")));
            }
            y[[i, c]] = 1.0;
        }
        Ok(Self(y))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// True when every row has exactly one positive entry.
    pub fn is_multiclass(&self) -> bool {
        self.0
            .axis_iter(Axis(0))
            .all(|row| row.iter().filter(|&&v| v > 0.0).count() == 1)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Temperature, > 0.
    pub c: f64,
    pub b: f64,
    /// Per-task log-variance weights.
    pub s: Vec<f64>,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            b: 0.0,
            s: vec![0.0; TASK_COUNT],
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Z_t = T_I[:, t, :] · T_qᵀ`.
pub fn compute_logits(batch: &EmbeddingBatch, task: TaskSpec) -> Result<Array2<f64>> {
    Ok(batch.image_task(task.task).dot(&batch.labels(task.task).t()))
}

fn check_shapes(z: ArrayView2<'_, f64>, y: &LabelMatrix) -> Result<()> {
    if z.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs labels {:?}",
            z.dim(),
            y.dim()
        )));
    }
    if z.is_empty() {
        return Err(Error::ShapeMismatch("empty logits".into()));
    }
    Ok(())
}

fn check_temperature(c: f64, b: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("need c > 0 and finite b, got c={c}, b={b}")));
    }
    Ok(())
}

/// Mean pairwise sigmoid loss.
pub fn siglip_loss(z: ArrayView2<'_, f64>, y: &LabelMatrix, c: f64, b: f64) -> Result<f64> {
    check_shapes(z, y)?;
    check_temperature(c, b)?;
    let total: f64 = z
        .iter()
        .zip(y.0.iter())
        .map(|(&z, &y)| softplus(-y * (c * z - b)))
        .sum();
    Ok(total / z.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiglipGrad {
    pub dz: Array2<f64>,
    pub dc: f64,
    pub db: f64,
}

/// Analytic gradient of [`siglip_loss`] with respect to `Z`, `c` and `b`.
pub fn siglip_loss_grad(z: ArrayView2<'_, f64>, y: &LabelMatrix, c: f64, b: f64) -> Result<SiglipGrad> {
    check_shapes(z, y)?;
    check_temperature(c, b)?;
    let scale = 1.0 / z.len() as f64;
    let mut dz = Array2::zeros(z.dim());
    let mut dc = 0.0;
    let mut db = 0.0;
    for ((g, &zij), &yij) in dz.iter_mut().zip(z.iter()).zip(y.0.iter()) {
        // d softplus(-m)/dm = -σ(-m), m = y (c z - b)
        let w = -sigmoid(-yij * (c * zij - b)) * scale;
        *g = w * yij * c;
        dc += w * yij * zij;
        db -= w * yij;
    }
    Ok(SiglipGrad { dz, dc, db })
}

/// Chain rule through `Z = A · Bᵀ`: returns `(dZ · B, dZᵀ · A)`.
pub fn backprop_logits(
    dz: ArrayView2<'_, f64>,
    image: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if dz.nrows() != image.nrows() || dz.ncols() != labels.nrows() || image.ncols() != labels.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "dZ {:?}, image {:?}, labels {:?}",
            dz.dim(),
            image.dim(),
            labels.dim()
        )));
    }
    Ok((dz.dot(&labels), dz.t().dot(&image)))
}

pub fn backprop_to_embeddings(
    dz: ArrayView2<'_, f64>,
    batch: &EmbeddingBatch,
    task: TaskSpec,
) -> Result<(Array2<f64>, Array2<f64>)> {
    backprop_logits(dz, batch.image_task(task.task), batch.labels(task.task))
}

/// `Σ_t exp(-s_t)·L_t + s_t`.
pub fn combine_losses_uncertainty(losses: &[f64], s: &[f64]) -> Result<f64> {
    if losses.len() != s.len() {
        return Err(Error::LengthMismatch {
            expected: losses.len(),
            actual: s.len(),
        });
    }
    Ok(losses.iter().zip(s).map(|(&l, &s)| (-s).exp() * l + s).sum())
}

/// Gradient of [`combine_losses_uncertainty`] with respect to each `s_t`.
pub fn combine_losses_grad(losses: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    if losses.len() != s.len() {
        return Err(Error::LengthMismatch {
            expected: losses.len(),
            actual: s.len(),
        });
    }
    Ok(losses.iter().zip(s).map(|(&l, &s)| 1.0 - (-s).exp() * l).collect())
}

/// Highest-scoring class; the lowest index wins ties.
pub fn predict_multiclass(scores: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyCandidates)
}

/// Labels with `σ(c·z - b) >= threshold`.
pub fn predict_multilabel(scores: &[f64], c: f64, b: f64, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    Ok(scores
        .iter()
        .enumerate()
        .filter(|(_, &z)| sigmoid(c * z - b) >= threshold)
        .map(|(i, _)| i)
        .collect())
}

/// Images and labels described by raw features, scored through one shared
/// linear projection `W`: `Z = (X W)(L W)ᵀ`.
#[derive(Debug, Clone)]
pub struct LinearHeadProblem {
    pub image_features: Array2<f64>,
    pub label_features: Array2<f64>,
    pub targets: LabelMatrix,
}

impl LinearHeadProblem {
    /// Multiclass batch where each image is a noisy copy of its class's
    /// label feature vector.
    pub fn separable(images: usize, classes: usize, feature_dim: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let label_features = Array2::from_shape_simple_fn((classes, feature_dim), &mut normal);
        let assignment: Vec<usize> = (0..images).map(|i| i % classes).collect();
        let mut image_features = Array2::zeros((images, feature_dim));
        for (i, &c) in assignment.iter().enumerate() {
            for j in 0..feature_dim {
                image_features[[i, j]] = label_features[[c, j]] + noise * normal();
            }
        }
        Self {
            image_features,
            label_features,
            targets: LabelMatrix::one_hot(&assignment, classes).expect("classes in range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub projection_dim: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    /// Stop once the loss falls below this value.
    pub target_loss: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            projection_dim: 16,
            max_steps: 2000,
            learning_rate: 0.05,
            target_loss: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub losses: Vec<f64>,
    pub steps: usize,
    pub final_loss: f64,
    pub c: f64,
    pub b: f64,
}

/// Fits `W`, `log c` and `b` by plain gradient descent.
///
/// `c` is parameterized as `exp(log_c)` so it stays positive.
pub fn fit_linear_head(problem: &LinearHeadProblem, cfg: &FitConfig) -> Result<FitReport> {
    let x = &problem.image_features;
    let l = &problem.label_features;
    if x.ncols() != l.ncols() {
        return Err(Error::ShapeMismatch("feature dims differ".into()));
    }
    let (m, n) = problem.targets.dim();
    if m != x.nrows() || n != l.nrows() {
        return Err(Error::ShapeMismatch("targets do not match batch".into()));
    }
    let f = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_scale = 1.0 / (f as f64).sqrt();
    let mut w = Array2::from_shape_simple_fn((f, cfg.projection_dim), || {
        let v: f64 = StandardNormal.sample(&mut rng);
        v * init_scale
    });
    let mut log_c = 0.0f64;
    let mut b = 0.0f64;

    let mut losses = Vec::with_capacity(cfg.max_steps + 1);
    for step in 0..=cfg.max_steps {
        let ti = x.dot(&w);
        let tq = l.dot(&w);
        let z = ti.dot(&tq.t());
        let c = log_c.exp();
        let loss = siglip_loss(z.view(), &problem.targets, c, b)?;
        losses.push(loss);
        if loss < cfg.target_loss || step == cfg.max_steps {
            return Ok(FitReport {
                steps: step,
                final_loss: loss,
                losses,
                c,
                b,
            });
        }
        let g = siglip_loss_grad(z.view(), &problem.targets, c, b)?;
        let (d_ti, d_tq) = backprop_logits(g.dz.view(), ti.view(), tq.view())?;
        let dw = x.t().dot(&d_ti) + l.t().dot(&d_tq);
        w.scaled_add(-cfg.learning_rate, &dw);
        log_c -= cfg.learning_rate * g.dc * c;
        b -= cfg.learning_rate * g.db;
    }
    unreachable!("loop returns on its last iteration")
}
