//! Loss, Adam optimization, and the curriculum-masking training loop.
//!
//! Each step samples fixed-length windows from the source motions, draws a
//! fresh mask per window (probability following the curriculum schedule),
//! and minimizes the reconstruction loss over masked entries. Batch samples
//! run on independent graphs in parallel; gradients are reduced in batch
//! order so runs are reproducible bit-for-bit under one seed.

use crate::kinematics::{MotionTensor, Repr, Visibility};
use crate::masking::{curriculum_p, patchify_mask, MaskSpec};
use crate::model::{save_checkpoint, MaskedAutoencoder, ModelError, ParamSet};
use crate::numkit::{Graph, Tensor, Var};
use crate::pipeline::fill_motion;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss went non-finite at step {step} (lr {lr:.3e}, grad norm {grad_norm:.3e})")]
    NanLoss { step: usize, lr: f64, grad_norm: f64 },
    #[error("degenerate loss: the mask hides nothing")]
    DegenerateLoss,
    #[error("training data error: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub p_start: f64,
    pub p_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub mask: MaskSpec,
    /// Masking-probability schedule; applies to probability-bearing masks.
    pub curriculum: Option<Curriculum>,
    pub loss: LossKind,
    /// Weight of the forward-kinematics position term (ortho-6D motions only).
    pub fk_loss_weight: f64,
    /// Record history (and run eval when eval data is given) every this many
    /// steps; 0 records only the first and last step.
    pub eval_every: usize,
    /// Where best/last checkpoints go; skipped when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 4,
            learning_rate: 3e-4,
            warmup_steps: 100,
            seed: 0,
            mask: MaskSpec::Inbetween {
                past: 10,
                transition: 15,
                future: 1,
            },
            curriculum: None,
            loss: LossKind::L1,
            fk_loss_weight: 0.0,
            eval_every: 200,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 && self.steps > 0 && self.learning_rate != 0.0 {
            return Err(TrainError::Data("learning rate must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Data("batch size must be >= 1".into()));
        }
        if let Some(c) = self.curriculum {
            if !(0.0..=1.0).contains(&c.p_start)
                || !(0.0..=1.0).contains(&c.p_end)
                || c.p_start > c.p_end
            {
                return Err(TrainError::Data(format!(
                    "curriculum bounds must satisfy 0 <= p_start <= p_end <= 1, got {} and {}",
                    c.p_start, c.p_end
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub p_m: f64,
    pub loss: f64,
    pub eval: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<TrainRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_step: usize,
    pub best_loss: f64,
}

// ── loss ─────────────────────────────────────────────────────────────

/// Mean reconstruction error over masked entries only. Visible entries never
/// contribute. Errors when the mask hides nothing.
pub fn masked_loss(
    prediction: &MotionTensor,
    target: &MotionTensor,
    visibility: &Visibility,
    kind: LossKind,
) -> Result<f64> {
    let n = target.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..target.frames() {
        for j in 0..target.joints() {
            if visibility.is_visible(t, j) {
                continue;
            }
            for c in 0..n {
                let d = prediction.value(t, j, c) - target.value(t, j, c);
                sum += match kind {
                    LossKind::L1 => d.abs(),
                    LossKind::L2 => d * d,
                };
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(TrainError::DegenerateLoss);
    }
    Ok(sum / count as f64)
}

/// Per-value weights that keep only hidden entries, flattened to `[T, P]`.
fn mask_weights(vis: &Visibility, channels: usize) -> (Vec<f64>, usize) {
    let mut w = Vec::with_capacity(vis.frames() * vis.joints() * channels);
    let mut count = 0usize;
    for t in 0..vis.frames() {
        for j in 0..vis.joints() {
            let hidden = !vis.is_visible(t, j);
            if hidden {
                count += channels;
            }
            for _ in 0..channels {
                w.push(if hidden { 1.0 } else { 0.0 });
            }
        }
    }
    (w, count)
}

/// Graph version of [`masked_loss`]: `mean_kind(|(delta + x_ref - truth)| over
/// hidden entries)`, plus the optional FK position term.
pub fn loss_graph(
    model: &MaskedAutoencoder,
    g: &mut Graph,
    delta: Var,
    x_ref: &Tensor,
    truth: &Tensor,
    vis: &Visibility,
    kind: LossKind,
    fk_weight: f64,
) -> Result<Var> {
    let (weights, count) = mask_weights(vis, model.channels());
    if count == 0 {
        return Err(TrainError::DegenerateLoss);
    }
    let frames = vis.frames();
    let p = model.pose_dim();
    let w = g.constant(Tensor::new(vec![frames, p], weights).map_err(ModelError::from)?);
    let refc = g.constant(x_ref.clone());
    let truthc = g.constant(truth.clone());
    let y = g.add(delta, refc).map_err(ModelError::from)?;
    let diff = g.sub(y, truthc).map_err(ModelError::from)?;
    let masked = g.mul(diff, w).map_err(ModelError::from)?;
    let per_entry = match kind {
        LossKind::L1 => g.abs(masked),
        LossKind::L2 => g.mul(masked, masked).map_err(ModelError::from)?,
    };
    let total = g.sum_all(per_entry);
    let mut loss = g.scale(total, 1.0 / count as f64);

    if fk_weight > 0.0 {
        if model.config().repr != Repr::Ortho6d {
            return Err(TrainError::Data(
                "fk_loss_weight needs an ortho-6D model".into(),
            ));
        }
        let pos_pred = fk_positions_graph(model, g, y)?;
        let pos_truth = fk_positions_graph(model, g, truthc)?;
        let (pw, pcount) = mask_weights(vis, 3);
        let pwc =
            g.constant(Tensor::new(vec![frames, vis.joints() * 3], pw).map_err(ModelError::from)?);
        let pdiff = g.sub(pos_pred, pos_truth).map_err(ModelError::from)?;
        let pmask = g.mul(pdiff, pwc).map_err(ModelError::from)?;
        let pabs = g.abs(pmask);
        let psum = g.sum_all(pabs);
        let pterm = g.scale(psum, fk_weight / pcount as f64);
        loss = g.add(loss, pterm).map_err(ModelError::from)?;
    }
    Ok(loss)
}

/// Differentiable forward kinematics: ortho-6D poses `[T, J*6]` to global
/// positions `[T, J*3]`, root pinned at its rest offset.
pub fn fk_positions_graph(
    model: &MaskedAutoencoder,
    g: &mut Graph,
    y: Var,
) -> Result<Var> {
    let topo = model.topology();
    let joints = topo.joint_count();
    let frames = g.shape(y)[0];
    let tj = frames * joints;

    let col = |g: &mut Graph, m: Var, c: usize| g.index_select(m, 1, &[c]);
    let cross3 = |g: &mut Graph, a: Var, b: Var| -> std::result::Result<Var, crate::numkit::NumError> {
        let (ax, ay, az) = (col(g, a, 0)?, col(g, a, 1)?, col(g, a, 2)?);
        let (bx, by, bz) = (col(g, b, 0)?, col(g, b, 1)?, col(g, b, 2)?);
        let t1 = g.mul(ay, bz)?;
        let t2 = g.mul(az, by)?;
        let cx = g.sub(t1, t2)?;
        let t3 = g.mul(az, bx)?;
        let t4 = g.mul(ax, bz)?;
        let cy = g.sub(t3, t4)?;
        let t5 = g.mul(ax, by)?;
        let t6 = g.mul(ay, bx)?;
        let cz = g.sub(t5, t6)?;
        g.concat(&[cx, cy, cz], 1)
    };
    let normalize = |g: &mut Graph, v: Var| -> std::result::Result<Var, crate::numkit::NumError> {
        let sq = g.mul(v, v)?;
        let ss = g.sum_axis(sq, 1)?;
        let norm = g.sqrt(ss);
        g.div(v, norm)
    };

    (|| -> std::result::Result<Var, crate::numkit::NumError> {
        let six = g.reshape(y, &[tj, 6])?;
        let a = g.index_select(six, 1, &[0, 1, 2])?;
        let b = g.index_select(six, 1, &[3, 4, 5])?;
        // Gram-Schmidt
        let b1 = normalize(g, a)?;
        let prod = g.mul(b1, b)?;
        let proj = g.sum_axis(prod, 1)?;
        let proj_b1 = g.mul(b1, proj)?;
        let res = g.sub(b, proj_b1)?;
        let b2 = normalize(g, res)?;
        let b3 = cross3(g, b1, b2)?;
        // columns -> row-major rotation matrices [TJ, 3, 3]
        let cols = g.concat(&[b1, b2, b3], 1)?;
        let as_cols = g.reshape(cols, &[tj, 3, 3])?;
        let rot = g.permute(as_cols, &[0, 2, 1])?;

        // per-joint global rotation and position, batched over frames
        let mut global_rot: Vec<Option<Var>> = vec![None; joints];
        let mut global_pos: Vec<Option<Var>> = vec![None; joints];
        for (j, joint) in topo.joints.iter().enumerate() {
            let rows: Vec<usize> = (0..frames).map(|t| t * joints + j).collect();
            let local_flat = g.index_select(rot, 0, &rows)?;
            let local = g.reshape(local_flat, &[frames, 3, 3])?;
            match joint.parent {
                None => {
                    global_rot[j] = Some(local);
                    let base = Tensor::new(
                        vec![frames, 3, 1],
                        (0..frames).flat_map(|_| joint.offset).collect(),
                    )
                    .expect("sized buffer");
                    global_pos[j] = Some(g.constant(base));
                }
                Some(parent) => {
                    let prot = global_rot[parent].expect("parent precedes child");
                    let ppos = global_pos[parent].expect("parent precedes child");
                    global_rot[j] = Some(g.matmul(prot, local)?);
                    let off = g.constant(
                        Tensor::new(vec![3, 1], joint.offset.to_vec()).expect("3-vector"),
                    );
                    let moved = g.matmul(prot, off)?;
                    global_pos[j] = Some(g.add(ppos, moved)?);
                }
            }
        }
        let mut parts = Vec::with_capacity(joints);
        for pos in global_pos.into_iter() {
            let p = pos.expect("all joints visited");
            parts.push(g.reshape(p, &[frames, 1, 3])?);
        }
        let stacked = g.concat(&parts, 1)?;
        g.reshape(stacked, &[frames, joints * 3])
    })()
    .map_err(|e| TrainError::Model(ModelError::from(e)))
}

// ── optimizer ────────────────────────────────────────────────────────

/// Adam with bias correction and linear warmup; no weight decay.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    warmup_steps: usize,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, warmup_steps: usize, params: &ParamSet) -> Self {
        let m = (0..params.len())
            .map(|i| vec![0.0; params.at(i).1.numel()])
            .collect();
        let v = (0..params.len())
            .map(|i| vec![0.0; params.at(i).1.numel()])
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps,
            step: 0,
            m,
            v,
        }
    }

    pub fn current_lr(&self) -> f64 {
        if self.warmup_steps > 0 && self.step < self.warmup_steps {
            self.lr * (self.step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }

    /// One update; `grads` aligned with the parameter set.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        let lr = self.current_lr();
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let (_, tensor) = params.at_mut(i);
            for (k, p) in tensor.data_mut().iter_mut().enumerate() {
                let gk = grads[i][k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *p -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

// ── training loop ────────────────────────────────────────────────────

struct SamplePlan {
    seq: usize,
    start: usize,
    mask_seed: u64,
}

fn sample_grads(
    model: &MaskedAutoencoder,
    motion: &MotionTensor,
    plan: &SamplePlan,
    spec: &MaskSpec,
    config: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let window = motion
        .window(plan.start, spec.frames())
        .map_err(|e| TrainError::Data(e.to_string()))?;
    let truth_values = window.values().to_vec();
    let mut masked = window;
    masked.set_visibility(
        spec.generate(masked.joints(), model.scheme(), plan.mask_seed)
            .map_err(ModelError::from)?,
    )
    .map_err(|e| TrainError::Data(e.to_string()))?;
    let filled = fill_motion(&masked, model.config().fill).map_err(ModelError::from)?;
    let token_mask = patchify_mask(masked.visibility(), model.scheme()).map_err(ModelError::from)?;
    let frames = masked.frames();
    let p = model.pose_dim();
    let x_fill = Tensor::new(vec![frames, p], filled.x_fill.values().to_vec())
        .map_err(ModelError::from)?;
    let x_ref = Tensor::new(vec![frames, p], filled.x_ref.values().to_vec())
        .map_err(ModelError::from)?;
    let truth = Tensor::new(vec![frames, p], truth_values).map_err(ModelError::from)?;

    let mut g = Graph::new();
    let pv = model.bind_params(&mut g, true);
    let delta = model.forward_delta(&mut g, &pv, &x_fill, &token_mask)?;
    let loss = loss_graph(
        model,
        &mut g,
        delta,
        &x_ref,
        &truth,
        masked.visibility(),
        config.loss,
        config.fk_loss_weight,
    )?;
    let loss_value = g.value(loss).item();
    g.backward(loss).map_err(ModelError::from)?;
    let grads: Vec<Vec<f64>> = pv
        .all()
        .iter()
        .enumerate()
        .map(|(i, &var)| match g.grad(var) {
            Some(grad) => grad.to_vec(),
            None => vec![0.0; model.params().at(i).1.numel()],
        })
        .collect();
    Ok((loss_value, grads))
}

/// Mean masked error of `model` on held-out sequences: joint MPJPE for
/// position motions, per-value L1 for rotation motions. Masks are drawn from
/// fixed per-sequence seeds, so evaluating another predictor (for instance a
/// baseline) with the same `(spec, seed)` scores the exact same masks.
pub fn eval_masked_error(
    model: &MaskedAutoencoder,
    data: &[MotionTensor],
    spec: &MaskSpec,
    seed: u64,
) -> Result<f64> {
    crate::metrics::eval_predictor(data, spec, model.scheme(), seed, |masked| {
        model
            .predict(masked)
            .map_err(|e| crate::metrics::MetricError::Other(e.to_string()))
    })
    .map_err(|e| TrainError::Data(e.to_string()))
}

/// Train in place. Deterministic in `(config.seed, data)`; saves best/last
/// checkpoints when a directory is configured.
pub fn train(
    model: &mut MaskedAutoencoder,
    data: &[MotionTensor],
    eval_data: Option<&[MotionTensor]>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let w = config.mask.frames();
    if data.is_empty() {
        return Err(TrainError::Data("no training sequences".into()));
    }
    for (i, seq) in data.iter().enumerate() {
        if seq.frames() < w {
            return Err(TrainError::Data(format!(
                "sequence {} has {} frames, mask needs {}",
                i,
                seq.frames(),
                w
            )));
        }
        if seq.joints() != model.topology().joint_count() || seq.repr != model.config().repr {
            return Err(TrainError::Data(format!(
                "sequence {} does not match the model contract",
                i
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate, config.warmup_steps, model.params());
    let mut history = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0usize;
    let mut best_params: Option<ParamSet> = None;

    for step in 0..config.steps {
        let p_m = match config.curriculum {
            Some(c) => curriculum_p(step, config.steps.saturating_sub(1), c.p_start, c.p_end),
            None => match config.mask {
                MaskSpec::Completion { probability, .. } => probability,
                MaskSpec::Occlusion { probability, .. } => probability,
                _ => 1.0,
            },
        };
        let spec = config.mask.with_probability(p_m);
        let plans: Vec<SamplePlan> = (0..config.batch_size)
            .map(|_| {
                let seq = rng.gen_range(0..data.len());
                let max_start = data[seq].frames() - w;
                let start = if max_start == 0 {
                    0
                } else {
                    rng.gen_range(0..=max_start)
                };
                SamplePlan {
                    seq,
                    start,
                    mask_seed: rng.gen(),
                }
            })
            .collect();

        let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = plans
            .par_iter()
            .map(|plan| sample_grads(model, &data[plan.seq], plan, &spec, config))
            .collect();

        let mut loss_sum = 0.0;
        let mut grads: Vec<Vec<f64>> = (0..model.params().len())
            .map(|i| vec![0.0; model.params().at(i).1.numel()])
            .collect();
        for r in results {
            let (loss, g) = r?;
            loss_sum += loss;
            for (acc, gi) in grads.iter_mut().zip(g) {
                for (a, v) in acc.iter_mut().zip(gi) {
                    *a += v;
                }
            }
        }
        let inv_b = 1.0 / config.batch_size as f64;
        for gi in grads.iter_mut() {
            for v in gi.iter_mut() {
                *v *= inv_b;
            }
        }
        let loss = loss_sum * inv_b;
        if step == 0 {
            initial_loss = loss;
        }
        final_loss = loss;

        if !loss.is_finite() {
            let grad_norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            return Err(TrainError::NanLoss {
                step,
                lr: adam.current_lr(),
                grad_norm,
            });
        }

        adam.step(model.params_mut(), &grads);

        if loss < best_loss {
            best_loss = loss;
            best_step = step;
            best_params = Some(model.params().clone());
        }

        let cadence = config.eval_every.max(1);
        if step == 0 || step + 1 == config.steps || (config.eval_every > 0 && (step + 1) % cadence == 0)
        {
            let eval = match eval_data {
                Some(ed) if !ed.is_empty() => {
                    Some(eval_masked_error(model, ed, &spec, config.seed ^ 0x5EED)?)
                }
                _ => None,
            };
            history.push(TrainRecord {
                step,
                p_m,
                loss,
                eval,
            });
        }
    }

    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Data(e.to_string()))?;
        save_checkpoint(model, &dir.join("last.ckpt"))?;
        if let Some(best) = best_params {
            let current = model.params().clone();
            *model.params_mut() = best;
            save_checkpoint(model, &dir.join("best.ckpt"))?;
            *model.params_mut() = current;
        }
    }

    Ok(TrainReport {
        history,
        initial_loss,
        final_loss,
        best_step,
        best_loss,
    })
}

/// Two-phase schedule: broad random-mask pretraining, then task finetuning.
/// Returns both phase reports; the mask spec switches exactly at the phase
/// boundary (`pretrain.steps`).
pub fn pretrain_then_finetune(
    model: &mut MaskedAutoencoder,
    data: &[MotionTensor],
    eval_data: Option<&[MotionTensor]>,
    pretrain: &TrainConfig,
    finetune: &TrainConfig,
) -> Result<(TrainReport, TrainReport)> {
    let first = train(model, data, eval_data, pretrain)?;
    let second = train(model, data, eval_data, finetune)?;
    Ok((first, second))
}
