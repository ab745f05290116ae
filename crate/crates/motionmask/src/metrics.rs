//! Evaluation metrics (MPJPE, L2P, L2Q, NPSS) and the classical baselines
//! (zero-velocity hold, interpolation) they are compared against.

use crate::kinematics::{rot6d_to_quaternion, KinError, MotionTensor, Quaternion, Repr, Visibility};
use crate::masking::MaskSpec;
use crate::model::PatchScheme;
use crate::pipeline::{fill_motion, FillStrategy};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("representation mismatch: {0}")]
    Repr(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("quaternion with norm {0} is not unit (tolerance 1e-6)")]
    NonUnitQuaternion(f64),
    #[error("ground truth has zero spectral power in every feature")]
    AllZeroPower,
    #[error(transparent)]
    Kin(#[from] KinError),
    #[error("{0}")]
    Other(String),
}

type Result<T> = std::result::Result<T, MetricError>;

fn check_pair(pred: &MotionTensor, truth: &MotionTensor) -> Result<()> {
    if pred.frames() != truth.frames()
        || pred.joints() != truth.joints()
        || pred.repr != truth.repr
    {
        return Err(MetricError::Shape(format!(
            "prediction {}x{} ({}) vs truth {}x{} ({})",
            pred.frames(),
            pred.joints(),
            pred.repr.as_str(),
            truth.frames(),
            truth.joints(),
            truth.repr.as_str()
        )));
    }
    Ok(())
}

// ── MPJPE ────────────────────────────────────────────────────────────

/// Mean per-joint position error at each listed frame.
pub fn mpjpe_at_frames(
    pred: &MotionTensor,
    truth: &MotionTensor,
    frames: &[usize],
) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    if pred.repr != Repr::Position3 {
        return Err(MetricError::Repr(
            "mpjpe needs position motions (run FK first)".into(),
        ));
    }
    let mut out = Vec::with_capacity(frames.len());
    for &t in frames {
        if t >= pred.frames() {
            return Err(MetricError::Shape(format!(
                "horizon frame {} beyond {} frames",
                t,
                pred.frames()
            )));
        }
        let mut sum = 0.0;
        for j in 0..pred.joints() {
            let mut d2 = 0.0;
            for c in 0..3 {
                let d = pred.value(t, j, c) - truth.value(t, j, c);
                d2 += d * d;
            }
            sum += d2.sqrt();
        }
        out.push(sum / pred.joints() as f64);
    }
    Ok(out)
}

/// Mean joint position error over hidden `(t, j)` entries only.
pub fn mpjpe_masked(
    pred: &MotionTensor,
    truth: &MotionTensor,
    vis: &Visibility,
) -> Result<f64> {
    check_pair(pred, truth)?;
    if pred.repr != Repr::Position3 {
        return Err(MetricError::Repr(
            "mpjpe needs position motions (run FK first)".into(),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..pred.frames() {
        for j in 0..pred.joints() {
            if vis.is_visible(t, j) {
                continue;
            }
            let mut d2 = 0.0;
            for c in 0..3 {
                let d = pred.value(t, j, c) - truth.value(t, j, c);
                d2 += d * d;
            }
            sum += d2.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricError::Other("mask hides nothing to score".into()));
    }
    Ok(sum / count as f64)
}

// ── L2P ──────────────────────────────────────────────────────────────

/// Per-dimension standardization statistics of global positions, computed
/// from the training split.
#[derive(Debug, Clone)]
pub struct PositionStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PositionStats {
    pub fn from_motions(data: &[MotionTensor]) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| MetricError::Other("no motions for statistics".into()))?;
        if first.repr != Repr::Position3 {
            return Err(MetricError::Repr("position statistics need positions".into()));
        }
        let p = first.pose_dim();
        let mut mean = vec![0.0; p];
        let mut count = 0usize;
        for m in data {
            for t in 0..m.frames() {
                let row = &m.values()[t * p..(t + 1) * p];
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
                count += 1;
            }
        }
        for v in mean.iter_mut() {
            *v /= count as f64;
        }
        let mut var = vec![0.0; p];
        for m in data {
            for t in 0..m.frames() {
                let row = &m.values()[t * p..(t + 1) * p];
                for (acc, (v, mu)) in var.iter_mut().zip(row.iter().zip(&mean)) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(1e-8))
            .collect();
        Ok(PositionStats { mean, std })
    }

    fn normalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, sd))| (v - mu) / sd)
            .collect()
    }
}

/// Average per-frame L2 norm of the standardized global-position difference,
/// over frames that contain hidden joints.
pub fn l2p(
    pred: &MotionTensor,
    truth: &MotionTensor,
    vis: &Visibility,
    stats: &PositionStats,
) -> Result<f64> {
    check_pair(pred, truth)?;
    if pred.repr != Repr::Position3 {
        return Err(MetricError::Repr("l2p needs position motions".into()));
    }
    let p = pred.pose_dim();
    if stats.mean.len() != p {
        return Err(MetricError::Shape(format!(
            "statistics cover {} dimensions, motion has {}",
            stats.mean.len(),
            p
        )));
    }
    let mut sum = 0.0;
    let mut frames = 0usize;
    for t in 0..pred.frames() {
        let scored = (0..pred.joints()).any(|j| !vis.is_visible(t, j));
        if !scored {
            continue;
        }
        let a = stats.normalize(&pred.values()[t * p..(t + 1) * p]);
        let b = stats.normalize(&truth.values()[t * p..(t + 1) * p]);
        let norm: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        sum += norm;
        frames += 1;
    }
    if frames == 0 {
        return Err(MetricError::Other("no frames to score".into()));
    }
    Ok(sum / frames as f64)
}

// ── L2Q ──────────────────────────────────────────────────────────────

/// Per-frame per-joint unit quaternions of an ortho-6D motion.
pub fn quaternions_of(motion: &MotionTensor) -> Result<Vec<Vec<Quaternion>>> {
    if motion.repr != Repr::Ortho6d {
        return Err(MetricError::Repr("quaternion grid needs ortho-6D".into()));
    }
    let mut out = Vec::with_capacity(motion.frames());
    for t in 0..motion.frames() {
        let mut row = Vec::with_capacity(motion.joints());
        for j in 0..motion.joints() {
            row.push(rot6d_to_quaternion(motion.joint_vector(t, j))?);
        }
        out.push(row);
    }
    Ok(out)
}

/// Average per-frame L2 norm of the quaternion difference vector after
/// hemisphere-aligning each predicted quaternion to the ground truth.
/// `score_frame[t]` selects the frames that count.
pub fn l2q(
    pred: &[Vec<Quaternion>],
    truth: &[Vec<Quaternion>],
    score_frame: &[bool],
) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != score_frame.len() {
        return Err(MetricError::Shape(format!(
            "l2q got {} pred frames, {} truth frames, {} flags",
            pred.len(),
            truth.len(),
            score_frame.len()
        )));
    }
    let mut sum = 0.0;
    let mut frames = 0usize;
    for (t, (prow, trow)) in pred.iter().zip(truth).enumerate() {
        if !score_frame[t] {
            continue;
        }
        if prow.len() != trow.len() {
            return Err(MetricError::Shape(format!("frame {t} joint count differs")));
        }
        let mut norm2 = 0.0;
        for (q, r) in prow.iter().zip(trow) {
            for quat in [q, r] {
                let n = quat.norm();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(MetricError::NonUnitQuaternion(n));
                }
            }
            let q = q.hemisphere_aligned(r);
            norm2 += (q.w - r.w).powi(2)
                + (q.x - r.x).powi(2)
                + (q.y - r.y).powi(2)
                + (q.z - r.z).powi(2);
        }
        sum += norm2.sqrt();
        frames += 1;
    }
    if frames == 0 {
        return Err(MetricError::Other("no frames to score".into()));
    }
    Ok(sum / frames as f64)
}

// ── NPSS ─────────────────────────────────────────────────────────────

/// Normalized power spectrum similarity over `[frames, features]` angular
/// feature matrices: earth-mover's distance between normalized DFT power
/// spectra, averaged over features weighted by ground-truth total power.
/// Zero-power ground-truth features are skipped with a warning.
pub fn npss(pred: &[f64], truth: &[f64], frames: usize, features: usize) -> Result<f64> {
    if pred.len() != frames * features || truth.len() != frames * features {
        return Err(MetricError::Shape(format!(
            "npss needs {}x{} matrices, got {} and {} values",
            frames,
            features,
            pred.len(),
            truth.len()
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frames);
    let spectrum = |signal: &mut Vec<Complex<f64>>| -> Vec<f64> {
        fft.process(signal);
        signal.iter().map(|c| c.norm_sqr()).collect()
    };

    let mut weighted = 0.0;
    let mut total_weight = 0.0;
    let mut skipped = 0usize;
    for f in 0..features {
        let mut sp: Vec<Complex<f64>> = (0..frames)
            .map(|t| Complex::new(pred[t * features + f], 0.0))
            .collect();
        let mut st: Vec<Complex<f64>> = (0..frames)
            .map(|t| Complex::new(truth[t * features + f], 0.0))
            .collect();
        let power_pred = spectrum(&mut sp);
        let power_truth = spectrum(&mut st);
        let truth_total: f64 = power_truth.iter().sum();
        if truth_total <= 0.0 {
            skipped += 1;
            continue;
        }
        let pred_total: f64 = power_pred.iter().sum();
        let mut cum_p = 0.0;
        let mut cum_t = 0.0;
        let mut emd = 0.0;
        for k in 0..frames {
            cum_p += if pred_total > 0.0 {
                power_pred[k] / pred_total
            } else {
                0.0
            };
            cum_t += power_truth[k] / truth_total;
            emd += (cum_p - cum_t).abs();
        }
        weighted += truth_total * emd;
        total_weight += truth_total;
    }
    if skipped > 0 {
        log::warn!("npss skipped {skipped} zero-power ground-truth features");
    }
    if total_weight == 0.0 {
        return Err(MetricError::AllZeroPower);
    }
    Ok(weighted / total_weight)
}

/// NPSS over the listed frames of two motions, using the raw joint values as
/// features.
pub fn npss_motion(
    pred: &MotionTensor,
    truth: &MotionTensor,
    frames: &[usize],
) -> Result<f64> {
    check_pair(pred, truth)?;
    let p = pred.pose_dim();
    let gather = |m: &MotionTensor| -> Vec<f64> {
        let mut out = Vec::with_capacity(frames.len() * p);
        for &t in frames {
            out.extend_from_slice(&m.values()[t * p..(t + 1) * p]);
        }
        out
    };
    npss(&gather(pred), &gather(truth), frames.len(), p)
}

// ── baselines ────────────────────────────────────────────────────────

/// Hold the last observed value of every joint ("repeat last pose").
pub fn baseline_zero_velocity(x: &MotionTensor) -> Result<MotionTensor> {
    let filled = fill_motion(x, FillStrategy::RepeatLast)
        .map_err(|e| MetricError::Other(e.to_string()))?;
    Ok(filled.x_fill)
}

/// Linear/slerp interpolation between observed frames, used directly as the
/// prediction.
pub fn baseline_interpolation(x: &MotionTensor) -> Result<MotionTensor> {
    let filled = fill_motion(x, FillStrategy::Interpolate)
        .map_err(|e| MetricError::Other(e.to_string()))?;
    Ok(filled.x_fill)
}

// ── shared evaluation harness ────────────────────────────────────────

/// Masked reconstruction error of an arbitrary predictor over a test set:
/// every sequence is windowed from its start, masked with a per-sequence
/// deterministic seed, predicted, and scored on hidden entries (MPJPE for
/// positions, mean absolute error for rotations). The same `(spec, seed)`
/// always yields the same masks, so different predictors are comparable.
pub fn eval_predictor<F>(
    data: &[MotionTensor],
    spec: &MaskSpec,
    scheme: &PatchScheme,
    seed: u64,
    predict: F,
) -> Result<f64>
where
    F: Fn(&MotionTensor) -> Result<MotionTensor> + Sync,
{
    if data.is_empty() {
        return Err(MetricError::Other("empty evaluation set".into()));
    }
    let w = spec.frames();
    let scores: Vec<Result<f64>> = data
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let truth = seq.window(0, w)?;
            let mut masked = truth.clone();
            let vis = spec
                .generate(masked.joints(), scheme, seed ^ (i as u64))
                .map_err(|e| MetricError::Other(e.to_string()))?;
            masked.set_visibility(vis.clone())?;
            let pred = predict(&masked)?;
            match truth.repr {
                Repr::Position3 => mpjpe_masked(&pred, &truth, &vis),
                Repr::Ortho6d => {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for t in 0..truth.frames() {
                        for j in 0..truth.joints() {
                            if vis.is_visible(t, j) {
                                continue;
                            }
                            for c in 0..6 {
                                sum += (pred.value(t, j, c) - truth.value(t, j, c)).abs();
                                count += 1;
                            }
                        }
                    }
                    if count == 0 {
                        return Err(MetricError::Other("mask hides nothing".into()));
                    }
                    Ok(sum / count as f64)
                }
            }
        })
        .collect();
    let mut sum = 0.0;
    for s in scores {
        sum += s?;
    }
    Ok(sum / data.len() as f64)
}

// ── report ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub method: String,
    /// `(milliseconds, value)` pairs for horizon-indexed MPJPE.
    pub mpjpe_by_ms: Vec<(u32, f64)>,
    pub masked_mpjpe: Option<f64>,
    pub l2p: Option<f64>,
    pub l2q: Option<f64>,
    pub npss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub sample_count: usize,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            let mut vals: Vec<f64> = row.mpjpe_by_ms.iter().map(|(_, v)| *v).collect();
            vals.extend(row.masked_mpjpe);
            vals.extend(row.l2p);
            vals.extend(row.l2q);
            vals.extend(row.npss);
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(MetricError::Other(format!(
                    "row {} has a non-finite or negative value",
                    row.method
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut ms: Vec<u32> = self
            .rows
            .iter()
            .flat_map(|r| r.mpjpe_by_ms.iter().map(|(m, _)| *m))
            .collect();
        ms.sort_unstable();
        ms.dedup();
        let mut out = String::from("method");
        for m in &ms {
            out.push_str(&format!(",mpjpe_{m}ms"));
        }
        out.push_str(",masked_mpjpe,l2p,l2q,npss,samples,fingerprint\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            out.push_str(&row.method);
            for m in &ms {
                let v = row
                    .mpjpe_by_ms
                    .iter()
                    .find(|(mm, _)| mm == m)
                    .map(|(_, v)| *v);
                out.push(',');
                out.push_str(&fmt(v));
            }
            out.push_str(&format!(
                ",{},{},{},{},{},{}\n",
                fmt(row.masked_mpjpe),
                fmt(row.l2p),
                fmt(row.l2q),
                fmt(row.npss),
                self.sample_count,
                self.config_fingerprint
            ));
        }
        out
    }

    /// Paper-style layout: one row per method, one column per horizon/metric.
    pub fn to_table(&self) -> String {
        let csv = self.to_csv();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (i, cell) in r.iter().enumerate() {
                let shown = trim_float(cell);
                widths[i] = widths[i].max(shown.len());
            }
        }
        let mut out = String::new();
        for (i, h) in header.iter().enumerate() {
            out.push_str(&format!("{:>width$}  ", h, width = widths[i]));
        }
        out.push('\n');
        for r in &rows {
            for (i, cell) in r.iter().enumerate() {
                out.push_str(&format!("{:>width$}  ", trim_float(cell), width = widths[i]));
            }
            out.push('\n');
        }
        out
    }
}

fn trim_float(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains('.') => format!("{v:.4}"),
        _ => cell.to_string(),
    }
}
