//! Loop-level evaluation of the model and loss, generic over the scalar type.
//!
//! Shares no code with the tape forward pass, so agreement between the two is
//! itself a check. With [`DoubleDouble`](crate::numerics::DoubleDouble) it
//! gives objective values accurate far below `f64` round-off.

use crate::confidence::audio_confidence;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor, SIGMOID_CLAMP};

use super::{ClipSample, ModelConfig};

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x.clamp_to(-SIGMOID_CLAMP, SIGMOID_CLAMP)).exp())
}

/// `x · W + b` with `W: [in, out]` stored row-major.
fn affine<R: Real>(x: &[R], w: &[R], b: &[R]) -> Vec<R> {
    let out = b.len();
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = *yj + xi * w[i * out + j];
        }
    }
    y
}

fn mean<R: Real>(xs: impl Iterator<Item = R>) -> R {
    let (mut s, mut n) = (R::zero(), 0usize);
    for x in xs {
        s = s + x;
        n += 1;
    }
    s / R::from_f64(n as f64)
}

/// Parameter tensors in [`Parameterized`](crate::layers::Parameterized)
/// order, converted to `R`.
struct Weights<'a, R> {
    tensors: &'a [Vec<R>],
    next: usize,
}

impl<'a, R> Weights<'a, R> {
    fn take(&mut self) -> &'a [R] {
        let t = &self.tensors[self.next];
        self.next += 1;
        t
    }

    fn linear(&mut self) -> (&'a [R], &'a [R]) {
        (self.take(), self.take())
    }
}

fn visual_confidence<R: Real>(cfg: &ModelConfig, s: &ClipSample, w: &mut Weights<'_, R>) -> R {
    let (t, k, width) = (cfg.frames, cfg.kinds, cfg.kernel_width);
    let kernel = w.take();
    let heads: Vec<_> = (0..cfg.heads).map(|_| (w.linear(), w.linear())).collect();
    let comb_hidden = w.linear();
    let comb_out = w.linear();
    let a = s.artifacts.as_tensor().values();
    let half = width / 2;

    let frame_scores = (0..t).map(|ti| {
        let x: Vec<R> = (0..k)
            .map(|ki| {
                let mut acc = R::zero();
                for j in 0..width {
                    let src = ti + j;
                    if src >= half && src - half < t {
                        acc = acc + kernel[ki * width + j] * R::from_f64(a[(src - half) * k + ki]);
                    }
                }
                acc
            })
            .collect();
        let head_out: Vec<R> = heads
            .iter()
            .map(|&((w1, b1), (w2, b2))| {
                let h: Vec<R> = affine(&x, w1, b1).into_iter().map(R::relu).collect();
                affine(&h, w2, b2)[0]
            })
            .collect();
        let c: Vec<R> = affine(&head_out, comb_hidden.0, comb_hidden.1)
            .into_iter()
            .map(R::relu)
            .collect();
        sigmoid(affine(&c, comb_out.0, comb_out.1)[0])
    });
    mean(frame_scores)
}

/// Which part of the network a parameter tensor feeds, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Confidence,
    Mixer,
    Head,
}

/// Reference evaluator for one fixed batch.
///
/// Data-only quantities (pooled frame features, audio confidences, targets)
/// are computed once; the remaining work is split into stages so callers
/// that perturb a single tensor can reuse everything upstream of it.
pub struct ReferenceModel<'a, R> {
    cfg: ModelConfig,
    batch: Vec<&'a ClipSample>,
    /// Per clip, `[T, C]` spatially pooled visual features.
    pooled: Vec<Vec<R>>,
    r_a: Vec<R>,
    targets: Vec<R>,
}

impl<'a, R: Real> ReferenceModel<'a, R> {
    pub fn new(cfg: &ModelConfig, batch: &[&'a ClipSample]) -> Result<Self> {
        let hw = cfg.height * cfg.width;
        let mut pooled = Vec::with_capacity(batch.len());
        let mut r_a = Vec::with_capacity(batch.len());
        for (index, s) in batch.iter().enumerate() {
            let sample_err = |e| Error::Sample {
                index,
                source: Box::new(e),
            };
            s.check(cfg).map_err(sample_err)?;
            pooled.push(
                s.visual
                    .values()
                    .chunks(hw)
                    .map(|plane| mean(plane.iter().map(|&x| R::from_f64(x))))
                    .collect(),
            );
            r_a.push(if cfg.use_acm {
                R::from_f64(audio_confidence(&s.audio_cue).map_err(sample_err)?)
            } else {
                R::one()
            });
        }
        Ok(Self {
            cfg: *cfg,
            batch: batch.to_vec(),
            pooled,
            r_a,
            targets: batch.iter().map(|s| R::from_f64(s.mos)).collect(),
        })
    }

    fn vcm_tensors(&self) -> usize {
        1 + 4 * self.cfg.heads + 4
    }

    /// Stage of the tensor at `index` in checkpoint order.
    pub fn stage_of(&self, index: usize) -> Stage {
        let vcm = self.vcm_tensors();
        if index < vcm {
            Stage::Confidence
        } else if index < vcm + 3 {
            Stage::Mixer
        } else {
            Stage::Head
        }
    }

    /// Clip-level visual confidence per clip.
    pub fn visual_confidence(&self, params: &[Vec<R>]) -> Vec<R> {
        self.batch
            .iter()
            .map(|s| {
                if self.cfg.use_vcm {
                    visual_confidence(&self.cfg, s, &mut Weights { tensors: params, next: 0 })
                } else {
                    R::one()
                }
            })
            .collect()
    }

    /// Fusion input `[r_v·v; r_a·a; r_v; r_a]` per clip.
    pub fn fused(&self, params: &[Vec<R>], r_v: &[R]) -> Vec<Vec<R>> {
        let cfg = &self.cfg;
        let c = cfg.channels;
        let vcm = self.vcm_tensors();
        let (w_a, w_v, w_g) = (&params[vcm], &params[vcm + 1], &params[vcm + 2]);
        let no_bias = vec![R::zero(); c];
        (0..self.batch.len())
            .map(|b| {
                let (s, r_v, r_a) = (self.batch[b], r_v[b], self.r_a[b]);
                let mut acc = vec![R::zero(); c];
                if cfg.use_avm {
                    let mut aug: Vec<R> = s.audio.iter().map(|&x| R::from_f64(x)).collect();
                    aug.push(r_a);
                    let query = affine(&aug, w_a, &no_bias);
                    let gate: Vec<R> = w_g.iter().map(|&g| sigmoid(r_v * g)).collect();
                    for frame in self.pooled[b].chunks(c) {
                        let key = affine(frame, w_v, &no_bias);
                        for j in 0..c {
                            let alpha = sigmoid(query[j] * (key[j] * gate[j]));
                            acc[j] = acc[j] + frame[j] * (R::one() + alpha);
                        }
                    }
                } else {
                    for frame in self.pooled[b].chunks(c) {
                        for (a, &x) in acc.iter_mut().zip(frame) {
                            *a = *a + x;
                        }
                    }
                }
                let n = R::from_f64(cfg.frames as f64);
                let mut fused: Vec<R> = acc.into_iter().map(|x| r_v * (x / n)).collect();
                fused.extend(s.audio.iter().map(|&x| r_a * R::from_f64(x)));
                fused.push(r_v);
                fused.push(r_a);
                fused
            })
            .collect()
    }

    /// Scores from fusion inputs.
    pub fn head(&self, params: &[Vec<R>], fused: &[Vec<R>]) -> Vec<R> {
        let vcm = self.vcm_tensors();
        let (wf, bf) = (&params[vcm + 3], &params[vcm + 4]);
        let (wr, br) = (&params[vcm + 5], &params[vcm + 6]);
        fused
            .iter()
            .map(|x| {
                let hidden: Vec<R> = affine(x, wf, bf).into_iter().map(R::relu).collect();
                sigmoid(affine(&hidden, wr, br)[0])
            })
            .collect()
    }

    /// `MSE + λ (1 - ρ)`, dropping the correlation term where the tape loss
    /// does.
    pub fn loss_of_scores(&self, scores: &[R]) -> R {
        let targets = &self.targets;
        let mse = mean(scores.iter().zip(targets).map(|(&p, &t)| (p - t) * (p - t)));
        if self.cfg.lambda_pcc == 0.0 || scores.len() < 2 {
            return mse;
        }
        let mp = mean(scores.iter().copied());
        let mt = mean(targets.iter().copied());
        let (mut spp, mut stt, mut spt) = (R::zero(), R::zero(), R::zero());
        for (&p, &t) in scores.iter().zip(targets) {
            let (dp, dt) = (p - mp, t - mt);
            spp = spp + dp * dp;
            stt = stt + dt * dt;
            spt = spt + dp * dt;
        }
        if !(spp > R::zero()) || !(stt > R::zero()) {
            return mse;
        }
        let rho = (spt / (spp.sqrt() * stt.sqrt())).clamp_to(-1.0, 1.0);
        mse + R::from_f64(self.cfg.lambda_pcc) * (R::one() - rho)
    }

    pub fn scores(&self, params: &[Vec<R>]) -> Vec<R> {
        let r_v = self.visual_confidence(params);
        self.head(params, &self.fused(params, &r_v))
    }

    pub fn loss(&self, params: &[Vec<R>]) -> R {
        self.loss_of_scores(&self.scores(params))
    }
}

/// Predicted scores for `batch` under parameters given in checkpoint order.
pub fn reference_scores<R: Real>(cfg: &ModelConfig, params: &[Vec<R>], batch: &[&ClipSample]) -> Result<Vec<R>> {
    Ok(ReferenceModel::new(cfg, batch)?.scores(params))
}

pub fn reference_loss<R: Real>(cfg: &ModelConfig, params: &[Vec<R>], batch: &[&ClipSample]) -> Result<R> {
    Ok(ReferenceModel::new(cfg, batch)?.loss(params))
}

/// Converts `f64` parameter tensors to flat `R` vectors.
pub fn lift_params<R: Real>(params: &[&Tensor]) -> Vec<Vec<R>> {
    params
        .iter()
        .map(|t| t.values().iter().map(|&x| R::from_f64(x)).collect())
        .collect()
}
