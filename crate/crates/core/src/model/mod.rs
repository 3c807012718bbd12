//! End-to-end assembly.
//!
//! Per clip: visual confidence `r_v` from the artifact matrix (VCM), audio
//! confidence `r_a` from the quality cue (ACM), the mixer applied frame by
//! frame (AVM), temporal averaging to a clip vector, confidence-scaled
//! concatenation `[r_v·v; r_a·a; r_v; r_a]`, a ReLU hidden layer and a
//! sigmoid regression output. A disabled confidence module contributes the
//! constant 1.0; a disabled mixer leaves the pooled visual features as they
//! are (plain late fusion).

mod checkpoint;
mod config;
mod loss;
mod reference;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use loss::{loss_nodes, pcc_loss, total_loss, LossValue};
pub use reference::{lift_params, reference_loss, reference_scores, ReferenceModel, Stage};
pub use train::{train, EpochRecord, TrainHyper, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::confidence::{
    audio_confidence, ArtifactMatrix, AudioQualityCue, ConfidencePair, VisualConfidenceParams,
    VisualConfidenceVars,
};
use crate::error::{dim_err, Error, Result};
use crate::layers::{Linear, LinearVars, Parameterized};
use crate::mixer::{MixerParams, MixerVars};
use crate::numerics::{Tape, Tensor, Var};

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    /// `[T, C, H, W]` per-frame feature maps.
    pub visual: Tensor,
    /// Clip-level audio embedding of length `d`.
    pub audio: Vec<f64>,
    pub artifacts: ArtifactMatrix,
    pub audio_cue: AudioQualityCue,
    /// Normalized MOS in `[0, 1]`.
    pub mos: f64,
}

impl ClipSample {
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let want = [cfg.frames, cfg.channels, cfg.height, cfg.width];
        if self.visual.shape() != want {
            return Err(dim_err("ClipSample.visual", self.visual.shape(), &want));
        }
        if self.audio.len() != cfg.audio_dim {
            return Err(dim_err("ClipSample.audio", &[self.audio.len()], &[cfg.audio_dim]));
        }
        let got = [self.artifacts.frames(), self.artifacts.kinds()];
        if got != [cfg.frames, cfg.kinds] {
            return Err(dim_err("ClipSample.artifacts", &got, &[cfg.frames, cfg.kinds]));
        }
        if !(0.0..=1.0).contains(&self.mos) {
            return Err(Error::Config(format!("MOS {} outside [0, 1]", self.mos)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub confidences: ConfidencePair,
    /// Per-channel attention averaged over frames; empty without the mixer.
    pub alpha_mean: Vec<f64>,
}

/// All learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vcm: VisualConfidenceParams,
    pub mixer: MixerParams,
    pub fusion: Linear,
    pub regression: Linear,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vcm = VisualConfidenceParams::init(&cfg.vcm(), &mut rng)?;
        let mixer = MixerParams::init(cfg.audio_dim, cfg.channels, &mut rng);
        let fusion = Linear::init(cfg.fusion_input(), cfg.fusion_hidden, &mut rng);
        let regression = Linear::init(cfg.fusion_hidden, 1, &mut rng);
        Ok(Self {
            vcm,
            mixer,
            fusion,
            regression,
        })
    }

    /// Every weight, bias and kernel tap zero, except the identity kernel.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            vcm: VisualConfidenceParams::zeros(&cfg.vcm()),
            mixer: MixerParams::zeros(cfg.audio_dim, cfg.channels),
            fusion: Linear::zeros(cfg.fusion_input(), cfg.fusion_hidden),
            regression: Linear::zeros(cfg.fusion_hidden, 1),
        }
    }

    /// Registers every tensor on the tape in [`Parameterized`] order.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let vars: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, t)| tape.param(t))
            .collect();
        self.structure(&vars)
    }

    /// Rebuilds the structured handles from a flat list in
    /// [`Parameterized`] order.
    pub fn structure(&self, vars: &[Var]) -> ModelVars {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("one handle per parameter tensor");
        let linear = |next: &mut dyn FnMut() -> Var| LinearVars {
            weight: next(),
            bias: next(),
        };
        let kernel = next();
        let heads = (0..self.vcm.heads.len())
            .map(|_| (linear(&mut next), linear(&mut next)))
            .collect();
        let vcm = VisualConfidenceVars {
            kernel,
            heads,
            combiner_hidden: linear(&mut next),
            combiner_out: linear(&mut next),
        };
        let mixer = MixerVars {
            w_a: next(),
            w_v: next(),
            w_g: next(),
        };
        ModelVars {
            vcm,
            mixer,
            fusion: linear(&mut next),
            regression: linear(&mut next),
        }
    }

    pub fn count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

impl Parameterized for ModelParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .vcm
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("vcm.{n}"), t))
            .collect();
        out.extend(
            self.mixer
                .named_params()
                .into_iter()
                .map(|(n, t)| (format!("mixer.{n}"), t)),
        );
        self.fusion.push_named("fusion", &mut out);
        self.regression.push_named("regression", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.vcm.params_mut();
        out.extend(self.mixer.params_mut());
        self.fusion.push_mut(&mut out);
        self.regression.push_mut(&mut out);
        out
    }
}

/// Coarse grouping of parameter names used in gradient-check reports.
pub fn param_group(name: &str) -> &'static str {
    if name.starts_with("vcm.kernel") {
        "vcm.kernel"
    } else if name.starts_with("vcm.head") {
        "vcm.heads"
    } else if name.starts_with("vcm.combiner") {
        "vcm.combiner"
    } else if name.starts_with("mixer.w_a") {
        "mixer.w_a"
    } else if name.starts_with("mixer.w_v") {
        "mixer.w_v"
    } else if name.starts_with("mixer.w_g") {
        "mixer.w_g"
    } else if name.starts_with("fusion") {
        "fusion"
    } else {
        "regression"
    }
}

/// Group names in report order.
pub const PARAM_GROUPS: [&str; 8] = [
    "vcm.kernel",
    "vcm.heads",
    "vcm.combiner",
    "mixer.w_a",
    "mixer.w_v",
    "mixer.w_g",
    "fusion",
    "regression",
];

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub vcm: VisualConfidenceVars,
    pub mixer: MixerVars,
    pub fusion: LinearVars,
    pub regression: LinearVars,
}

/// Tape handles produced by one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `[B, 1]`
    pub scores: Var,
    /// `[B, 1]`
    pub r_v: Var,
    /// `[B, 1]`
    pub r_a: Var,
    /// `[B*T, 1]` when the visual confidence module is enabled.
    pub frame_scores: Option<Var>,
    /// `[B*T, C]` when the mixer is enabled.
    pub alpha: Option<Var>,
}

impl ModelVars {
    pub fn forward(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        batch: &[&ClipSample],
    ) -> Result<ForwardNodes> {
        if batch.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        for (index, s) in batch.iter().enumerate() {
            s.check(cfg).map_err(|e| Error::Sample {
                index,
                source: Box::new(e),
            })?;
        }
        let b = batch.len();
        let (t, c) = (cfg.frames, cfg.channels);

        let visual: Vec<f64> = batch
            .iter()
            .flat_map(|s| s.visual.values().iter().copied())
            .collect();
        let visual = tape.constant(Tensor::new(vec![b * t, c, cfg.height, cfg.width], visual)?);
        let audio: Vec<f64> = batch.iter().flat_map(|s| s.audio.iter().copied()).collect();
        let audio = tape.constant(Tensor::new(vec![b, cfg.audio_dim], audio)?);

        let (r_v, frame_scores) = if cfg.use_vcm {
            let probs: Vec<f64> = batch
                .iter()
                .flat_map(|s| s.artifacts.values().iter().copied())
                .collect();
            let probs = tape.constant(Tensor::new(vec![b, t, cfg.kinds], probs)?);
            let out = self.vcm.forward(tape, probs)?;
            (out.r_v, Some(out.frame_scores))
        } else {
            (tape.constant(Tensor::filled(&[b, 1], 1.0)), None)
        };

        let r_a = if cfg.use_acm {
            let values = batch
                .iter()
                .enumerate()
                .map(|(index, s)| {
                    audio_confidence(&s.audio_cue).map_err(|e| Error::Sample {
                        index,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            tape.constant(Tensor::new(vec![b, 1], values)?)
        } else {
            tape.constant(Tensor::filled(&[b, 1], 1.0))
        };

        let (frame_features, alpha) = if cfg.use_avm {
            let nodes = self.mixer.forward(tape, visual, audio, r_a, r_v, t)?;
            (nodes.v_enhanced, Some(nodes.alpha))
        } else {
            (visual, None)
        };
        let pooled = tape.global_average_pool(frame_features)?;
        let clip_visual = tape.segment_mean(pooled, t)?;

        let weighted_visual = tape.mul_col(clip_visual, r_v)?;
        let weighted_audio = tape.mul_col(audio, r_a)?;
        let fused = tape.concat_cols(&[weighted_visual, weighted_audio, r_v, r_a])?;
        let hidden = self.fusion.forward(tape, fused)?;
        let hidden = tape.relu(hidden);
        let logit = self.regression.forward(tape, hidden)?;
        let scores = tape.sigmoid(logit);

        Ok(ForwardNodes {
            scores,
            r_v,
            r_a,
            frame_scores,
            alpha,
        })
    }
}

/// A configured model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: ModelParams,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        Ok(Self {
            params: ModelParams::init(&cfg)?,
            cfg,
        })
    }

    /// Checks that every tensor has the shape `cfg` implies.
    pub fn from_parts(cfg: ModelConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        let reference = ModelParams::zeros(&cfg);
        let want = reference.named_params();
        let got = params.named_params();
        if want.len() != got.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                want.len(),
                got.len()
            )));
        }
        for ((wn, wt), (gn, gt)) in want.iter().zip(&got) {
            if wn != gn || wt.shape() != gt.shape() {
                return Err(Error::Config(format!(
                    "parameter `{gn}` {:?} does not match `{wn}` {:?}",
                    gt.shape(),
                    wt.shape()
                )));
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn predict(&self, batch: &[ClipSample]) -> Result<Vec<Prediction>> {
        let refs: Vec<&ClipSample> = batch.iter().collect();
        self.predict_refs(&refs)
    }

    pub fn predict_refs(&self, batch: &[&ClipSample]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let nodes = vars.forward(&mut tape, &self.cfg, batch)?;
        let (t, c) = (self.cfg.frames, self.cfg.channels);
        let scores = tape.value(nodes.scores).values();
        let r_v = tape.value(nodes.r_v).values();
        let r_a = tape.value(nodes.r_a).values();
        let frames = nodes.frame_scores.map(|v| tape.value(v).values());
        let alpha = nodes.alpha.map(|v| tape.value(v).values());
        Ok((0..batch.len())
            .map(|i| {
                let frame_scores = frames.map_or_else(Vec::new, |f| f[i * t..(i + 1) * t].to_vec());
                let alpha_mean = alpha.map_or_else(Vec::new, |a| {
                    let mut m = vec![0.0; c];
                    for row in a[i * t * c..(i + 1) * t * c].chunks(c) {
                        m.iter_mut().zip(row).for_each(|(acc, x)| *acc += x);
                    }
                    m.iter_mut().for_each(|x| *x /= t as f64);
                    m
                });
                Prediction {
                    score: scores[i],
                    confidences: ConfidencePair {
                        r_v: r_v[i],
                        r_a: r_a[i],
                        frame_scores,
                    },
                    alpha_mean,
                }
            })
            .collect())
    }

    pub fn scores(&self, batch: &[ClipSample]) -> Result<Vec<f64>> {
        Ok(self.predict(batch)?.into_iter().map(|p| p.score).collect())
    }

    /// Forward and backward on one batch; gradients are written into the
    /// parameter tensors (replacing any previous gradient).
    pub fn loss_and_grad(&mut self, batch: &[&ClipSample]) -> Result<LossValue> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let nodes = vars.forward(&mut tape, &self.cfg, batch)?;
        let targets: Vec<f64> = batch.iter().map(|s| s.mos).collect();
        let (root, value) = loss_nodes(&mut tape, nodes.scores, &targets, self.cfg.lambda_pcc)?;
        if !value.total.is_finite() {
            return Ok(value);
        }
        let grads = tape.backward(root)?;
        for (p, g) in self.params.params_mut().into_iter().zip(grads.params()) {
            p.set_grad(g)?;
        }
        Ok(value)
    }
}
