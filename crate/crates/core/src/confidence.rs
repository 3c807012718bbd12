//! Modality confidence estimation.
//!
//! Visual confidence: per-frame artifact probabilities `A: [T, K]` are
//! smoothed per artifact channel along time, each smoothed row is scored by
//! parallel MLP heads and a combiner ending in a sigmoid, and the clip score
//! is the mean of the frame scores.
//!
//! Audio confidence: a raw no-reference quality cue mapped to `[0, 1]` by a
//! fixed min-max range.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Linear, LinearVars, Parameterized};
use crate::numerics::{Tape, Tensor, Var};

/// Default number of artifact types.
pub const DEFAULT_ARTIFACT_TYPES: usize = 10;

/// Per-frame artifact probabilities, `T` frames by `K` artifact types.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactMatrix {
    probs: Tensor,
}

impl ArtifactMatrix {
    pub fn new(frames: usize, kinds: usize, probs: Vec<f64>) -> Result<Self> {
        if frames == 0 || kinds == 0 {
            return Err(Error::Degenerate(format!(
                "artifact matrix must be non-empty, got {frames}x{kinds}"
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("artifact probability {p} outside [0, 1]")));
        }
        Ok(Self {
            probs: Tensor::new(vec![frames, kinds], probs)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn kinds(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.probs
    }

    pub fn values(&self) -> &[f64] {
        self.probs.values()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let k = self.kinds();
        &self.probs.values()[t * k..(t + 1) * k]
    }
}

/// Raw speech-quality prediction and the range used to normalize it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioQualityCue {
    pub raw_score: f64,
    pub cue_min: f64,
    pub cue_max: f64,
}

impl AudioQualityCue {
    pub const DEFAULT_MIN: f64 = 1.0;
    pub const DEFAULT_MAX: f64 = 5.0;

    pub fn with_default_range(raw_score: f64) -> Self {
        Self {
            raw_score,
            cue_min: Self::DEFAULT_MIN,
            cue_max: Self::DEFAULT_MAX,
        }
    }
}

/// Clip-level confidences plus the frame scores behind `r_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidencePair {
    pub r_v: f64,
    pub r_a: f64,
    pub frame_scores: Vec<f64>,
}

/// `r_a = clamp((raw - min) / (max - min), 0, 1)`.
pub fn audio_confidence(cue: &AudioQualityCue) -> Result<f64> {
    if !(cue.cue_min < cue.cue_max) {
        return Err(Error::Config(format!(
            "audio cue range must satisfy min < max, got [{}, {}]",
            cue.cue_min, cue.cue_max
        )));
    }
    Ok(((cue.raw_score - cue.cue_min) / (cue.cue_max - cue.cue_min)).clamp(0.0, 1.0))
}

/// Sizes of the visual confidence estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VcmConfig {
    pub kinds: usize,
    pub kernel_width: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub combiner_hidden: usize,
}

impl Default for VcmConfig {
    fn default() -> Self {
        Self {
            kinds: DEFAULT_ARTIFACT_TYPES,
            kernel_width: 5,
            heads: 4,
            head_hidden: 16,
            combiner_hidden: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub hidden: Linear,
    pub out: Linear,
}

/// Learnable parameters of the visual confidence module.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualConfidenceParams {
    /// `[K, W]` depthwise temporal kernel.
    pub kernel: Tensor,
    pub heads: Vec<MlpHead>,
    pub combiner_hidden: Linear,
    pub combiner_out: Linear,
}

impl VisualConfidenceParams {
    /// Heads and combiner get the uniform fan-in init; the kernel starts as
    /// a normalized box filter.
    pub fn init<R: Rng + ?Sized>(cfg: &VcmConfig, rng: &mut R) -> Result<Self> {
        if cfg.kernel_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "temporal kernel width must be odd, got {}",
                cfg.kernel_width
            )));
        }
        let w = cfg.kernel_width;
        let kernel = Tensor::filled(&[cfg.kinds, w], 1.0 / w as f64).with_requires_grad(true);
        let heads = (0..cfg.heads)
            .map(|_| MlpHead {
                hidden: Linear::init(cfg.kinds, cfg.head_hidden, rng),
                out: Linear::init(cfg.head_hidden, 1, rng),
            })
            .collect();
        Ok(Self {
            kernel,
            heads,
            combiner_hidden: Linear::init(cfg.heads, cfg.combiner_hidden, rng),
            combiner_out: Linear::init(cfg.combiner_hidden, 1, rng),
        })
    }

    /// All weights and biases zero; kernel is the identity tap.
    pub fn zeros(cfg: &VcmConfig) -> Self {
        let w = cfg.kernel_width;
        let mut kernel = Tensor::zeros(&[cfg.kinds, w]).with_requires_grad(true);
        for k in 0..cfg.kinds {
            kernel.values_mut()[k * w + w / 2] = 1.0;
        }
        Self {
            kernel,
            heads: (0..cfg.heads)
                .map(|_| MlpHead {
                    hidden: Linear::zeros(cfg.kinds, cfg.head_hidden),
                    out: Linear::zeros(cfg.head_hidden, 1),
                })
                .collect(),
            combiner_hidden: Linear::zeros(cfg.heads, cfg.combiner_hidden),
            combiner_out: Linear::zeros(cfg.combiner_hidden, 1),
        }
    }

    pub fn kinds(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape) -> VisualConfidenceVars {
        let kernel = tape.param(&self.kernel);
        let heads = self
            .heads
            .iter()
            .map(|h| (h.hidden.bind(tape), h.out.bind(tape)))
            .collect();
        VisualConfidenceVars {
            kernel,
            heads,
            combiner_hidden: self.combiner_hidden.bind(tape),
            combiner_out: self.combiner_out.bind(tape),
        }
    }

    /// Smoothed matrix `X` for one clip.
    pub fn smooth(&self, a: &ArtifactMatrix) -> Result<Tensor> {
        smooth_artifacts(a, &self.kernel)
    }

    /// Frame score for one smoothed row `x_t`.
    pub fn frame_confidence(&self, x_t: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(Tensor::new(vec![1, x_t.len()], x_t.to_vec())?);
        let r = vars.frame_scores(&mut tape, x)?;
        Ok(tape.value(r).values()[0])
    }

    /// `(r_v, frame_scores)` for one clip.
    pub fn clip_visual_confidence(&self, a: &ArtifactMatrix) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let input = tape.constant(
            a.as_tensor()
                .clone()
                .reshape(vec![1, a.frames(), a.kinds()])?,
        );
        let out = vars.forward(&mut tape, input)?;
        Ok((
            tape.value(out.r_v).values()[0],
            tape.value(out.frame_scores).values().to_vec(),
        ))
    }
}

impl Parameterized for VisualConfidenceParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("kernel".to_string(), &self.kernel)];
        for (i, h) in self.heads.iter().enumerate() {
            h.hidden.push_named(&format!("head{i}.hidden"), &mut out);
            h.out.push_named(&format!("head{i}.out"), &mut out);
        }
        self.combiner_hidden.push_named("combiner.hidden", &mut out);
        self.combiner_out.push_named("combiner.out", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.kernel];
        for h in &mut self.heads {
            h.hidden.push_mut(&mut out);
            h.out.push_mut(&mut out);
        }
        self.combiner_hidden.push_mut(&mut out);
        self.combiner_out.push_mut(&mut out);
        out
    }
}

/// Tape handles for [`VisualConfidenceParams`].
#[derive(Debug, Clone)]
pub struct VisualConfidenceVars {
    pub kernel: Var,
    pub heads: Vec<(LinearVars, LinearVars)>,
    pub combiner_hidden: LinearVars,
    pub combiner_out: LinearVars,
}

#[derive(Debug, Clone, Copy)]
pub struct VisualConfidenceOutput {
    /// `[B, 1]`
    pub r_v: Var,
    /// `[B*T, 1]`, frames of clip `b` at rows `b*T..(b+1)*T`.
    pub frame_scores: Var,
}

impl VisualConfidenceVars {
    /// `[N, K] -> [N, 1]` frame scores in `(0, 1)`.
    ///
    /// Heads see one row at a time, so each output depends only on its row.
    pub fn frame_scores(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut head_out = Vec::with_capacity(self.heads.len());
        for (hidden, out) in &self.heads {
            let h = hidden.forward(tape, x)?;
            let h = tape.relu(h);
            head_out.push(out.forward(tape, h)?);
        }
        let heads = tape.concat_cols(&head_out)?;
        let c = self.combiner_hidden.forward(tape, heads)?;
        let c = tape.relu(c);
        let logit = self.combiner_out.forward(tape, c)?;
        Ok(tape.sigmoid(logit))
    }

    /// Full clip path on `[B, T, K]` artifact probabilities.
    pub fn forward(&self, tape: &mut Tape, artifacts: Var) -> Result<VisualConfidenceOutput> {
        let (b, t, k) = match *tape.shape(artifacts) {
            [b, t, k] => (b, t, k),
            _ => {
                return Err(Error::Dimension {
                    op: "clip_visual_confidence",
                    lhs: tape.shape(artifacts).to_vec(),
                    rhs: vec![0, 0, 0],
                })
            }
        };
        if t == 0 {
            return Err(Error::Degenerate("clip has no frames".into()));
        }
        let smoothed = tape.depthwise_temporal_conv1d(artifacts, self.kernel)?;
        let rows = tape.reshape(smoothed, &[b * t, k])?;
        let frame_scores = self.frame_scores(tape, rows)?;
        let r_v = tape.segment_mean(frame_scores, t)?;
        Ok(VisualConfidenceOutput { r_v, frame_scores })
    }
}

/// `X = TemporalConv1D(A)` with a `[K, W]` kernel.
pub fn smooth_artifacts(a: &ArtifactMatrix, kernel: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let av = tape.constant(a.as_tensor().clone());
    let kv = tape.constant(kernel.clone());
    let x = tape.depthwise_temporal_conv1d(av, kv)?;
    Ok(tape.value(x).clone())
}
