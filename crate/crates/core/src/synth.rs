//! Synthetic asymmetric-distortion clips with a known ground truth.
//!
//! Each clip draws latent content (a clip-level scale and per-channel
//! profiles), then degrades it:
//!
//! - video severity attenuates channel energy, adds feature noise, and adds
//!   temporal flicker whose frame mean is exactly zero; artifact
//!   probabilities rise through per-type sigmoid response profiles;
//! - audio severity attenuates and corrupts the embedding and lowers the
//!   quality cue affinely;
//! - `mos = clamp(1 - w_v·s_v - w_a·s_a + ε, 0, 1)`.
//!
//! Because content scale multiplies the attenuation, the temporally pooled
//! features alone are a weak severity signal; the artifact matrix, the cue
//! and the per-frame feature dynamics carry most of it.
//!
//! # Dataset files
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   8 bytes "AVQADSET"
//! version u32
//! dims    u32 × 6: frames, channels, height, width, audio_dim, kinds
//! count   u64
//! per clip:
//!   mode u8, video_severity f64, audio_severity f64, seed u64
//!   visual    frames·channels·height·width × f64
//!   audio     audio_dim × f64
//!   artifacts frames·kinds × f64
//!   cue raw, min, max f64; mos f64
//! ```

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::codec::Cursor;
use crate::confidence::{ArtifactMatrix, AudioQualityCue};
use crate::error::{Error, Result};
use crate::model::{ClipSample, ModelConfig};
use crate::numerics::{sigmoid_scalar, Tensor};

pub const DATASET_MAGIC: &[u8; 8] = b"AVQADSET";
pub const DATASET_VERSION: u32 = 1;

/// Upper end of the per-clip severity range in degraded conditions.
pub const DEFAULT_SEVERITY_LEVEL: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistortionMode {
    VideoOnly,
    AudioOnly,
    Both,
    Clean,
}

impl DistortionMode {
    pub const ALL: [DistortionMode; 4] = [Self::VideoOnly, Self::AudioOnly, Self::Both, Self::Clean];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VideoOnly => "video_only",
            Self::AudioOnly => "audio_only",
            Self::Both => "both",
            Self::Clean => "clean",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for DistortionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown distortion mode `{s}`")))
    }
}

/// Degradation applied to one clip. Severities of unaffected modalities are
/// forced to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionScenario {
    pub mode: DistortionMode,
    pub video_severity: f64,
    pub audio_severity: f64,
    pub seed: u64,
}

impl DistortionScenario {
    pub fn new(mode: DistortionMode, video_severity: f64, audio_severity: f64, seed: u64) -> Result<Self> {
        for (name, s) in [("video", video_severity), ("audio", audio_severity)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("{name} severity {s} outside [0, 1]")));
            }
        }
        let (v, a) = match mode {
            DistortionMode::VideoOnly => (video_severity, 0.0),
            DistortionMode::AudioOnly => (0.0, audio_severity),
            DistortionMode::Both => (video_severity, audio_severity),
            DistortionMode::Clean => (0.0, 0.0),
        };
        Ok(Self {
            mode,
            video_severity: v,
            audio_severity: a,
            seed,
        })
    }

    pub fn clean(seed: u64) -> Self {
        Self {
            mode: DistortionMode::Clean,
            video_severity: 0.0,
            audio_severity: 0.0,
            seed,
        }
    }
}

/// Sigmoid response of one artifact type to video severity, shifted so that
/// severity 0 yields exactly `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseProfile {
    pub base: f64,
    pub midpoint: f64,
    pub width: f64,
}

impl ResponseProfile {
    pub fn response(&self, severity: f64) -> f64 {
        let at = |s: f64| sigmoid_scalar((s - self.midpoint) / self.width);
        let floor = at(0.0);
        self.base + (1.0 - self.base) * (at(severity) - floor) / (1.0 - floor)
    }
}

/// Tensor sizes shared by the generator, dataset files and the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipDims {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub audio_dim: usize,
    pub kinds: usize,
}

impl ClipDims {
    pub fn of(cfg: &ModelConfig) -> Self {
        Self {
            frames: cfg.frames,
            channels: cfg.channels,
            height: cfg.height,
            width: cfg.width,
            audio_dim: cfg.audio_dim,
            kinds: cfg.kinds,
        }
    }

    /// `cfg` with its data dimensions replaced by these.
    pub fn apply(&self, cfg: ModelConfig) -> ModelConfig {
        ModelConfig {
            frames: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            audio_dim: self.audio_dim,
            kinds: self.kinds,
            ..cfg
        }
    }

    fn visual_len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        let all = [self.frames, self.channels, self.height, self.width, self.audio_dim, self.kinds];
        if all.contains(&0) {
            return Err(Error::Config(format!("clip dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Parameters of the generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub dims: ClipDims,
    /// MOS weight of video severity; `w_v + w_a = 1`.
    pub w_v: f64,
    pub w_a: f64,
    /// Standard deviation of the MOS noise.
    pub noise_std: f64,
    /// One per artifact type.
    pub profiles: Vec<ResponseProfile>,
    /// Half-width of the uniform noise on each artifact probability.
    pub artifact_noise: f64,
    pub cue_min: f64,
    pub cue_max: f64,
    pub cue_noise_std: f64,
    /// Mean visual energy per channel, shared by all clips.
    pub channel_profile: Vec<f64>,
    /// Mean audio embedding, shared by all clips.
    pub audio_profile: Vec<f64>,
    /// Clip-level content scale is drawn from `1 ± content_spread`.
    pub content_spread: f64,
    /// Per-clip relative deviation of each channel / audio component.
    pub content_jitter: f64,
    /// Fraction of visual energy removed at severity 1.
    pub video_attenuation: f64,
    /// Per-frame multiplicative swing at severity 1.
    pub flicker: f64,
    /// `±1` per channel: the two channel groups flicker in anti-phase.
    pub flicker_phase: Vec<f64>,
    /// Visual feature noise standard deviation at severity 1.
    pub video_noise: f64,
    pub audio_attenuation: f64,
    pub audio_noise: f64,
}

impl GeneratorSpec {
    /// Defaults for `dims`, with artifact response profiles drawn from
    /// `profile_seed`.
    pub fn new(dims: ClipDims, profile_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(profile_seed);
        let profiles = (0..dims.kinds)
            .map(|_| ResponseProfile {
                base: rng.random_range(0.02..0.10),
                midpoint: rng.random_range(0.15..0.65),
                width: rng.random_range(0.06..0.15),
            })
            .collect();
        let channel_profile = (0..dims.channels).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut flicker_phase: Vec<f64> = (0..dims.channels)
            .map(|c| if c % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        flicker_phase.shuffle(&mut rng);
        let audio_profile = (0..dims.audio_dim)
            .map(|_| rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Self {
            dims,
            w_v: 0.6,
            w_a: 0.4,
            noise_std: 0.02,
            profiles,
            artifact_noise: 0.05,
            cue_min: AudioQualityCue::DEFAULT_MIN,
            cue_max: AudioQualityCue::DEFAULT_MAX,
            cue_noise_std: 0.1,
            channel_profile,
            audio_profile,
            content_spread: 0.4,
            content_jitter: 0.1,
            video_attenuation: 0.2,
            flicker: 0.9,
            flicker_phase,
            video_noise: 0.3,
            audio_attenuation: 0.5,
            audio_noise: 0.3,
        }
    }

    pub fn for_config(cfg: &ModelConfig, profile_seed: u64) -> Self {
        Self::new(ClipDims::of(cfg), profile_seed)
    }

    /// Zeroes every observation noise term (MOS, artifacts, cue). Degradation
    /// noise that scales with severity is kept.
    pub fn noiseless(mut self) -> Self {
        self.noise_std = 0.0;
        self.artifact_noise = 0.0;
        self.cue_noise_std = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.w_v >= 0.0 && self.w_a >= 0.0) || (self.w_v + self.w_a - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "MOS weights must be non-negative and sum to 1, got w_v={} w_a={}",
                self.w_v, self.w_a
            )));
        }
        if self.profiles.len() != self.dims.kinds {
            return Err(Error::Config(format!(
                "{} response profiles for {} artifact types",
                self.profiles.len(),
                self.dims.kinds
            )));
        }
        if self
            .profiles
            .iter()
            .any(|p| !(0.0..1.0).contains(&p.base) || !(p.width > 0.0))
        {
            return Err(Error::Config("response profile needs base in [0, 1) and width > 0".into()));
        }
        if self.flicker_phase.len() != self.dims.channels {
            return Err(Error::Config("flicker_phase needs one entry per channel".into()));
        }
        if self.channel_profile.len() != self.dims.channels || self.audio_profile.len() != self.dims.audio_dim {
            return Err(Error::Config("content profile lengths must match channels and audio_dim".into()));
        }
        if !(self.cue_max > self.cue_min) {
            return Err(Error::Config("cue_max must exceed cue_min".into()));
        }
        let non_negative = [
            self.noise_std,
            self.artifact_noise,
            self.cue_noise_std,
            self.video_noise,
            self.audio_noise,
            self.content_jitter,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("noise levels must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.content_spread)
            || !(0.0..1.0).contains(&self.video_attenuation)
            || !(0.0..1.0).contains(&self.audio_attenuation)
            || !(0.0..1.0).contains(&self.flicker)
        {
            return Err(Error::Config(
                "content_spread, attenuations and flicker must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates one clip. A pure function of `(scenario, spec)`.
pub fn generate_clip(scenario: &DistortionScenario, spec: &GeneratorSpec) -> Result<ClipSample> {
    spec.validate()?;
    let sc = DistortionScenario::new(
        scenario.mode,
        scenario.video_severity,
        scenario.audio_severity,
        scenario.seed,
    )?;
    let (sv, sa) = (sc.video_severity, sc.audio_severity);
    let ClipDims {
        frames: t_len,
        channels: c_len,
        height,
        width,
        audio_dim: _,
        kinds,
    } = spec.dims;
    let hw = height * width;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    // latent content
    let spread = spec.content_spread;
    let scale_v = rng.random_range(1.0 - spread..=1.0 + spread);
    let scale_a = rng.random_range(1.0 - spread..=1.0 + spread);
    let jitter = spec.content_jitter;
    let profile: Vec<f64> = spec
        .channel_profile
        .iter()
        .map(|p| p * (1.0 + jitter * normal(&mut rng)))
        .collect();
    let mut spatial: Vec<f64> = (0..c_len * hw).map(|_| 0.1 * normal(&mut rng)).collect();
    for row in spatial.chunks_mut(hw) {
        let m = row.iter().sum::<f64>() / hw as f64;
        row.iter_mut().for_each(|x| *x -= m);
    }
    let audio_content: Vec<f64> = spec
        .audio_profile
        .iter()
        .map(|p| p * (1.0 + jitter * normal(&mut rng)))
        .collect();

    // zero-mean flicker: half the frames up, half down
    let mut swing: Vec<f64> = (0..t_len)
        .map(|t| match (t_len % 2 == 1 && t == t_len - 1, t % 2) {
            (true, _) => 0.0,
            (false, 0) => 1.0,
            _ => -1.0,
        })
        .collect();
    swing.shuffle(&mut rng);

    let energy = scale_v * (1.0 - spec.video_attenuation * sv);
    let mut visual = Vec::with_capacity(spec.dims.visual_len());
    for &s in &swing {
        for c in 0..c_len {
            let frame_gain = energy * (1.0 + spec.flicker * sv * s * spec.flicker_phase[c]);
            let g = frame_gain * profile[c] + sv * spec.video_noise * normal(&mut rng);
            visual.extend(spatial[c * hw..(c + 1) * hw].iter().map(|p| g * (1.0 + p)));
        }
    }

    let mut artifacts = Vec::with_capacity(t_len * kinds);
    for _ in 0..t_len {
        for p in &spec.profiles {
            let jitter = spec.artifact_noise * rng.random_range(-1.0..=1.0);
            artifacts.push((p.response(sv) + jitter).clamp(0.0, 1.0));
        }
    }

    let audio_gain = scale_a * (1.0 - spec.audio_attenuation * sa);
    let audio: Vec<f64> = audio_content
        .iter()
        .map(|u| audio_gain * u + sa * spec.audio_noise * normal(&mut rng))
        .collect();

    let range = spec.cue_max - spec.cue_min;
    let raw = (spec.cue_max - range * sa + spec.cue_noise_std * normal(&mut rng)).clamp(spec.cue_min, spec.cue_max);
    let mos = (1.0 - spec.w_v * sv - spec.w_a * sa + spec.noise_std * normal(&mut rng)).clamp(0.0, 1.0);

    Ok(ClipSample {
        visual: Tensor::new(vec![t_len, c_len, height, width], visual)?,
        audio,
        artifacts: ArtifactMatrix::new(t_len, kinds, artifacts)?,
        audio_cue: AudioQualityCue {
            raw_score: raw,
            cue_min: spec.cue_min,
            cue_max: spec.cue_max,
        },
        mos,
    })
}

/// Proportions of distortion modes and the severity range of each
/// modality. Per-clip severities are uniform on `[0, level]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioMix {
    pub video_only: f64,
    pub audio_only: f64,
    pub both: f64,
    pub clean: f64,
    pub video_level: f64,
    pub audio_level: f64,
}

impl Default for ScenarioMix {
    /// Mixed conditions used for training.
    fn default() -> Self {
        Self {
            video_only: 0.3,
            audio_only: 0.3,
            both: 0.3,
            clean: 0.1,
            video_level: DEFAULT_SEVERITY_LEVEL,
            audio_level: DEFAULT_SEVERITY_LEVEL,
        }
    }
}

impl ScenarioMix {
    fn only(mode: DistortionMode) -> Self {
        let pick = |m| if m == mode { 1.0 } else { 0.0 };
        Self {
            video_only: pick(DistortionMode::VideoOnly),
            audio_only: pick(DistortionMode::AudioOnly),
            both: pick(DistortionMode::Both),
            clean: pick(DistortionMode::Clean),
            ..Self::default()
        }
    }

    pub fn video_only() -> Self {
        Self::only(DistortionMode::VideoOnly)
    }

    pub fn audio_only() -> Self {
        Self::only(DistortionMode::AudioOnly)
    }

    pub fn both() -> Self {
        Self::only(DistortionMode::Both)
    }

    pub fn clean() -> Self {
        Self::only(DistortionMode::Clean)
    }

    fn weights(&self) -> [(DistortionMode, f64); 4] {
        [
            (DistortionMode::VideoOnly, self.video_only),
            (DistortionMode::AudioOnly, self.audio_only),
            (DistortionMode::Both, self.both),
            (DistortionMode::Clean, self.clean),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|(_, p)| !(*p >= 0.0) || !p.is_finite()) || w.iter().map(|(_, p)| p).sum::<f64>() <= 0.0 {
            return Err(Error::Config("scenario proportions must be non-negative with a positive sum".into()));
        }
        if !(0.0..=1.0).contains(&self.video_level) || !(0.0..=1.0).contains(&self.audio_level) {
            return Err(Error::Config("severity levels must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Mode counts for `n` clips by largest remainder, ties to earlier modes.
    pub fn counts(&self, n: usize) -> [(DistortionMode, usize); 4] {
        let w = self.weights();
        let total: f64 = w.iter().map(|(_, p)| p).sum();
        let exact: Vec<f64> = w.iter().map(|(_, p)| p / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        [0, 1, 2, 3].map(|i| (w[i].0, counts[i]))
    }
}

/// A generated clip with the scenario that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub scenario: DistortionScenario,
    pub sample: ClipSample,
}

/// Draws `n` scenarios from `mix`; clip `i` gets seed `first_seed + i`.
pub fn draw_scenarios(n: usize, mix: &ScenarioMix, first_seed: u64) -> Result<Vec<DistortionScenario>> {
    mix.validate()?;
    let mut modes: Vec<DistortionMode> = mix
        .counts(n)
        .iter()
        .flat_map(|&(m, k)| std::iter::repeat_n(m, k))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(first_seed ^ 0xa076_1d64_78bd_642f);
    modes.shuffle(&mut rng);
    modes
        .into_iter()
        .enumerate()
        .map(|(i, mode)| {
            let v = rng.random_range(0.0..=mix.video_level);
            let a = rng.random_range(0.0..=mix.audio_level);
            DistortionScenario::new(mode, v, a, first_seed.wrapping_add(i as u64))
        })
        .collect()
}

/// Generates clips in parallel; output order follows `scenarios`.
pub fn generate_clips(scenarios: &[DistortionScenario], spec: &GeneratorSpec) -> Result<Vec<SyntheticClip>> {
    scenarios
        .par_iter()
        .map(|sc| {
            Ok(SyntheticClip {
                scenario: *sc,
                sample: generate_clip(sc, spec)?,
            })
        })
        .collect()
}

/// `n` clips drawn from `mix`, seeded from `first_seed` upward.
pub fn generate_set(n: usize, mix: &ScenarioMix, spec: &GeneratorSpec, first_seed: u64) -> Result<Vec<SyntheticClip>> {
    generate_clips(&draw_scenarios(n, mix, first_seed)?, spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<SyntheticClip>,
    pub val: Vec<SyntheticClip>,
    pub test: Vec<SyntheticClip>,
}

/// Train/val/test counts for `total` clips at 70:15:15; the test split
/// takes the rounding remainder.
pub fn split_counts(total: usize) -> (usize, usize, usize) {
    let train = (total * 70 + 50) / 100;
    let val = (total * 15 + 50) / 100;
    (train, val, total - train - val)
}

/// Three splits from consecutive, non-overlapping seed ranges starting at
/// `first_seed`.
pub fn generate_split(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    mix: &ScenarioMix,
    spec: &GeneratorSpec,
    first_seed: u64,
) -> Result<Split> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split sizes must be positive, got {n_train}/{n_val}/{n_test}"
        )));
    }
    let val_seed = first_seed.wrapping_add(n_train as u64);
    let test_seed = val_seed.wrapping_add(n_val as u64);
    Ok(Split {
        train: generate_set(n_train, mix, spec, first_seed)?,
        val: generate_set(n_val, mix, spec, val_seed)?,
        test: generate_set(n_test, mix, spec, test_seed)?,
    })
}

/// A collection of clips sharing one set of dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: ClipDims,
    pub clips: Vec<SyntheticClip>,
}

impl Dataset {
    pub fn new(dims: ClipDims, clips: Vec<SyntheticClip>) -> Result<Self> {
        let ds = Self { dims, clips };
        let cfg = dims.apply(ModelConfig::default());
        for (i, c) in ds.clips.iter().enumerate() {
            c.sample.check(&cfg).map_err(|e| Error::Sample {
                index: i,
                source: Box::new(e),
            })?;
        }
        Ok(ds)
    }

    pub fn samples(&self) -> Vec<ClipSample> {
        self.clips.iter().map(|c| c.sample.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_dataset(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }

    /// Hex SHA-256 of the encoded file.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_clip(out: &mut Vec<u8>, clip: &SyntheticClip) {
    let sc = &clip.scenario;
    out.push(sc.mode.code());
    put_f64s(out, &[sc.video_severity, sc.audio_severity]);
    out.extend_from_slice(&sc.seed.to_le_bytes());
    let s = &clip.sample;
    put_f64s(out, s.visual.values());
    put_f64s(out, &s.audio);
    put_f64s(out, s.artifacts.values());
    put_f64s(out, &[s.audio_cue.raw_score, s.audio_cue.cue_min, s.audio_cue.cue_max, s.mos]);
}

/// Hex SHA-256 of one clip's encoded record, for duplicate detection.
pub fn clip_hash(clip: &SyntheticClip) -> String {
    let mut buf = Vec::new();
    encode_clip(&mut buf, clip);
    hex_digest(&buf)
}

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    let d = &ds.dims;
    let mut head = Vec::with_capacity(44);
    head.extend_from_slice(DATASET_MAGIC);
    head.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [d.frames, d.channels, d.height, d.width, d.audio_dim, d.kinds] {
        head.extend_from_slice(&(v as u32).to_le_bytes());
    }
    head.extend_from_slice(&(ds.clips.len() as u64).to_le_bytes());
    w.write_all(&head)?;
    let mut buf = Vec::new();
    for clip in &ds.clips {
        buf.clear();
        encode_clip(&mut buf, clip);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), ds)
}

fn decode_clip(c: &mut Cursor<'_>, dims: &ClipDims) -> Result<SyntheticClip> {
    let at = c.offset();
    let code = c.u8("mode")?;
    let Some(mode) = DistortionMode::from_code(code) else {
        return c.fail_at(at, format!("unknown mode code {code}"));
    };
    let sev = c.f64s(2, "severities")?;
    let seed = c.u64("seed")?;
    let scenario = DistortionScenario::new(mode, sev[0], sev[1], seed).map_err(|e| Error::Format {
        offset: at,
        message: e.to_string(),
    })?;
    if scenario.video_severity != sev[0] || scenario.audio_severity != sev[1] {
        return Err(Error::Format {
            offset: at,
            message: format!("severities {sev:?} inconsistent with mode {mode}"),
        });
    }

    let visual = c.f64s(dims.visual_len(), "visual features")?;
    let audio = c.f64s(dims.audio_dim, "audio embedding")?;
    let at = c.offset();
    let probs = c.f64s(dims.frames * dims.kinds, "artifact matrix")?;
    let artifacts = ArtifactMatrix::new(dims.frames, dims.kinds, probs).map_err(|e| Error::Format {
        offset: at,
        message: e.to_string(),
    })?;
    let tail = c.f64s(3, "audio cue")?;
    let at = c.offset();
    let mos = c.f64s(1, "mos")?[0];
    if !(0.0..=1.0).contains(&mos) {
        return c.fail_at(at, format!("MOS {mos} outside [0, 1]"));
    }
    Ok(SyntheticClip {
        scenario,
        sample: ClipSample {
            visual: Tensor::new(vec![dims.frames, dims.channels, dims.height, dims.width], visual)?,
            audio,
            artifacts,
            audio_cue: AudioQualityCue {
                raw_score: tail[0],
                cue_min: tail[1],
                cue_max: tail[2],
            },
            mos,
        },
    })
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor::new(&buf);
    if c.take(8, "magic")? != DATASET_MAGIC {
        return c.fail_at(0, "not a dataset file (bad magic)");
    }
    let at = c.offset();
    let version = c.u32("version")?;
    if version != DATASET_VERSION {
        return c.fail_at(at, format!("unsupported dataset version {version}"));
    }
    let at = c.offset();
    let mut d = [0usize; 6];
    for v in &mut d {
        *v = c.u32("dimension")? as usize;
    }
    let dims = ClipDims {
        frames: d[0],
        channels: d[1],
        height: d[2],
        width: d[3],
        audio_dim: d[4],
        kinds: d[5],
    };
    if let Err(e) = dims.validate() {
        return c.fail_at(at, e.to_string());
    }
    let count = c.u64("clip count")?;
    let mut clips = Vec::new();
    for _ in 0..count {
        clips.push(decode_clip(&mut c, &dims)?);
    }
    c.finish()?;
    Ok(Dataset { dims, clips })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
