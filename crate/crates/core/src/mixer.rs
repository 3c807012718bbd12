//! Confidence-aware audio-visual mixer.
//!
//! ```text
//! q_a     = [a ; r_a] · W_a                  [B, C]
//! k_v     = GAP(V) · W_v                     [B, C]
//! k_gated = k_v ⊙ σ(r_v · W_g)               [B, C]
//! α       = σ(q_a ⊙ k_gated)                 [B, C]
//! V_enh   = V ⊙ (1 + α)   broadcast over H, W
//! ```
//!
//! The linear maps carry no bias. The model applies the mixer per frame by
//! flattening clips and frames into the batch axis; the clip-level query and
//! gate are repeated over each clip's frames.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::layers::Parameterized;
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct MixerParams {
    /// `[d + 1, C]`
    pub w_a: Tensor,
    /// `[C, C]`
    pub w_v: Tensor,
    /// `[1, C]`
    pub w_g: Tensor,
}

impl MixerParams {
    pub fn init<R: Rng + ?Sized>(audio_dim: usize, channels: usize, rng: &mut R) -> Self {
        Self {
            w_a: Tensor::uniform_init(&[audio_dim + 1, channels], audio_dim + 1, rng),
            w_v: Tensor::uniform_init(&[channels, channels], channels, rng),
            w_g: Tensor::uniform_init(&[1, channels], 1, rng),
        }
    }

    pub fn zeros(audio_dim: usize, channels: usize) -> Self {
        Self {
            w_a: Tensor::zeros(&[audio_dim + 1, channels]).with_requires_grad(true),
            w_v: Tensor::zeros(&[channels, channels]).with_requires_grad(true),
            w_g: Tensor::zeros(&[1, channels]).with_requires_grad(true),
        }
    }

    pub fn audio_dim(&self) -> usize {
        self.w_a.shape()[0] - 1
    }

    pub fn channels(&self) -> usize {
        self.w_v.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape) -> MixerVars {
        MixerVars {
            w_a: tape.param(&self.w_a),
            w_v: tape.param(&self.w_v),
            w_g: tape.param(&self.w_g),
        }
    }
}

impl Parameterized for MixerParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_a".into(), &self.w_a),
            ("w_v".into(), &self.w_v),
            ("w_g".into(), &self.w_g),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_a, &mut self.w_v, &mut self.w_g]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MixerVars {
    pub w_a: Var,
    pub w_v: Var,
    pub w_g: Var,
}

/// Tape handles of every mixer intermediate.
#[derive(Debug, Clone, Copy)]
pub struct MixerNodes {
    pub q_a: Var,
    pub k_v: Var,
    pub k_v_gated: Var,
    pub alpha: Var,
    pub v_enhanced: Var,
}

impl MixerVars {
    /// Eq. `q_a = [a ; r_a] · W_a` on `a: [B, d]`, `r_a: [B, 1]`.
    pub fn audio_query(&self, tape: &mut Tape, a: Var, r_a: Var) -> Result<Var> {
        let aug = tape.concat_cols(&[a, r_a])?;
        tape.matmul(aug, self.w_a)
    }

    /// `(k_v, gate)` where `gate = σ(r_v · W_g)` has one row per `r_v` row.
    pub fn visual_key_and_gate(&self, tape: &mut Tape, v: Var, r_v: Var) -> Result<(Var, Var)> {
        let pooled = tape.global_average_pool(v)?;
        let k_v = tape.matmul(pooled, self.w_v)?;
        let logits = tape.matmul(r_v, self.w_g)?;
        Ok((k_v, tape.sigmoid(logits)))
    }

    /// Mixer on `v: [B*T, C, H, W]` with clip-level `a: [B, d]`,
    /// `r_a: [B, 1]`, `r_v: [B, 1]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        v: Var,
        a: Var,
        r_a: Var,
        r_v: Var,
        frames_per_clip: usize,
    ) -> Result<MixerNodes> {
        let q_clip = self.audio_query(tape, a, r_a)?;
        let (k_v, gate_clip) = self.visual_key_and_gate(tape, v, r_v)?;
        let (q_a, gate) = if frames_per_clip == 1 {
            (q_clip, gate_clip)
        } else {
            (
                tape.repeat_rows(q_clip, frames_per_clip)?,
                tape.repeat_rows(gate_clip, frames_per_clip)?,
            )
        };
        if tape.shape(q_a) != tape.shape(k_v) {
            return Err(dim_err("mix", tape.shape(q_a), tape.shape(k_v)));
        }
        let k_v_gated = tape.mul(k_v, gate)?;
        let alpha = channel_attention_vars(tape, q_a, k_v_gated)?;
        let v_enhanced = enhance_vars(tape, v, alpha)?;
        Ok(MixerNodes {
            q_a,
            k_v,
            k_v_gated,
            alpha,
            v_enhanced,
        })
    }
}

fn channel_attention_vars(tape: &mut Tape, q_a: Var, k_v_gated: Var) -> Result<Var> {
    let prod = tape.mul(q_a, k_v_gated)?;
    Ok(tape.sigmoid(prod))
}

fn enhance_vars(tape: &mut Tape, v: Var, alpha: Var) -> Result<Var> {
    let factor = tape.add_scalar(alpha, 1.0);
    tape.channel_scale(v, factor)
}

/// Every intermediate of one mixer evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerOutput {
    pub v_enhanced: Tensor,
    pub alpha: Tensor,
    pub q_a: Tensor,
    pub k_v: Tensor,
    pub k_v_gated: Tensor,
}

pub fn audio_query(a: &Tensor, r_a: &Tensor, p: &MixerParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let (a, r_a) = (tape.constant(a.clone()), tape.constant(r_a.clone()));
    let q = vars.audio_query(&mut tape, a, r_a)?;
    Ok(tape.value(q).clone())
}

/// Returns `(k_v, k_v_gated)`.
pub fn gated_visual_key(v: &Tensor, r_v: &Tensor, p: &MixerParams) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let (v, r_v) = (tape.constant(v.clone()), tape.constant(r_v.clone()));
    let (k_v, gate) = vars.visual_key_and_gate(&mut tape, v, r_v)?;
    let gated = tape.mul(k_v, gate)?;
    Ok((tape.value(k_v).clone(), tape.value(gated).clone()))
}

pub fn channel_attention(q_a: &Tensor, k_v_gated: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (q, k) = (tape.constant(q_a.clone()), tape.constant(k_v_gated.clone()));
    let alpha = channel_attention_vars(&mut tape, q, k)?;
    Ok(tape.value(alpha).clone())
}

/// `v[b,c,h,w] * (1 + alpha[b,c])`.
pub fn enhance(v: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (v, alpha) = (tape.constant(v.clone()), tape.constant(alpha.clone()));
    let out = enhance_vars(&mut tape, v, alpha)?;
    Ok(tape.value(out).clone())
}

/// Batch-wise mixer: `v: [B, C, H, W]`, `a: [B, d]`, `r_a, r_v: [B, 1]`.
pub fn mix(v: &Tensor, a: &Tensor, r_a: &Tensor, r_v: &Tensor, p: &MixerParams) -> Result<MixerOutput> {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let v = tape.constant(v.clone());
    let a = tape.constant(a.clone());
    let r_a = tape.constant(r_a.clone());
    let r_v = tape.constant(r_v.clone());
    let n = vars.forward(&mut tape, v, a, r_a, r_v, 1)?;
    Ok(MixerOutput {
        v_enhanced: tape.value(n.v_enhanced).clone(),
        alpha: tape.value(n.alpha).clone(),
        q_a: tape.value(n.q_a).clone(),
        k_v: tape.value(n.k_v).clone(),
        k_v_gated: tape.value(n.k_v_gated).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_w_a_gives_zero_query() {
        let p = MixerParams::zeros(3, 4);
        let a = Tensor::filled(&[2, 3], 1.7);
        let q = audio_query(&a, &col(&[0.2, 0.9]), &p).unwrap();
        assert!(q.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn audio_query_hand_product() {
        let mut p = MixerParams::zeros(1, 1);
        p.w_a = Tensor::from_rows(&[&[2.0], &[3.0]]);
        let q = audio_query(&Tensor::from_rows(&[&[1.0]]), &col(&[0.5]), &p).unwrap();
        assert_eq!(q.values(), &[3.5]);
    }

    #[test]
    fn audio_query_shape_mismatch() {
        let p = MixerParams::zeros(3, 4);
        let a = Tensor::zeros(&[2, 5]);
        assert!(audio_query(&a, &col(&[0.0, 0.0]), &p).is_err());
    }

    #[test]
    fn zero_gate_halves_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MixerParams::init(3, 4, &mut rng);
        p.w_g = Tensor::zeros(&[1, 4]);
        let v = Tensor::new(vec![2, 4, 2, 2], (0..32).map(|i| i as f64 * 0.1 - 1.0).collect()).unwrap();
        let (k, g) = gated_visual_key(&v, &col(&[0.3, 0.8]), &p).unwrap();
        for (a, b) in k.values().iter().zip(g.values()) {
            assert_eq!(*b, 0.5 * a);
        }
    }

    #[test]
    fn constant_features_identity_key() {
        let mut p = MixerParams::zeros(2, 3);
        p.w_v = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let v = Tensor::filled(&[1, 3, 2, 2], 0.75);
        let (k, _) = gated_visual_key(&v, &col(&[1.0]), &p).unwrap();
        assert_eq!(k.values(), &[0.75, 0.75, 0.75]);
    }

    #[test]
    fn attention_hand_values() {
        let q = Tensor::from_rows(&[&[2.0, 0.0]]);
        let k = Tensor::from_rows(&[&[3.0, 5.0]]);
        let alpha = channel_attention(&q, &k).unwrap();
        assert!((alpha.values()[0] - 0.997_527_376_6).abs() < 1e-9);
        assert_eq!(alpha.values()[1], 0.5);
    }

    #[test]
    fn enhance_hand_scaling() {
        let v = Tensor::filled(&[1, 2, 2, 2], 1.0);
        let alpha = Tensor::from_rows(&[&[0.5, 0.0]]);
        let e = enhance(&v, &alpha).unwrap();
        assert_eq!(&e.values()[..4], &[1.5; 4]);
        assert_eq!(&e.values()[4..], &[1.0; 4]);
        assert!(enhance(&v, &Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn zero_parameters_compose() {
        let p = MixerParams::zeros(3, 2);
        let v = Tensor::new(vec![1, 2, 1, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let out = mix(&v, &Tensor::filled(&[1, 3], 0.3), &col(&[0.4]), &col(&[0.6]), &p).unwrap();
        assert!(out.alpha.values().iter().all(|&x| x == 0.5));
        assert_eq!(out.v_enhanced.values(), &[1.5, -3.0, 0.75, 6.0]);
    }
}
