use std::borrow::BorrowMut;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Adam hyperparameters. Weight decay is decoupled from the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters: {self:?}")))
        }
    }
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            config,
        })
    }

    pub fn for_params(params: &[Tensor], config: AdamConfig) -> Result<Vec<Self>> {
        params.iter().map(|p| Self::new(p.len(), config)).collect()
    }
}

/// One bias-corrected Adam update on every parameter.
///
/// `names` is used only for error messages; pass an empty slice to fall back
/// to positional names.
/// Accepts owned tensors or `&mut Tensor` handles.
pub fn adam_step<P: BorrowMut<Tensor>>(params: &mut [P], states: &mut [AdamState], names: &[&str]) -> Result<()> {
    if params.len() != states.len() {
        return Err(Error::Config(format!(
            "{} parameters but {} optimizer states",
            params.len(),
            states.len()
        )));
    }
    let name = |i: usize| {
        names
            .get(i)
            .map_or_else(|| format!("#{i}"), |s| (*s).to_string())
    };
    // check every precondition before touching anything
    for (i, (p, s)) in params.iter().zip(states.iter()).enumerate() {
        let p: &Tensor = p.borrow();
        if p.grad().is_none() {
            return Err(Error::MissingGradient(name(i)));
        }
        if s.first_moment.len() != p.len() {
            return Err(Error::Config(format!(
                "optimizer state for `{}` has length {}, parameter has {}",
                name(i),
                s.first_moment.len(),
                p.len()
            )));
        }
    }

    for (p, s) in params.iter_mut().zip(states.iter_mut()) {
        let p: &mut Tensor = p.borrow_mut();
        s.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            weight_decay: wd,
        } = s.config;
        let bc1 = 1.0 - b1.powi(s.step_count as i32);
        let bc2 = 1.0 - b2.powi(s.step_count as i32);
        let grad = p.grad().expect("checked above").to_vec();
        let values = p.values_mut();
        for i in 0..values.len() {
            let g = grad[i];
            s.first_moment[i] = b1 * s.first_moment[i] + (1.0 - b1) * g;
            s.second_moment[i] = b2 * s.second_moment[i] + (1.0 - b2) * g * g;
            let m_hat = s.first_moment[i] / bc1;
            let v_hat = s.second_moment[i] / bc2;
            values[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * values[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Tensor::scalar(1.0)];
        p[0].set_grad(vec![1.0]).unwrap();
        let mut s = AdamState::for_params(&p, cfg(0.1)).unwrap();
        adam_step(&mut p, &mut s, &[]).unwrap();
        assert!((p[0].values()[0] - 0.9).abs() < 1e-6);
        assert_eq!(s[0].step_count, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![Tensor::filled(&[3], 0.7)];
        let mut s = AdamState::for_params(&p, cfg(0.1)).unwrap();
        for _ in 0..5 {
            p[0].set_grad(vec![0.0; 3]).unwrap();
            adam_step(&mut p, &mut s, &[]).unwrap();
        }
        assert_eq!(p[0].values(), &[0.7, 0.7, 0.7]);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        p[0].set_grad(vec![1.0]).unwrap();
        let mut s = AdamState::for_params(&p, cfg(0.1)).unwrap();
        let err = adam_step(&mut p, &mut s, &["w", "bias"]).unwrap_err();
        assert!(matches!(&err, Error::MissingGradient(n) if n == "bias"));
        // nothing moved
        assert_eq!(p[0].values(), &[1.0]);
        assert_eq!(s[0].step_count, 0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(AdamState::new(1, cfg(0.0)).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(1, bad).is_err());
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut p = vec![Tensor::scalar(2.0)];
        let c = AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut s = AdamState::for_params(&p, c).unwrap();
        p[0].set_grad(vec![0.0]).unwrap();
        adam_step(&mut p, &mut s, &[]).unwrap();
        assert!((p[0].values()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = (w - 3)^2 from w = 0
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::for_params(&p, cfg(0.1)).unwrap();
        let mut dist = Vec::new();
        let mut crossed = None;
        for step in 0..50 {
            let w = p[0].values()[0];
            p[0].set_grad(vec![2.0 * (w - 3.0)]).unwrap();
            adam_step(&mut p, &mut s, &[]).unwrap();
            let next = p[0].values()[0];
            if crossed.is_none() && next > 3.0 {
                crossed = Some(step);
            }
            dist.push((next - 3.0).abs());
        }
        // momentum overshoots once the target is passed; the approach is monotone
        let approach = crossed.unwrap_or(dist.len());
        assert!(approach > 30, "{dist:?}");
        for pair in dist[..approach].windows(2) {
            assert!(pair[1] < pair[0], "{dist:?}");
        }
        assert!(*dist.last().unwrap() < 0.5);
    }
}
