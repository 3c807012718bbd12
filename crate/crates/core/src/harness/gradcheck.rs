use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::model::{
    lift_params, loss_nodes, param_group, reference_loss, ClipSample, ModelConfig, ModelParams, ReferenceModel, Stage,
    PARAM_GROUPS,
};
use crate::numerics::{relative_error, DoubleDouble, Real, Tape, Tensor, Var};
use crate::synth::{generate_set, GeneratorSpec, ScenarioMix};

use super::report::{fmt_g, Table};

pub const GRADCHECK_EPSILON: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub group: &'static str,
    pub max_rel_error: f64,
    /// Number of scalar parameters checked in the group.
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub tolerance: f64,
    /// Relative difference between the tape loss and the reference loss.
    pub forward_gap: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.forward_gap < self.tolerance && self.rows.iter().all(|r| r.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["group", "entries", "max_rel_error", "tolerance", "pass"]);
        for r in &self.rows {
            t.push(vec![
                r.group.to_string(),
                r.entries.to_string(),
                fmt_g(r.max_rel_error),
                fmt_g(self.tolerance),
                (r.max_rel_error < self.tolerance).to_string(),
            ]);
        }
        t
    }
}

/// A small mixed-condition batch for gradient checking.
pub fn gradcheck_batch(cfg: &ModelConfig, size: usize, seed: u64) -> Result<Vec<ClipSample>> {
    let spec = GeneratorSpec::for_config(cfg, seed);
    Ok(generate_set(size, &ScenarioMix::both(), &spec, seed)?
        .into_iter()
        .map(|c| c.sample)
        .collect())
}

/// Compares tape gradients of the training loss with central differences
/// for every parameter of a freshly initialized model.
///
/// The differences are taken on the reference evaluation in double-double
/// arithmetic, so tiny gradients are not swamped by `f64` round-off in the
/// two loss values. `fault` scales the gradient flowing into the scores by
/// the given factor, simulating a broken backward pass.
pub fn gradcheck_model(
    cfg: &ModelConfig,
    batch: &[ClipSample],
    epsilon: f64,
    fault: Option<f64>,
) -> Result<GradcheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let params = ModelParams::init(cfg)?;
    let named = params.named_params();
    let refs: Vec<&ClipSample> = batch.iter().collect();
    let targets: Vec<f64> = batch.iter().map(|s| s.mos).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = named.iter().map(|(_, t)| tape.param(t)).collect();
    let nodes = params.structure(&vars).forward(&mut tape, cfg, &refs)?;
    let scores = match fault {
        Some(f) => tape.grad_scale(nodes.scores, f),
        None => nodes.scores,
    };
    let (root, value) = loss_nodes(&mut tape, scores, &targets, cfg.lambda_pcc)?;
    let analytic: Vec<Vec<f64>> = tape.backward(root)?.params().collect();

    let tensors: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
    let reference = reference_loss(cfg, &lift_params::<f64>(&tensors), &refs)?;
    let forward_gap = relative_error(value.total, reference);

    let model = ReferenceModel::<DoubleDouble>::new(cfg, &refs)?;
    let base = lift_params::<DoubleDouble>(&tensors);
    let base_r_v = model.visual_confidence(&base);
    let base_fused = model.fused(&base, &base_r_v);
    let perturbed_loss = |work: &[Vec<DoubleDouble>], stage: Stage| {
        let scores = match stage {
            Stage::Confidence => model.scores(work),
            Stage::Mixer => model.head(work, &model.fused(work, &base_r_v)),
            Stage::Head => model.head(work, &base_fused),
        };
        model.loss_of_scores(&scores)
    };

    let step = DoubleDouble::from(epsilon);
    let mut work = base.clone();
    let mut per_tensor = Vec::with_capacity(base.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let stage = model.stage_of(pi);
        let mut worst = 0.0f64;
        for (i, &a) in grads.iter().enumerate() {
            let orig = base[pi][i];
            work[pi][i] = orig + step;
            let plus = perturbed_loss(&work, stage);
            work[pi][i] = orig - step;
            let minus = perturbed_loss(&work, stage);
            work[pi][i] = orig;
            let numeric = ((plus - minus) / (step + step)).to_f64();
            worst = worst.max(relative_error(a, numeric));
        }
        per_tensor.push(worst);
    }

    let rows = PARAM_GROUPS
        .iter()
        .map(|&group| {
            let members = named.iter().zip(&per_tensor).filter(|((n, _), _)| param_group(n) == group);
            let (mut worst, mut entries) = (0.0f64, 0);
            for ((_, t), &e) in members {
                worst = worst.max(e);
                entries += t.len();
            }
            GradcheckRow {
                group,
                max_rel_error: worst,
                entries,
            }
        })
        .collect();
    Ok(GradcheckReport {
        rows,
        tolerance: GRADCHECK_TOLERANCE,
        forward_gap,
    })
}
