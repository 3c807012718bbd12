use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{evaluate, srocc, EvalReport};
use crate::model::{train, ClipSample, EpochRecord, Model, ModelConfig, TrainHyper, TrainOutcome};
use crate::synth::{generate_set, DistortionMode, GeneratorSpec, ScenarioMix, Split, SyntheticClip};

use super::report::{fmt_g, Table};

/// `(use_avm, use_vcm, use_acm)`.
pub type Toggles = (bool, bool, bool);

/// The five ablation configurations, from plain late fusion to the full model.
pub const ABLATION_GRID: [Toggles; 5] = [
    (false, false, false),
    (true, false, false),
    (true, true, false),
    (true, false, true),
    (true, true, true),
];

/// Models compared under asymmetric degradation.
pub const ASYMMETRIC_MODELS: [(&str, Toggles); 3] = [
    ("baseline", (false, false, false)),
    ("avm", (true, false, false)),
    ("full", (true, true, true)),
];

pub const ASYMMETRIC_CONDITIONS: [DistortionMode; 2] = [DistortionMode::VideoOnly, DistortionMode::AudioOnly];

/// `(+,-,+)` style label in AVM, VCM, ACM order.
pub fn toggle_label((avm, vcm, acm): Toggles) -> String {
    let s = |b: bool| if b { '+' } else { '-' };
    format!("({},{},{})", s(avm), s(vcm), s(acm))
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Quantile with linear interpolation between order statistics
/// (position `(n - 1) q`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (v.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

fn mos_of(set: &[ClipSample]) -> Vec<f64> {
    set.iter().map(|s| s.mos).collect()
}

/// Trains one model per seed in parallel; results are in seed order.
pub fn train_seeds(
    train_set: &[ClipSample],
    val_set: &[ClipSample],
    cfg: &ModelConfig,
    hyper: &TrainHyper,
    seeds: &[u64],
) -> Result<Vec<TrainOutcome>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    seeds
        .par_iter()
        .map(|&s| train(train_set, val_set, &cfg.with_seed(s), hyper))
        .collect()
}

pub fn history_table(history: &[EpochRecord]) -> Table {
    let mut t = Table::new(&["epoch", "train_loss", "val_plcc", "val_srocc"]);
    for r in history {
        t.push(vec![
            r.epoch.to_string(),
            fmt_g(r.train_loss),
            fmt_g(r.val_plcc),
            fmt_g(r.val_srocc),
        ]);
    }
    t
}

/// Scores, logistic fit and correlations of `model` on `set`.
pub fn evaluate_model(model: &Model, set: &[ClipSample]) -> Result<(Vec<f64>, EvalReport)> {
    let pred = model.scores(set)?;
    let report = evaluate(&pred, &mos_of(set))?;
    Ok((pred, report))
}

pub fn eval_table(r: &EvalReport) -> Table {
    let mut t = Table::new(&[
        "n",
        "plcc_raw",
        "plcc_fitted",
        "srocc",
        "beta1",
        "beta2",
        "beta3",
        "beta4",
        "fit_converged",
    ]);
    let b = r.logistic_params;
    t.push(vec![
        r.n.to_string(),
        fmt_g(r.plcc_raw),
        fmt_g(r.plcc_fitted),
        fmt_g(r.srocc),
        fmt_g(b[0]),
        fmt_g(b[1]),
        fmt_g(b[2]),
        fmt_g(b[3]),
        r.fit_converged.to_string(),
    ]);
    t
}

/// Per-clip predictions: `index, prediction, mos`.
pub fn predictions_table(pred: &[f64], mos: &[f64]) -> Table {
    let mut t = Table::new(&["index", "prediction", "mos"]);
    for (i, (p, m)) in pred.iter().zip(mos).enumerate() {
        t.push(vec![i.to_string(), fmt_g(*p), fmt_g(*m)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub seed: u64,
    pub plcc_fitted: f64,
    pub srocc: f64,
}

/// Trains and tests every configuration of [`ABLATION_GRID`] for every seed.
/// Rows are ordered by configuration, then seed.
pub fn run_ablation(
    split: &Split,
    base: &ModelConfig,
    hyper: &TrainHyper,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let (tr, va, te) = split_samples(split);
    let jobs: Vec<(Toggles, u64)> = ABLATION_GRID
        .iter()
        .flat_map(|&g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    jobs.par_iter()
        .map(|&(g, seed)| {
            let cfg = base.with_toggles(g.0, g.1, g.2).with_seed(seed);
            let out = train(&tr, &va, &cfg, hyper)?;
            let (_, r) = evaluate_model(&out.model, &te)?;
            Ok(AblationRow {
                toggles: g,
                seed,
                plcc_fitted: r.plcc_fitted,
                srocc: r.srocc,
            })
        })
        .collect()
}

/// Per-seed rows followed by a `mean` row for each configuration.
pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut t = Table::new(&["config", "use_avm", "use_vcm", "use_acm", "seed", "plcc", "srocc"]);
    let flags = |g: Toggles| [g.0, g.1, g.2].map(|b| u8::from(b).to_string());
    for g in ABLATION_GRID {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| r.toggles == g).collect();
        if group.is_empty() {
            continue;
        }
        for r in &group {
            let [a, v, c] = flags(g);
            t.push(vec![toggle_label(g), a, v, c, r.seed.to_string(), fmt_g(r.plcc_fitted), fmt_g(r.srocc)]);
        }
        let n = group.len() as f64;
        let [a, v, c] = flags(g);
        t.push(vec![
            toggle_label(g),
            a,
            v,
            c,
            "mean".into(),
            fmt_g(group.iter().map(|r| r.plcc_fitted).sum::<f64>() / n),
            fmt_g(group.iter().map(|r| r.srocc).sum::<f64>() / n),
        ]);
    }
    t
}

/// Median of each configuration's per-seed values of `metric`.
pub fn ablation_medians(rows: &[AblationRow], metric: impl Fn(&AblationRow) -> f64) -> Vec<(Toggles, f64)> {
    ABLATION_GRID
        .iter()
        .map(|&g| {
            let v: Vec<f64> = rows.iter().filter(|r| r.toggles == g).map(&metric).collect();
            (g, if v.is_empty() { f64::NAN } else { median(&v) })
        })
        .collect()
}

fn split_samples(split: &Split) -> (Vec<ClipSample>, Vec<ClipSample>, Vec<ClipSample>) {
    let s = |v: &[SyntheticClip]| v.iter().map(|c| c.sample.clone()).collect::<Vec<_>>();
    (s(&split.train), s(&split.val), s(&split.test))
}

/// Sizes and seeds of the cross-condition experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymmetricSetup {
    pub n_train: usize,
    pub n_val: usize,
    /// Clips in each single-modality test set.
    pub n_test: usize,
    pub severity_level: f64,
    pub data_seed: u64,
}

impl Default for AsymmetricSetup {
    fn default() -> Self {
        Self {
            n_train: 140,
            n_val: 30,
            n_test: 30,
            severity_level: crate::synth::DEFAULT_SEVERITY_LEVEL,
            data_seed: 0,
        }
    }
}

/// Mixed-condition training data and one test set per degraded modality.
#[derive(Debug, Clone)]
pub struct AsymmetricData {
    pub train: Vec<ClipSample>,
    pub val: Vec<ClipSample>,
    pub video_test: Vec<ClipSample>,
    pub audio_test: Vec<ClipSample>,
}

impl AsymmetricData {
    pub fn generate(setup: &AsymmetricSetup, spec: &GeneratorSpec) -> Result<Self> {
        let level = setup.severity_level;
        let mixed = ScenarioMix {
            video_level: level,
            audio_level: level,
            ..ScenarioMix::default()
        };
        let with_level = |m: ScenarioMix| ScenarioMix {
            video_level: level,
            audio_level: level,
            ..m
        };
        let samples = |v: Vec<SyntheticClip>| v.into_iter().map(|c| c.sample).collect::<Vec<_>>();
        let mut seed = setup.data_seed;
        let mut next = |n: usize, mix: ScenarioMix| {
            let set = generate_set(n, &mix, spec, seed);
            seed = seed.wrapping_add(n as u64);
            set.map(samples)
        };
        Ok(Self {
            train: next(setup.n_train, mixed)?,
            val: next(setup.n_val, mixed)?,
            video_test: next(setup.n_test, with_level(ScenarioMix::video_only()))?,
            audio_test: next(setup.n_test, with_level(ScenarioMix::audio_only()))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetricRun {
    pub model: &'static str,
    pub condition: DistortionMode,
    pub run: usize,
    pub seed: u64,
    pub srocc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetricSummary {
    pub model: &'static str,
    pub condition: DistortionMode,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl AsymmetricSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Trains each model of [`ASYMMETRIC_MODELS`] once per seed on the mixed
/// data and records test SROCC under each single-modality degradation.
pub fn run_asymmetric(
    data: &AsymmetricData,
    base: &ModelConfig,
    hyper: &TrainHyper,
    seeds: &[u64],
) -> Result<Vec<AsymmetricRun>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let jobs: Vec<(&'static str, Toggles, usize, u64)> = ASYMMETRIC_MODELS
        .iter()
        .flat_map(|&(name, g)| seeds.iter().enumerate().map(move |(i, &s)| (name, g, i, s)))
        .collect();
    let per_job: Vec<Vec<AsymmetricRun>> = jobs
        .par_iter()
        .map(|&(model, g, run, seed)| {
            let cfg = base.with_toggles(g.0, g.1, g.2).with_seed(seed);
            let out = train(&data.train, &data.val, &cfg, hyper)?;
            ASYMMETRIC_CONDITIONS
                .iter()
                .map(|&condition| {
                    let set = match condition {
                        DistortionMode::VideoOnly => &data.video_test,
                        _ => &data.audio_test,
                    };
                    let pred = out.model.scores(set)?;
                    let s = srocc(&pred, &mos_of(set)).or_else(|e| match e {
                        Error::ZeroVariance(_) => {
                            warn!("{model} run {run}: constant predictions on {condition}, SROCC recorded as 0");
                            Ok(0.0)
                        }
                        e => Err(e),
                    })?;
                    Ok(AsymmetricRun {
                        model,
                        condition,
                        run,
                        seed,
                        srocc: s,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    // model, condition, run order
    let mut runs: Vec<AsymmetricRun> = per_job.into_iter().flatten().collect();
    let model_rank = |m: &str| ASYMMETRIC_MODELS.iter().position(|(n, _)| *n == m);
    let cond_rank = |c: DistortionMode| ASYMMETRIC_CONDITIONS.iter().position(|&x| x == c);
    runs.sort_by_key(|r| (model_rank(r.model), cond_rank(r.condition), r.run));
    Ok(runs)
}

pub fn summarize_asymmetric(runs: &[AsymmetricRun]) -> Vec<AsymmetricSummary> {
    let mut out = Vec::new();
    for (model, _) in ASYMMETRIC_MODELS {
        for condition in ASYMMETRIC_CONDITIONS {
            let v: Vec<f64> = runs
                .iter()
                .filter(|r| r.model == model && r.condition == condition)
                .map(|r| r.srocc)
                .collect();
            if v.is_empty() {
                continue;
            }
            out.push(AsymmetricSummary {
                model,
                condition,
                median: median(&v),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
            });
        }
    }
    out
}

/// Long format: one `run` row per SROCC value, then `median`, `q1`, `q3`
/// and `iqr` rows per model and condition.
///
/// Summary rows are computed from the printed run values, so they can be
/// recomputed exactly from the file.
pub fn asymmetric_table(runs: &[AsymmetricRun]) -> Table {
    let printed: Vec<AsymmetricRun> = runs
        .iter()
        .map(|r| AsymmetricRun {
            srocc: fmt_g(r.srocc).parse().unwrap_or(f64::NAN),
            ..r.clone()
        })
        .collect();
    let summary = summarize_asymmetric(&printed);
    let mut t = Table::new(&["row", "model", "condition", "run", "seed", "srocc"]);
    for r in runs {
        t.push(vec![
            "run".into(),
            r.model.into(),
            r.condition.to_string(),
            r.run.to_string(),
            r.seed.to_string(),
            fmt_g(r.srocc),
        ]);
    }
    for s in &summary {
        for (kind, v) in [("median", s.median), ("q1", s.q1), ("q3", s.q3), ("iqr", s.iqr())] {
            t.push(vec![
                kind.into(),
                s.model.into(),
                s.condition.to_string(),
                String::new(),
                String::new(),
                fmt_g(v),
            ]);
        }
    }
    t
}
