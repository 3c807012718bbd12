//! Acceptance criteria, one pass/fail line each.
//!
//! Runs without the libtest harness so the summary is printed even when
//! every criterion passes. Exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use avqa_core::harness::{
    ablation_medians, evaluate_model, gradcheck_batch, gradcheck_model, history_table, median,
    run_ablation, run_asymmetric, summarize_asymmetric, train_seeds, AsymmetricData, AsymmetricSetup, Preset,
    GRADCHECK_EPSILON,
};
use avqa_core::metrics::{fit_logistic4, midranks, paired_t_test, plcc, srocc, wilcoxon_exact, Logistic4};
use avqa_core::confidence::ArtifactMatrix;
use avqa_core::mixer::{mix, MixerParams};
use avqa_core::model::{
    pcc_loss, read_checkpoint, total_loss, write_checkpoint, ClipSample, Model, ModelConfig, TrainHyper,
    PARAM_GROUPS,
};
use avqa_core::synth::{
    generate_split, read_dataset, split_counts, write_dataset, ClipDims, Dataset, DistortionMode, GeneratorSpec,
    ScenarioMix, Split,
};
use avqa_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_split() -> Split {
    let cfg = ModelConfig::default();
    let (tr, va, te) = split_counts(200);
    let spec = GeneratorSpec::for_config(&cfg, 0);
    generate_split(tr, va, te, &ScenarioMix::default(), &spec, 0).expect("default dataset")
}

fn samples(clips: &[avqa_core::synth::SyntheticClip]) -> Vec<ClipSample> {
    clips.iter().map(|c| c.sample.clone()).collect()
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let batch = gradcheck_batch(&cfg, 2, 0).map_err(|e| e.to_string())?;
    let report = gradcheck_model(&cfg, &batch, GRADCHECK_EPSILON, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let groups_ok = report.rows.len() == PARAM_GROUPS.len();
    check(
        report.passed() && groups_ok && elapsed < Duration::from_secs(60),
        format!(
            "{} groups, worst rel. error {:.2e}, forward gap {:.2e}, {:.1}s",
            report.rows.len(),
            report.worst(),
            report.forward_gap,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let (mx, my) = (sx / n, sy / n);
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx).powi(2);
        dy += (y[i] - my).powi(2);
    }
    num / (dx.sqrt() * dy.sqrt())
}

/// Rank = 1 + #smaller + (#equal - 1) / 2, by counting.
fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Exact p-values by enumerating all 2^n sign assignments.
fn enumerated_wilcoxon(d: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = naive_ranks(&abs);
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    let (lower, upper) = (le as f64 / total, ge as f64 / total);
    ((2.0 * lower.min(upper)).min(1.0), lower)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fixtures = 25;
    let (mut corr_err, mut p_err): (f64, f64) = (0.0, 0.0);
    for f in 0..fixtures {
        let n = rng.random_range(5..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-2.0..2.0)).collect();
        corr_err = corr_err.max((plcc(&x, &y).map_err(|e| e.to_string())? - naive_pearson(&x, &y)).abs());

        // coarse values force ties
        let levels = if f % 2 == 0 { 4.0 } else { 1.0 };
        let xt: Vec<f64> = x.iter().map(|v| (v * levels).round()).collect();
        let yt: Vec<f64> = y.iter().map(|v| (v * levels).round()).collect();
        let want = naive_pearson(&naive_ranks(&xt), &naive_ranks(&yt));
        corr_err = corr_err.max((srocc(&xt, &yt).map_err(|e| e.to_string())? - want).abs());
        if midranks(&xt) != naive_ranks(&xt) {
            return Err(format!("mid-ranks differ on fixture {f}"));
        }
    }
    for f in 0..fixtures {
        let n = rng.random_range(3..=18);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let shift = rng.random_range(-0.3..0.3);
        // quarter steps produce tied and zero differences
        let b: Vec<f64> = a
            .iter()
            .map(|v| {
                let d: f64 = rng.random_range(-1.0..1.0) + shift;
                v - if f % 3 == 0 { (d * 4.0).round() / 4.0 } else { d }
            })
            .collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        if d.iter().all(|&v| v == 0.0) {
            continue;
        }
        let w = wilcoxon_exact(&a, &b).map_err(|e| e.to_string())?;
        let (two, less) = enumerated_wilcoxon(&d);
        p_err = p_err.max((w.p_two_sided - two).abs()).max((w.p_less - less).abs());

        let t = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
        let dist = StudentsT::new(0.0, 1.0, n as f64 - 1.0).map_err(|e| e.to_string())?;
        let oracle = 2.0 * (1.0 - dist.cdf(t.t.abs()));
        p_err = p_err.max((t.p_two_sided - oracle).abs());
    }

    let err_a: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let err_b: Vec<f64> = err_a.iter().map(|v| v + 0.05).collect();
    let shifted = wilcoxon_exact(&err_a, &err_b).map_err(|e| e.to_string())?.p_two_sided;
    let shifted_ok = (shifted - 2.0 / 1024.0).abs() < 1e-12;

    check(
        corr_err < 1e-10 && p_err < 1e-6 && shifted_ok,
        format!(
            "{fixtures} fixtures each; correlation err {corr_err:.1e}, p-value err {p_err:.1e}, shifted p = {shifted:.6}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_affine: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(3..20);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let zero = total_loss(&p, &t, 0.0).map_err(|e| e.to_string())?;
        let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        if zero.total != zero.mse || (zero.mse - mse).abs() > 1e-15 {
            return Err(format!("lambda = 0 loss {} differs from MSE {mse}", zero.total));
        }
        let l = pcc_loss(&p, &t).map_err(|e| e.to_string())?;
        if !(0.0..=2.0).contains(&l) {
            return Err(format!("pcc_loss {l} outside [0, 2]"));
        }
        let (scale, offset) = (rng.random_range(0.01..50.0), rng.random_range(-10.0..10.0));
        let moved: Vec<f64> = p.iter().map(|v| scale * v + offset).collect();
        worst_affine = worst_affine.max((pcc_loss(&moved, &t).map_err(|e| e.to_string())? - l).abs());

        let exact = total_loss(&t, &t, 0.15).map_err(|e| e.to_string())?.total;
        if exact.abs() > 1e-15 {
            return Err(format!("loss {exact} at predictions == targets"));
        }
        let mut off = t.clone();
        off[rng.random_range(0..n)] += 1e-3;
        if total_loss(&off, &t, 0.15).map_err(|e| e.to_string())?.total <= 0.0 {
            return Err("zero loss with predictions != targets".into());
        }
    }
    check(
        worst_affine < 1e-12,
        format!("200 batches; affine invariance err {worst_affine:.1e}"),
    )
}

// ---------------------------------------------------------------- 4

fn mixer_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    let mut worst_ratio: f64 = 0.0;
    for draw in 0..1000 {
        let (b, c, h, w, d) = (
            rng.random_range(1..4),
            rng.random_range(1..9),
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..9),
        );
        let mut p = MixerParams::init(d, c, &mut rng);
        let gain = rng.random_range(0.5..3.0);
        for t in [&mut p.w_a, &mut p.w_v, &mut p.w_g] {
            t.values_mut().iter_mut().for_each(|x| *x *= gain);
        }
        let v = Tensor::new(
            vec![b, c, h, w],
            (0..b * c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let a = Tensor::new(vec![b, d], (0..b * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let r_a = Tensor::new(vec![b, 1], (0..b).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
        let r_v = Tensor::new(vec![b, 1], (0..b).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
        let out = mix(&v, &a, &r_a, &r_v, &p).map_err(|e| e.to_string())?;
        let alpha = out.alpha.values();
        for &x in alpha {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if !alpha.iter().all(|&x| x > 0.0 && x < 1.0) {
            return Err(format!("draw {draw}: alpha left (0, 1)"));
        }
        let hw = h * w;
        for (plane, (vin, vout)) in v.values().chunks(hw).zip(out.v_enhanced.values().chunks(hw)).enumerate() {
            let m = 1.0 + alpha[plane];
            for (x, y) in vin.iter().zip(vout) {
                if *y != x * m {
                    return Err(format!("draw {draw}: enhanced value differs from v(1 + alpha)"));
                }
                if *x != 0.0 {
                    worst_ratio = worst_ratio.max((y / x - m).abs());
                }
            }
        }

        let zero = mix(&v, &a, &r_a, &r_v, &MixerParams::zeros(d, c)).map_err(|e| e.to_string())?;
        if zero.alpha.values().iter().any(|&x| x != 0.5)
            || zero.v_enhanced.values().iter().zip(v.values()).any(|(y, x)| *y != 1.5 * x)
        {
            return Err(format!("draw {draw}: zero parameters do not give alpha = 0.5"));
        }
    }
    check(
        worst_ratio <= 4.0 * f64::EPSILON,
        format!("1000 draws; alpha in [{lo:.4}, {hi:.4}], spatial ratio spread {worst_ratio:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

fn learnability(split: &Split) -> Outcome {
    let start = Instant::now();
    let (tr, va, te) = (samples(&split.train), samples(&split.val), samples(&split.test));
    let outcomes = train_seeds(&tr, &va, &ModelConfig::default(), &Preset::Desk.hyper(), &[0, 1, 2])
        .map_err(|e| e.to_string())?;
    let mut plccs = Vec::new();
    let mut sroccs = Vec::new();
    for o in &outcomes {
        let (_, r) = evaluate_model(&o.model, &te).map_err(|e| e.to_string())?;
        plccs.push(r.plcc_fitted);
        sroccs.push(r.srocc);
    }
    let elapsed = start.elapsed();
    let (p, s) = (median(&plccs), median(&sroccs));
    check(
        p >= 0.90 && s >= 0.88 && elapsed < Duration::from_secs(300),
        format!("median PLCC {p:.4}, SROCC {s:.4}, {:.1}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 6

fn ablation_ordering(split: &Split) -> Outcome {
    let rows = run_ablation(split, &ModelConfig::default(), &Preset::Desk.hyper(), &[0, 1, 2])
        .map_err(|e| e.to_string())?;
    let medians = ablation_medians(&rows, |r| r.plcc_fitted);
    let get = |g| {
        medians
            .iter()
            .find(|(t, _)| *t == g)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing configuration {g:?}"))
    };
    let full = get((true, true, true))?;
    let avm = get((true, false, false))?;
    let base = get((false, false, false))?;
    check(
        full >= avm && avm >= base && full - base >= 0.01,
        format!("median PLCC full {full:.4} >= AVM-only {avm:.4} >= baseline {base:.4}"),
    )
}

// ---------------------------------------------------------------- 7

fn asymmetric_robustness() -> Outcome {
    let cfg = ModelConfig::default();
    let setup = AsymmetricSetup::default();
    let data = AsymmetricData::generate(&setup, &GeneratorSpec::for_config(&cfg, setup.data_seed))
        .map_err(|e| e.to_string())?;
    let runs = run_asymmetric(&data, &cfg, &Preset::Desk.hyper(), &[0, 1, 2, 3, 4]).map_err(|e| e.to_string())?;
    let summary = summarize_asymmetric(&runs);
    let find = |model: &str, cond| {
        summary
            .iter()
            .find(|s| s.model == model && s.condition == cond)
            .cloned()
            .ok_or_else(|| format!("missing {model} {cond:?}"))
    };
    let mut medians_ok = true;
    let mut iqr_ok = false;
    let mut detail = Vec::new();
    for cond in [DistortionMode::VideoOnly, DistortionMode::AudioOnly] {
        let (full, base) = (find("full", cond)?, find("baseline", cond)?);
        medians_ok &= full.median >= base.median;
        iqr_ok |= full.iqr() <= base.iqr();
        detail.push(format!(
            "{}: median {:.3} vs {:.3}, IQR {:.3} vs {:.3}",
            cond.as_str(),
            full.median,
            base.median,
            full.iqr(),
            base.iqr()
        ));
    }
    check(medians_ok && iqr_ok, format!("full vs baseline; {}", detail.join("; ")))
}

// ---------------------------------------------------------------- 8

fn toggle_neutrality(split: &Split) -> Outcome {
    let clips = samples(&split.test[..12]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = ModelConfig::default();

    let scores = |m: &Model, s: &[ClipSample]| m.scores(s).map_err(|e| e.to_string());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();

    // toggles are (use_avm, use_vcm, use_acm)
    let mut checked = Vec::new();
    for (name, off, on) in [
        ("VCM", (true, false, true), base),
        ("ACM", (true, true, false), base),
        ("AVM", (false, true, true), base),
    ] {
        let cfg = base.with_toggles(off.0, off.1, off.2);
        let model = Model::new(cfg).map_err(|e| e.to_string())?;
        let before = scores(&model, &clips)?;
        let mutate_inputs = |s: &mut Vec<ClipSample>, rng: &mut ChaCha8Rng| {
            for c in s.iter_mut() {
                match name {
                    "VCM" => {
                        let (t, k) = (c.artifacts.frames(), c.artifacts.kinds());
                        let probs = (0..t * k).map(|_| rng.random_range(0.0..=1.0)).collect();
                        c.artifacts = ArtifactMatrix::new(t, k, probs).expect("valid artifacts");
                    }
                    "ACM" => c.audio_cue.raw_score = rng.random_range(1.0..5.0),
                    _ => {}
                }
            }
        };
        let mut mutated = clips.clone();
        mutate_inputs(&mut mutated, &mut rng);
        let mut other = model.clone();
        if name == "AVM" {
            let p = &mut other.params_mut().mixer;
            for t in [&mut p.w_a, &mut p.w_v, &mut p.w_g] {
                t.values_mut().iter_mut().for_each(|x| *x = rng.random_range(-3.0..3.0));
            }
        }
        if bits(&before) != bits(&scores(&other, &mutated)?) {
            return Err(format!("{name} off: predictions changed"));
        }

        // the same mutation must matter when the module is on
        let live = Model::new(on).map_err(|e| e.to_string())?;
        let mut live_other = live.clone();
        if name == "AVM" {
            live_other.params_mut().mixer = other.params().mixer.clone();
        }
        if bits(&scores(&live, &clips)?) == bits(&scores(&live_other, &mutated)?) {
            return Err(format!("{name} on: mutation had no effect, check is vacuous"));
        }
        checked.push(name);
    }
    Ok(format!("{} clips; {} off are bit-invariant", clips.len(), checked.join(", ")))
}

// ---------------------------------------------------------------- 9

fn determinism(split: &Split) -> Outcome {
    let (tr, va, te) = (samples(&split.train), samples(&split.val), samples(&split.test));
    let hyper = TrainHyper {
        max_epochs: 15,
        ..Preset::Desk.hyper()
    };
    let cfg = ModelConfig::default().with_seed(7);
    let run = || -> Result<(String, Vec<u8>, Vec<f64>), String> {
        let out = train_seeds(&tr, &va, &cfg, &hyper, &[7]).map_err(|e| e.to_string())?.remove(0);
        let csv = history_table(&out.history).to_csv().map_err(|e| e.to_string())?;
        let mut ckpt = Vec::new();
        write_checkpoint(&mut ckpt, &out.model).map_err(|e| e.to_string())?;
        let pred = out.model.scores(&te).map_err(|e| e.to_string())?;
        Ok((csv, ckpt, pred))
    };
    let (csv1, ckpt1, pred1) = run()?;
    let (csv2, ckpt2, _) = run()?;
    if csv1 != csv2 {
        return Err("history CSV differs between reruns".into());
    }
    if ckpt1 != ckpt2 {
        return Err("checkpoint bytes differ between reruns".into());
    }
    let restored = read_checkpoint(&ckpt1[..]).map_err(|e| e.to_string())?;
    let pred_back = restored.scores(&te).map_err(|e| e.to_string())?;
    if pred1.iter().zip(&pred_back).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("restored checkpoint predicts differently".into());
    }
    let mut again = Vec::new();
    write_checkpoint(&mut again, &restored).map_err(|e| e.to_string())?;
    if again != ckpt1 {
        return Err("checkpoint does not re-serialize identically".into());
    }

    let ds = Dataset::new(ClipDims::of(&ModelConfig::default()), split.test.clone()).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &ds).map_err(|e| e.to_string())?;
    let back = read_dataset(&bytes[..]).map_err(|e| e.to_string())?;
    let mut bytes2 = Vec::new();
    write_dataset(&mut bytes2, &back).map_err(|e| e.to_string())?;
    check(
        back == ds && bytes == bytes2,
        format!(
            "history CSV, checkpoint ({} bytes), predictions and dataset ({} bytes) reproduce exactly",
            ckpt1.len(),
            bytes.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn logistic_fit() -> Outcome {
    let mut worst_rmse: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let truth = Logistic4 {
            beta: [
                rng.random_range(0.8..1.0),
                rng.random_range(0.0..0.2),
                rng.random_range(0.3..0.7),
                rng.random_range(0.05..0.2),
            ],
        };
        let s: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = truth.map(&s);
        let fit = fit_logistic4(&s, &y).map_err(|e| e.to_string())?;
        let mapped = fit.curve.map(&s);
        let rmse = (mapped.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
        worst_rmse = worst_rmse.max(rmse);

        let grid: Vec<f64> = (0..=400).map(|i| -0.5 + i as f64 / 200.0).collect();
        let curve = fit.curve.map(&grid);
        let rising = curve.windows(2).all(|w| w[1] >= w[0]);
        let falling = curve.windows(2).all(|w| w[1] <= w[0]);
        if !(rising || falling) {
            return Err("fitted mapping is not monotone".into());
        }
        let before = srocc(&s, &y).map_err(|e| e.to_string())?;
        let after = srocc(&mapped, &y).map_err(|e| e.to_string())?;
        if before != after {
            return Err(format!("SROCC changed under mapping: {before} -> {after}"));
        }
    }
    check(worst_rmse < 1e-6, format!("20 curves; worst RMSE {worst_rmse:.1e}"))
}

fn main() {
    let split = default_split();
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("metric oracles", Box::new(metric_oracles)),
        ("loss identities", Box::new(loss_identities)),
        ("mixer invariants", Box::new(mixer_invariants)),
        ("end-to-end learnability", Box::new(|| learnability(&split))),
        ("ablation ordering", Box::new(|| ablation_ordering(&split))),
        ("asymmetric robustness", Box::new(asymmetric_robustness)),
        ("toggle neutrality", Box::new(|| toggle_neutrality(&split))),
        ("determinism and serialization", Box::new(|| determinism(&split))),
        ("logistic fitting", Box::new(logistic_fit)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
