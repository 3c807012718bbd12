//! Randomized properties of metrics and numerics, plus on-disk round trips.

use avqa_core::metrics::{plcc, srocc};
use avqa_core::model::{load_checkpoint, save_checkpoint, total_loss, Model, ModelConfig};
use avqa_core::numerics::{DoubleDouble, Real};
use avqa_core::synth::{generate_set, load_dataset, save_dataset, ClipDims, Dataset, GeneratorSpec, ScenarioMix};
use avqa_core::Error;
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn correlations_are_bounded_and_symmetric((x, y) in pairs()) {
        match (plcc(&x, &y), plcc(&y, &x)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((-1.0..=1.0).contains(&a));
                prop_assert!((a - b).abs() < 1e-12);
            }
            (Err(Error::ZeroVariance(_)), Err(Error::ZeroVariance(_))) => {}
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn srocc_ignores_monotone_transforms((x, y) in pairs()) {
        let squashed: Vec<f64> = x.iter().map(|v| (v / 10.0).tanh() * 3.0 + 1.0).collect();
        // tanh can round distinct inputs together; such draws say nothing
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        prop_assume!(idx.windows(2).all(|w| x[w[0]] == x[w[1]] || squashed[w[0]] < squashed[w[1]]));
        if let (Ok(a), Ok(b)) = (srocc(&x, &y), srocc(&squashed, &y)) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn total_loss_is_nonnegative((p, t) in pairs(), lambda in 0.0f64..1.0) {
        let p: Vec<f64> = p.iter().map(|v| v / 100.0).collect();
        let t: Vec<f64> = t.iter().map(|v| v / 100.0).collect();
        let l = total_loss(&p, &t, lambda).unwrap();
        prop_assert!(l.total >= 0.0 && l.mse >= 0.0);
    }

    #[test]
    fn double_double_agrees_with_f64(a in -50.0f64..50.0, b in 0.1f64..50.0) {
        let (x, y) = (DoubleDouble::from(a), DoubleDouble::from(b));
        let tol = 4.0 * f64::EPSILON;
        prop_assert!(((x * y).to_f64() - a * b).abs() <= tol * (a * b).abs());
        prop_assert!(((x / y).to_f64() - a / b).abs() <= tol * (a / b).abs());
        prop_assert!(((y.sqrt()).to_f64() - b.sqrt()).abs() <= tol * b.sqrt());
        prop_assert!((x.exp().to_f64() - a.exp()).abs() <= tol * a.exp());
        // (a + b) - b recovers a exactly
        prop_assert_eq!(((x + y) - y).to_f64(), a);
    }
}

fn small() -> ModelConfig {
    ModelConfig {
        channels: 4,
        height: 2,
        width: 2,
        audio_dim: 3,
        frames: 4,
        kinds: 3,
        ..ModelConfig::default()
    }
}

#[test]
fn dataset_file_round_trip() {
    let cfg = small();
    let clips = generate_set(9, &ScenarioMix::default(), &GeneratorSpec::for_config(&cfg, 3), 3).unwrap();
    let ds = Dataset::new(ClipDims::of(&cfg), clips).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.avqa");
    save_dataset(&path, &ds).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.content_hash(), ds.content_hash());
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
}

#[test]
fn checkpoint_file_round_trip() {
    let cfg = small().with_toggles(true, false, true).with_seed(5);
    let model = Model::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.params(), model.params());

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes.truncate(last);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
