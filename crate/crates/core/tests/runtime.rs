mod common;

use common::desk_config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfl_core::data::{generate_blobs, Dataset};
use sfl_core::model::ModelSpec;
use sfl_core::netsim::{comm_bytes_per_round, Direction, Purpose, Query};
use sfl_core::quant::{qact_header_len, Quantization};
use sfl_core::runtime::{evaluate, evaluate_split, fedavg, run_training, write_metrics_csv, Mode, RunConfig, Trainer};
use sfl_core::Tensor;

fn trainer(cfg: RunConfig) -> Trainer {
    let data = cfg.dataset.load(cfg.seed, None).unwrap();
    Trainer::new(cfg, data).unwrap()
}

fn small(mode: Mode) -> RunConfig {
    RunConfig { devices: 3, rounds: 4, batch_size: 5, ..RunConfig::smoke(mode) }
}

#[test]
fn actionfed_lossless_matches_frozen_vanilla_bit_for_bit() {
    let mut a = trainer(RunConfig { rho: 1, quantization: Quantization::Off, augment: true, ..small(Mode::ActionFed) });
    let mut v = trainer(RunConfig { freeze_device: true, augment: true, ..small(Mode::VanillaDPFL) });
    let initial = a.server_model().weights();
    assert_eq!(initial, v.server_model().weights());
    for _ in 0..4 {
        a.step().unwrap();
        v.step().unwrap();
        assert_eq!(a.server_model().weights(), v.server_model().weights());
    }
    assert_eq!(a.device_model().weights(), v.device_model().weights());
    assert_ne!(a.server_model().weights(), initial);
}

#[test]
fn ledger_matches_cost_model_for_every_mode() {
    let cases = [
        (Mode::ClassicFL, Quantization::Affine8),
        (Mode::VanillaDPFL, Quantization::Affine8),
        (Mode::LocalLossDPFL, Quantization::Affine8),
        (Mode::ActionFed, Quantization::Affine8),
        (Mode::ActionFed, Quantization::Off),
    ];
    for (mode, quantization) in cases {
        let mut t = trainer(RunConfig { rho: 2, quantization, ..small(mode) });
        for round in 0..2u32 {
            let r = t.step().unwrap();
            let predicted = comm_bytes_per_round(mode.method(r.transmitted), t.spec(), &t.cost_setting()).unwrap();
            for (k, d) in predicted.devices.iter().enumerate() {
                let q = Query::default().round(round).device(k as u16);
                assert_eq!(t.ledger().total(q.direction(Direction::Up)), d.up_bytes, "{mode:?} round {round} up");
                assert_eq!(t.ledger().total(q.direction(Direction::Down)), d.down_bytes, "{mode:?} round {round} down");
            }
        }
    }
}

#[test]
fn mode_traffic_contracts() {
    for mode in [Mode::ClassicFL, Mode::VanillaDPFL, Mode::LocalLossDPFL, Mode::ActionFed] {
        let mut t = trainer(RunConfig { rho: 2, ..small(mode) });
        for _ in 0..3 {
            t.step().unwrap();
        }
        let l = t.ledger();
        let inter = l.total(Query::default().purpose(Purpose::Activation)) + l.total(Query::default().purpose(Purpose::Gradient));
        match mode {
            Mode::ClassicFL => assert_eq!(inter, 0),
            Mode::VanillaDPFL => assert!(l.total(Query::default().purpose(Purpose::Gradient)) > 0),
            Mode::LocalLossDPFL | Mode::ActionFed => {
                assert_eq!(l.total(Query::default().purpose(Purpose::Gradient)), 0, "{mode:?}")
            }
        }
        if mode == Mode::ActionFed {
            assert_eq!(l.total(Query::default().round(1)), 0);
            assert!(l.total(Query::default().round(2).purpose(Purpose::Activation)) > 0);
            assert_eq!(l.total(Query::default().direction(Direction::Down)), 0);
        }
    }
}

#[test]
fn lgl_uplink_activation_is_half_of_vanilla_intermediate_traffic() {
    let mut v = trainer(small(Mode::VanillaDPFL));
    let mut g = trainer(small(Mode::LocalLossDPFL));
    v.step().unwrap();
    g.step().unwrap();
    let inter = |t: &Trainer| {
        t.ledger().total(Query::default().purpose(Purpose::Activation))
            + t.ledger().total(Query::default().purpose(Purpose::Gradient))
    };
    assert_eq!(2 * inter(&g), inter(&v));
}

#[test]
fn same_seed_same_metrics_file() {
    let run = || {
        let cfg = RunConfig { augment: true, diagnostics: true, rho: 2, ..small(Mode::ActionFed) };
        let data = cfg.dataset.load(cfg.seed, None).unwrap();
        let out = run_training(cfg, data).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&out.metrics, &mut buf).unwrap();
        (buf, out.model.weights_digest())
    };
    assert_eq!(run(), run());
}

#[test]
fn diagnostics_do_not_perturb_training() {
    for mode in [Mode::ActionFed, Mode::VanillaDPFL] {
        let mut plain = trainer(RunConfig { augment: true, rho: 2, ..small(mode) });
        let mut observed = trainer(RunConfig { augment: true, rho: 2, diagnostics: true, ..small(mode) });
        for _ in 0..3 {
            plain.step().unwrap();
            observed.step().unwrap();
            assert_eq!(plain.server_model().weights_digest(), observed.server_model().weights_digest());
            assert_eq!(plain.device_model().weights_digest(), observed.device_model().weights_digest());
        }
    }
}

#[test]
fn frozen_device_output_is_stable() {
    let mut t = trainer(RunConfig { rounds: 11, ..small(Mode::ActionFed) });
    let probe = t.data().batch(&t.splits().train[..4]).unwrap().0;
    let before = t.device_model().infer(&probe).unwrap();
    for _ in 0..11 {
        t.step().unwrap();
    }
    assert!(before.bit_eq(&t.device_model().infer(&probe).unwrap()));
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let mut t = trainer(RunConfig { learning_rate: 0.0, ..small(Mode::VanillaDPFL) });
    let (d, s) = (t.device_model().weights(), t.server_model().weights());
    for _ in 0..2 {
        t.step().unwrap();
    }
    assert_eq!(t.device_model().weights(), d);
    assert_eq!(t.server_model().weights(), s);
}

#[test]
fn single_device_fedavg_is_identity_in_classic_fl() {
    let mut t = trainer(RunConfig { devices: 1, ..small(Mode::ClassicFL) });
    t.step().unwrap();
    assert!(t.ledger().total(Query::default().purpose(Purpose::Activation)) == 0);
    assert!(t.train_accuracy().unwrap().is_finite());
}

#[test]
fn fedavg_matches_scripted_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes = [vec![3, 2], vec![4]];
    let counts: Vec<usize> = (0..5).map(|_| rng.gen_range(1..200)).collect();
    let models: Vec<Vec<Tensor<f32>>> = (0..5)
        .map(|_| {
            shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    Tensor::from_f64(s, &v).unwrap()
                })
                .collect()
        })
        .collect();
    let got = fedavg(&models, &counts).unwrap();
    let total: usize = counts.iter().sum();
    for (ti, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        for e in 0..n {
            let mut expected = 0.0f64;
            for (m, &c) in models.iter().zip(&counts) {
                expected += m[ti].data()[e] as f64 * c as f64 / total as f64;
            }
            assert!((got[ti].data()[e] as f64 - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn lossless_path_zeroes_eps_and_delta() {
    let mut t = trainer(RunConfig { rho: 1, quantization: Quantization::Off, diagnostics: true, ..small(Mode::ActionFed) });
    for _ in 0..3 {
        let r = t.step().unwrap();
        let d = r.diagnostics.unwrap();
        assert!(d.eps.iter().chain(&d.delta).all(|&v| v == 0.0), "{d:?}");
    }
    let mut q = trainer(RunConfig { rho: 1, diagnostics: true, ..small(Mode::ActionFed) });
    let d = q.step().unwrap().diagnostics.unwrap();
    assert!(d.eps.iter().all(|&v| v > 0.0));
    assert!(d.delta.iter().all(|&v| v > 0.0));
}

#[test]
fn stale_buffer_under_augmentation_has_positive_delta() {
    let cfg = RunConfig { rho: 2, quantization: Quantization::Off, augment: true, diagnostics: true, ..small(Mode::ActionFed) };
    let mut t = trainer(cfg);
    let r0 = t.step().unwrap().diagnostics.unwrap();
    let r1 = t.step().unwrap().diagnostics.unwrap();
    assert!(r0.delta.iter().all(|&v| v == 0.0));
    assert!(r1.delta.iter().any(|&v| v > 0.0));
}

#[test]
fn buffer_bytes_are_one_record_per_batch() {
    let mut t = trainer(small(Mode::ActionFed));
    t.step().unwrap();
    let elems = t.spec().plan().unwrap().activation_elements();
    let expected: usize = t
        .shard_sizes()
        .iter()
        .flat_map(|&n| (0..n.div_ceil(5)).map(move |i| 5.min(n - 5 * i)))
        .map(|b| qact_header_len(4) + 2 * b + b * elems)
        .sum();
    assert_eq!(t.buffer_bytes(), expected);
}

#[test]
fn gamma_is_cumulative_learning_rate() {
    let mut t = trainer(RunConfig { lr_decay: 0.5, diagnostics: true, rounds: 5, ..small(Mode::ActionFed) });
    let mut gamma = 0.0;
    for s in 0..5u32 {
        let d = t.step().unwrap().diagnostics.unwrap();
        gamma += 0.05 / (1.0 + 0.5 * s as f64);
        assert!((d.gamma - gamma).abs() <= 1e-6 * gamma);
    }
}

#[test]
fn split_and_concatenated_accuracy_agree() {
    let mut t = trainer(small(Mode::VanillaDPFL));
    t.step().unwrap();
    let test = t.splits().test.clone();
    let split = evaluate_split(t.device_model(), t.server_model(), t.data(), &test).unwrap();
    assert_eq!(split, evaluate(&t.global_model(), t.data(), &test).unwrap());
}

#[test]
fn untrained_model_is_at_chance_on_unrelated_labels() {
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let images = generate_blobs(1, n, [1, 4, 4], 1.0, 2).unwrap().images().clone();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
    let data = Dataset::new(images, labels, 4).unwrap();
    let spec = ModelSpec::parse("probe", "C2|FC", [1, 4, 4], 4).unwrap();
    let (m, _) = spec.build::<f32>(9).unwrap();
    let acc = evaluate(&m, &data, &(0..n).collect::<Vec<_>>()).unwrap();
    let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
    assert!((acc - 0.25).abs() <= 3.0 * sigma, "{acc}");
}

#[test]
fn desk_loss_trend_is_non_increasing_over_windows() {
    let cfg = RunConfig { rho: 2, ..desk_config(Mode::ActionFed, 30) };
    let data = cfg.dataset.load(cfg.seed, None).unwrap();
    let out = run_training(cfg, data).unwrap();
    let losses: Vec<f64> = out.rounds.iter().map(|r| r.server_loss.iter().sum::<f64>() / r.server_loss.len() as f64).collect();
    let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for w in windows.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{windows:?}");
    }
}
