use std::collections::HashMap;
use std::sync::OnceLock;

use djcm_core::diff::Graph;
use djcm_core::error::Error;
use djcm_core::rng::RngState;
use djcm_core::toy::*;
use ndarray::{arr0, ArrayD, IxDyn};

fn quick_config() -> TrainConfig {
    TrainConfig {
        phases: [600, 600, 200],
        ..TrainConfig::default()
    }
}

/// A model trained through phase 2 on the default order set.
fn phase2_model() -> &'static ToyModel {
    static MODEL: OnceLock<ToyModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = quick_config();
        let mut m = ToyModel::new(&cfg).unwrap();
        run_phase1(&mut m, &cfg).unwrap();
        run_phase2(&mut m, &cfg).unwrap();
        m
    })
}

/// A model trained through phase 2 at a single high order and SNR.
fn high_order_model() -> &'static ToyModel {
    static MODEL: OnceLock<ToyModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = TrainConfig {
            orders: vec![1024],
            snr_range: [18.0, 18.0],
            ..quick_config()
        };
        let mut m = ToyModel::new(&cfg).unwrap();
        run_phase1(&mut m, &cfg).unwrap();
        run_phase2(&mut m, &cfg).unwrap();
        m
    })
}

fn window_means(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks(width)
        .filter(|c| c.len() == width)
        .map(|c| c.iter().sum::<f64>() / width as f64)
        .collect()
}

#[test]
fn loss_arithmetic() {
    let mut g = Graph::new();
    let x = g.input(ArrayD::zeros(IxDyn(&[1, 2])));
    let x_md = g.input(ArrayD::from_elem(IxDyn(&[1, 2]), 0.1f64.sqrt()));
    let x_hat = g.input(ArrayD::from_elem(IxDyn(&[1, 2]), 0.2f64.sqrt()));
    let ry = g.input(arr0(2.0).into_dyn());
    let rz = g.input(arr0(0.5).into_dyn());
    let loss = loss_rd(&mut g, x, Some(x_hat), x_md, ry, rz, 10.0).unwrap();
    assert!((g.scalar_value(loss) - 5.5).abs() < 1e-12);
    let rate_only = loss_rd(&mut g, x, Some(x_hat), x_md, ry, rz, 0.0).unwrap();
    assert_eq!(g.scalar_value(rate_only), 2.5);
    let bad = g.input(ArrayD::zeros(IxDyn(&[2, 1])));
    assert!(matches!(loss_rd(&mut g, x, Some(bad), x_md, ry, rz, 1.0), Err(Error::Shape(_))));
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let model = ToyModel::new(&TrainConfig::default()).unwrap();
    for name in ["g_s.0.b", "g_s.2.b", "h_s.scale.b", "f_a.shift.16", "f_a.gate1.b", "f_e.shift.16", "prior.loc"] {
        let check = loss_gradient_check(&model, name, 16, 6.0, 1e-5, 3).unwrap();
        assert!(check.max_rel_err <= 1e-5, "{name}: {}", check.max_rel_err);
    }
}

#[test]
fn decoder_gate_gradients_match_up_to_difference_roundoff() {
    // entries near 1e-7 sit below the central-difference noise floor of an
    // O(10) loss, so they are held to an absolute bound instead
    let model = ToyModel::new(&TrainConfig::default()).unwrap();
    for name in ["f_e.gate1.b", "f_e.gate1.w"] {
        let check = loss_gradient_check(&model, name, 16, 6.0, 1e-5, 3).unwrap();
        for (a, n) in check.analytic.iter().zip(check.numeric.iter()) {
            let err = (a - n).abs();
            assert!(err <= 1e-5 * a.abs() || err <= 1e-9, "{name}: {a} vs {n}");
        }
    }
}

#[test]
fn phase1_is_deterministic() {
    let cfg = TrainConfig {
        phases: [50, 1, 1],
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = ToyModel::new(&cfg).unwrap();
        let trace = run_phase1(&mut m, &cfg).unwrap();
        (m, trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(ta, tb);
    assert_eq!(a.params(), b.params());
}

#[test]
fn phase1_leaves_channel_coder_untouched() {
    let cfg = TrainConfig {
        phases: [30, 1, 1],
        ..TrainConfig::default()
    };
    let mut m = ToyModel::new(&cfg).unwrap();
    let before = m.params().clone();
    run_phase1(&mut m, &cfg).unwrap();
    for (name, value) in m.params() {
        let group = name.split('.').next().unwrap();
        if group == "f_a" || group == "f_e" {
            assert_eq!(value, &before[name], "{name}");
        }
    }
    assert_ne!(m.param("g_a.0.w"), before.get("g_a.0.w"));
}

#[test]
fn zero_lambda_rate_settles_downward() {
    let cfg = TrainConfig {
        lambda: 0.0,
        phases: [600, 1, 1],
        ..TrainConfig::default()
    };
    let mut m = ToyModel::new(&cfg).unwrap();
    let trace = run_phase1(&mut m, &cfg).unwrap();
    let rates: Vec<f64> = trace.iter().map(|r| r.rate_bits).collect();
    let means = window_means(&rates, 10);
    // after a 100-step warmup, allow upticks of the size of batch noise
    for w in means[10..].windows(2) {
        assert!(w[1] <= w[0] + 0.01, "{} -> {}", w[0], w[1]);
    }
    assert!(means.last().unwrap() < &(means[10] * 0.8));
    for r in &trace {
        assert!((r.loss - r.rate_bits).abs() < 1e-12);
    }
}

/// Entropy-coded uniform scalar quantization of each source dimension:
/// returns (bits per dimension, MSE) at step `delta`.
fn scalar_quantizer(samples: &[f64], delta: f64) -> (f64, f64) {
    let mut counts: HashMap<i64, usize> = HashMap::new();
    let mut sq = 0.0;
    for &x in samples {
        let idx = (x / delta).floor() as i64;
        *counts.entry(idx).or_default() += 1;
        let rec = (idx as f64 + 0.5) * delta;
        sq += (x - rec).powi(2);
    }
    let n = samples.len() as f64;
    let bits = counts.values().map(|&c| {
        let p = c as f64 / n;
        -p * p.log2()
    });
    (bits.sum(), sq / n)
}

#[test]
fn source_coder_beats_scalar_quantization_at_equal_rate() {
    let cfg = TrainConfig {
        phases: [2000, 1, 1],
        ..TrainConfig::default()
    };
    let mut m = ToyModel::new(&cfg).unwrap();
    let trace = run_phase1(&mut m, &cfg).unwrap();
    let tail = &trace[trace.len() - 200..];
    let rate = tail.iter().map(|r| r.rate_bits).sum::<f64>() / tail.len() as f64;
    let mse = tail.iter().map(|r| r.mse_relaxed.unwrap()).sum::<f64>() / tail.len() as f64;

    let x = make_source_batch(2000, RngState::named(5, "baseline"));
    let samples: Vec<f64> = x.iter().copied().collect();
    // entropy falls as the step grows; bisect for the matching step
    let (mut lo, mut hi) = (1e-4f64, 2.0f64);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if scalar_quantizer(&samples, mid).0 > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (base_rate, base_mse) = scalar_quantizer(&samples, hi);
    println!("learned: {rate:.4} bits {mse:.6} mse; scalar: {base_rate:.4} bits {base_mse:.6} mse");
    assert!(base_rate <= rate + 1e-9);
    assert!(mse < base_mse);
}

#[test]
fn phase_order_is_enforced() {
    let cfg = TrainConfig {
        phases: [5, 5, 5],
        ..TrainConfig::default()
    };
    let mut m = ToyModel::new(&cfg).unwrap();
    assert!(matches!(run_phase2(&mut m, &cfg), Err(Error::PhaseOrder(_))));
    assert!(matches!(run_phase3(&mut m, &cfg), Err(Error::PhaseOrder(_))));
    assert!(matches!(evaluate(&m, 4, 0.0, Chain::Hard, 10, 1), Err(Error::PhaseOrder(_))));
    run_phase1(&mut m, &cfg).unwrap();
    assert!(matches!(run_phase3(&mut m, &cfg), Err(Error::PhaseOrder(_))));
    assert!(matches!(evaluate(&m, 4, 0.0, Chain::Hard, 10, 1), Err(Error::PhaseOrder(_))));
    run_phase2(&mut m, &cfg).unwrap();
    run_phase3(&mut m, &cfg).unwrap();
    assert_eq!(m.stage, Stage::Phase3);
}

#[test]
fn conditioning_changes_the_encoder_output() {
    let m = phase2_model();
    let x = make_source_batch(8, RngState::named(3, "probe"));
    let a = encode(m, &x, 4, 0.0).unwrap().symbols;
    let b = encode(m, &x, 1024, 13.0).unwrap().symbols;
    let diff = (&a - &b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    assert!(diff > 1e-3, "max difference {diff}");
}

#[test]
fn masked_positions_are_zero_before_the_channel() {
    let m = phase2_model();
    let x = make_source_batch(64, RngState::named(4, "probe"));
    let block = 2 * SYMBOLS_PER_EMBEDDING;
    let mut dropped = 0usize;
    for (order, snr) in [(4, 0.0), (64, 8.0), (1024, 13.0)] {
        let enc = encode(m, &x, order, snr).unwrap();
        assert_eq!(enc.symbols.dim(), (64, CHANNEL_REALS));
        assert_eq!(enc.mask.dim(), enc.symbols.dim());
        for (s, k) in enc.symbols.iter().zip(enc.mask.iter()) {
            assert!(*k == 0.0 || *k == 1.0);
            if *k == 0.0 {
                assert_eq!(*s, 0.0);
                dropped += 1;
            }
        }
        // each embedding keeps a prefix of whole complex symbols
        for row in enc.mask.rows() {
            for e in 0..EMBEDDINGS {
                let kept = &row.as_slice().unwrap()[e * block..(e + 1) * block];
                let n = kept.iter().filter(|v| **v == 1.0).count();
                assert_eq!(n % 2, 0);
                assert!(kept[..n].iter().all(|v| *v == 1.0));
            }
        }
    }
    assert!(dropped > 0);
}

#[test]
fn transmitted_power_stays_within_budget() {
    let m = phase2_model();
    for chain in [Chain::Hard, Chain::Relaxed] {
        for order in [4, 16, 64, 256, 1024] {
            for snr in [0.0, 13.0] {
                let r = evaluate(m, order, snr, chain, 500, 2).unwrap();
                assert!(r.max_power <= m.power * (1.0 + 1e-6), "{chain:?} M{order} {snr} dB: {}", r.max_power);
            }
        }
    }
}

#[test]
fn phase3_freezes_the_transmitter() {
    let cfg = quick_config();
    let mut m = phase2_model().clone();
    let norms = gradient_norms(&m, &cfg, PhaseKind::ReceiverSte).unwrap();
    for (name, norm) in &norms {
        if is_transmitter(name) || name.starts_with("prior.") {
            assert_eq!(*norm, 0.0, "{name}");
        }
    }
    assert!(norms.iter().any(|(n, v)| n.starts_with("g_s.") && *v > 0.0));
    assert!(norms.iter().any(|(n, v)| n.starts_with("f_e.") && *v > 0.0));
    let before = m.transmitter_snapshot();
    let receiver_before = m.param("g_s.2.w").cloned();
    run_phase3(&mut m, &cfg).unwrap();
    assert_eq!(m.transmitter_snapshot(), before);
    assert_ne!(m.param("g_s.2.w").cloned(), receiver_before);
}

#[test]
fn high_order_hard_chain_tracks_the_relaxed_chain() {
    let m = high_order_model();
    let hard = evaluate(m, 1024, 18.0, Chain::Hard, 1000, 4).unwrap();
    let relaxed = evaluate(m, 1024, 18.0, Chain::Relaxed, 1000, 4).unwrap();
    let rel = (hard.mse - relaxed.mse).abs() / relaxed.mse;
    assert!(rel < 0.15, "hard {} relaxed {}", hard.mse, relaxed.mse);
    assert_eq!(hard.cbr, relaxed.cbr);
}

#[test]
fn noiseless_fine_grid_is_nearly_transparent() {
    let m = high_order_model();
    let hard = evaluate(m, 1024, 200.0, Chain::Hard, 1000, 4).unwrap();
    let relaxed = evaluate(m, 1024, 200.0, Chain::Relaxed, 1000, 4).unwrap();
    let rel = (hard.mse - relaxed.mse).abs() / relaxed.mse;
    assert!(rel < 0.05, "hard {} relaxed {}", hard.mse, relaxed.mse);
}

#[test]
fn psnr_improves_with_snr() {
    let m = phase2_model();
    for order in [16, 64] {
        let low = evaluate(m, order, 4.0, Chain::Hard, 1000, 6).unwrap();
        let high = evaluate(m, order, 18.0, Chain::Hard, 1000, 6).unwrap();
        assert!(high.psnr_db >= low.psnr_db, "M{order}: {} < {}", high.psnr_db, low.psnr_db);
    }
}

#[test]
fn evaluation_is_deterministic() {
    let m = phase2_model();
    let a = evaluate(m, 64, 8.0, Chain::Hard, 300, 9).unwrap();
    let b = evaluate(m, 64, 8.0, Chain::Hard, 300, 9).unwrap();
    assert_eq!(a, b);
    assert!((a.psnr_db - psnr(a.mse)).abs() < 1e-12);
    assert!(a.cbr > 0.0 && a.cbr <= 0.5);
}

#[test]
fn checkpoint_round_trip() {
    let m = phase2_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(m, &path).unwrap();
    let manifest = std::fs::read_to_string(manifest_path(&path)).unwrap();
    assert_eq!(manifest.lines().next(), Some(MANIFEST_HEADER));
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params(), m.params());
    assert_eq!(back.stage, m.stage);
    assert_eq!(
        evaluate(&back, 16, 4.0, Chain::Hard, 250, 1).unwrap(),
        evaluate(m, 16, 4.0, Chain::Hard, 250, 1).unwrap()
    );
}

#[test]
fn larger_lambda_spends_more_symbols_for_lower_distortion() {
    let grid = [(4, 4.0), (16, 8.0), (64, 13.0), (1024, 13.0)];
    let summary = |lambda: f64| {
        let cfg = TrainConfig { lambda, ..quick_config() };
        let mut m = ToyModel::new(&cfg).unwrap();
        run_phase1(&mut m, &cfg).unwrap();
        run_phase2(&mut m, &cfg).unwrap();
        let rows: Vec<EvalResult> = grid
            .iter()
            .map(|&(order, snr)| evaluate(&m, order, snr, Chain::Hard, 500, 8).unwrap())
            .collect();
        let n = rows.len() as f64;
        (
            rows.iter().map(|r| r.cbr).sum::<f64>() / n,
            rows.iter().map(|r| r.mse).sum::<f64>() / n,
        )
    };
    let points: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].into_iter().map(summary).collect();
    println!("{points:?}");
    for w in points.windows(2) {
        assert!(w[1].0 > w[0].0, "cbr {points:?}");
        assert!(w[1].1 < w[0].1, "mse {points:?}");
    }
}
