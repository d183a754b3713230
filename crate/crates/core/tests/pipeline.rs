use std::sync::Arc;

use ghostsim::estimators::{empirical_k, reconstruct, tiled_reconstruct, BucketLayout};
use ghostsim::scene::TransmissionMap;
use ghostsim::simulator::Simulation;
use ghostsim::{FrameStack, KSource, Protocol, SourceParams};
use proptest::prelude::*;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn cov(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() - 1) as f64
}

#[test]
fn pixels_are_correlated_only_with_their_partner() {
    let params = SourceParams::twin(20.0, 100.0, 0.7, 0.0).unwrap();
    let scene = TransmissionMap::uniform(3, 3, 1.0).unwrap();
    let frames = 20_000;
    let (probe, reference) = Simulation::new(params, &scene).unwrap().stacks(frames, 5).unwrap();
    let series: Vec<(Vec<f64>, Vec<f64>)> = (0..9)
        .map(|i| (probe.pixel_series(i), reference.pixel_series(i)))
        .collect();
    // same-pixel: n2 (b + eta); other pixels: zero
    let b = 20.0 / 100.0;
    let paired = 20.0 * (b + 0.7);
    let sd = (20.0f64 * (1.0 + b)).sqrt();
    let se = sd * sd / (frames as f64).sqrt();
    for i in 0..9 {
        for j in 0..9 {
            let c = cov(&series[i].0, &series[j].1);
            let expected = if i == j { paired } else { 0.0 };
            assert!((c - expected).abs() < 5.0 * se, "({i},{j}): {c} vs {expected}");
            if i != j {
                let c_probe = cov(&series[i].0, &series[j].0);
                assert!(c_probe.abs() < 5.0 * se, "probe ({i},{j}): {c_probe}");
            }
        }
    }
}

#[test]
fn twin_and_thermal_covariances_differ_by_the_quantum_term() {
    // M = 1e3, n2 = 50: twin n2 (b + eta) against thermal n2 b
    let (n2, modes, eta) = (50.0, 1e3, 0.5);
    let b: f64 = n2 / modes;
    let scene = TransmissionMap::uniform(4, 4, 1.0).unwrap();
    let layout = Arc::new(BucketLayout::single(4, 4));
    let frames = 20_000;
    let avg_cov = |params: SourceParams| {
        let m = Simulation::new(params, &scene)
            .unwrap()
            .moments(frames, 11, layout.clone())
            .unwrap();
        (0..16).map(|i| m.cov_pair(i)).sum::<f64>() / 16.0
    };
    let twin = avg_cov(SourceParams::twin(n2, modes, eta, 0.0).unwrap());
    let thermal = avg_cov(SourceParams::thermal(n2, modes, eta, 0.0).unwrap());
    let se = n2 * (1.0 + b) / (16.0 * frames as f64).sqrt();
    assert!((twin - n2 * (b + eta)).abs() < 5.0 * se, "twin {twin}");
    assert!((thermal - n2 * b).abs() < 5.0 * se, "thermal {thermal}");
    let ratio = twin / thermal;
    assert!((ratio - (b + eta) / b).abs() < 0.15 * (b + eta) / b, "ratio {ratio}");
}

fn stacks(width: usize, height: usize, frames: usize, data: &[(f64, f64)]) -> (FrameStack, FrameStack) {
    let n = width * height * frames;
    let probe = data[..n].iter().map(|d| d.0).collect();
    let reference = data[..n].iter().map(|d| d.1).collect();
    (
        FrameStack::new(width, height, frames, probe).unwrap(),
        FrameStack::new(width, height, frames, reference).unwrap(),
    )
}

fn crop(s: &FrameStack, row0: usize, col0: usize, rows: usize, cols: usize) -> FrameStack {
    let mut v = Vec::with_capacity(rows * cols * s.frames());
    for h in 0..s.frames() {
        let frame = s.frame(h);
        for r in row0..row0 + rows {
            v.extend_from_slice(&frame[r * s.width() + col0..r * s.width() + col0 + cols]);
        }
    }
    FrameStack::new(cols, rows, s.frames(), v).unwrap()
}

fn bucket_variance(probe: &FrameStack, reference: &FrameStack, k: f64) -> f64 {
    let d: Vec<f64> = (0..probe.frames())
        .map(|h| probe.frame(h).iter().sum::<f64>() - k * reference.frame(h).iter().sum::<f64>())
        .collect();
    cov(&d, &d)
}

fn pair_data(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn empirical_coefficient_minimises_bucket_variance(
        data in pair_data(3 * 2 * 40),
        step in 1e-3f64..0.5,
    ) {
        let (probe, reference) = stacks(3, 2, 40, &data);
        let k = empirical_k(&probe, &reference).unwrap();
        let at = bucket_variance(&probe, &reference, k);
        let tol = 1e-9 * at.abs().max(1.0);
        prop_assert!(at <= bucket_variance(&probe, &reference, k + step) + tol);
        prop_assert!(at <= bucket_variance(&probe, &reference, k - step) + tol);
    }

    #[test]
    fn tiles_reconstruct_like_independent_sub_images(
        data in pair_data(7 * 5 * 30),
        protocol in prop_oneof![Just(Protocol::Gi), Just(Protocol::Dgi), Just(Protocol::Odgi)],
    ) {
        let (probe, reference) = stacks(7, 5, 30, &data);
        let tiled = tiled_reconstruct(&probe, &reference, protocol, KSource::Empirical, 2, 3).unwrap();
        prop_assert_eq!(tiled.tiles().len(), 6);
        for (t, &k) in tiled.tiles().iter().zip(tiled.tile_k()) {
            let p = crop(&probe, t.row0, t.col0, t.rows, t.cols);
            let r = crop(&reference, t.row0, t.col0, t.rows, t.cols);
            let local = reconstruct(&p, &r, protocol, KSource::Empirical).unwrap();
            prop_assert!((local.k_used() - k).abs() <= 1e-9 * k.abs().max(1.0));
            for row in 0..t.rows {
                for col in 0..t.cols {
                    let a = tiled.get(t.row0 + row, t.col0 + col);
                    let b = local.get(row, col);
                    prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{} vs {}", a, b);
                }
            }
        }
    }
}
