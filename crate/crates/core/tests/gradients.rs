mod common;

use common::{away_from_zero, normal, rng, uniform};
use facedepth_core::autodiff::{BnConfig, BnMode, RunningStats};
use facedepth_core::gradcheck::{grad_check, GradCheckConfig};
use facedepth_core::nn::Bound;
use facedepth_core::{Generator, Network, Tape, Tensor, WidthMultiplier};
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TOL: f64 = 1e-3;

fn cfg(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    }
}

fn assert_passes(name: &str, seed: u64, inputs: &[Tensor<f64>], f: impl FnMut(&mut Tape<f64>, &[facedepth_core::Var]) -> facedepth_core::Result<facedepth_core::Var>) {
    let r = grad_check(inputs, &cfg(seed), f).unwrap();
    assert!(r.rel_error < TOL, "{name} seed {seed}: {r:?}");
}

#[test]
fn conv2d() {
    for seed in SEEDS {
        let mut g = rng(seed);
        let (stride, pad) = [(1, 0), (2, 1), (2, 2)][seed as usize % 3];
        let x = normal(&mut g, &[2, 3, 7, 7], 1.0);
        let w = normal(&mut g, &[4, 3, 3, 3], 0.5);
        let b = normal(&mut g, &[4], 0.5);
        assert_passes("conv2d", seed, &[x, w, b], |t, v| t.conv2d(v[0], v[1], v[2], stride, pad));
    }
}

#[test]
fn conv_transpose2d() {
    for seed in SEEDS {
        let mut g = rng(seed);
        let (stride, pad, out_pad) = [(2, 2, 1), (1, 1, 0), (2, 1, 1)][seed as usize % 3];
        let x = normal(&mut g, &[2, 3, 4, 4], 1.0);
        let w = normal(&mut g, &[3, 2, 5, 5], 0.5);
        let b = normal(&mut g, &[2], 0.5);
        assert_passes("conv_transpose2d", seed, &[x, w, b], |t, v| {
            t.conv_transpose2d(v[0], v[1], v[2], stride, pad, out_pad)
        });
    }
}

#[test]
fn batch_norm2d_train_and_eval() {
    for seed in SEEDS {
        let mut g = rng(seed);
        let x = normal(&mut g, &[3, 2, 4, 4], 2.0);
        let gamma = uniform(&mut g, &[2], 0.5, 1.5);
        let beta = normal(&mut g, &[2], 0.5);
        for mode in [BnMode::Train, BnMode::TrainFrozen, BnMode::Eval] {
            let mut stats = RunningStats::new(2);
            stats.var = vec![1.7, 0.6];
            stats.mean = vec![0.3, -0.2];
            assert_passes("batch_norm2d", seed, &[x.clone(), gamma.clone(), beta.clone()], |t, v| {
                let mut s = stats.clone();
                t.batch_norm2d(v[0], v[1], v[2], &mut s, mode, BnConfig::default())
            });
        }
    }
}

#[test]
fn fully_connected() {
    for seed in SEEDS {
        let mut g = rng(seed);
        let x = normal(&mut g, &[3, 6], 1.0);
        let w = normal(&mut g, &[6, 4], 0.5);
        let b = normal(&mut g, &[4], 0.5);
        assert_passes("fully_connected", seed, &[x, w, b], |t, v| t.fully_connected(v[0], v[1], v[2]));
    }
}

#[test]
fn activations() {
    for seed in SEEDS {
        let x = away_from_zero(&mut rng(seed), &[2, 3, 3, 3], 0.01);
        assert_passes("leaky_relu", seed, &[x.clone()], |t, v| Ok(t.leaky_relu(v[0], 0.2)));
        assert_passes("relu", seed, &[x.clone()], |t, v| Ok(t.relu(v[0])));
        assert_passes("tanh", seed, &[x.clone()], |t, v| Ok(t.tanh(v[0])));
        assert_passes("sigmoid", seed, &[x], |t, v| Ok(t.sigmoid(v[0])));
    }
}

#[test]
fn structural_ops() {
    for seed in SEEDS {
        let mut g = rng(seed);
        let x = normal(&mut g, &[2, 2, 5, 5], 1.0);
        let y = normal(&mut g, &[2, 2, 5, 5], 1.0);
        assert_passes("avg_pool2d", seed, &[x.clone()], |t, v| t.avg_pool2d(v[0], 2, 2));
        assert_passes("scale", seed, &[x.clone()], |t, v| Ok(t.scale(v[0], -1.5)));
        assert_passes("add", seed, &[x.clone(), y.clone()], |t, v| t.add(v[0], v[1]));
        assert_passes("mul", seed, &[x.clone(), y.clone()], |t, v| t.mul(v[0], v[1]));
        assert_passes("mean", seed, &[x.clone()], |t, v| Ok(t.mean(v[0])));
        assert_passes("flatten", seed, &[x.clone()], |t, v| t.flatten(v[0]));
        let shifted = Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(a, b)| if (a - b).abs() < 0.01 { a + 0.1 } else { *a }).collect()).unwrap();
        assert_passes("abs_diff", seed, &[shifted, y], |t, v| t.abs_diff(v[0], v[1]));
    }
}

#[test]
fn losses() {
    for seed in SEEDS {
        let mut g = rng(seed);
        let probs = uniform(&mut g, &[6], 0.05, 0.95);
        let logits = normal(&mut g, &[6], 2.0);
        let targets: Vec<f64> = (0..6).map(|_| if g.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let soft: Vec<f64> = (0..6).map(|_| g.random::<f64>()).collect();
        for tg in [&targets, &soft] {
            assert_passes("bce", seed, &[probs.clone()], |t, v| t.bce(v[0], tg));
            assert_passes("bce_with_logits", seed, &[logits.clone()], |t, v| t.bce_with_logits(v[0], tg));
        }
        let p = normal(&mut g, &[2, 1, 4, 4], 1.0);
        let q = normal(&mut g, &[2, 1, 4, 4], 1.0);
        assert_passes("mse", seed, &[p, q], |t, v| t.mse(v[0], v[1]));
    }
}

#[test]
fn full_generator_composite() {
    let m = WidthMultiplier::new(0.0625).unwrap();
    for seed in SEEDS {
        let mut gen = Generator::<f64>::seeded(m, 16, seed).unwrap();
        let mut inputs = vec![normal(&mut rng(seed + 100), &[4, 1, 16, 16], 0.6)];
        inputs.extend(gen.store().params.iter().map(|p| p.value.clone()));
        let config = GradCheckConfig {
            max_per_tensor: 6,
            seed,
            ..GradCheckConfig::default()
        };
        let r = grad_check(&inputs, &config, |t, v| {
            let bound = Bound::from_vars(v[1..].to_vec());
            gen.forward(t, &bound, v[0], BnMode::Train)
        })
        .unwrap();
        // probes straddling a ReLU kink are skipped; most must remain
        assert!(r.rel_error < 1e-2, "seed {seed}: {r:?}");
        assert!(r.checked >= 50, "seed {seed}: {r:?}");
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn conv_and_transpose_are_adjoint() {
    let mut g = rng(77);
    for case in 0..20 {
        let n = g.random_range(1..3);
        let cin = g.random_range(1..4);
        let cout = g.random_range(1..4);
        let k = [1, 3, 5][g.random_range(0..3)];
        let stride = g.random_range(1..3);
        let pad = g.random_range(0..=k / 2);
        let h = g.random_range(k.max(3)..10);
        let x = normal(&mut g, &[n, cin, h, h], 1.0);
        let w = normal(&mut g, &[cout, cin, k, k], 1.0);
        let mut tape = Tape::<f64>::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let zero_out = tape.constant(Tensor::zeros(&[cout]));
        let cx = tape.conv2d(xv, wv, zero_out, stride, pad).unwrap();
        let out_shape = tape.value(cx).shape().to_vec();
        // output padding restoring the input extent
        let oh = out_shape[2];
        let op = h - ((oh - 1) * stride + k - 2 * pad);
        let y = normal(&mut g, &out_shape, 1.0);
        let yv = tape.constant(y.clone());
        let zero_in = tape.constant(Tensor::zeros(&[cin]));
        // the same weight array read as [C_in, C_out, K, K] of the transpose
        let wt = tape.constant(w.reshaped(&[cout, cin, k, k]).unwrap());
        let ty = tape.conv_transpose2d(yv, wt, zero_in, stride, pad, op).unwrap();
        assert_eq!(tape.value(ty).shape(), x.shape(), "case {case}");
        let lhs = dot(tape.value(cx), &y);
        let rhs = dot(&x, tape.value(ty));
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(rel < 1e-4, "case {case}: {lhs} vs {rhs}");
    }
}
