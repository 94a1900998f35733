use rand::Rng;

use super::*;
use crate::checkpoint::Checkpoint;
use crate::image::{GrayImage, Image, Mask};
use crate::rng::seeded;

fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(n, c, h, w, data)
}

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = seeded(seed);
    Image::from_fn(h, w, 3, |_, _, _| rng.gen::<f64>())
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// Independent count: conv (in·k·k·out + out), batch norm 2·c.
fn expected_parameter_count(c: &DetectorConfig) -> usize {
    let conv = |i: usize, o: usize, k: usize| i * k * k * o + o;
    let bn = |ch: usize| 2 * ch;
    let [h0, h1] = c.head_channels;
    let head = conv(c.in_channels, h0, 3) + bn(h0) + conv(h0, h1, 3) + bn(h1) + conv(h1, c.width, 1);
    let block = conv(c.width, c.bottleneck, 1)
        + bn(c.bottleneck)
        + conv(c.bottleneck, c.bottleneck, 3)
        + bn(c.bottleneck)
        + conv(c.bottleneck, c.width, 1)
        + bn(c.width);
    let mut tail = conv(c.width, c.tail_channels, 3) + bn(c.tail_channels);
    let mut prev = c.tail_channels;
    for &u in &c.up_channels {
        tail += conv(prev, u, 4) + bn(u);
        prev = u;
    }
    tail += conv(prev, 1, 3);
    head + c.residual_blocks * block + tail
}

#[test]
fn parameter_count_matches_layer_arithmetic() {
    let net = build_detector(0);
    let count = net.parameter_count();
    assert_eq!(count, expected_parameter_count(&DetectorConfig::default()));
    assert_eq!(count, 723_937);
    let delta = count as i64 - 493_000;
    println!("detector parameters: {count} (delta from 493k: {delta:+})");
    assert_eq!(build_detector(0).parameter_count(), count);
    let mini = DetectorNet::new(DetectorConfig::miniature(), 0).unwrap();
    assert_eq!(mini.parameter_count(), expected_parameter_count(&DetectorConfig::miniature()));
}

#[test]
fn layer_specs_respect_invariants() {
    let net = build_detector(0);
    let specs = net.layer_specs();
    assert!(specs.iter().all(LayerSpec::is_valid), "{specs:?}");
    assert_eq!(net.body.len(), 6);
    assert_eq!(specs.last().unwrap().kind, LayerKind::Sigmoid);
    let strided = specs.iter().filter(|s| s.stride == 2 && s.kind == LayerKind::Conv2d).count();
    let ups = specs.iter().filter(|s| s.kind == LayerKind::ConvTranspose2d).count();
    assert_eq!((strided, ups), (3, 3));
    let acts: Vec<_> = specs.iter().filter(|s| s.kind == LayerKind::LeakyRelu).collect();
    assert_eq!(acts.len(), 2 + 6 * 3 + 1 + 3);
}

#[test]
fn forward_shape_contract_and_range() {
    let net = build_detector(1);
    let img = random_image(64, 64, 5);
    let p = detector_forward(&net, &img).unwrap();
    assert_eq!((p.height(), p.width()), (64, 64));
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let wide = detector_forward(&net, &random_image(16, 40, 6)).unwrap();
    assert_eq!((wide.height(), wide.width()), (16, 40));
}

#[test]
fn fresh_network_predicts_near_half() {
    for seed in 0..3 {
        let net = build_detector(seed);
        let p = detector_forward(&net, &random_image(64, 64, 100 + seed)).unwrap();
        let near = p.data().iter().filter(|&&v| (v - 0.5).abs() < 0.2).count();
        assert!(near as f64 >= 0.9 * p.data().len() as f64, "seed {seed}: {near}");
    }
}

#[test]
fn rejects_bad_inputs() {
    let net = DetectorNet::new(DetectorConfig::miniature(), 0).unwrap();
    assert_eq!(
        detector_forward(&net, &random_image(12, 16, 0)),
        Err(DetectorError::IndivisibleSize { height: 12, width: 16 })
    );
    let gray = Image::new(16, 16, 1);
    assert_eq!(
        detector_forward(&net, &gray),
        Err(DetectorError::ChannelMismatch { expected: 3, found: 1 })
    );
    let msg = DetectorError::IndivisibleSize { height: 12, width: 16 }.to_string();
    assert!(msg.contains("divisible by 8"));
}

#[test]
fn eval_forward_is_deterministic() {
    let net = build_detector(3);
    let img = random_image(32, 32, 1);
    assert_eq!(detector_forward(&net, &img), detector_forward(&net, &img));
    assert_eq!(build_detector(3).parameters(), net.parameters());
    assert_ne!(build_detector(4).parameters(), net.parameters());
}

#[test]
fn skip_connections_are_live() {
    let mut net = DetectorNet::new(DetectorConfig::miniature(), 2).unwrap();
    let x = random_tensor(1, 3, 16, 16, 9);
    let with = net.infer(&x).unwrap();
    net.set_skip(false);
    let without = net.infer(&x).unwrap();
    let diff: f64 = with.data.iter().zip(&without.data).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);
}

#[test]
fn binarize_is_strict() {
    let at = |v: f64| binarize(&GrayImage::from_fn(3, 3, |_, _| v), DEFAULT_THRESHOLD);
    assert!(at(0.4).is_empty());
    assert!(at(0.5).is_empty());
    assert_eq!(at(0.9).count(), 9);
}

#[test]
fn bce_examples() {
    let target = Mask::from_fn(4, 4, |r, c| (r + c) % 3 == 0);
    let exact = GrayImage::from_fn(4, 4, |r, c| if target.get(r, c) { 1.0 } else { 0.0 });
    let loss = bce_loss(&exact, &target).unwrap();
    assert!((loss - (-(1.0 - 1e-7f64).ln())).abs() < 1e-15);
    assert!(loss <= 1e-6);
    let half = GrayImage::from_fn(4, 4, |_, _| 0.5);
    assert!((bce_loss(&half, &target).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(bce_loss(&half, &Mask::new(4, 5)).is_err());
}

#[test]
fn bce_matches_scalar_oracle() {
    let mut rng = seeded(7);
    let pred = GrayImage::from_fn(4, 4, |_, _| rng.gen::<f64>());
    let target = Mask::from_fn(4, 4, |_, _| rng.gen::<bool>());
    let mut sum = 0.0;
    for r in 0..4 {
        for c in 0..4 {
            let p = pred.get(r, c).max(1e-7).min(1.0 - 1e-7);
            sum += if target.get(r, c) { -p.ln() } else { -(1.0 - p).ln() };
        }
    }
    assert!((bce_loss(&pred, &target).unwrap() - sum / 16.0).abs() < 1e-9);
}

#[test]
fn fused_loss_agrees_with_probability_loss() {
    let logits = random_tensor(1, 1, 4, 4, 3);
    let target = Mask::from_fn(4, 4, |r, c| r > c);
    let prob = GrayImage::from_vec(4, 4, logits.data.iter().map(|&z| sigmoid(z)).collect()).unwrap();
    let (fused, _) = bce_with_logits(&logits, &target.to_f64(1), Reduction::Mean).unwrap();
    assert!((fused - bce_loss(&prob, &target).unwrap()).abs() < 1e-12);
}

/// Loss used by single-layer checks: `Σ out ⊙ r` for a fixed random `r`.
fn probe_loss(out: &Tensor, r: &Tensor) -> f64 {
    out.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
}

fn check_layer(mut layer: Layer, x: Tensor, mode: Mode, label: &str) {
    let eps = 1e-3;
    let out = layer.forward(&x, mode);
    let r = random_tensor(out.n, out.c, out.h, out.w, 77);
    for p in layer.params_mut() {
        p.grad.fill(0.0);
    }
    let dx = layer.backward(&r);
    let eval = |l: &mut Layer, x: &Tensor| {
        let mut probe = l.clone();
        probe_loss(&probe.forward(x, mode), &r)
    };
    for i in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[i] += eps;
        let mut xm = x.clone();
        xm.data[i] -= eps;
        let num = (eval(&mut layer, &xp) - eval(&mut layer, &xm)) / (2.0 * eps);
        let e = rel_err(dx.data[i], num, 1e-6);
        assert!(e < 1e-3, "{label} input {i}: {} vs {num}", dx.data[i]);
    }
    let analytic: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, grads) in analytic.iter().enumerate() {
        for j in 0..grads.len() {
            let bump = |delta: f64| {
                let mut l = layer.clone();
                l.params_mut()[pi].value[j] += delta;
                let out = l.forward(&x, mode);
                probe_loss(&out, &r)
            };
            let num = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let e = rel_err(grads[j], num, 1e-6);
            assert!(e < 1e-3, "{label} param {pi}[{j}]: {} vs {num}", grads[j]);
        }
    }
}

#[test]
fn single_layer_gradients_match_finite_differences() {
    let mut rng = seeded(11);
    check_layer(
        Layer::Conv(Conv2d::new(LayerSpec::conv(2, 3, 3, 2, 1), &mut rng)),
        random_tensor(2, 2, 6, 6, 1),
        Mode::Train,
        "conv3x3s2",
    );
    check_layer(
        Layer::Conv(Conv2d::new(LayerSpec::conv(3, 2, 1, 1, 0), &mut rng)),
        random_tensor(2, 3, 4, 4, 2),
        Mode::Train,
        "conv1x1",
    );
    check_layer(
        Layer::ConvT(ConvTranspose2d::new(LayerSpec::conv_transpose(3, 2), &mut rng)),
        random_tensor(2, 3, 3, 3, 3),
        Mode::Train,
        "convT",
    );
    let mut bn = BatchNorm2d::new(3);
    bn.gamma.value = vec![0.5, 1.5, -1.0];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    check_layer(Layer::Norm(bn.clone()), random_tensor(2, 3, 3, 3, 4), Mode::Train, "bn-train");
    bn.running_mean = vec![0.2, -0.1, 0.0];
    bn.running_var = vec![0.5, 2.0, 1.0];
    check_layer(Layer::Norm(bn), random_tensor(2, 3, 3, 3, 5), Mode::Eval, "bn-eval");
    // Keep inputs away from the kink at zero.
    let mut x = random_tensor(1, 2, 3, 3, 6);
    for v in &mut x.data {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    check_layer(Layer::Act(LeakyRelu::new(NEGATIVE_SLOPE)), x, Mode::Train, "leaky");
}

#[test]
fn fused_sigmoid_bce_gradient_matches_finite_differences() {
    let logits = random_tensor(2, 1, 3, 3, 8);
    let targets: Vec<f64> = (0..18).map(|i| (i % 2) as f64).collect();
    let (_, grad) = bce_with_logits(&logits, &targets, Reduction::Mean).unwrap();
    let eps = 1e-3;
    for i in 0..logits.data.len() {
        let f = |d: f64| {
            let mut z = logits.clone();
            z.data[i] += d;
            bce_with_logits(&z, &targets, Reduction::Mean).unwrap().0
        };
        let num = (f(eps) - f(-eps)) / (2.0 * eps);
        assert!(rel_err(grad.data[i], num, 1e-6) < 1e-3);
    }
}

/// Analytic and central-difference gradients, one entry per parameter tensor.
struct GradCheck {
    analytic: Vec<Vec<f64>>,
    numeric: Vec<Vec<f64>>,
    clamp_flips: usize,
}

impl GradCheck {
    /// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)` for each parameter tensor.
    fn tensor_errors(&self) -> Vec<f64> {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| {
                let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
                diff / na.max(nn).max(1e-6)
            })
            .collect()
    }

    fn worst_element_error(&self, floor: f64) -> f64 {
        self.analytic
            .iter()
            .flatten()
            .zip(self.numeric.iter().flatten())
            .map(|(&a, &n)| rel_err(a, n, floor))
            .fold(0.0, f64::max)
    }
}

/// Central differences over every parameter of the miniature. Activations
/// are pinned to the pieces selected at the base point, so probes never
/// straddle a LeakyReLU kink; the analytic gradient is the derivative of
/// that same piece.
fn miniature_gradient_check(mode: Mode, eps: f64) -> GradCheck {
    let mut net = DetectorNet::new(DetectorConfig::miniature(), 21).unwrap();
    if mode == Mode::Eval {
        let warm = random_tensor(4, 3, 8, 8, 30);
        net.forward(&warm, Mode::Train).unwrap();
    }
    let x = random_tensor(4, 3, 8, 8, 31);
    let mut rng = seeded(32);
    let y: Vec<f64> = (0..4 * 64).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
    let mut base = net.clone();
    net.zero_grad();
    loss_and_backward(&mut net, &x, &y, mode, Reduction::Mean).unwrap();
    let flat = net.gradients();
    base.forward(&x, mode).unwrap();
    base.pin_activations(true);
    // Pinning must not change the gradient at the base point.
    let mut pinned = base.clone();
    pinned.zero_grad();
    loss_and_backward(&mut pinned, &x, &y, mode, Reduction::Mean).unwrap();
    assert_eq!(pinned.gradients(), flat);

    let clamped = |logits: &Tensor| -> Vec<bool> {
        logits
            .data
            .iter()
            .map(|&z| !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&sigmoid(z)))
            .collect()
    };
    let mut report = GradCheck {
        analytic: Vec::new(),
        numeric: Vec::new(),
        clamp_flips: 0,
    };
    let mut offset = 0;
    for (slot, &len) in base.param_sizes().iter().enumerate() {
        let mut numeric = Vec::with_capacity(len);
        for j in 0..len {
            let probe = |d: f64| {
                let mut p = base.clone();
                p.params_mut()[slot].value[j] += d;
                let logits = p.forward(&x, mode).unwrap();
                let loss = bce_with_logits(&logits, &y, Reduction::Mean).unwrap().0;
                (loss, clamped(&logits))
            };
            let (lp, cp) = probe(eps);
            let (lm, cm) = probe(-eps);
            if cp != cm {
                report.clamp_flips += 1;
            }
            numeric.push((lp - lm) / (2.0 * eps));
        }
        report.analytic.push(flat[offset..offset + len].to_vec());
        report.numeric.push(numeric);
        offset += len;
    }
    report
}

fn assert_gradients(mode: Mode) {
    let coarse = miniature_gradient_check(mode, 1e-3);
    assert_eq!(coarse.clamp_flips, 0);
    let errors = coarse.tensor_errors();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 1e-3, "{mode:?}: per-tensor errors {errors:?}");
    // Elementwise, with a step small enough to suppress truncation error.
    let fine = miniature_gradient_check(mode, 1e-5);
    let e = fine.worst_element_error(1e-6);
    assert!(e < 1e-3, "{mode:?}: worst elementwise error {e}");
}

#[test]
fn miniature_gradients_match_finite_differences_train_mode() {
    assert_gradients(Mode::Train);
}

#[test]
fn miniature_gradients_match_finite_differences_eval_mode() {
    assert_gradients(Mode::Eval);
}

#[test]
fn saturated_correct_prediction_has_zero_gradient() {
    let mut net = DetectorNet::new(DetectorConfig::miniature(), 5).unwrap();
    if let Some(Layer::Conv(last)) = net.tail.last_mut() {
        last.weight.value.fill(0.0);
        last.bias.value = vec![20.0];
    }
    let x = random_tensor(2, 3, 8, 8, 1);
    net.zero_grad();
    let loss = loss_and_backward(&mut net, &x, &[1.0; 128], Mode::Train, Reduction::Mean).unwrap();
    assert!(loss < 1e-6);
    let norm: f64 = net.gradients().iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "{norm}");
}

#[test]
fn duplicated_example_doubles_summed_gradient() {
    let mut net = DetectorNet::new(DetectorConfig::miniature(), 6).unwrap();
    let x = random_tensor(1, 3, 8, 8, 2);
    let y: Vec<f64> = (0..64).map(|i| (i % 5 == 0) as u8 as f64).collect();
    net.zero_grad();
    let single = loss_and_backward(&mut net, &x, &y, Mode::Eval, Reduction::Sum).unwrap();
    let g1 = net.gradients();
    let xx = Tensor::stack(&[x.clone(), x]);
    let yy: Vec<f64> = y.iter().chain(&y).copied().collect();
    net.zero_grad();
    let double = loss_and_backward(&mut net, &xx, &yy, Mode::Eval, Reduction::Sum).unwrap();
    let g2 = net.gradients();
    assert!((double - 2.0 * single).abs() < 1e-9 * double.abs());
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1e-12), "{a} {b}");
    }
}

#[test]
fn batch_norm_running_statistics_use_momentum() {
    let mut bn = BatchNorm2d::new(1);
    let x = Tensor::from_vec(2, 1, 1, 2, vec![1.0, 2.0, 3.0, 6.0]);
    let eval_before = bn.infer(&x);
    bn.forward(&x, Mode::Train);
    // mean 3, unbiased variance 14/3.
    assert!((bn.running_mean[0] - 0.3).abs() < 1e-12);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
    let frozen = bn.running_mean.clone();
    bn.forward(&x, Mode::Eval);
    assert_eq!(bn.running_mean, frozen);
    assert_ne!(bn.infer(&x), eval_before);
    assert_eq!(bn.infer(&x), bn.infer(&x));
}

#[test]
fn checkpoint_round_trip_keeps_running_statistics() {
    let mut net = DetectorNet::new(DetectorConfig::miniature(), 8).unwrap();
    net.forward(&random_tensor(2, 3, 8, 8, 3), Mode::Train).unwrap();
    let ck = Checkpoint::from_bytes(&net.to_checkpoint().to_bytes()).unwrap();
    let back = DetectorNet::from_checkpoint(&ck).unwrap();
    let x = random_tensor(1, 3, 16, 16, 4);
    let (a, b) = (net.infer(&x).unwrap(), back.infer(&x).unwrap());
    for (p, q) in a.data.iter().zip(&b.data) {
        assert!((p - q).abs() < 1e-4, "{p} {q}");
    }
    let mut short = ck;
    short.weights.pop();
    assert!(DetectorNet::from_checkpoint(&short).is_err());
}

#[test]
fn train_config_defaults() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch_size, c.lr_step_size), (100, 32, 5));
    assert_eq!((c.learning_rate, c.weight_decay, c.lr_gamma), (1e-3, 1e-4, 0.1));
    assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
}

fn toy_pairs(n: usize, seed: u64) -> Vec<(Image, Mask)> {
    (0..n)
        .map(|i| {
            let mut rng = seeded(seed + i as u64);
            let (cr, cc) = (rng.gen_range(4.0..12.0), rng.gen_range(4.0..12.0));
            let mask = Mask::from_fn(16, 16, |r, c| {
                (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2) < 9.0
            });
            let img = Image::from_fn(16, 16, 3, |r, c, ch| {
                let base = 0.3 + 0.05 * ch as f64 + 0.01 * (r + c) as f64;
                if mask.get(r, c) { base + 0.4 } else { base }
            });
            (img, mask)
        })
        .collect()
}

#[test]
fn miniature_training_reduces_loss_and_is_reproducible() {
    let data = toy_pairs(8, 0);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 4,
        learning_rate: 1e-2,
        lr_step_size: 100,
        seed: 1,
        ..Default::default()
    };
    let a = train_detector(&data, &data[..2], DetectorConfig::miniature(), cfg).unwrap();
    assert!(a.log.last().unwrap().train_loss < a.log[0].train_loss);
    let b = train_detector(&data, &data[..2], DetectorConfig::miniature(), cfg).unwrap();
    assert_eq!(a.log_csv(), b.log_csv());
    assert!(a.log_csv().starts_with("epoch,train_loss,val_loss\n0,"));
    assert_eq!(
        train_detector(&[], &[], DetectorConfig::miniature(), cfg).unwrap_err(),
        DetectorError::EmptyDataset
    );
}
