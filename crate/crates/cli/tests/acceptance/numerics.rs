use aquasight::data::{generate_dataset, generate_sample, ClassCounts, SampleParams, Tint};
use aquasight::eval::{f_beta, metrics, ConfusionMatrix, Measure};
use aquasight::model::{LayerSpec, Network, NetworkSpec};
use aquasight::ops::{self, Mode};
use aquasight::tensor::Tensor;
use aquasight::{Label, SeededRng};
use num_rational::Ratio;

use crate::Verdict;

const H: f64 = 1e-4;
const MAX_REL: f64 = 1e-4;
const TRIALS: usize = 100;
const ORACLE_TOL: f64 = 1e-10;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

fn random(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap()
}

fn weights(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.range(-1.0, 1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fd(x: &Tensor<f64>, analytic: &[f64], f: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    let mut x = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let v = x.data()[i];
        x.data_mut()[i] = v + H;
        let up = f(&x);
        x.data_mut()[i] = v - H;
        let down = f(&x);
        x.data_mut()[i] = v;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

/// Worst relative error over `TRIALS` randomized cases of one op.
fn layer_trials(seed: u64, mut trial: impl FnMut(&mut SeededRng) -> f64) -> f64 {
    let mut rng = SeededRng::new(seed);
    (0..TRIALS).map(|_| trial(&mut rng)).fold(0.0, f64::max)
}

fn conv_trial(rng: &mut SeededRng) -> f64 {
    let (ci, co, k) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
    let (pad, stride) = (rng.below(2), 1 + rng.below(2));
    let shape = vec![ci, k + rng.below(4), k + rng.below(4)];
    let x = random(rng, shape);
    let kern = random(rng, vec![co, ci, k, k]);
    let b = random(rng, vec![co]);
    let r = weights(rng, ops::conv2d(&x, &kern, &b, stride, pad).unwrap().len());
    let g = ops::conv2d_backward(&x, &kern, &b, stride, pad, &r).unwrap();
    let obj = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| dot(ops::conv2d(x, k, b, stride, pad).unwrap().data(), &r);
    fd(&x, &g.input, |x| obj(x, &kern, &b))
        .max(fd(&kern, &g.kernels, |k| obj(&x, k, &b)))
        .max(fd(&b, &g.bias, |b| obj(&x, &kern, b)))
}

fn dense_trial(rng: &mut SeededRng) -> f64 {
    let (m, n) = (1 + rng.below(8), 1 + rng.below(12));
    let x = random(rng, vec![n]);
    let w = random(rng, vec![m, n]);
    let b = random(rng, vec![m]);
    let r = weights(rng, m);
    let g = ops::dense_backward(&x, &w, &b, &r).unwrap();
    let obj = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(ops::dense(x, w, b).unwrap().data(), &r);
    fd(&x, &g.input, |x| obj(x, &w, &b))
        .max(fd(&w, &g.weights, |w| obj(&x, w, &b)))
        .max(fd(&b, &g.bias, |b| obj(&x, &w, b)))
}

fn pool_trial(rng: &mut SeededRng) -> f64 {
    let (c, win, stride) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2));
    let (h, w) = (win + rng.below(4), win + rng.below(4));
    let mut vals: Vec<f64> = (0..c * h * w).map(|i| i as f64 * 0.01).collect();
    rng.shuffle(&mut vals);
    let x = Tensor::new(vec![c, h, w], vals).unwrap();
    let (out, argmax) = ops::maxpool2d(&x, win, stride).unwrap();
    let r = weights(rng, out.len());
    let g = ops::maxpool2d_backward(x.len(), &argmax, &r);
    fd(&x, &g, |x| dot(ops::maxpool2d(x, win, stride).unwrap().0.data(), &r))
}

fn relu_trial(rng: &mut SeededRng) -> f64 {
    let n = 1 + rng.below(30);
    let data = (0..n).map(|_| rng.range(0.01, 1.0) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
    let x = Tensor::new(vec![n], data).unwrap();
    let r = weights(rng, n);
    fd(&x, &ops::relu_backward(&x, &r), |x| dot(ops::relu(x).data(), &r))
}

fn sigmoid_trial(rng: &mut SeededRng) -> f64 {
    let n = 1 + rng.below(30);
    let x = Tensor::new(vec![n], (0..n).map(|_| rng.range(-8.0, 8.0)).collect()).unwrap();
    let r = weights(rng, n);
    fd(&x, &ops::sigmoid_backward(&ops::sigmoid(&x), &r), |x| dot(ops::sigmoid(x).data(), &r))
}

fn dropout_trial(rng: &mut SeededRng) -> f64 {
    let n = 1 + rng.below(30);
    let rate = rng.range(0.0, 0.9);
    let x = random(rng, vec![n]);
    let r = weights(rng, n);
    let seed = rng.next_u64();
    let mask = ops::dropout(&x, rate, Mode::Train, &mut SeededRng::new(seed)).unwrap().1;
    let g = ops::dropout_backward(mask.as_deref(), &r);
    fd(&x, &g, |x| dot(ops::dropout(x, rate, Mode::Train, &mut SeededRng::new(seed)).unwrap().0.data(), &r))
}

/// Relu signs and pooling winners: identifies the linear piece the network is evaluated on.
fn region(net: &Network<f64>, image: &Tensor<f64>, mask_seed: u64) -> Vec<usize> {
    let mut params = net.parameters().map(|(_, t)| t);
    let mut rng = SeededRng::new(mask_seed);
    let mut x = image.clone();
    let mut out = Vec::new();
    for layer in &net.spec().layers {
        x = match *layer {
            LayerSpec::Conv2d { stride, padding, .. } => {
                let (w, b) = (params.next().unwrap(), params.next().unwrap());
                ops::conv2d(&x, w, b, stride, padding).unwrap()
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = (params.next().unwrap(), params.next().unwrap());
                ops::dense(&x, w, b).unwrap()
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let (y, argmax) = ops::maxpool2d(&x, window, stride).unwrap();
                out.extend(argmax);
                y
            }
            LayerSpec::Relu => {
                out.extend(x.data().iter().map(|&v| usize::from(v > 0.0)));
                ops::relu(&x)
            }
            LayerSpec::Sigmoid => ops::sigmoid(&x),
            LayerSpec::Dropout { rate } => ops::dropout(&x, rate, Mode::Train, &mut rng).unwrap().0,
            LayerSpec::Flatten => {
                let n = x.len();
                x.reshape(vec![n]).unwrap()
            }
        };
    }
    out
}

/// Reference network in train mode (dropout pinned per trial), BCE loss,
/// one randomly chosen parameter per trial cycling through every tensor.
/// Returns (worst error, checked, skipped because x ± h crosses a relu or pooling switch).
fn reference_network() -> (f64, usize, usize) {
    let mut net = Network::<f64>::build(NetworkSpec::reference(), 3).unwrap();
    let mut rng = SeededRng::new(77);
    let names = net.parameter_names().to_vec();
    for (name, p) in names.iter().zip(net.params_mut()) {
        if name.ends_with("bias") {
            p.data_mut().iter_mut().for_each(|v| *v = rng.range(-0.1, 0.1));
        }
    }
    let images: Vec<(Tensor<f64>, f64)> = (0..5u8)
        .map(|stage| {
            let s = generate_sample(SampleParams { tint: Tint::COLORS[stage as usize], stage, darkness: 0.1, seed: 90 + stage as u64 })
                .unwrap();
            (s.pixels, s.label.as_f64())
        })
        .collect();
    net.set_mode(Mode::Train);
    let sizes: Vec<usize> = net.params_mut().iter().map(Tensor::len).collect();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    let mut attempt = 0;
    while checked < TRIALS && attempt < 4 * TRIALS {
        let (image, y) = &images[attempt % images.len()];
        let (p, i) = (attempt % sizes.len(), rng.below(sizes[attempt % sizes.len()]));
        let seed = 3000 + attempt as u64;
        attempt += 1;

        net.zero_grad();
        let tape = net.forward(image, &mut SeededRng::new(seed)).unwrap();
        net.backward_bce(tape, *y, 1.0).unwrap();
        let analytic = net.params_mut()[p].grad().unwrap()[i];
        let centre = region(&net, image, seed);
        let probe = |delta: f64, net: &mut Network<f64>| {
            let v = net.params_mut()[p].data()[i];
            net.params_mut()[p].data_mut()[i] = v + delta;
            let out = net.forward(image, &mut SeededRng::new(seed)).unwrap().output().data()[0];
            let same = region(net, image, seed) == centre;
            net.params_mut()[p].data_mut()[i] = v;
            (-(y * out.ln() + (1.0 - y) * (1.0 - out).ln()), same)
        };
        let ((up, s1), (down, s2)) = (probe(H, &mut net), probe(-H, &mut net));
        if !(s1 && s2) {
            skipped += 1;
            continue;
        }
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * H)));
        checked += 1;
    }
    (worst, checked, skipped)
}

pub fn gradients() -> Verdict {
    let layers: [(&str, fn(&mut SeededRng) -> f64); 6] = [
        ("conv2d", conv_trial),
        ("maxpool2d", pool_trial),
        ("dense", dense_trial),
        ("relu", relu_trial),
        ("sigmoid", sigmoid_trial),
        ("dropout", dropout_trial),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, (name, trial)) in layers.iter().enumerate() {
        let worst = layer_trials(100 + i as u64, trial);
        ok &= worst < MAX_REL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let (worst, checked, skipped) = reference_network();
    ok &= worst < MAX_REL && checked >= TRIALS;
    parts.push(format!("reference net {worst:.1e} ({checked} params, {skipped} kink-straddling samples skipped)"));
    let detail = format!("max relative error over {TRIALS} trials each: {}", parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ho, wo) = ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1);
    let mut out = Vec::with_capacity(co * ho * wo);
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = b.data()[o];
                for c in 0..ci {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let (y, xx) = ((oy * stride + dy) as isize - pad as isize, (ox * stride + dx) as isize - pad as isize);
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                s += k.data()[((o * ci + c) * kh + dy) * kw + dx] * x.data()[(c * h + y as usize) * w + xx as usize];
                            }
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

fn naive_pool(x: &Tensor<f64>, win: usize, stride: usize) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::new();
    for ch in 0..c {
        for oy in 0..(h - win) / stride + 1 {
            for ox in 0..(w - win) / stride + 1 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..win {
                    for dx in 0..win {
                        m = m.max(x.data()[(ch * h + oy * stride + dy) * w + ox * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn operator_oracles() -> Verdict {
    let mut rng = SeededRng::new(4242);
    let (mut conv, mut pool, mut dense) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..TRIALS {
        let (ci, co, kh, kw) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4), 1 + rng.below(4));
        let (pad, stride) = (rng.below(3), 1 + rng.below(3));
        let h = kh.saturating_sub(2 * pad).max(1) + rng.below(8);
        let w = kw.saturating_sub(2 * pad).max(1) + rng.below(8);
        let x = random(&mut rng, vec![ci, h, w]);
        let k = random(&mut rng, vec![co, ci, kh, kw]);
        let b = random(&mut rng, vec![co]);
        conv = conv.max(max_diff(ops::conv2d(&x, &k, &b, stride, pad).unwrap().data(), &naive_conv(&x, &k, &b, stride, pad)));

        let (win, ps) = (1 + rng.below(3), 1 + rng.below(3));
        let shape = vec![1 + rng.below(4), win + rng.below(8), win + rng.below(8)];
        let x = random(&mut rng, shape);
        pool = pool.max(max_diff(ops::maxpool2d(&x, win, ps).unwrap().0.data(), &naive_pool(&x, win, ps)));

        let (m, n) = (1 + rng.below(20), 1 + rng.below(40));
        let (x, wt, b) = (random(&mut rng, vec![n]), random(&mut rng, vec![m, n]), random(&mut rng, vec![m]));
        let want: Vec<f64> = (0..m).map(|i| b.data()[i] + (0..n).map(|j| wt.data()[i * n + j] * x.data()[j]).sum::<f64>()).collect();
        dense = dense.max(max_diff(ops::dense(&x, &wt, &b).unwrap().data(), &want));
    }
    let detail = format!("max deviation over {TRIALS} random shapes: conv2d {conv:.1e}, maxpool2d {pool:.1e}, dense {dense:.1e}");
    if conv < ORACLE_TOL && pool < ORACLE_TOL && dense < ORACLE_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn metric_reproduction() -> Verdict {
    let cm = ConfusionMatrix::new(55, 46, 3, 1);
    let ratio = cm.accuracy_ratio().ok_or("empty matrix")?;
    let report = metrics(&cm, 1.0).map_err(|e| e.to_string())?;
    let Measure::Value(f1) = f_beta(0.982, 0.949, 1.0).map_err(|e| e.to_string())? else {
        return Err("F1 undefined".into());
    };
    let detail = format!(
        "accuracy {ratio} ({}), F1(0.982, 0.949) = {f1:.5} vs table 0.966",
        report.accuracy
    );
    let exact = ratio == Ratio::new(101, 105) && *ratio.numer() == 101 && *ratio.denom() == 105;
    if exact && report.accuracy == Measure::Value(101.0 / 105.0) && (f1 - 0.966).abs() <= 1e-3 && (f1 - 0.9653).abs() <= 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn dataset_protocol() -> Verdict {
    let mut seeds: Vec<u64> = (0..12).collect();
    let mut rng = SeededRng::new(2025);
    seeds.extend((0..8).map(|_| rng.next_u64()));
    for &seed in &seeds {
        let (manifest, samples) = generate_dataset(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let counts = ClassCounts::of(samples.iter().map(|s| &s.label));
        let per_stage: Vec<usize> = (1..=4).map(|st| samples.iter().filter(|s| s.meta.stage == st).count()).collect();
        let labels_ok = samples.iter().all(|s| (s.label == Label::Contaminated) == (s.meta.stage > 0));
        if samples.len() != 105 || counts != (ClassCounts { clean: 49, contaminated: 56, total: 105 }) || manifest.counts != counts {
            return Err(format!("seed {seed}: counts {counts:?}"));
        }
        if per_stage != [14; 4] || !labels_ok {
            return Err(format!("seed {seed}: per-stage {per_stage:?}, labels consistent {labels_ok}"));
        }
    }
    Ok(format!("{} seeds: 105 samples, 49 clean / 56 contaminated, 14 per stage", seeds.len()))
}
