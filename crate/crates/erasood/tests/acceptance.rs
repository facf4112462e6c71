//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gating criterion fails.
//!
//! Criterion 8 needs user-supplied IDX files and runs only when
//! `ERASOOD_MNIST_IDX` and `ERASOOD_FASHION_IDX` are set; it never gates.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use erasood::core::checkpoint;
use erasood::core::conv::{conv2d_backward, conv2d_forward, ConvParams};
use erasood::core::detect::{fit_kde, kl_group, run_detection, DetectionConfig, DetectionReport};
use erasood::core::dml::{feature_channels, generation_loss, generation_loss_grad, log_prob_pixel, MixtureField};
use erasood::core::entropy::{entropy_scores, EntropyConfig};
use erasood::core::erasing::{build_mask, EraseKind, EraseMask, EraseStrategy, StrategySpec};
use erasood::core::image::{normalize_u8, ImageTensor};
use erasood::core::metrics::{auroc, LabeledScores};
use erasood::core::ops;
use erasood::core::rng::SeededRng;
use erasood::core::synth::{generate, SynthFamily};
use erasood::core::uen::{self, loss_and_grad, UenConfig, UenWeights};
use erasood::core::{Error as CoreError, FormatError, Tensor};
use erasood::formats::{decode_imgb, encode_imgb, parse_idx_images};
use erasood::report::{groups_csv, report_json};
use erasood::DatasetUri;

// Tolerances and budgets.
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_MAG_FLOOR: f64 = 1e-4;
const GRAD_BUDGET_S: f64 = 120.0;
const NORM_FIELDS: usize = 100;
const NORM_TOL: f64 = 1e-4;
const KL_ORACLE_TOL: f64 = 1e-9;
const CONV_ORACLE_TOL: f64 = 1e-5;
const KDE_MASS_TOL: f64 = 1e-3;
const NULL_AUROC_TOL: f64 = 0.15;
const ORACLE_AUROC_MIN: f64 = 0.99;
const UEN_AUROC_GS10_MIN: f64 = 0.99;
const UEN_AUROC_GS5_MIN: f64 = 0.95;
const TRAINED_BUDGET_S: f64 = 30.0 * 60.0;
const REAL_DATA_AUROC_MIN: f64 = 0.90;

// Desk-scale training run shared by criteria 5 to 8.
const TRAIN_N: usize = 2048;
const TRAIN_SEED: u64 = 2024;
const TRAIN_EPOCHS: usize = 3;
const TRAIN_LR: f64 = 2e-3;
const TRAIN_BATCH: usize = 32;
const POOL_ID: (usize, u64) = (1000, 101);
const POOL_TEST_ID: (usize, u64) = (500, 102);
const POOL_OOD: (usize, u64) = (500, 103);
const POOL_MID: (usize, u64) = (500, 104);
const DETECT_SEED: u64 = 7;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn detection(gs: usize) -> DetectionConfig {
    DetectionConfig { group_size: gs, seed: DETECT_SEED, ..Default::default() }
}

// ---------------------------------------------------------------- criterion 1

/// Worst relative error over all components, the denominator floored at
/// `GRAD_MAG_FLOOR` of the largest gradient.
fn compare(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (GRAD_MAG_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn central(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let eps = 1e-6;
    let mut p = at.to_vec();
    (0..at.len())
        .map(|i| {
            p[i] = at[i] + eps;
            let up = f(&p);
            p[i] = at[i] - eps;
            let down = f(&p);
            p[i] = at[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn rand32(shape: [usize; 4], rng: &mut SeededRng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0) as f32)
}

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn dot(a: &Tensor<f64>, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

fn op_checks() -> Vec<(String, f64)> {
    let mut rng = SeededRng::new(1001);
    let mut out = Vec::new();
    for &(k, s, p) in &[(3, 1, 1), (5, 1, 2), (7, 1, 3), (3, 2, 1), (5, 2, 2), (7, 2, 3), (1, 1, 0)] {
        let x = rand32([2, 3, 8, 8], &mut rng);
        let params = ConvParams::new(4, 3, k, s, p, rand32([4, 3, k, k], &mut rng).into_vec(), rand32([1, 1, 1, 4], &mut rng).into_vec()).unwrap();
        let y = conv2d_forward(&x, &params).unwrap();
        let go = rand32(y.shape(), &mut rng);
        let (gx, gp) = conv2d_backward(&x, &params, &go).unwrap();
        let go64 = to64(go.data());
        let p64 = params.convert::<f64>();
        let x64 = x.convert::<f64>();
        let nx = central(|v| dot(&conv2d_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &p64).unwrap(), &go64), x64.data());
        let e = compare(&to64(gx.data()), &nx);
        out.push((format!("conv k{k} s{s} input"), e));
        let nk = central(
            |v| {
                let mut q = p64.clone();
                q.kernel.copy_from_slice(v);
                dot(&conv2d_forward(&x64, &q).unwrap(), &go64)
            },
            &p64.kernel,
        );
        let e = compare(&to64(&gp.kernel), &nk);
        out.push((format!("conv k{k} s{s} kernel"), e));
        let nb = central(
            |v| {
                let mut q = p64.clone();
                q.bias.copy_from_slice(v);
                dot(&conv2d_forward(&x64, &q).unwrap(), &go64)
            },
            &p64.bias,
        );
        let e = compare(&to64(&gp.bias), &nb);
        out.push((format!("conv k{k} s{s} bias"), e));
    }

    let away = Tensor::<f32>::from_fn([2, 3, 4, 4], |_| {
        let v = rng.uniform(0.05, 2.0) as f32;
        if rng.below(2) == 0 { v } else { -v }
    });
    let w = rand32(away.shape(), &mut rng);
    let w64 = to64(w.data());
    let shape = away.shape();
    let unary: [(&str, fn(&Tensor<f64>) -> Tensor<f64>, Tensor<f32>); 2] = [
        ("relu", ops::relu, ops::relu_backward(&ops::relu(&away), &w).unwrap()),
        ("tanh", ops::tanh, ops::tanh_backward(&ops::tanh(&away), &w).unwrap()),
    ];
    for (name, f, analytic) in unary {
        let n = central(|v| dot(&f(&Tensor::from_vec(shape, v.to_vec()).unwrap()), &w64), &to64(away.data()));
        let e = compare(&to64(analytic.data()), &n);
        out.push((name.to_string(), e));
    }

    let wu = rand32([2, 3, 8, 8], &mut rng);
    let n = central(
        |v| dot(&ops::upsample_nearest(&Tensor::from_vec(shape, v.to_vec()).unwrap(), 2).unwrap(), &to64(wu.data())),
        &to64(away.data()),
    );
    let e = compare(&to64(ops::upsample_nearest_backward(&wu, 2).unwrap().data()), &n);
    out.push(("upsample".into(), e));

    let other = Tensor::<f64>::from_fn([2, 2, 4, 4], |_| rng.uniform(-1.0, 1.0));
    let wc = rand32([2, 5, 4, 4], &mut rng);
    let n = central(
        |v| dot(&ops::concat_channels(&[&Tensor::from_vec(shape, v.to_vec()).unwrap(), &other]).unwrap(), &to64(wc.data())),
        &to64(away.data()),
    );
    let parts = ops::split_channels(&wc, &[3, 2]).unwrap();
    let e = compare(&to64(parts[0].data()), &n);
    out.push(("concat/split".into(), e));

    // mixture likelihood with respect to its raw features
    let k = 3;
    let z = Tensor::<f32>::from_fn([1, feature_channels(k), 8, 8], |[_, ch, _, _]| {
        let r = rng.uniform(-1.0, 1.0) as f32;
        if (4 * k..7 * k).contains(&ch) { 2.0 * r - 2.0 } else { r }
    });
    let x: Vec<f64> = (0..192).map(|_| normalize_u8(rng.below(256) as u8)).collect();
    let mask = build_mask(EraseStrategy::center((4, 4)), 8, 8).unwrap();
    let (_, g) = generation_loss_grad(&MixtureField::from_features(&z, 0, k).unwrap(), &x, &mask).unwrap();
    let n = central(
        |v| {
            let zz = Tensor::from_vec(z.shape(), v.to_vec()).unwrap();
            generation_loss(&MixtureField::from_features(&zz, 0, k).unwrap(), &x, &mask).unwrap()
        },
        &to64(z.data()),
    );
    let e = compare(&g, &n);
    out.push(("mixture likelihood".into(), e));
    out
}

fn end_to_end_check() -> f64 {
    let cfg = UenConfig {
        k_mixture: 2,
        branch_kernels: vec![3, 5, 7],
        branch_widths: [3, 4, 3, 2],
        decoder_width: 3,
        ..Default::default()
    };
    let mut w = UenWeights::<f32>::init(&cfg, 17).unwrap();
    let mut rng = SeededRng::new(18);
    for layer in w.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.uniform(-0.2, 0.2) as f32;
        }
    }
    let imgs = ImageTensor::new([2, 3, 8, 8], (0..384).map(|_| rng.below(256) as u8).collect()).unwrap();
    let center = build_mask(EraseStrategy::center((4, 4)), 8, 8).unwrap();
    let corner = build_mask(EraseStrategy::new(EraseKind::Corner, 2, (4, 4)).unwrap(), 8, 8).unwrap();
    let masks: [&EraseMask; 2] = [&center, &corner];
    let refs: Vec<_> = imgs.iter().collect();
    let (_, g) = loss_and_grad(&w, cfg.lambda, &refs, &masks).unwrap();
    let analytic: Vec<f64> = g.layers.iter().flat_map(|l| l.kernel.iter().chain(&l.bias).map(|&v| v as f64)).collect();
    let flat = to64(&w.flatten());
    let numeric = central(
        |p| {
            let w64 = UenWeights::<f64>::from_flat(&cfg, p).unwrap();
            loss_and_grad(&w64, cfg.lambda, &refs, &masks).unwrap().0.total
        },
        &flat,
    );
    compare(&analytic, &numeric)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut checks = op_checks();
    checks.push(("end-to-end L_total".into(), end_to_end_check()));
    let (name, worst) = checks.iter().fold((String::new(), 0.0), |w, (n, e)| if *e > w.1 { (n.clone(), *e) } else { w });
    let e2e = checks.last().expect("end-to-end check").1;
    let secs = t.elapsed().as_secs_f64();
    check(
        worst < GRAD_REL_TOL && secs < GRAD_BUDGET_S,
        format!(
            "{} checks, max rel err {worst:.2e} ({name}), end-to-end {e2e:.2e} (< {GRAD_REL_TOL:e}, denominator floor {GRAD_MAG_FLOOR:e} x max|g|), {secs:.1}s (< {GRAD_BUDGET_S}s)",
            checks.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut rng = SeededRng::new(2002);
    let (k, side) = (10, 2);
    let mut worst = 0.0f64;
    for _ in 0..NORM_FIELDS {
        let z = Tensor::<f64>::from_fn([1, feature_channels(k), side, side], |[_, ch, _, _]| match ch {
            c if c < k => rng.uniform(-4.0, 4.0),
            c if c < 4 * k => rng.uniform(-1.5, 1.5),
            c if c < 7 * k => rng.uniform(-8.0, 1.0),
            _ => rng.uniform(-3.0, 3.0),
        });
        let field = MixtureField::from_features(&z, 0, k).unwrap();
        let plane = side * side;
        let base: Vec<f64> = (0..3 * plane).map(|_| normalize_u8(rng.below(256) as u8)).collect();
        for c in 0..3 {
            let mut sums = vec![0.0; plane];
            for v in 0..=255u8 {
                let mut x = base.clone();
                x[c * plane..(c + 1) * plane].fill(normalize_u8(v));
                let lp = log_prob_pixel(&field, &x).unwrap();
                for (p, s) in sums.iter_mut().enumerate() {
                    *s += lp.log2_p[c * plane + p].exp2();
                }
            }
            worst = sums.iter().fold(worst, |m, s| m.max((s - 1.0).abs()));
        }
    }
    check(
        worst <= NORM_TOL,
        format!("{NORM_FIELDS} fields x {} pixels x 3 channels, max |sum - 1| = {worst:.2e} (<= {NORM_TOL:e})", side * side),
    )
}

// ---------------------------------------------------------------- criterion 3

fn pair_count_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for p in pos {
        for n in neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    twice as f64 / 2.0 / (pos.len() * neg.len()) as f64
}

fn naive_bandwidth(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let q = |p: f64| {
        let h = p * (n - 1.0);
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    let iqr = q(0.75) - q(0.25);
    (0.9 * sd.min(iqr / 1.34) * n.powf(-0.2)).max(1e-3 * (s[s.len() - 1] - s[0])).max(1e-6)
}

fn naive_log_density(points: &[f64], h: f64, x: f64) -> f64 {
    let norm = 1.0 / (points.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let d: f64 = points.iter().map(|p| (-0.5 * ((x - p) / h).powi(2)).exp()).sum::<f64>() * norm;
    d.max(1e-12).ln()
}

fn naive_kl(group: &[f64], id: &[f64]) -> f64 {
    let (hg, hi) = (naive_bandwidth(group), naive_bandwidth(id));
    group
        .iter()
        .map(|&x| naive_log_density(group, hg, x) - naive_log_density(id, hi, x))
        .sum::<f64>()
        / group.len() as f64
}

fn naive_conv(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
    let [n, _, h, w] = x.shape();
    let (ho, wo) = ((h + 2 * p.padding - p.k) / p.stride + 1, (w + 2 * p.padding - p.k) / p.stride + 1);
    let mut out = Tensor::zeros([n, p.c_out, ho, wo]);
    for b in 0..n {
        for o in 0..p.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = p.bias[o];
                    for c in 0..p.c_in {
                        for ky in 0..p.k {
                            for kx in 0..p.k {
                                let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += p.kernel[((o * p.c_in + c) * p.k + ky) * p.k + kx]
                                        * x.get([b, c, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.set([b, o, oy, ox], acc);
                }
            }
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let mut rng = SeededRng::new(3003);
    let mut auroc_mismatch = 0;
    for _ in 0..500 {
        let (np, nn) = (1 + rng.below(50), 1 + rng.below(50));
        let levels = 2 + rng.below(30);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.below(levels) as f64 * 0.25).collect() };
        let (pos, neg) = (draw(np), draw(nn));
        let got = auroc(&LabeledScores::new(pos.clone(), neg.clone()).unwrap()).unwrap();
        if got != pair_count_auroc(&pos, &neg) {
            auroc_mismatch += 1;
        }
    }

    let mut kl_err = 0.0f64;
    for _ in 0..200 {
        let id: Vec<f64> = (0..200).map(|_| rng.uniform(-1.0, 1.0) + rng.uniform(-1.0, 1.0)).collect();
        let gs = 2 + rng.below(20);
        let shift = rng.uniform(-0.5, 0.5);
        let group: Vec<f64> = (0..gs).map(|_| shift + rng.uniform(-1.5, 1.5)).collect();
        let got = kl_group(&group, &fit_kde(&id).unwrap()).unwrap();
        kl_err = kl_err.max((got - naive_kl(&group, &id)).abs());
    }

    let mut conv_err = 0.0f64;
    let layers = [(3, 32, 3, 1, 1), (32, 64, 3, 2, 1), (64, 32, 5, 1, 2), (32, 16, 7, 1, 3), (48, 100, 1, 1, 0), (100, 32, 3, 1, 1), (3, 8, 7, 2, 3), (5, 4, 5, 2, 2)];
    for &(cin, cout, k, s, p) in &layers {
        let side = if cin > 40 { 8 } else { 12 };
        let x = rand32([2, cin, side, side], &mut rng);
        let params = ConvParams::new(cout, cin, k, s, p, rand32([cout, cin, k, k], &mut rng).into_vec(), rand32([1, 1, 1, cout], &mut rng).into_vec()).unwrap();
        let got = conv2d_forward(&x, &params).unwrap();
        let want = naive_conv(&x.convert(), &params.convert());
        for (a, b) in got.data().iter().zip(want.data()) {
            conv_err = conv_err.max((*a as f64 - b).abs() / b.abs().max(1.0));
        }
    }
    check(
        auroc_mismatch == 0 && kl_err <= KL_ORACLE_TOL && conv_err <= CONV_ORACLE_TOL,
        format!(
            "auroc vs pair count: {auroc_mismatch}/500 mismatches (exact); kl max err {kl_err:.1e} (<= {KL_ORACLE_TOL:e}); conv max err {conv_err:.1e} (<= {CONV_ORACLE_TOL:e}, relative above magnitude 1)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let mut rng = SeededRng::new(4004);
    let mut self_kl_nonzero = 0;
    let mut mass_err = 0.0f64;
    for _ in 0..50 {
        let n = 2 + rng.below(60);
        let g: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0) * rng.uniform(0.0, 1.0)).collect();
        let model = fit_kde(&g).unwrap();
        if kl_group(&g, &model).unwrap() != 0.0 {
            self_kl_nonzero += 1;
        }
        let curve = model.curve(20_001);
        let mass: f64 = curve.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
        mass_err = mass_err.max((mass - 1.0).abs());
    }
    let pool: Vec<f64> = (0..500).map(|_| rng.uniform(0.0, 1.0) + rng.uniform(0.0, 1.0)).collect();
    let id: Vec<f64> = (0..1000).map(|_| rng.uniform(0.0, 1.0) + rng.uniform(0.0, 1.0)).collect();
    let report = run_detection(&id, &pool, &pool, &detection(10)).unwrap();
    let groups = report.groups.len() / (2 * report.runs.len());
    let null = report.auroc.mean;
    check(
        self_kl_nonzero == 0 && mass_err <= KDE_MASS_TOL && (null - 0.5).abs() <= NULL_AUROC_TOL && groups >= 20,
        format!(
            "self-KL nonzero in {self_kl_nonzero}/50; KDE mass err {mass_err:.1e} (<= {KDE_MASS_TOL:e}); identical pools AUROC {null:.3} (0.5 ± {NULL_AUROC_TOL}) over {groups} groups per side"
        ),
    )
}

// ---------------------------------------------------------- criteria 5 to 8

struct Pools {
    id: ImageTensor,
    test_id: ImageTensor,
    ood: ImageTensor,
    mid: ImageTensor,
}

fn pools() -> Pools {
    Pools {
        id: generate(SynthFamily::LowH, POOL_ID.0, POOL_ID.1),
        test_id: generate(SynthFamily::LowH, POOL_TEST_ID.0, POOL_TEST_ID.1),
        ood: generate(SynthFamily::HighH, POOL_OOD.0, POOL_OOD.1),
        mid: generate(SynthFamily::MidH, POOL_MID.0, POOL_MID.1),
    }
}

fn train_config(strategy: StrategySpec) -> UenConfig {
    UenConfig {
        lr: TRAIN_LR,
        epochs: TRAIN_EPOCHS,
        batch_size: TRAIN_BATCH,
        seed: TRAIN_SEED,
        strategy,
        ..Default::default()
    }
}

fn train(strategy: StrategySpec) -> UenWeights<f32> {
    let data = generate(SynthFamily::Complex, TRAIN_N, TRAIN_SEED);
    uen::train(&train_config(strategy), &data).expect("training succeeds").weights
}

struct Scored {
    id: Vec<f64>,
    test_id: Vec<f64>,
    ood: Vec<f64>,
}

impl Scored {
    fn detect(&self, gs: usize) -> DetectionReport {
        run_detection(&self.id, &self.test_id, &self.ood, &detection(gs)).unwrap()
    }
}

fn score(w: &UenWeights<f32>, p: &Pools, strategy: StrategySpec) -> Scored {
    let s = |x: &ImageTensor| uen::score_dataset(w, x, strategy).unwrap();
    Scored { id: s(&p.id), test_id: s(&p.test_id), ood: s(&p.ood) }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Trained {
    pools: Pools,
    center: Scored,
    center_auroc10: f64,
    mid_mean: f64,
    elapsed: f64,
}

fn criterion_5a(p: &Pools) -> Outcome {
    let cfg = EntropyConfig::default();
    let s = |x: &ImageTensor| entropy_scores(x, StrategySpec::CENTER, &cfg).unwrap();
    let scored = Scored { id: s(&p.id), test_id: s(&p.test_id), ood: s(&p.ood) };
    let a = scored.detect(10).auroc.mean;
    check(a >= ORACLE_AUROC_MIN, format!("entropy oracle lowH vs highH, gs=10: AUROC {a:.4} (>= {ORACLE_AUROC_MIN})"))
}

fn train_and_score() -> Trained {
    let t = Instant::now();
    let pools = pools();
    let w = train(StrategySpec::CENTER);
    let center = score(&w, &pools, StrategySpec::CENTER);
    let center_auroc10 = center.detect(10).auroc.mean;
    let elapsed = t.elapsed().as_secs_f64();
    let mid_mean = mean(&uen::score_dataset(&w, &pools.mid, StrategySpec::CENTER).unwrap());
    Trained { pools, center, center_auroc10, mid_mean, elapsed }
}

fn criterion_5b(h: &Trained) -> Outcome {
    let a5 = h.center.detect(5).auroc.mean;
    check(
        h.center_auroc10 >= UEN_AUROC_GS10_MIN && a5 >= UEN_AUROC_GS5_MIN && h.elapsed <= TRAINED_BUDGET_S,
        format!(
            "UEN ({TRAIN_EPOCHS} epochs on {TRAIN_N} complex) lowH vs highH: AUROC gs=10 {:.4} (>= {UEN_AUROC_GS10_MIN}), gs=5 {a5:.4} (>= {UEN_AUROC_GS5_MIN}); {:.0}s (<= {TRAINED_BUDGET_S}s)",
            h.center_auroc10, h.elapsed
        ),
    )
}

fn order(v: [f64; 3]) -> [usize; 3] {
    let mut idx = [0, 1, 2];
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

fn criterion_6(h: &Trained) -> Outcome {
    let cfg = EntropyConfig::default();
    let oracle = |x: &ImageTensor| mean(&entropy_scores(x, StrategySpec::CENTER, &cfg).unwrap());
    let p = &h.pools;
    let uen_means = [mean(&h.center.test_id), h.mid_mean, mean(&h.center.ood)];
    let oracle_means = [oracle(&p.test_id), oracle(&p.mid), oracle(&p.ood)];
    check(
        order(uen_means) == order(oracle_means),
        format!(
            "mean L_e low/mid/high = {:.3}/{:.3}/{:.3} bits; mean oracle = {:.3}/{:.3}/{:.3} bits",
            uen_means[0], uen_means[1], uen_means[2], oracle_means[0], oracle_means[1], oracle_means[2]
        ),
    )
}

fn criterion_7(h: &Trained) -> Outcome {
    let corner = StrategySpec { kind: EraseKind::Corner, variant: None };
    let w = train(corner);
    let a = score(&w, &h.pools, corner).detect(10).auroc.mean;
    check(
        h.center_auroc10 >= a,
        format!("gs=10 AUROC center {:.4} >= corner {a:.4}", h.center_auroc10),
    )
}

fn criterion_8() -> Option<Outcome> {
    let (mnist, fashion) = (std::env::var("ERASOOD_MNIST_IDX").ok()?, std::env::var("ERASOOD_FASHION_IDX").ok()?);
    let load = |p: &str| format!("idx:{p}").parse::<DatasetUri>().and_then(|u| u.load());
    let run = || -> Result<f64, String> {
        let m = load(&mnist).map_err(|e| e.to_string())?.images;
        let f = load(&fashion).map_err(|e| e.to_string())?.images;
        let half = m.len() / 2;
        let id = m.select(&(0..half).collect::<Vec<_>>());
        let test_id = m.select(&(half..m.len()).collect::<Vec<_>>());
        let w = train(StrategySpec::CENTER);
        let s = |x: &ImageTensor| uen::score_dataset(&w, x, StrategySpec::CENTER).unwrap();
        let report = run_detection(&s(&id), &s(&test_id), &s(&f), &detection(10)).map_err(|e| e.to_string())?;
        Ok(report.auroc.mean)
    };
    Some(match run() {
        Ok(a) => check(a >= REAL_DATA_AUROC_MIN, format!("MNIST vs FashionMNIST gs=10: AUROC {a:.4} (>= {REAL_DATA_AUROC_MIN})")),
        Err(e) => Err(e),
    })
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let mut problems = Vec::new();
    let cfg = UenConfig {
        k_mixture: 2,
        branch_widths: [4, 6, 4, 3],
        decoder_width: 4,
        batch_size: 8,
        epochs: 2,
        lr: 1e-3,
        seed: 99,
        ..Default::default()
    };
    let data = generate(SynthFamily::Complex, 32, 5);
    let run = || {
        let w = uen::train(&cfg, &data).unwrap().weights;
        let bytes = checkpoint::encode(&cfg, &w).unwrap();
        let scores = uen::score_dataset(&w, &generate(SynthFamily::MidH, 40, 6), StrategySpec::CENTER).unwrap();
        let report = run_detection(&scores[..20], &scores[20..30], &scores[30..], &detection(2)).unwrap();
        (bytes, scores, groups_csv(&report).into_bytes(), report_json(&report).to_string())
    };
    let (a, b) = (run(), run());
    if a.0 != b.0 {
        problems.push("checkpoint bytes differ between runs");
    }
    if a.1.iter().map(|v| v.to_bits()).ne(b.1.iter().map(|v| v.to_bits())) {
        problems.push("scores differ between runs");
    }
    if a.2 != b.2 || a.3 != b.3 {
        problems.push("reports differ between runs");
    }

    let (c2, w2) = checkpoint::decode(&a.0).unwrap();
    if c2 != cfg || checkpoint::encode(&c2, &w2).unwrap() != a.0 {
        problems.push("UENC round trip is not bit-exact");
    }
    let img = generate(SynthFamily::HighH, 3, 1);
    let enc = encode_imgb(&img);
    if decode_imgb(&enc).map(|t| encode_imgb(&t)).ok() != Some(enc.clone()) {
        problems.push("IMGB round trip is not bit-exact");
    }

    let fmt_err = |r: Result<(), CoreError>| match r {
        Err(CoreError::Format(f)) => Some(f),
        _ => None,
    };
    let ck = |b: &[u8]| fmt_err(checkpoint::decode(b).map(|_| ()));
    let mut flipped = a.0.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    let mut bad_version = a.0.clone();
    bad_version[4] = 9;
    let mut bad_magic = a.0.clone();
    bad_magic[0] = b'X';
    let uenc_ok = matches!(ck(&flipped), Some(FormatError::ChecksumMismatch { .. }))
        && matches!(ck(&a.0[..a.0.len() - 1]), Some(FormatError::Truncated { .. }))
        && matches!(ck(&bad_version), Some(FormatError::UnsupportedVersion { .. }))
        && matches!(ck(&bad_magic), Some(FormatError::BadMagic { .. }));
    if !uenc_ok {
        problems.push("UENC corruption not classified");
    }
    let mut v2 = enc.clone();
    v2[4] = 2;
    let mut m2 = enc.clone();
    m2[0] = b'J';
    let imgb_ok = matches!(decode_imgb(&v2), Err(FormatError::UnsupportedVersion { .. }))
        && matches!(decode_imgb(&m2), Err(FormatError::BadMagic { .. }))
        && matches!(decode_imgb(&enc[..enc.len() - 5]), Err(FormatError::Truncated { .. }));
    if !imgb_ok {
        problems.push("IMGB corruption not classified");
    }
    let mut idx = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4];
    let idx_ok = parse_idx_images(&idx).is_ok()
        && matches!(parse_idx_images(&idx[..19]), Err(FormatError::Truncated { .. }))
        && {
            idx[3] = 1;
            matches!(parse_idx_images(&idx), Err(FormatError::BadMagic { .. }))
        }
        && {
            idx[3] = 3;
            idx[4..16].fill(0xff);
            matches!(parse_idx_images(&idx), Err(FormatError::DimensionOverflow(_)))
        };
    if !idx_ok {
        problems.push("IDX corruption not classified");
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "bit-identical checkpoint, scores and reports across runs; UENC/IMGB round trips exact; UENC, IMGB and IDX corruption classified".into()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- driver

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())
    })
}

fn report(id: &str, title: &str, outcome: Outcome, gating: bool) -> bool {
    let (tag, detail, pass) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("[{tag}] {id} {title}: {detail}");
    pass || !gating
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; nothing to list here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let t = Instant::now();
    let mut ok = true;
    ok &= report("1", "gradient correctness", guarded(criterion_1).and_then(|r| r), true);
    ok &= report("2", "likelihood normalization", guarded(criterion_2).and_then(|r| r), true);
    ok &= report("3", "oracle equivalences", guarded(criterion_3).and_then(|r| r), true);
    ok &= report("4", "detector identities", guarded(criterion_4).and_then(|r| r), true);

    let p = pools();
    ok &= report("5a", "entropy oracle separation", guarded(|| criterion_5a(&p)).and_then(|r| r), true);
    drop(p);
    match guarded(train_and_score) {
        Ok(h) => {
            ok &= report("5b", "trained network separation", criterion_5b(&h), true);
            ok &= report("6", "rank agreement", guarded(|| criterion_6(&h)).and_then(|r| r), true);
            ok &= report("7", "strategy ablation", guarded(|| criterion_7(&h)).and_then(|r| r), true);
        }
        Err(e) => {
            for (id, title) in [("5b", "trained network separation"), ("6", "rank agreement"), ("7", "strategy ablation")] {
                ok &= report(id, title, Err(e.clone()), true);
            }
        }
    }
    match guarded(criterion_8) {
        Ok(Some(outcome)) => {
            report("8", "real-data smoke (not gating)", outcome, false);
        }
        Ok(None) => println!("[SKIP] 8 real-data smoke: set ERASOOD_MNIST_IDX and ERASOOD_FASHION_IDX to run"),
        Err(e) => {
            report("8", "real-data smoke (not gating)", Err(e), false);
        }
    }
    ok &= report("9", "determinism and formats", guarded(criterion_9).and_then(|r| r), true);
    println!("acceptance finished in {:.0}s: {}", t.elapsed().as_secs_f64(), if ok { "all gating criteria pass" } else { "FAILED" });
    if !ok {
        std::process::exit(1);
    }
}
