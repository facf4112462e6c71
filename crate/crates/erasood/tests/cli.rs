use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use erasood::core::rng::{derive_seed, SeededRng};
use erasood::core::synth::{generate, SynthFamily};
use erasood::core::uen::UenWeights;
use erasood::core::metrics::{auroc, LabeledScores};
use erasood::formats::{load_checkpoint, load_features, read_imgb};
use erasood::report::read_scores;

const TINY: &[&str] = &[
    "--set", "branch_widths=2,3,2,2",
    "--set", "decoder_width=2",
    "--set", "k_mixture=2",
    "--set", "batch_size=4",
];

fn erasood(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erasood"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = erasood(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn synth_writes_a_loadable_imgb() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--set", "dataset=synth:midH:5:3"]);
    let t = read_imgb(&dir.path().join("dataset.imgb")).unwrap();
    assert_eq!(t, generate(SynthFamily::MidH, 5, 3));
}

#[test]
fn entropy_emits_one_row_per_image() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["entropy", "--set", "dataset=synth:lowH:1:0"]);
    let text = fs::read_to_string(dir.path().join("entropy.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("index,entropy_bits\n0,"));
}

#[test]
fn oracle_scores_order_families() {
    let dir = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for fam in ["lowH", "highH"] {
        let uri = format!("dataset=synth:{fam}:50:1");
        ok(dir.path(), &["score", "--oracle", "--set", &uri]);
        let s = read_scores(&dir.path().join("scores.csv")).unwrap();
        assert_eq!(s.len(), 50);
        means.push(mean(&s));
    }
    assert!(means[1] > means[0], "{means:?}");
}

#[test]
fn smoke_train_then_score_heatmap_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let t = Instant::now();
    ok(out, &["train", "--set", "dataset=synth:complex:256:0", "--set", "epochs=2", "--set", "lr=1e-3", "--set", "batch_size=32"]);
    let elapsed = t.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "training took {elapsed:.1}s");
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.starts_with("epoch,L_total,L_r,L_e\n"));

    ok(out, &["score", "--set", "dataset=synth:highH:20:5"]);
    let first = fs::read(out.join("scores.csv")).unwrap();
    ok(out, &["score", "--set", "dataset=synth:highH:20:5"]);
    assert_eq!(fs::read(out.join("scores.csv")).unwrap(), first);
    assert_eq!(read_scores(&out.join("scores.csv")).unwrap().len(), 20);

    ok(out, &["heatmap", "--set", "dataset=synth:highH:4:5"]);
    assert_eq!(read_imgb(&out.join("heatmap.imgb")).unwrap().shape(), [1, 1, 32, 32]);
    let csv = fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32 * 32);

    ok(out, &["features", "--set", "dataset=synth:lowH:3:5"]);
    let f = load_features(&out.join("features.zfea")).unwrap();
    assert_eq!(f.len(), 3);
    assert_eq!(f[0].len(), 100 * 32 * 32);
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_tiny(&["train", "--set", "dataset=synth:complex:8:0", "--set", "epochs=1", "--set", "lr=0", "--set", "seed=4"]);
    ok(dir.path(), &args);
    let (cfg, w) = load_checkpoint(&dir.path().join("checkpoint.uenc")).unwrap();
    assert_eq!(cfg.seed, 4);
    let init = UenWeights::<f32>::init(&cfg, derive_seed(4, 0)).unwrap();
    assert_eq!(w, init);
    assert_eq!(cfg.branch_widths, [2, 3, 2, 2]);
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_tiny(&["train", "--set", "dataset=synth:complex:8:0", "--set", "epochs=3", "--set", "lr=1e30"]);
    let o = erasood(dir.path(), &args);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("loss.csv").exists());
    assert!(!dir.path().join("checkpoint.uenc").exists());
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["train", "--set", "dataset=idx:/nonexistent/train-images"],
        &["train", "--set", "dataset=imgb:/nonexistent/x.imgb"],
        &["train"],
        &["score", "--set", "learning_rate=1"],
        &["detect", "--set", "group_size=1"],
        &["entropy", "--set", "dataset=synth:lowH:1:0", "--set", "bins=1"],
        &["score", "--set", "dataset=synth:lowH:2:0", "--set", "checkpoint=/nonexistent.uenc"],
        &["detect"],
    ];
    for args in cases {
        let o = erasood(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 3\nfoo = 1\n").unwrap();
    let o = erasood(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn corrupt_checkpoint_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_tiny(&["train", "--set", "dataset=synth:complex:8:0", "--set", "epochs=1"]);
    ok(dir.path(), &args);
    let p = dir.path().join("checkpoint.uenc");
    let mut bytes = fs::read(&p).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(&p, bytes).unwrap();
    let o = erasood(dir.path(), &["score", "--set", "dataset=synth:lowH:2:0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

fn write_scores(path: &Path, scores: &[f64]) {
    let mut s = String::from("index,score\n");
    for (i, v) in scores.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    fs::write(path, s).unwrap();
}

fn normal(rng: &mut SeededRng, n: usize, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let (u, v) = (rng.uniform(1e-12, 1.0), rng.next_f64());
            shift + (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
        })
        .collect()
}

fn auroc_field(dir: &Path) -> f64 {
    let text = fs::read_to_string(dir.join("report.txt")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["auroc"]["mean"].as_f64().unwrap()
}

#[test]
fn detection_report_is_consistent_and_swap_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = SeededRng::new(12);
    write_scores(&d.join("id.csv"), &normal(&mut rng, 2000, 0.0));
    write_scores(&d.join("tid.csv"), &normal(&mut rng, 1000, 0.0));
    write_scores(&d.join("ood.csv"), &normal(&mut rng, 1000, 0.35));
    let run = |out: &Path, tid: &str, ood: &str| {
        let id = format!("id_scores={}", d.join("id.csv").display());
        let a = format!("test_id_scores={}", d.join(tid).display());
        let b = format!("test_ood_scores={}", d.join(ood).display());
        ok(out, &["detect", "--set", &id, "--set", &a, "--set", &b]);
    };
    let (fwd, rev) = (d.join("fwd"), d.join("rev"));
    run(&fwd, "tid.csv", "ood.csv");
    run(&rev, "ood.csv", "tid.csv");
    let (a, b) = (auroc_field(&fwd), auroc_field(&rev));
    assert!(a > 0.6, "{a}");
    assert!((a - (1.0 - b)).abs() <= 0.05, "{a} vs 1 - {b}");

    // recompute the summary from the per-group CSV
    let mut rdr = csv::Reader::from_path(fwd.join("report.csv")).unwrap();
    let mut runs: Vec<(Vec<f64>, Vec<f64>)> = vec![Default::default(); 10];
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let t: usize = rec[0].parse().unwrap();
        let kl: f64 = rec[3].parse().unwrap();
        match &rec[2] {
            "ood" => runs[t].0.push(kl),
            "id" => runs[t].1.push(kl),
            o => panic!("origin {o}"),
        }
        assert_eq!(&rec[4], "");
    }
    let recomputed: f64 = runs
        .into_iter()
        .map(|(p, n)| auroc(&LabeledScores::new(p, n).unwrap()).unwrap())
        .sum::<f64>()
        / 10.0;
    assert!((recomputed - a).abs() < 1e-12);

    let again = d.join("again");
    run(&again, "tid.csv", "ood.csv");
    for f in ["report.csv", "report.txt", "kde.csv"] {
        assert_eq!(fs::read(fwd.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_command_prints_a_parsable_template() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(dir.path(), &["config", "--set", "epochs=7"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = erasood::RunConfig::from_text(&text).unwrap();
    assert_eq!(cfg.uen.epochs, 7);
    assert_eq!(cfg.out, dir.path());
}
