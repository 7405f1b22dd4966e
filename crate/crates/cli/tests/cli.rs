use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drnmf::model::{self, ModelFile, NamedArray};
use drnmf::pipeline::{PipelineConfig, KEYS};
use drnmf::signal::{frame_count, read_wav};

const SMALL: &[&str] = &[
    "--n-speech", "6", "--n-noise", "6", "--nmf-iters", "30", "--layers", "3", "--max-epochs", "3", "--patience-epochs", "2",
];

fn drnmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drnmf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn drnmf")
}

fn ok(args: &[&str]) -> String {
    let out = drnmf(args);
    assert!(
        out.status.success(),
        "drnmf {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    drnmf(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn synth(dir: &Path, n: usize, seed: u64, seconds: f64) -> PathBuf {
    let (n, seed, seconds) = (n.to_string(), seed.to_string(), seconds.to_string());
    ok(&["synth", "--out", s(dir), "--n-utts", &n, "--seed", &seed, "--utt-seconds", &seconds]);
    dir.join("manifest.csv")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Trains a small dictionary and network; returns (val manifest, nmf model, drnmf model, train stdout).
fn trained(dir: &Path) -> (PathBuf, PathBuf, PathBuf, String) {
    let train = synth(&dir.join("train"), 6, 21, 1.0);
    let val = synth(&dir.join("val"), 6, 22, 1.0);
    let nmf = dir.join("models/nmf.bin");
    let dr = dir.join("models/dr.bin");
    ok(&with_small(&["train-nmf", "--manifest", s(&train), "--out", s(&nmf)]));
    let stdout = ok(&with_small(&[
        "train-drnmf", "--manifest", s(&train), "--val-manifest", s(&val), "--nmf-model", s(&nmf), "--out", s(&dr),
    ]));
    (val, nmf, dr, stdout)
}

#[test]
fn help_lists_every_key_with_its_default() {
    let help = ok(&["--help"]);
    for k in KEYS {
        let line = help.lines().find(|l| l.split_whitespace().next() == Some(k.name)).unwrap_or_else(|| panic!("{} missing", k.name));
        assert!(line.split_whitespace().nth(1) == Some(k.default), "{line}");
    }
    let sub = ok(&["train-drnmf", "--help"]);
    for k in KEYS {
        assert!(sub.contains(&format!("--{}", k.name.replace('_', "-"))), "{}", k.name);
        assert!(sub.contains(&format!("[default: {}]", k.default)), "{}", k.name);
    }
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), 12, 7, 0.5);
    let b = synth(&dir.path().join("b"), 12, 7, 0.5);
    let rows = read_csv(&a);
    assert_eq!(rows.len(), 12);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for row in &rows {
        for col in &row[2..] {
            let (fa, fb) = (a.parent().unwrap().join(col), b.parent().unwrap().join(col));
            assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap(), "{col}");
        }
    }
    for snr in ["-6", "-3", "0", "3", "6", "9"] {
        assert_eq!(rows.iter().filter(|r| r[1] == snr).count(), 2, "{snr}");
    }
    let echoed = PipelineConfig::from_file(dir.path().join("a/config.txt")).unwrap();
    assert_eq!((echoed.n_utts, echoed.corpus_seed, echoed.utt_seconds), (12, 7, 0.5));
}

#[test]
fn mixture_and_clean_evaluation_identities() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(&dir.path().join("c"), 6, 3, 1.0);
    let mix = dir.path().join("mix.csv");
    ok(&["evaluate", "--manifest", s(&m), "--method", "mixture", "--out", s(&mix)]);
    let rows = read_csv(&mix);
    // 6 utterances, 6 per-SNR means, one overall mean.
    assert_eq!(rows.len(), 6 + 6 + 1);
    for r in rows.iter().filter(|r| r[0] != "mean") {
        let (label, measured): (f64, f64) = (r[1].parse().unwrap(), r[3].parse().unwrap());
        assert!((label - measured).abs() < 0.2, "{r:?}");
    }
    assert_eq!(rows.iter().filter(|r| r[0] == "mean").count(), 7);
    assert_eq!(rows.last().unwrap()[1], "all");

    let clean = dir.path().join("clean.csv");
    ok(&["evaluate", "--manifest", s(&m), "--method", "clean", "--out", s(&clean)]);
    for r in read_csv(&clean) {
        assert_eq!(r[3].parse::<f64>().unwrap(), drnmf::signal::PERFECT_SDR_DB, "{r:?}");
    }
}

#[test]
fn train_nmf_is_reproducible_and_descends() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(&dir.path().join("c"), 6, 5, 1.0);
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    let out = ok(&with_small(&["train-nmf", "--manifest", s(&m), "--out", s(&a)]));
    ok(&with_small(&["train-nmf", "--manifest", s(&m), "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let dict = model::load_dictionary(&a).unwrap();
    assert_eq!((dict.n_speech(), dict.n_noise(), dict.n_bins()), (6, 6, 257));
    for stage in ["speech", "noise"] {
        let objs: Vec<f64> = out
            .lines()
            .filter(|l| l.starts_with(stage))
            .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(objs.len(), 4, "{stage}: iterations 0, 10, 20, 30");
        assert!(objs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{stage}: {objs:?}");
    }
    assert!(out.contains("final objective"));
}

#[test]
fn train_drnmf_checks_initialization_and_keeps_the_best() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, dr, out) = trained(dir.path());
    let check = out.lines().find(|l| l.starts_with("initialization check")).unwrap();
    assert!(check.ends_with("PASS"), "{check}");

    let history = read_csv(&dr.with_file_name("dr.bin.history.csv"));
    let epochs = out.lines().filter(|l| l.starts_with("epoch")).count();
    assert_eq!(history.len(), epochs);
    assert!(epochs >= 1 && epochs <= 3);

    let m = ModelFile::read(&dr).unwrap();
    let best: f64 = m.parse("val_loss").unwrap();
    let initial: f64 = check.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(best <= initial, "{best} > {initial}");
    let min_hist = history.iter().map(|r| r[2].parse::<f64>().unwrap()).fold(initial, f64::min);
    assert!((best - min_hist).abs() <= 1e-9 * initial, "{best} vs {min_hist}");
    assert!(dr.with_file_name("dr.bin.config.txt").exists());
}

#[test]
fn separate_streams_on_the_frame_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (val, _, dr, _) = trained(dir.path());
    let input = val.with_file_name("utt0000_mix.wav");
    let x = read_wav(&input).unwrap();

    let same = dir.path().join("identity.wav");
    ok(&["separate", "--model", s(&dr), "--input", s(&input), "--output", s(&same), "--identity-mask", "--chunk", "777"]);
    let y = read_wav(&same).unwrap();
    let grid = 512 + (frame_count(x.len(), 512, 128) - 1) * 128;
    assert_eq!(y.len(), grid);
    // Full overlap from sample 384 on; quantization is the only difference there.
    let interior = (384..grid - 384).map(|i| (x.samples()[i] - y.samples()[i]).abs()).fold(0.0, f64::max);
    assert!(interior <= 1.0 / 32768.0, "{interior}");

    let enhanced = dir.path().join("enhanced.wav");
    ok(&["separate", "--model", s(&dr), "--input", s(&input), "--output", s(&enhanced)]);
    let e = read_wav(&enhanced).unwrap();
    assert_eq!(e.len(), grid);
    assert!(e.samples().iter().zip(x.samples()).any(|(a, b)| (a - b).abs() > 1e-3));
}

#[test]
fn separate_memory_does_not_grow_with_duration() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, dr, _) = trained(dir.path());
    let short = synth(&dir.path().join("short"), 1, 1, 2.0);
    let long = synth(&dir.path().join("long"), 1, 1, 60.0);
    let peak = |manifest: &Path| -> f64 {
        let input = manifest.with_file_name("utt0000_mix.wav");
        let out = ok(&["separate", "--model", s(&dr), "--input", s(&input), "--output", s(&dir.path().join("o.wav")), "--report-memory"]);
        let line = out.lines().find(|l| l.starts_with("peak_rss_kb")).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    let (a, b) = (peak(&short), peak(&long));
    // 58 extra seconds held as f64 would add about 7 MB.
    assert!(b - a < 1024.0, "peak RSS {a} kB at 2 s, {b} kB at 60 s");
}

#[test]
fn evaluate_drnmf_and_snmf_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (val, nmf, dr, _) = trained(dir.path());
    for (method, model) in [("drnmf", &dr), ("snmf", &nmf)] {
        let out = dir.path().join(format!("{method}.csv"));
        ok(&with_small(&["evaluate", "--manifest", s(&val), "--method", method, "--model", s(model), "--out", s(&out)]));
        let rows = read_csv(&out);
        assert_eq!(rows.len(), 13);
        assert!(rows.iter().all(|r| r[2] == method && r[3].parse::<f64>().unwrap().is_finite()));
    }
    assert_eq!(code(&["evaluate", "--manifest", s(&val), "--method", "drnmf", "--out", "x.csv"]), 1);
}

#[test]
fn solve_reports_cold_and_warm() {
    let dir = tempfile::tempdir().unwrap();
    let (val, nmf, _, _) = trained(dir.path());
    let out = ok(&with_small(&["solve", "--manifest", s(&val), "--nmf-model", s(&nmf)]));
    assert_eq!(out.lines().filter(|l| l.starts_with("utt") && l.contains(" cold ") && l.contains(" warm ")).count(), 6);
    assert!(out.contains("warm <= cold on"));
}

#[test]
fn gradcheck_passes_and_the_negative_control_fails() {
    let out = ok(&["gradcheck"]);
    for name in ["W_log_1", "W_log_2", "alpha_log", "h0_log"] {
        assert!(out.lines().any(|l| l.starts_with(name) && l.contains("worst index")), "{name}");
    }
    assert!(out.trim_end().ends_with("PASS"));
    let max: f64 = out.lines().last().unwrap().split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(max < 1e-5);

    let bad = drnmf(&["gradcheck", "--corrupt"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stdout).trim_end().ends_with("FAIL"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["synth", "--out", "x", "--no-such-flag", "1"]), 1);
    assert_eq!(code(&["synth", "--out", "x", "--hop", "many"]), 1);
    assert_eq!(code(&["gradcheck", "--size", "9,6"]), 1);
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "not_a_key = 3\n").unwrap();
    assert_eq!(code(&["synth", "--out", s(&dir.path().join("y")), "--config", s(&cfg)]), 1);
    assert_eq!(code(&["train-nmf", "--manifest", s(&dir.path().join("missing.csv")), "--out", s(&dir.path().join("m.bin"))]), 3);

    // A step size that overflows when realized is a numeric failure.
    let m = synth(&dir.path().join("c"), 1, 1, 1.0);
    let nmf = dir.path().join("nmf.bin");
    ok(&with_small(&["train-nmf", "--manifest", s(&m), "--out", s(&nmf)]));
    let p = PipelineConfig::default().initial_network(&model::load_dictionary(&nmf).unwrap()).unwrap();
    let mut file = model::drnmf_model(&p, &Default::default());
    let slot = file.arrays.iter_mut().find(|a| a.name == "alpha_log_1").unwrap();
    *slot = NamedArray::scalar("alpha_log_1", 800.0);
    let broken = dir.path().join("broken.bin");
    file.write(&broken).unwrap();
    let input = m.with_file_name("utt0000_mix.wav");
    assert_eq!(code(&["separate", "--model", s(&broken), "--input", s(&input), "--output", s(&dir.path().join("o.wav"))]), 2);
}
