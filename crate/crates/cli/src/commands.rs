use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use drnmf::ista::{self, IstaConfig};
use drnmf::model::{self, ModelFile};
use drnmf::network::{self, DrNmfParams, MaskMode, RealizedWeights, StreamingSeparator};
use drnmf::pipeline::{self, PipelineConfig, Utterance};
use drnmf::signal::{self, CorpusConfig, WavStream, WavStreamWriter};
use drnmf::train::{self, GradCheckConfig};
use drnmf::{Error, Result};
use log::info;
use ndarray::{Array1, Array2};

use crate::keys::echo_config;
use crate::{Failure, Method};

const GRADCHECK_TOL: f64 = 1e-5;
const INIT_CHECK_TOL: f64 = 1e-10;

fn load(cfg: &PipelineConfig, manifest: &Path) -> Result<Vec<Utterance>> {
    let m = signal::read_manifest(manifest)?;
    if m.entries.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lists no utterances", manifest.display())));
    }
    pipeline::load_utterances(&m, &cfg.plan()?)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::Io { path: d.into(), source: e }),
        _ => Ok(()),
    }
}

fn provenance(cfg: &PipelineConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    for key in ["frame_size", "hop", "lambda1", "nmf_iters", "nmf_seed"] {
        m.insert(key.to_string(), cfg.get(key).unwrap_or_default());
    }
    m
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> std::result::Result<(), Failure> {
    let corpus = CorpusConfig { n_utts: cfg.n_utts, seed: cfg.corpus_seed, duration_s: cfg.utt_seconds };
    let manifest = signal::synth_corpus(out, &corpus)?;
    echo_config(cfg, out, true)?;
    println!("wrote {} utterances and {}", manifest.entries.len(), out.join("manifest.csv").display());
    Ok(())
}

pub fn train_nmf(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let utts = load(cfg, manifest)?;
    let start = Instant::now();
    let fit = pipeline::train_dictionary(&utts, cfg.n_speech, cfg.n_noise, &cfg.snmf_train())?;
    for (stage, obj) in [("speech", &fit.speech_objectives), ("noise", &fit.noise_objectives)] {
        for (i, v) in obj.iter().enumerate() {
            if i % 10 == 0 || i + 1 == obj.len() {
                println!("{stage} iter {i:4} objective {v:.9e}");
            }
        }
    }
    create_parent(out)?;
    model::save_dictionary(out, &fit.dictionary, &provenance(cfg))?;
    echo_config(cfg, out, false)?;
    println!(
        "final objective {:.9e}; {} x {} dictionary ({} speech + {} noise) in {:.1}s -> {}",
        fit.noise_objectives.last().unwrap(),
        fit.dictionary.n_bins(),
        fit.dictionary.n_atoms(),
        fit.dictionary.n_speech(),
        fit.dictionary.n_noise(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

/// Validation loss of the freshly initialized network against the same
/// quantity computed with the standalone warm-start solver and mask.
fn init_equivalence(p: &DrNmfParams, val: &[train::MagnitudePair]) -> Result<(f64, f64)> {
    let rw = p.realize()?;
    let net = network::mean_loss(&rw, val)?;
    let ista_cfg = IstaConfig { alpha: rw.alpha[0], lambda1: rw.lambda1, n_iters: rw.n_layers(), nonnegative: true };
    let mut total = 0.0;
    for (x, y) in val {
        let h = ista::warm_start_ista(x.view(), rw.w[0].view(), rw.h0.view(), &ista_cfg)?;
        let (yh, vh) = network::partitioned_estimates(rw.w[0].view(), h.view(), rw.n_speech);
        let mask = network::compute_mask(&yh, &vh, rw.eps_mask);
        total += network::signal_approx_loss(y.view(), x.view(), mask.view())?;
    }
    Ok((net, total / val.len() as f64))
}

pub fn train_drnmf(
    cfg: &PipelineConfig,
    manifest: &Path,
    val_manifest: &Path,
    nmf_model: &Path,
    out: &Path,
    history: &Path,
) -> std::result::Result<(), Failure> {
    let dict = model::load_dictionary(nmf_model)?;
    let init = cfg.initial_network(&dict)?;
    let train_set = train::split_sequences(&pipeline::magnitude_pairs(&load(cfg, manifest)?), cfg.max_seq_frames)?;
    let val_set = pipeline::magnitude_pairs(&load(cfg, val_manifest)?);

    let (net, solver) = init_equivalence(&init, &val_set)?;
    let gap = (net - solver).abs();
    let ok = gap <= INIT_CHECK_TOL;
    println!(
        "initialization check: network {net:.12e} warm-start solver {solver:.12e} gap {gap:.3e} {}",
        if ok { "PASS" } else { "FAIL" }
    );
    if !ok {
        return Err(Failure::InitMismatch(gap));
    }

    create_parent(out)?;
    create_parent(history)?;
    let mut extra = provenance(cfg);
    let save = |p: &DrNmfParams, epoch: usize, val: f64, extra: &mut BTreeMap<String, String>| {
        extra.insert("epoch".into(), epoch.to_string());
        extra.insert("val_loss".into(), format!("{val:e}"));
        model::save_drnmf(out, p, extra)
    };
    save(&init, 0, net, &mut extra)?;
    echo_config(cfg, out, false)?;
    let outcome = train::train_loop_with(&init, &train_set, &val_set, &cfg.train(), |rec, p, best| {
        println!(
            "epoch {:4} train {:.6e} val {:.6e} {:.1}s{}",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            rec.seconds,
            if best { " *" } else { "" }
        );
        if best {
            save(p, rec.epoch, rec.val_loss, &mut extra)?;
        }
        Ok(())
    })?;
    train::write_history(history, &outcome.history)?;
    println!(
        "best epoch {} val {:.6e} (initial {:.6e}, {:.1}% lower) after {} epochs -> {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        outcome.initial_val_loss,
        100.0 * (1.0 - outcome.best_val_loss / outcome.initial_val_loss),
        outcome.history.len(),
        out.display()
    );
    Ok(())
}

/// Reads a model of either kind as network weights; a dictionary becomes an
/// untrained network.
fn weights_from_model(cfg: &PipelineConfig, path: &Path) -> Result<(RealizedWeights, &'static str)> {
    let m = ModelFile::read(path)?;
    let fmt = |e: Error| match e {
        Error::Io { .. } | Error::Format { .. } => e,
        other => Error::Format { path: path.into(), message: other.to_string() },
    };
    match m.get("kind").map_err(fmt)? {
        model::KIND_DRNMF => Ok((model::drnmf_from_model(&m).map_err(fmt)?.realize()?, model::KIND_DRNMF)),
        model::KIND_SNMF => {
            let dict = model::dictionary_from_model(&m).map_err(fmt)?;
            Ok((cfg.initial_network(&dict)?.realize()?, model::KIND_SNMF))
        }
        other => Err(Error::Format { path: path.into(), message: format!("unknown model kind `{other}`") }),
    }
}

fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

pub fn separate(
    cfg: &PipelineConfig,
    model_path: &Path,
    input: &Path,
    output: &Path,
    identity: bool,
    chunk: usize,
    report_memory: bool,
) -> std::result::Result<(), Failure> {
    let (weights, kind) = weights_from_model(cfg, model_path)?;
    if kind == model::KIND_SNMF && !identity {
        info!("{} is a dictionary; separating with the untrained network", model_path.display());
    }
    let mode = if identity { MaskMode::Identity } else { MaskMode::Model };
    let mut sep = StreamingSeparator::new(weights, cfg.plan()?, mode)?;
    let mut reader = WavStream::open(input)?;
    create_parent(output)?;
    let mut writer = WavStreamWriter::create(output)?;
    let (mut buf, mut out) = (Vec::with_capacity(chunk), Vec::with_capacity(chunk + cfg.frame_size));
    let (mut n_in, mut n_out) = (0, 0);
    while reader.read_chunk(&mut buf, chunk)? > 0 {
        n_in += buf.len();
        out.clear();
        sep.push(&buf, &mut out)?;
        n_out += out.len();
        writer.write(&out)?;
    }
    out.clear();
    sep.finish(&mut out);
    n_out += out.len();
    writer.write(&out)?;
    let clipped = writer.finish()?;
    println!("{n_in} samples in, {n_out} samples out, {clipped} clipped -> {}", output.display());
    if report_memory {
        match peak_rss_kb() {
            Some(kb) => println!("peak_rss_kb {kb}"),
            None => println!("peak_rss_kb unavailable"),
        }
    }
    Ok(())
}

pub fn evaluate(
    cfg: &PipelineConfig,
    manifest: &Path,
    method: Method,
    model_path: Option<&Path>,
    out: &Path,
) -> std::result::Result<(), Failure> {
    let utts = load(cfg, manifest)?;
    let plan = cfg.plan()?;
    let table = match method {
        Method::Mixture => pipeline::evaluate(&utts, method.name(), |u| Ok(u.mixture.clone()))?,
        Method::Clean => pipeline::evaluate(&utts, method.name(), |u| Ok(u.clean.clone()))?,
        Method::Snmf => {
            let dict = model::load_dictionary(model_path.expect("checked by caller"))?;
            let snmf = cfg.snmf_test();
            pipeline::evaluate(&utts, method.name(), |u| {
                pipeline::separate_snmf(&dict, &u.noisy_spec, &plan, &snmf, cfg.eps_mask)
            })?
        }
        Method::Drnmf => {
            let (weights, _) = weights_from_model(cfg, model_path.expect("checked by caller"))?;
            pipeline::evaluate(&utts, method.name(), |u| pipeline::separate_drnmf(&weights, &u.noisy_spec, &plan))?
        }
    };
    create_parent(out)?;
    table.write_csv(out)?;
    if let Some(dir) = out.parent() {
        let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
        echo_config(cfg, dir, true)?;
    }
    for (snr, mean, n) in table.per_snr() {
        println!("{} snr {snr:+} dB: mean SDR {mean:.3} dB over {n}", table.method);
    }
    println!("{} overall mean SDR {:.3} dB over {} utterances -> {}", table.method, table.mean(), table.rows.len(), out.display());
    Ok(())
}

pub fn solve(cfg: &PipelineConfig, manifest: &Path, nmf_model: &Path) -> std::result::Result<(), Failure> {
    let dict = model::load_dictionary(nmf_model)?;
    let utts = load(cfg, manifest)?;
    let w = dict.w();
    let ista_cfg = IstaConfig { alpha: cfg.alpha.resolve(w), lambda1: cfg.lambda1, n_iters: cfg.layers, nonnegative: true };
    let h0 = Array1::from_elem(dict.n_atoms(), cfg.h0_init);
    let (mut warm_wins, mut warm_total, mut cold_total) = (0, 0.0, 0.0);
    for u in &utts {
        let x: &Array2<f64> = &u.noisy_spec.magnitude;
        let t0 = Instant::now();
        let cold = ista::cold_start_ista(x.view(), w.view(), h0.view(), &ista_cfg)?;
        let t_cold = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let warm = ista::warm_start_ista(x.view(), w.view(), h0.view(), &ista_cfg)?;
        let t_warm = t0.elapsed().as_secs_f64();
        let oc = ista::sequence_objective(x.view(), w.view(), cold.view(), cfg.lambda1);
        let ow = ista::sequence_objective(x.view(), w.view(), warm.view(), cfg.lambda1);
        warm_wins += (ow <= oc) as usize;
        warm_total += ow;
        cold_total += oc;
        println!("{} cold {oc:.6e} ({t_cold:.3}s) warm {ow:.6e} ({t_warm:.3}s)", u.id);
    }
    println!(
        "K={} alpha={:.4}: warm <= cold on {warm_wins}/{} utterances; summed objective cold {cold_total:.6e} warm {warm_total:.6e}",
        cfg.layers,
        ista_cfg.alpha,
        utts.len()
    );
    Ok(())
}

pub fn gradcheck(cfg: &PipelineConfig, (f, n, k, t): (usize, usize, usize, usize), corrupt: bool) -> std::result::Result<(), Failure> {
    let (p, x, y) = train::synthetic_problem(cfg.gradcheck_seed, f, n, k, t)?;
    let gc = GradCheckConfig { coords_per_tensor: cfg.gradcheck_coords, step: cfg.gradcheck_step, seed: cfg.gradcheck_seed, corrupt };
    let report = train::gradient_check(&p, x.view(), y.view(), &gc)?;
    println!("model F={f} N={n} K={k} T={t}, step {:e}{}", gc.step, if corrupt { ", corrupted backward" } else { "" });
    for c in &report.tensors {
        println!(
            "{:<10} probed {:4} worst index {:4} analytic {:+.9e} numeric {:+.9e} rel {:.3e}",
            c.name, c.probed, c.worst_index, c.analytic, c.numeric, c.rel_error
        );
    }
    let ok = report.passed(GRADCHECK_TOL);
    println!("max relative error {:.3e} (tolerance {GRADCHECK_TOL:e}) {}", report.max_rel_error, if ok { "PASS" } else { "FAIL" });
    if ok {
        Ok(())
    } else {
        Err(Failure::GradcheckFailed)
    }
}
