//! One function per subcommand. Each resolves its config (defaults,
//! file, flags), does the work, writes artifacts plus `config.lock`
//! under the run directory, and prints a short summary (JSON with
//! `--json`). Seeded commands always print the seed they ran with.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use tapkit::corpus::{split_manifest, synth_corpus, MixtureManifest, SynthSpec};
use tapkit::enhancer::{
    enhance, load_enhancer, save_enhancer, tap_loss, tap_loss_grad, train_enhancer, BaseLoss,
    JointLossConfig, TapTarget, write_enhancer_history_csv,
};
use tapkit::estimator::{
    load_estimator, save_estimator, train_estimator, write_history_csv, EstimatorModel,
    TrainConfig,
};
use tapkit::features::{extract_taps, save_csv, TapStats};
use tapkit::metrics::{
    acoustic_mae, assemble_report, improvement_csv, improvement_table, read_records_jsonl,
    stoi, write_records_jsonl, EvalRecord,
};
use tapkit::neural::{central_diff_check, mae_loss, ParamStore, SequenceModel};
use tapkit::signal::{load_wav, save_wav, Waveform};
use tapkit::{siggen, Mat};

use crate::cli::{
    EnhanceArgs, EvalArgs, ExtractArgs, GradcheckArgs, ReportArgs, SynthArgs, TrainEnhancerArgs,
    TrainTapArgs,
};
use crate::config::{pick, write_lock, FileConfig, ResolvedTrain};

pub const CORPUS_ROOT_ENV: &str = "TAPKIT_CORPUS_ROOT";

/// Print a human summary or one JSON object, never both.
fn emit(json_mode: bool, human: &[String], payload: serde_json::Value) {
    if json_mode {
        println!("{payload}");
    } else {
        for line in human {
            println!("{line}");
        }
    }
}

/// Load a manifest, honoring the corpus-root override env var.
fn load_manifest(path: &Path) -> Result<(MixtureManifest, Option<String>)> {
    let mut m = MixtureManifest::load(path)
        .with_context(|| format!("loading manifest {}", path.display()))?;
    let over = std::env::var(CORPUS_ROOT_ENV).ok();
    if let Some(root) = &over {
        m.corpus_root = PathBuf::from(root);
    }
    Ok((m, over))
}

fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")
}

fn entries_for_split<'m>(
    m: &'m MixtureManifest,
    split: &str,
) -> Result<Vec<&'m tapkit::corpus::ManifestEntry>> {
    let picked: Vec<_> = match split {
        "all" => m.entries.iter().collect(),
        s => m.entries.iter().filter(|e| e.split == s).collect(),
    };
    if picked.is_empty() {
        bail!("manifest has no '{split}' entries");
    }
    Ok(picked)
}

pub fn run_synth(args: &SynthArgs, file: &FileConfig, json_mode: bool) -> Result<()> {
    let sec = file.synth.clone().unwrap_or_default();
    let spec = SynthSpec {
        count: pick(args.count, sec.count, 40),
        duration_s: pick(args.duration_s, sec.duration_s, 4.0),
        snr_range_db: (
            pick(args.snr_lo, sec.snr_lo_db, 0.0),
            pick(args.snr_hi, sec.snr_hi_db, 20.0),
        ),
        seed: pick(args.seed, sec.seed, 0),
        channel: args.channel.clone().or(sec.channel),
    };
    let test_fraction = pick(args.test_fraction, sec.test_fraction, 0.2);

    let manifest = synth_corpus(&args.clean_dir, &args.noise_dir, &args.out, &spec)?;
    let manifest = split_manifest(&manifest, test_fraction, spec.seed)?;
    let manifest_path = args.out.join("manifest.jsonl");
    manifest.save(&manifest_path)?;

    #[derive(serde::Serialize)]
    struct Lock<'a> {
        command: &'a str,
        count: usize,
        duration_s: f64,
        snr_lo_db: f64,
        snr_hi_db: f64,
        seed: u64,
        channel: Option<&'a String>,
        test_fraction: f64,
    }
    write_lock(
        &args.out,
        &Lock {
            command: "synth",
            count: spec.count,
            duration_s: spec.duration_s,
            snr_lo_db: spec.snr_range_db.0,
            snr_hi_db: spec.snr_range_db.1,
            seed: spec.seed,
            channel: spec.channel.as_ref(),
            test_fraction,
        },
    )?;

    let n_test = manifest.entries.iter().filter(|e| e.split == "test").count();
    emit(
        json_mode,
        &[
            format!("seed: {}", spec.seed),
            format!("manifest: {}", manifest_path.display()),
            format!(
                "entries: {} ({} train, {n_test} test)",
                manifest.entries.len(),
                manifest.entries.len() - n_test
            ),
        ],
        json!({
            "seed": spec.seed,
            "manifest": manifest_path,
            "entries": manifest.entries.len(),
            "test_entries": n_test,
        }),
    );
    Ok(())
}

pub fn run_extract(args: &ExtractArgs, jobs: usize, json_mode: bool) -> Result<()> {
    let (manifest, over) = load_manifest(&args.manifest)?;
    let entries = entries_for_split(&manifest, &args.split)?;
    let taps_dir = args.out.join("taps");
    std::fs::create_dir_all(&taps_dir)?;

    let which = args.which.as_str();
    if which != "clean" && which != "noisy" {
        bail!("--which must be 'clean' or 'noisy', got '{which}'");
    }
    let pool = worker_pool(jobs)?;
    // Ordered collect keeps results in manifest order regardless of jobs.
    let mats: Vec<Mat> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let path = if which == "clean" {
                    manifest.clean_path(e)
                } else {
                    manifest.noisy_path(e)
                };
                let w = load_wav(&path)
                    .with_context(|| format!("loading {}", path.display()))?;
                extract_taps(&w).with_context(|| format!("extracting {}", e.id))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (e, m) in entries.iter().zip(mats.iter()) {
        save_csv(m, &taps_dir.join(format!("{}.csv", e.id)))?;
    }
    let stats = TapStats::compute(&mats)?;
    let stats_json = serde_json::to_string_pretty(&stats)?;
    std::fs::write(args.out.join("stats.json"), stats_json)?;

    #[derive(serde::Serialize)]
    struct Lock<'a> {
        command: &'a str,
        manifest: &'a Path,
        split: &'a str,
        which: &'a str,
    }
    write_lock(
        &args.out,
        &Lock {
            command: "extract",
            manifest: &args.manifest,
            split: &args.split,
            which,
        },
    )?;

    let mut human = vec![
        format!("clips: {}", entries.len()),
        format!("taps: {}", taps_dir.display()),
        format!("stats: {}", args.out.join("stats.json").display()),
    ];
    if let Some(root) = &over {
        human.insert(0, format!("corpus root override: {root}"));
    }
    emit(
        json_mode,
        &human,
        json!({
            "clips": entries.len(),
            "taps_dir": taps_dir,
            "stats": args.out.join("stats.json"),
            "corpus_root_override": over,
        }),
    );
    Ok(())
}

/// Training flags shared by both train subcommands.
struct TrainFlags {
    hidden: Option<usize>,
    layers: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    bptt_chunk: Option<usize>,
    seed: Option<u64>,
    val_fraction: Option<f64>,
}

fn resolve_train(flags: &TrainFlags, sec: &crate::config::TrainSection) -> ResolvedTrain {
    let d = TrainConfig::default();
    ResolvedTrain {
        hidden: pick(flags.hidden, sec.hidden, 32),
        layers: pick(flags.layers, sec.layers, 1),
        lr: pick(flags.lr, sec.lr, d.lr),
        epochs: pick(flags.epochs, sec.epochs, d.epochs),
        batch: pick(flags.batch, sec.batch, d.batch),
        bptt_chunk: pick(flags.bptt_chunk, sec.bptt_chunk, d.bptt_chunk),
        seed: pick(flags.seed, sec.seed, d.seed),
        val_fraction: pick(flags.val_fraction, sec.val_fraction, d.val_fraction),
    }
}

fn train_config_of(r: &ResolvedTrain) -> TrainConfig {
    TrainConfig {
        lr: r.lr,
        epochs: r.epochs,
        batch: r.batch,
        bptt_chunk: r.bptt_chunk,
        seed: r.seed,
        val_fraction: r.val_fraction,
    }
}

pub fn run_train_tap(args: &TrainTapArgs, file: &FileConfig, json_mode: bool) -> Result<()> {
    let sec = file.train_tap.clone().unwrap_or_default();
    let flags = TrainFlags {
        hidden: args.hidden,
        layers: args.layers,
        lr: args.lr,
        epochs: args.epochs,
        batch: args.batch,
        bptt_chunk: args.bptt_chunk,
        seed: args.seed,
        val_fraction: args.val_fraction,
    };
    let r = resolve_train(&flags, &sec);
    let (manifest, over) = load_manifest(&args.manifest)?;
    let entries = entries_for_split(&manifest, "train")?;
    let clips: Vec<Waveform> = entries
        .iter()
        .map(|e| load_wav(manifest.clean_path(e)))
        .collect::<tapkit::Result<_>>()?;

    let tcfg = train_config_of(&r);
    let (model, history) = train_estimator(&clips, r.hidden, r.layers, &tcfg)?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join("estimator.ckpt");
    save_estimator(&ckpt, &model)?;
    write_history_csv(&args.out.join("history.csv"), &history)?;

    #[derive(serde::Serialize)]
    struct Lock<'a> {
        command: &'a str,
        manifest: &'a Path,
        #[serde(flatten)]
        train: &'a ResolvedTrain,
    }
    write_lock(&args.out, &Lock { command: "train-tap", manifest: &args.manifest, train: &r })?;

    let first = history.first().ok_or_else(|| anyhow!("empty training history"))?;
    let last = history.last().unwrap();
    let best_val = history.iter().map(|h| h.val_mae).fold(f64::INFINITY, f64::min);
    let mut human = vec![
        format!("seed: {}", r.seed),
        format!("clips: {}", clips.len()),
        format!("checkpoint: {}", ckpt.display()),
        format!("train mae: {:.6} -> {:.6}", first.train_mae, last.train_mae),
        format!("best val mae: {best_val:.6}"),
    ];
    if let Some(root) = &over {
        human.insert(0, format!("corpus root override: {root}"));
    }
    emit(
        json_mode,
        &human,
        json!({
            "seed": r.seed,
            "clips": clips.len(),
            "checkpoint": ckpt,
            "initial_train_mae": first.train_mae,
            "final_train_mae": last.train_mae,
            "best_val_mae": best_val,
        }),
    );
    Ok(())
}

/// Checkpoint hyperparameters win over configured ones; say so when they
/// disagree instead of silently ignoring the config.
fn warn_hyper_mismatch(what: &str, ckpt_hidden: usize, ckpt_layers: usize, sec_hidden: Option<usize>, sec_layers: Option<usize>) {
    if let Some(h) = sec_hidden {
        if h != ckpt_hidden {
            eprintln!(
                "warning: {what} checkpoint has hidden={ckpt_hidden}, config says {h}; using the checkpoint"
            );
        }
    }
    if let Some(l) = sec_layers {
        if l != ckpt_layers {
            eprintln!(
                "warning: {what} checkpoint has layers={ckpt_layers}, config says {l}; using the checkpoint"
            );
        }
    }
}

pub fn run_train_enhancer(
    args: &TrainEnhancerArgs,
    file: &FileConfig,
    json_mode: bool,
) -> Result<()> {
    let sec = file.train_enhancer.clone().unwrap_or_default();
    let flags = TrainFlags {
        hidden: args.hidden,
        layers: args.layers,
        lr: args.lr,
        epochs: args.epochs,
        batch: args.batch,
        bptt_chunk: args.bptt_chunk,
        seed: args.seed,
        val_fraction: args.val_fraction,
    };
    let r = resolve_train(&flags, &sec.train());
    let lambda_tap = pick(args.lambda_tap, sec.lambda_tap, 1.0);
    let base_loss: BaseLoss = pick(
        args.base_loss.clone(),
        sec.base_loss,
        "l1_waveform".to_string(),
    )
    .parse()?;
    let tap_target: TapTarget = pick(
        args.tap_target.clone(),
        sec.tap_target,
        "estimator_on_clean".to_string(),
    )
    .parse()?;

    let est = load_estimator(&args.estimator)
        .with_context(|| format!("loading estimator {}", args.estimator.display()))?;
    let tap_sec = file.train_tap.clone().unwrap_or_default();
    warn_hyper_mismatch("estimator", est.hidden, est.n_layers, tap_sec.hidden, tap_sec.layers);

    let (manifest, over) = load_manifest(&args.manifest)?;
    let entries = entries_for_split(&manifest, "train")?;
    let pairs: Vec<(Waveform, Waveform)> = entries
        .iter()
        .map(|e| {
            Ok((
                load_wav(manifest.noisy_path(e))?,
                load_wav(manifest.clean_path(e))?,
            ))
        })
        .collect::<tapkit::Result<_>>()?;

    let jcfg = JointLossConfig { base_loss, lambda_tap, tap_target };
    let tcfg = train_config_of(&r);
    let (model, history) = train_enhancer(&pairs, r.hidden, r.layers, &jcfg, &tcfg, &est)?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join("enhancer.ckpt");
    save_enhancer(&ckpt, &model)?;
    write_enhancer_history_csv(&args.out.join("history.csv"), &history)?;

    #[derive(serde::Serialize)]
    struct Lock<'a> {
        command: &'a str,
        manifest: &'a Path,
        estimator: &'a Path,
        #[serde(flatten)]
        train: &'a ResolvedTrain,
        lambda_tap: f64,
        base_loss: &'a BaseLoss,
        tap_target: &'a TapTarget,
    }
    write_lock(
        &args.out,
        &Lock {
            command: "train-enhancer",
            manifest: &args.manifest,
            estimator: &args.estimator,
            train: &r,
            lambda_tap,
            base_loss: &base_loss,
            tap_target: &tap_target,
        },
    )?;

    let val_rows: Vec<_> = history.iter().filter(|h| h.split == "val").collect();
    let first_val = val_rows.first().ok_or_else(|| anyhow!("empty training history"))?;
    let best_val = val_rows.iter().map(|h| h.l_total).fold(f64::INFINITY, f64::min);
    let mut human = vec![
        format!("seed: {}", r.seed),
        format!("pairs: {}", pairs.len()),
        format!("lambda_tap: {lambda_tap}"),
        format!("checkpoint: {}", ckpt.display()),
        format!("val loss: {:.6} -> best {best_val:.6}", first_val.l_total),
    ];
    if let Some(root) = &over {
        human.insert(0, format!("corpus root override: {root}"));
    }
    emit(
        json_mode,
        &human,
        json!({
            "seed": r.seed,
            "pairs": pairs.len(),
            "lambda_tap": lambda_tap,
            "checkpoint": ckpt,
            "initial_val_total": first_val.l_total,
            "best_val_total": best_val,
        }),
    );
    Ok(())
}

pub fn run_enhance(args: &EnhanceArgs, file: &FileConfig, jobs: usize, json_mode: bool) -> Result<()> {
    let model = load_enhancer(&args.enhancer)
        .with_context(|| format!("loading enhancer {}", args.enhancer.display()))?;
    let enh_sec = file.train_enhancer.clone().unwrap_or_default();
    warn_hyper_mismatch("enhancer", model.hidden, model.n_layers, enh_sec.hidden, enh_sec.layers);

    let out_dir = args.out.join("enhanced");
    std::fs::create_dir_all(&out_dir)?;

    let (written, over) = match (&args.input, &args.manifest) {
        (Some(input), None) => {
            let w = load_wav(input)?;
            let y = enhance(&w, &model)?;
            let name = input
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("clip");
            let path = out_dir.join(format!("{name}.wav"));
            save_wav(&y, &path)?;
            (vec![path], None)
        }
        (None, Some(mpath)) => {
            let (manifest, over) = load_manifest(mpath)?;
            let entries = entries_for_split(&manifest, &args.split)?;
            let pool = worker_pool(jobs)?;
            let outs: Vec<Waveform> = pool.install(|| {
                entries
                    .par_iter()
                    .map(|e| {
                        let w = load_wav(manifest.noisy_path(e))?;
                        enhance(&w, &model)
                    })
                    .collect::<tapkit::Result<Vec<_>>>()
            })?;
            let mut written = Vec::with_capacity(outs.len());
            for (e, y) in entries.iter().zip(outs.iter()) {
                let path = out_dir.join(format!("{}.wav", e.id));
                save_wav(y, &path)?;
                written.push(path);
            }
            (written, over)
        }
        _ => bail!("pass exactly one of --input or --manifest"),
    };

    #[derive(serde::Serialize)]
    struct Lock<'a> {
        command: &'a str,
        enhancer: &'a Path,
        split: &'a str,
    }
    write_lock(
        &args.out,
        &Lock { command: "enhance", enhancer: &args.enhancer, split: &args.split },
    )?;

    let mut human = vec![
        format!("enhanced clips: {}", written.len()),
        format!("out: {}", out_dir.display()),
    ];
    if let Some(root) = &over {
        human.insert(0, format!("corpus root override: {root}"));
    }
    emit(
        json_mode,
        &human,
        json!({ "enhanced": written.len(), "out_dir": out_dir, "corpus_root_override": over }),
    );
    Ok(())
}

/// Optional clip-id to PESQ map: CSV lines `clip_id,score`.
fn load_pesq_csv(path: &Path) -> Result<std::collections::BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading PESQ scores {}", path.display()))?;
    let mut map = std::collections::BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (ln == 0 && line.starts_with("clip_id")) {
            continue;
        }
        let (id, score) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("line {} of {}: expected clip_id,score", ln + 1, path.display()))?;
        map.insert(id.trim().to_string(), score.trim().parse::<f64>()?);
    }
    Ok(map)
}

pub fn run_eval(args: &EvalArgs, file: &FileConfig, jobs: usize, json_mode: bool) -> Result<()> {
    let sec = file.eval.clone().unwrap_or_default();
    let platform = pick(args.platform.clone(), sec.platform, "Synthetic".to_string());
    let receiver = pick(args.receiver.clone(), sec.receiver, "Direct".to_string());
    let denoise_mode = pick(args.denoise_mode.clone(), sec.denoise_mode, "low".to_string());
    let system = pick(args.system.clone(), sec.system, "source".to_string());

    if system != "source" && args.enhanced_dir.is_none() {
        bail!("--enhanced-dir is required when --system is not 'source'");
    }

    let est = load_estimator(&args.estimator)
        .with_context(|| format!("loading estimator {}", args.estimator.display()))?;
    let tap_sec = file.train_tap.clone().unwrap_or_default();
    warn_hyper_mismatch("estimator", est.hidden, est.n_layers, tap_sec.hidden, tap_sec.layers);

    let pesq = match &args.pesq_csv {
        Some(p) => load_pesq_csv(p)?,
        None => Default::default(),
    };

    let (manifest, over) = load_manifest(&args.manifest)?;
    let entries = entries_for_split(&manifest, &args.split)?;
    let pool = worker_pool(jobs)?;
    let stats = &est.stats;
    let records: Vec<EvalRecord> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let clean = load_wav(manifest.clean_path(e))?;
                let processed = if system == "source" {
                    load_wav(manifest.noisy_path(e))?
                } else {
                    let dir = args.enhanced_dir.as_ref().unwrap();
                    load_wav(dir.join(format!("{}.wav", e.id))).map_err(|err| {
                        anyhow!("no enhanced output for '{}': {err}", e.id)
                    })?
                };
                let score = stoi(&clean, &processed)?;
                let a_ref = extract_taps(&clean)?;
                let a_sys = extract_taps(&processed)?;
                let mae = acoustic_mae(&a_ref, &a_sys, stats)?;
                Ok(EvalRecord {
                    clip_id: e.id.clone(),
                    platform: platform.clone(),
                    receiver: receiver.clone(),
                    denoise_mode: denoise_mode.clone(),
                    system: system.clone(),
                    stoi: score,
                    pesq_external: pesq.get(&e.id).copied(),
                    mae,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    std::fs::create_dir_all(&args.out)?;
    let records_path = args.out.join("eval.jsonl");
    write_records_jsonl(&records_path, &records)?;

    #[derive(serde::Serialize)]
    struct Lock<'a> {
        command: &'a str,
        manifest: &'a Path,
        estimator: &'a Path,
        split: &'a str,
        platform: &'a str,
        receiver: &'a str,
        denoise_mode: &'a str,
        system: &'a str,
    }
    write_lock(
        &args.out,
        &Lock {
            command: "eval",
            manifest: &args.manifest,
            estimator: &args.estimator,
            split: &args.split,
            platform: &platform,
            receiver: &receiver,
            denoise_mode: &denoise_mode,
            system: &system,
        },
    )?;

    let mean_stoi = records.iter().map(|r| r.stoi).sum::<f64>() / records.len() as f64;
    let mean_mae = records
        .iter()
        .map(|r| r.mae.iter().sum::<f64>() / r.mae.len() as f64)
        .sum::<f64>()
        / records.len() as f64;
    let mut human = vec![
        format!("system: {system}"),
        format!("clips: {}", records.len()),
        format!("mean stoi: {mean_stoi:.4}"),
        format!("mean tap mae: {mean_mae:.4}"),
        format!("records: {}", records_path.display()),
    ];
    if let Some(root) = &over {
        human.insert(0, format!("corpus root override: {root}"));
    }
    emit(
        json_mode,
        &human,
        json!({
            "system": system,
            "clips": records.len(),
            "mean_stoi": mean_stoi,
            "mean_tap_mae": mean_mae,
            "records": records_path,
        }),
    );
    Ok(())
}

/// Mean per-parameter MAE across all records of one system.
fn mean_mae_of(records: &[EvalRecord], system: &str) -> Option<Vec<f64>> {
    let rows: Vec<&EvalRecord> = records.iter().filter(|r| r.system == system).collect();
    if rows.is_empty() {
        return None;
    }
    let p = rows[0].mae.len();
    let mut mean = vec![0.0; p];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.mae.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= rows.len() as f64;
    }
    Some(mean)
}

pub fn run_report(args: &ReportArgs, json_mode: bool) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.records {
        records.extend(read_records_jsonl(path)?);
    }
    let doc = assemble_report(&records)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.txt"), &doc.text)?;
    std::fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&doc.json)?,
    )?;

    // Improvement table when a baseline and a comparison system exist.
    let systems: Vec<String> = doc.json["systems"]
        .as_array()
        .unwrap_or(&Vec::new())
        .iter()
        .filter_map(|v| v.as_str().map(String::from))
        .collect();
    let baseline = args.baseline.clone();
    let target = match &args.system {
        Some(s) => Some(s.clone()),
        None => {
            let others: Vec<&String> = systems.iter().filter(|s| **s != baseline).collect();
            if others.len() == 1 { Some(others[0].clone()) } else { None }
        }
    };
    let mut improvement_path = None;
    if let Some(target) = &target {
        if let (Some(base), Some(sys)) =
            (mean_mae_of(&records, &baseline), mean_mae_of(&records, target))
        {
            let rows = improvement_table(&base, &sys)?;
            let path = args.out.join("improvement.csv");
            std::fs::write(&path, improvement_csv(&rows))?;
            improvement_path = Some(path);
        }
    }

    #[derive(serde::Serialize)]
    struct Lock<'a> {
        command: &'a str,
        records: &'a [PathBuf],
        baseline: &'a str,
        system: Option<&'a String>,
    }
    write_lock(
        &args.out,
        &Lock {
            command: "report",
            records: &args.records,
            baseline: &baseline,
            system: target.as_ref(),
        },
    )?;

    if json_mode {
        println!(
            "{}",
            json!({
                "records": records.len(),
                "report": args.out.join("report.txt"),
                "improvement": improvement_path,
                "table": doc.json,
            })
        );
    } else {
        print!("{}", doc.text);
        if let Some(p) = &improvement_path {
            println!("improvement table: {}", p.display());
        }
    }
    Ok(())
}

struct ScopeResult {
    scope: &'static str,
    max_rel_err: f64,
    tol: f64,
}

/// Quadratic loss of the network output; smooth everywhere, so central
/// differences are reliable.
fn half_sum_squares(net: &SequenceModel, store: &ParamStore, x: &Mat) -> tapkit::Result<f64> {
    let (pred, _, _) = net.forward(store, x, None)?;
    Ok(pred.data().iter().map(|v| 0.5 * v * v).sum())
}

fn check_net(layers: usize, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let net = SequenceModel::new(&mut params, 5, 6, layers, 4, &mut rng)?;
    let x = {
        use rand::Rng;
        Mat::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0))
    };
    let (pred, _, cache) = net.forward(&params, &x, None)?;
    let mut grads = params.zeros_like();
    net.backward(&params, &cache, &pred, None, &mut grads)?;
    let report = central_diff_check(&mut params, &grads, |p| half_sum_squares(&net, p, &x), 1e-5)?;
    Ok(report.max_rel_err)
}

fn check_mae(seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let net = SequenceModel::new(&mut params, 5, 6, 1, 4, &mut rng)?;
    let x = {
        use rand::Rng;
        Mat::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0))
    };
    // Offset target keeps every |pred - target| far from the kink.
    let (pred0, _, _) = net.forward(&params, &x, None)?;
    let target = Mat::from_fn(pred0.rows, pred0.cols, |r, c| pred0.at(r, c) + 0.5);
    let (pred, _, cache) = net.forward(&params, &x, None)?;
    let (_, grad_out) = mae_loss(&pred, &target)?;
    let mut grads = params.zeros_like();
    net.backward(&params, &cache, &grad_out, None, &mut grads)?;
    let report = central_diff_check(
        &mut params,
        &grads,
        |p| {
            let (pred, _, _) = net.forward(p, &x, None)?;
            Ok(mae_loss(&pred, &target)?.0)
        },
        1e-5,
    )?;
    Ok(report.max_rel_err)
}

/// Full chain: waveform to STFT features to estimator to MAE, checked
/// against finite differences on sampled waveform coordinates.
fn check_chain(seed: u64) -> Result<f64> {
    let clean = siggen::speechlike(0.4, seed);
    let enh = siggen::speechlike(0.4, seed + 1);
    let taps = vec![extract_taps(&clean)?, extract_taps(&enh)?];
    let stats = TapStats::compute(&taps)?;
    let est = EstimatorModel::new(4, 1, stats, seed)?;
    let a_clean = est.predict(&clean)?;
    let (_, grad) = tap_loss_grad(&enh, &a_clean, &est)?;

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let stride = enh.len() / 8;
    for k in (0..enh.len()).step_by(stride.max(1)).take(8) {
        let mut plus = enh.clone();
        plus.samples[k] += h;
        let mut minus = enh.clone();
        minus.samples[k] -= h;
        let fd = (tap_loss(&plus, &a_clean, &est)? - tap_loss(&minus, &a_clean, &est)?) / (2.0 * h);
        let denom = f64::max(1e-8, grad[k].abs() + fd.abs());
        worst = worst.max((grad[k] - fd).abs() / denom);
    }
    Ok(worst)
}

pub fn run_gradcheck(args: &GradcheckArgs, json_mode: bool) -> Result<()> {
    let scope = args.scope.as_str();
    let known = ["all", "dense", "gru", "mae", "chain"];
    if !known.contains(&scope) {
        bail!("--scope must be one of {known:?}, got '{scope}'");
    }
    let mut results: Vec<ScopeResult> = Vec::new();
    if scope == "all" || scope == "dense" {
        results.push(ScopeResult { scope: "dense", max_rel_err: check_net(0, args.seed)?, tol: 1e-4 });
    }
    if scope == "all" || scope == "gru" {
        results.push(ScopeResult { scope: "gru", max_rel_err: check_net(1, args.seed)?, tol: 1e-4 });
    }
    if scope == "all" || scope == "mae" {
        results.push(ScopeResult { scope: "mae", max_rel_err: check_mae(args.seed)?, tol: 1e-4 });
    }
    if scope == "all" || scope == "chain" {
        results.push(ScopeResult { scope: "chain", max_rel_err: check_chain(args.seed)?, tol: 1e-3 });
    }

    let mut human = vec![format!("seed: {}", args.seed)];
    let mut all_ok = true;
    let mut payload = serde_json::Map::new();
    payload.insert("seed".into(), json!(args.seed));
    let mut scopes = serde_json::Map::new();
    for r in &results {
        let ok = r.max_rel_err < r.tol;
        all_ok &= ok;
        human.push(format!(
            "{}: max rel err {:.3e} (tol {:.0e}) {}",
            r.scope,
            r.max_rel_err,
            r.tol,
            if ok { "ok" } else { "FAIL" }
        ));
        scopes.insert(
            r.scope.to_string(),
            json!({ "max_rel_err": r.max_rel_err, "tol": r.tol, "ok": ok }),
        );
    }
    payload.insert("scopes".into(), serde_json::Value::Object(scopes));
    payload.insert("ok".into(), json!(all_ok));
    emit(json_mode, &human, serde_json::Value::Object(payload));
    if !all_ok {
        bail!("gradient check failed");
    }
    Ok(())
}
