//! The eight experiment commands. Each one is a plain function of an
//! [`ExperimentConfig`] that reads and writes files under the workdir, so
//! the CLI stays a thin argument-parsing shell.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, SPLITS};
use crate::corpus::container::{
    load_checkpoint, save_checkpoint, save_features, Checkpoint, TrainSummary,
};
use crate::corpus::synth::synth_corpus;
use crate::corpus::{load_utterances, wav, Manifest, Utterance};
use crate::data::{evaluate_utterances, frameset, frameset_with_labels, stack_for_net};
use crate::entropy::EntropyParams;
use crate::error::{Error, Result};
use crate::features::gfb_extract;
use crate::ioutil;
use crate::net::{
    adapt_finetune, forward_with_taps, init_network, train, ActivationTrace, NetworkSpec,
    Parameters, TrainingLog,
};
use crate::report::{build_report, read_metrics_csv, ReportInputs};
use crate::selection::{
    pseudo_label, rank_select, read_selection_list, run_loop, score_utterances,
    write_selection_list, LoopData, ScoreTable,
};

pub const TRAIN_LOG_HEADER: &str = "epoch,lr,train_ce,cv_frame_error";

pub fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for rec in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            rec.epoch, rec.lr, rec.train_ce, rec.cv_frame_error
        ));
    }
    ioutil::write_string(path, &out)
}

fn load_split(cfg: &ExperimentConfig, split: &str) -> Result<Vec<Utterance>> {
    let manifest = Manifest::load(&cfg.manifest_path(split))?;
    load_utterances(&manifest, &cfg.gfb)
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    log::info!(
        "loaded {} ({}, {} epochs, cv_frame_error {:.4})",
        path.display(),
        ckpt.summary.stage,
        ckpt.summary.epochs,
        ckpt.summary.cv_frame_error
    );
    Ok(ckpt)
}

fn best_cv(log: &TrainingLog) -> f64 {
    log.iter()
        .map(|e| e.cv_frame_error)
        .fold(f64::INFINITY, f64::min)
}

/// Generates the synthetic corpus splits under `<workdir>/corpus`.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let out = synth_corpus(&cfg.synth, &cfg.gfb, &cfg.corpus_dir())?;
    log::info!(
        "wrote 5 manifests under {}: {} train, {} cv, {} eval_matched, {} pool, {} eval_mismatched",
        cfg.corpus_dir().display(),
        cfg.synth.train_utts,
        cfg.synth.cv_utts,
        cfg.synth.eval_matched_utts,
        cfg.synth.pool_utts,
        cfg.synth.eval_mismatched_utts
    );
    let _ = out;
    Ok(())
}

/// Extracts features for every manifest entry that still points at audio,
/// caches them as feature containers, and rewrites the manifests in place
/// to reference the cache.
pub fn cmd_extract(cfg: &ExperimentConfig) -> Result<()> {
    let feature_dir = cfg.corpus_dir().join("features");
    ioutil::create_dir_all(&feature_dir)?;
    for split in SPLITS {
        let path = cfg.manifest_path(split);
        let manifest = Manifest::load(&path)?;
        let mut entries = manifest.entries.clone();
        let done: usize = entries
            .par_iter_mut()
            .map(|entry| -> Result<usize> {
                if entry.feature_path.is_some() {
                    return Ok(0);
                }
                let rel = entry.audio_path.as_ref().expect("manifest validation");
                let mut audio = wav::read_wav(&manifest.resolve(rel))?;
                audio.utterance_id = entry.utterance_id.clone();
                let features = gfb_extract(&audio, &cfg.gfb)?;
                save_features(
                    &feature_dir.join(format!("{}.feat", entry.utterance_id)),
                    &features,
                )?;
                entry.feature_path = Some(format!("features/{}.feat", entry.utterance_id));
                Ok(1)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Manifest::save(&path, &entries)?;
        log::info!("{split}: extracted {done} of {} utterances", entries.len());
    }
    Ok(())
}

/// Trains the initial model on the clean train/cv splits and writes the
/// checkpoint plus a per-epoch log.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let train_utts = load_split(cfg, "train")?;
    let cv_utts = load_split(cfg, "cv")?;
    let train_refs: Vec<&Utterance> = train_utts.iter().collect();
    let cv_refs: Vec<&Utterance> = cv_utts.iter().collect();
    let train_set = frameset(&train_refs, &cfg.net)?;
    let cv_set = frameset(&cv_refs, &cfg.net)?;
    log::info!(
        "training on {} frames, validating on {}",
        train_set.len(),
        cv_set.len()
    );
    let init = init_network::<f32>(&cfg.net, cfg.train.seed)?;
    let (params, train_log) = train(&cfg.net, &init, &train_set, &cv_set, &cfg.train)?;
    write_training_log(&cfg.workpath(&cfg.paths.train_log), &train_log)?;
    save_checkpoint(
        &cfg.workpath(&cfg.paths.model),
        &Checkpoint {
            spec: cfg.net.clone(),
            params,
            summary: TrainSummary {
                stage: "trained".into(),
                epochs: train_log.len() as u32,
                cv_frame_error: best_cv(&train_log),
            },
        },
    )?;
    log::info!(
        "wrote {} (best cv frame error {:.4} over {} epochs)",
        cfg.workpath(&cfg.paths.model).display(),
        best_cv(&train_log),
        train_log.len()
    );
    Ok(())
}

/// Scores one manifest with the checkpointed model and writes the score
/// table CSV.
pub fn cmd_score(cfg: &ExperimentConfig) -> Result<()> {
    let ckpt = load_model(&cfg.workpath(&cfg.paths.model))?;
    let manifest = Manifest::load(&cfg.workpath(&cfg.score.manifest))?;
    let utts = load_utterances(&manifest, &cfg.gfb)?;
    let refs: Vec<&Utterance> = utts.iter().collect();
    let table = score_utterances(&ckpt.spec, &ckpt.params, &refs, &cfg.entropy)?;
    table.write_csv(&cfg.workpath(&cfg.paths.scores))?;
    log::info!(
        "scored {} utterances at layer {} into {}",
        table.len(),
        cfg.entropy.layer_index,
        cfg.workpath(&cfg.paths.scores).display()
    );
    Ok(())
}

/// Ranks a score table and writes the selection list.
pub fn cmd_select(cfg: &ExperimentConfig) -> Result<()> {
    let table = ScoreTable::read_csv(&cfg.workpath(&cfg.paths.scores))?;
    let sel = rank_select(&table, cfg.select.k)?;
    write_selection_list(&cfg.workpath(&cfg.paths.selection), &sel.selected)?;
    log::info!(
        "selected {} of {} utterances into {}",
        sel.k,
        table.len(),
        cfg.workpath(&cfg.paths.selection).display()
    );
    Ok(())
}

/// One standalone adaptation step: pseudo-labels the selection with the
/// checkpointed model, fine-tunes on selection plus original train data,
/// and writes the adapted checkpoint.
pub fn cmd_adapt(cfg: &ExperimentConfig) -> Result<()> {
    let ckpt = load_model(&cfg.workpath(&cfg.paths.model))?;
    let pool = load_split(cfg, "pool")?;
    let ids = read_selection_list(&cfg.workpath(&cfg.paths.selection))?;
    let by_id: std::collections::HashMap<&str, &Utterance> =
        pool.iter().map(|u| (u.utterance_id.as_str(), u)).collect();
    let selected: Vec<&Utterance> = ids
        .iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| {
                Error::input(format!(
                    "selected utterance {id:?} is not in the pool manifest"
                ))
            })
        })
        .collect::<Result<_>>()?;
    let pseudo: Vec<Vec<u32>> = selected
        .par_iter()
        .map(|utt| pseudo_label(&ckpt.spec, &ckpt.params, utt))
        .collect::<Result<_>>()?;

    let train_utts = load_split(cfg, "train")?;
    let cv_utts = load_split(cfg, "cv")?;
    let mut utts: Vec<&Utterance> = selected.clone();
    let mut labels: Vec<&[u32]> = pseudo.iter().map(|v| v.as_slice()).collect();
    for utt in &train_utts {
        utts.push(utt);
        labels.push(utt.labels.as_deref().ok_or_else(|| {
            Error::input(format!(
                "training utterance {:?} has no labels",
                utt.utterance_id
            ))
        })?);
    }
    let adapt_set = frameset_with_labels(&utts, &ckpt.spec, &labels)?;
    let cv_refs: Vec<&Utterance> = cv_utts.iter().collect();
    let cv_set = frameset(&cv_refs, &ckpt.spec)?;
    let (adapted, adapt_log) =
        adapt_finetune(&ckpt.spec, &ckpt.params, &adapt_set, &cv_set, &cfg.adapt)?;
    write_training_log(&cfg.workpath(&cfg.paths.adapt_log), &adapt_log)?;
    save_checkpoint(
        &cfg.workpath(&cfg.paths.adapted),
        &Checkpoint {
            spec: ckpt.spec.clone(),
            params: adapted.clone(),
            summary: TrainSummary {
                stage: "adapted".into(),
                epochs: adapt_log.len() as u32,
                cv_frame_error: best_cv(&adapt_log),
            },
        },
    )?;

    let eval_matched = load_split(cfg, "eval_matched")?;
    let eval_mismatched = load_split(cfg, "eval_mismatched")?;
    let m_refs: Vec<&Utterance> = eval_matched.iter().collect();
    let mm_refs: Vec<&Utterance> = eval_mismatched.iter().collect();
    let m = evaluate_utterances(&ckpt.spec, &adapted, &m_refs)?;
    let mm = evaluate_utterances(&ckpt.spec, &adapted, &mm_refs)?;
    log::info!(
        "adapted on {} utterances; matched FER {:.4}, mismatched FER {:.4}",
        utts.len(),
        m.frame_error_rate,
        mm.frame_error_rate
    );
    Ok(())
}

/// The full multi-pass selection/adaptation loop with per-pass artifacts.
pub fn cmd_loop(cfg: &ExperimentConfig) -> Result<()> {
    let ckpt = load_model(&cfg.workpath(&cfg.paths.model))?;
    let train_utts = load_split(cfg, "train")?;
    let cv_utts = load_split(cfg, "cv")?;
    let pool = load_split(cfg, "pool")?;
    let eval_matched = load_split(cfg, "eval_matched")?;
    let eval_mismatched = load_split(cfg, "eval_mismatched")?;
    let data = LoopData {
        train: &train_utts,
        cv: &cv_utts,
        pool: &pool,
        eval_matched: &eval_matched,
        eval_mismatched: &eval_mismatched,
    };
    let (_, history) = run_loop(
        &ckpt.spec,
        &ckpt.params,
        &data,
        &cfg.pass_config(),
        Some(&cfg.workpath(&cfg.paths.loop_dir)),
    )?;
    log::info!(
        "loop done: {} passes under {}",
        history.passes.len(),
        cfg.workpath(&cfg.paths.loop_dir).display()
    );
    Ok(())
}

fn first_utterance(cfg: &ExperimentConfig, split: &str) -> Result<Utterance> {
    let manifest = Manifest::load(&cfg.manifest_path(split))?;
    let entry = manifest
        .entries
        .first()
        .ok_or_else(|| Error::input(format!("{split} manifest is empty")))?;
    let trimmed = Manifest {
        entries: vec![entry.clone()],
        dir: manifest.dir.clone(),
    };
    let mut utts = load_utterances(&trimmed, &cfg.gfb)?;
    Ok(utts.remove(0))
}

fn tap_trace(
    spec: &NetworkSpec,
    params: &Parameters<f32>,
    utt: &Utterance,
    layer_index: usize,
) -> Result<ActivationTrace<f32>> {
    let stacked = stack_for_net(&utt.features, spec)?;
    let (_, trace) = forward_with_taps(
        spec,
        params,
        &stacked.view(),
        layer_index,
        &utt.utterance_id,
    )?;
    Ok(trace)
}

/// Builds the report from a trained model and a completed loop: the
/// per-layer correlation sweep, per-pass metrics, scatter plots, and the
/// matched/mismatched activation heat images.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let model_path = cfg.workpath(&cfg.paths.model);
    let metrics_path = cfg.workpath(&cfg.paths.loop_dir).join("metrics.csv");
    let manifest_path = cfg.workpath(&cfg.report.manifest);
    let required: Vec<(&Path, &str)> = vec![
        (&model_path, "model checkpoint (run `train`)"),
        (&metrics_path, "loop metrics (run `loop`)"),
        (&manifest_path, "scoring manifest (run `synth`)"),
    ];
    let missing: Vec<String> = required
        .iter()
        .filter(|(p, _)| !p.is_file())
        .map(|(p, what)| format!("{}: {what}", p.display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::input(format!(
            "missing artifacts: {}",
            missing.join("; ")
        )));
    }

    let ckpt = load_model(&model_path)?;
    let layers = cfg.report_layers();
    for &layer in &layers {
        ckpt.spec.validate_tap(layer)?;
    }
    let manifest = Manifest::load(&manifest_path)?;
    let utts = load_utterances(&manifest, &cfg.gfb)?;
    if !utts.iter().any(|u| u.labels.is_some()) {
        return Err(Error::input(format!(
            "{}: no utterance has labels, so frame error is unavailable",
            manifest_path.display()
        )));
    }
    let refs: Vec<&Utterance> = utts.iter().collect();
    let tables: Vec<(usize, ScoreTable)> = layers
        .iter()
        .map(|&layer| -> Result<(usize, ScoreTable)> {
            let entropy = EntropyParams {
                layer_index: layer,
                ..cfg.entropy.clone()
            };
            Ok((
                layer,
                score_utterances(&ckpt.spec, &ckpt.params, &refs, &entropy)?,
            ))
        })
        .collect::<Result<_>>()?;

    let matched_utt = first_utterance(cfg, "eval_matched")?;
    let mismatched_utt = first_utterance(cfg, "eval_mismatched")?;
    let matched_trace = tap_trace(
        &ckpt.spec,
        &ckpt.params,
        &matched_utt,
        cfg.entropy.layer_index,
    )?;
    let mismatched_trace = tap_trace(
        &ckpt.spec,
        &ckpt.params,
        &mismatched_utt,
        cfg.entropy.layer_index,
    )?;

    let passes = read_metrics_csv(&metrics_path)?;
    let eval_matched = load_split(cfg, "eval_matched")?;
    let eval_mismatched = load_split(cfg, "eval_mismatched")?;
    let m_refs: Vec<&Utterance> = eval_matched.iter().collect();
    let mm_refs: Vec<&Utterance> = eval_mismatched.iter().collect();
    let baseline_m = evaluate_utterances(&ckpt.spec, &ckpt.params, &m_refs)?;
    let baseline_mm = evaluate_utterances(&ckpt.spec, &ckpt.params, &mm_refs)?;

    let report = build_report(
        &ReportInputs {
            tables: &tables,
            passes: &passes,
            baseline: Some((baseline_m.frame_error_rate, baseline_mm.frame_error_rate)),
            matched_trace: &matched_trace,
            mismatched_trace: &mismatched_trace,
        },
        &cfg.workpath(&cfg.paths.report_dir),
    )?;
    for c in &report.correlations {
        log::info!("layer {}: r = {:.4} over {} utterances", c.layer, c.r, c.n);
    }
    log::info!("wrote {} report files", report.files.len());
    Ok(())
}

/// Runs one named command. This is the single dispatch point the CLI and
/// tests share.
pub fn run_command(name: &str, cfg: &ExperimentConfig) -> Result<()> {
    match name {
        "synth" => cmd_synth(cfg),
        "extract" => cmd_extract(cfg),
        "train" => cmd_train(cfg),
        "score" => cmd_score(cfg),
        "select" => cmd_select(cfg),
        "adapt" => cmd_adapt(cfg),
        "loop" => cmd_loop(cfg),
        "report" => cmd_report(cfg),
        other => Err(Error::config(format!(
            "unknown command {other:?} (expected synth, extract, train, score, select, adapt, loop, or report)"
        ))),
    }
}

/// Returns every artifact path a full pipeline run may produce, relative
/// to the workdir. Used by tests to assert artifact closure.
pub fn artifact_paths(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    vec![
        cfg.workpath(&cfg.paths.model),
        cfg.workpath(&cfg.paths.train_log),
        cfg.workpath(&cfg.paths.scores),
        cfg.workpath(&cfg.paths.selection),
        cfg.workpath(&cfg.paths.adapted),
        cfg.workpath(&cfg.paths.adapt_log),
        cfg.workpath(&cfg.paths.loop_dir).join("metrics.csv"),
        cfg.workpath(&cfg.paths.report_dir).join("correlations.csv"),
    ]
}
