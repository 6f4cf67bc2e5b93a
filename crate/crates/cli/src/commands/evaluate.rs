use super::{check_seg_len, load_stage_checkpoint, prepare_out};
use crate::args::EvaluateArgs;
use crate::config::{RunConfig, TrainStage};
use ecgsl_core::error::{Error, Result};
use ecgsl_core::eval::{confusion_matrix, stratified_kfold, MetricsReport};
use ecgsl_core::io::{atomic_write, read_segments};
use ecgsl_core::model::{predict, Stage};
use ecgsl_core::signal::SegmentSequence;
use ecgsl_core::train::finetune;
use std::fmt::Write as _;
use std::path::Path;

fn corpus_labels(data: &[SegmentSequence]) -> Result<Vec<usize>> {
    data.iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::Data(format!("record {} has no label", s.record_id)))
        })
        .collect()
}

fn write_report(out: &Path, stem: &str, cm: &ecgsl_core::eval::ConfusionMatrix) -> Result<MetricsReport> {
    let report = cm.report();
    atomic_write(&out.join(format!("{stem}-metrics.txt")), report.text().as_bytes())?;
    atomic_write(&out.join(format!("{stem}-confusion.csv")), cm.csv().as_bytes())?;
    Ok(report)
}

/// Score one fine-tuned checkpoint on a labeled corpus, or run stratified
/// k-fold cross-validation with per-fold fine-tuning.
pub fn run(args: &EvaluateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.epochs {
        cfg.epochs = Some(v);
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let (data, seg_len) = read_segments(&args.data)?;
    cfg.segment_len = seg_len;
    let labels = corpus_labels(&data)?;

    match (&args.model, args.kfold) {
        (Some(_), Some(_)) => Err(Error::InvalidConfig(
            "--model and --kfold are mutually exclusive; score a checkpoint or cross-validate"
                .into(),
        )),
        (None, None) => Err(Error::InvalidConfig(
            "evaluate needs --model <finetuned checkpoint> or --kfold <k>".into(),
        )),
        (Some(model), None) => {
            let ckpt = load_stage_checkpoint(model, Stage::Finetuned, "evaluate")?;
            check_seg_len(ckpt.state.config.seg_len, seg_len)?;
            let pred = predict(&ckpt.state, &data)?;
            let cm = confusion_matrix(&labels, &pred, ckpt.state.config.classes)?;
            prepare_out(&args.out, &cfg)?;
            let report = write_report(&args.out, "eval", &cm)?;
            println!(
                "evaluated {} records: accuracy {:.4}, macro F1 {:.4}; wrote {}",
                data.len(),
                report.accuracy,
                report.macro_f1,
                args.out.join("eval-metrics.txt").display()
            );
            Ok(())
        }
        (None, Some(k)) => run_kfold(args, &cfg, &data, &labels, k),
    }
}

fn run_kfold(
    args: &EvaluateArgs,
    cfg: &RunConfig,
    data: &[SegmentSequence],
    labels: &[usize],
    k: usize,
) -> Result<()> {
    let init = args.init.ok_or_else(|| {
        Error::InvalidConfig("--kfold needs --init {ae|masked|random} for per-fold training".into())
    })?;
    let folds = stratified_kfold(labels, k, cfg.seed)?;
    let train_cfg = cfg.train_config(TrainStage::Finetune);
    prepare_out(&args.out, cfg)?;

    let mut fold_reports = Vec::with_capacity(k);
    for (f, held_out) in folds.iter().enumerate() {
        let in_fold: Vec<bool> = {
            let mut m = vec![false; data.len()];
            for &i in held_out {
                m[i] = true;
            }
            m
        };
        let train_set: Vec<SegmentSequence> = data
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_fold[*i])
            .map(|(_, s)| s.clone())
            .collect();
        let test_set: Vec<SegmentSequence> =
            held_out.iter().map(|&i| data[i].clone()).collect();
        let test_labels: Vec<usize> = held_out.iter().map(|&i| labels[i]).collect();

        // every fold fine-tunes from the same starting point
        let mut state = super::train::initial_state(
            init,
            args.from.as_deref(),
            cfg,
            cfg.segment_len,
            "evaluate --kfold",
        )?;
        finetune(&mut state, &train_set, &train_cfg, None)?;
        let pred = predict(&state, &test_set)?;
        let cm = confusion_matrix(&test_labels, &pred, state.config.classes)?;
        let report = write_report(&args.out, &format!("fold-{}", f + 1), &cm)?;
        println!(
            "fold {}/{k}: accuracy {:.4}, macro F1 {:.4} ({} test records)",
            f + 1,
            report.accuracy,
            report.macro_f1,
            test_set.len()
        );
        fold_reports.push(report);
    }

    let n = fold_reports.len() as f64;
    let mean = |pick: fn(&MetricsReport) -> f64| -> f64 {
        fold_reports.iter().map(pick).sum::<f64>() / n
    };
    let mut text = format!("folds {k}\n");
    let _ = writeln!(text, "mean_accuracy {:.6}", mean(|r| r.accuracy));
    let _ = writeln!(text, "mean_macro_precision {:.6}", mean(|r| r.macro_precision));
    let _ = writeln!(text, "mean_macro_recall {:.6}", mean(|r| r.macro_recall));
    let _ = writeln!(text, "mean_macro_f1 {:.6}", mean(|r| r.macro_f1));
    if fold_reports.iter().all(|r| r.sen_spe.is_some()) {
        let sen = fold_reports.iter().map(|r| r.sen_spe.unwrap().0).sum::<f64>() / n;
        let spe = fold_reports.iter().map(|r| r.sen_spe.unwrap().1).sum::<f64>() / n;
        let _ = writeln!(text, "mean_sensitivity {sen:.6}");
        let _ = writeln!(text, "mean_specificity {spe:.6}");
    }
    atomic_write(&args.out.join("mean-metrics.txt"), text.as_bytes())?;
    println!(
        "{k}-fold mean: accuracy {:.4}, macro F1 {:.4}; wrote {}",
        mean(|r| r.accuracy),
        mean(|r| r.macro_f1),
        args.out.join("mean-metrics.txt").display()
    );
    Ok(())
}
