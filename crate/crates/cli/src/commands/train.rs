use super::{check_seg_len, load_stage_checkpoint, prepare_out, write_history};
use crate::args::{FinetuneArgs, InitKind, PretrainAeArgs, PretrainMaskArgs};
use crate::config::{stratified_split, RunConfig, TrainStage};
use ecgsl_core::error::{Error, Result};
use ecgsl_core::eval::confusion_matrix;
use ecgsl_core::io::{read_segments, write_checkpoint, Checkpoint};
use ecgsl_core::model::{predict, ModelState, ParamSet, Stage};
use ecgsl_core::signal::SegmentSequence;
use ecgsl_core::train::{finetune, pretrain_autoencoder, pretrain_masked, TrainReport};
use std::path::Path;

fn labels_of(data: &[SegmentSequence]) -> Result<Vec<usize>> {
    data.iter()
        .map(|s| {
            s.label.ok_or_else(|| {
                Error::Data(format!("record {} has no label", s.record_id))
            })
        })
        .collect()
}

fn save(
    out: &Path,
    file: &str,
    state: ModelState,
    stage: Stage,
    seed: u64,
    report: &TrainReport,
    with_moments: bool,
) -> Result<()> {
    let moments = if with_moments {
        Some((report.final_step, report.final_moments.clone()))
    } else {
        None
    };
    let ckpt = Checkpoint {
        state,
        stage,
        seed,
        moments,
    };
    write_checkpoint(&ckpt, &out.join(file))
}

pub fn run_pretrain_ae(args: &PretrainAeArgs) -> Result<()> {
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

    let mut state = ModelState::init(cfg.model_config(seg_len), cfg.seed)?;
    let train_cfg = cfg.train_config(TrainStage::PretrainAe);
    let report = pretrain_autoencoder(&mut state, &data, &train_cfg)?;

    prepare_out(&args.out, &cfg)?;
    write_history(&args.out.join("history-ae.txt"), &report)?;
    save(&args.out, "ae.ckpt", state, Stage::Autoencoder, cfg.seed, &report, true)?;
    println!(
        "autoencoder pre-training: {} epochs, final loss {:.6e}; wrote {}",
        report.history.len(),
        report.final_loss(),
        args.out.join("ae.ckpt").display()
    );
    Ok(())
}

pub fn run_pretrain_mask(args: &PretrainMaskArgs) -> Result<()> {
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
    if let Some(v) = args.mask_fraction {
        cfg.mask_fraction = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let (data, seg_len) = read_segments(&args.data)?;
    cfg.segment_len = seg_len;

    let mut state = match (&args.from, args.from_scratch) {
        (Some(_), true) => {
            return Err(Error::InvalidConfig(
                "--from and --from-scratch are mutually exclusive".into(),
            ))
        }
        (Some(path), false) => {
            let ckpt = load_stage_checkpoint(path, Stage::Autoencoder, "pretrain-mask")?;
            check_seg_len(ckpt.state.config.seg_len, seg_len)?;
            ckpt.state
        }
        (None, true) => ModelState::init(cfg.model_config(seg_len), cfg.seed)?,
        (None, false) => {
            return Err(Error::StageOrder(
                "pretrain-mask needs --from <ae checkpoint>, or --from-scratch to skip stage one"
                    .into(),
            ))
        }
    };

    let train_cfg = cfg.train_config(TrainStage::PretrainMask);
    let report = pretrain_masked(&mut state, &data, &train_cfg)?;

    prepare_out(&args.out, &cfg)?;
    write_history(&args.out.join("history-masked.txt"), &report)?;
    save(&args.out, "masked.ckpt", state, Stage::Masked, cfg.seed, &report, true)?;
    println!(
        "masked pre-training: {} epochs, final loss {:.6e}; wrote {}",
        report.history.len(),
        report.final_loss(),
        args.out.join("masked.ckpt").display()
    );
    Ok(())
}

/// Resolve the fine-tuning starting point from `--init` / `--from`.
pub(super) fn initial_state(
    init: InitKind,
    from: Option<&Path>,
    cfg: &RunConfig,
    seg_len: usize,
    needed_by: &str,
) -> Result<ModelState> {
    let want = match init {
        InitKind::Random => {
            return match from {
                None => ModelState::init(cfg.model_config(seg_len), cfg.seed),
                Some(_) => Err(Error::InvalidConfig(
                    "--init random does not take --from".into(),
                )),
            }
        }
        InitKind::Ae => Stage::Autoencoder,
        InitKind::Masked => Stage::Masked,
    };
    let Some(path) = from else {
        return Err(Error::StageOrder(format!(
            "{needed_by} --init {0} requires --from <{0} checkpoint>",
            want.name()
        )));
    };
    let ckpt = load_stage_checkpoint(path, want, needed_by)?;
    check_seg_len(ckpt.state.config.seg_len, seg_len)?;
    Ok(ckpt.state)
}

pub fn run_finetune(args: &FinetuneArgs) -> Result<()> {
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
    if let Some(v) = args.val_fraction {
        cfg.val_fraction = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let (data, seg_len) = read_segments(&args.data)?;
    cfg.segment_len = seg_len;

    let mut state = initial_state(args.init, args.from.as_deref(), &cfg, seg_len, "finetune")?;
    let train_cfg = cfg.train_config(TrainStage::Finetune);

    let labels = labels_of(&data)?;
    let (train_idx, val_idx) = stratified_split(&labels, cfg.val_fraction, cfg.seed)?;
    let train_set: Vec<SegmentSequence> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let val_set: Vec<SegmentSequence> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    // Track the parameters of the best validation epoch so the checkpoint
    // can keep them even when later epochs regress.
    let classes = cfg.classes;
    let mut best: Option<(f64, ParamSet)> = None;
    let report = if val_set.is_empty() {
        finetune(&mut state, &train_set, &train_cfg, None)?
    } else {
        let mut metric = |s: &ModelState| -> Result<f64> {
            let pred = predict(s, &val_set)?;
            let f1 = confusion_matrix(&val_labels, &pred, classes)?.report().macro_f1;
            if best.as_ref().map_or(true, |(b, _)| f1 > *b) {
                best = Some((f1, s.params.clone()));
            }
            Ok(f1)
        };
        finetune(&mut state, &train_set, &train_cfg, Some(&mut metric))?
    };
    if let Some((_, params)) = best {
        state.params = params;
    }

    prepare_out(&args.out, &cfg)?;
    write_history(&args.out.join("history-finetune.txt"), &report)?;
    save(&args.out, "finetuned.ckpt", state, Stage::Finetuned, cfg.seed, &report, false)?;
    let best_metric = report
        .history
        .get(report.best_epoch - 1)
        .and_then(|r| r.metric)
        .map_or(String::from("-"), |m| format!("{m:.4}"));
    println!(
        "fine-tuning: {} epochs, kept epoch {} (val macro F1 {}), final loss {:.6e}; wrote {}",
        report.history.len(),
        report.best_epoch,
        best_metric,
        report.final_loss(),
        args.out.join("finetuned.ckpt").display()
    );
    Ok(())
}
