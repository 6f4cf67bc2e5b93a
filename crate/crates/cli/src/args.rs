use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "ecgsl", version, about = "Heartbeat-level ECG representation learning pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled synthetic ECG corpus with ground-truth peaks
    Synth(SynthArgs),
    /// Filter, resample, detect R-peaks, and cut records into beat segments
    Preprocess(PreprocessArgs),
    /// Stage one: pre-train the segment encoder/decoder as an autoencoder
    PretrainAe(PretrainAeArgs),
    /// Stage two: masked-segment pre-training of the full sequence model
    PretrainMask(PretrainMaskArgs),
    /// Supervised fine-tuning for record classification
    Finetune(FinetuneArgs),
    /// Metrics for a fine-tuned model, or stratified k-fold cross-validation
    Evaluate(EvaluateArgs),
    /// Gradient saliency curves averaged per predicted class
    Saliency(SaliencyArgs),
}

/// Model initialization source for fine-tuning and cross-validation.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    Ae,
    Masked,
    Random,
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Output directory for manifest, record files, and peak ground truth
    #[arg(long)]
    pub out: PathBuf,
    /// key=value config file applied before flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise level in dB; "inf" disables noise
    #[arg(long)]
    pub snr: Option<f64>,
    /// Heart-rate range in bpm as LO:HI
    #[arg(long, value_parser = parse_range)]
    pub hr_range: Option<(f64, f64)>,
    /// Record duration in seconds
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(clap::Args, Debug)]
pub struct PreprocessArgs {
    /// Manifest of the raw corpus
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for the segment corpus
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// edge, zero, or stretch
    #[arg(long)]
    pub pad_mode: Option<String>,
    /// Samples per heartbeat segment
    #[arg(long)]
    pub segment_len: Option<usize>,
    /// 1 forces sequential record processing; 0 uses all cores
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(clap::Args, Debug)]
pub struct PretrainAeArgs {
    /// Segment corpus from `preprocess`
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
pub struct PretrainMaskArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Autoencoder checkpoint to start from
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Start from random weights instead of an autoencoder checkpoint
    #[arg(long)]
    pub from_scratch: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Starting point: a pre-training stage or random weights
    #[arg(long, value_enum)]
    pub init: InitKind,
    /// Checkpoint matching --init (required unless --init random)
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of records held out per class for per-epoch validation
    /// macro F1; 0 disables validation and keeps the last epoch
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fine-tuned checkpoint to score (single evaluation)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Stratified k-fold cross-validation with per-fold fine-tuning
    #[arg(long)]
    pub kfold: Option<usize>,
    /// Per-fold initialization for --kfold
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    /// Checkpoint matching --init
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fine-tuned checkpoint to explain
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number '{hi}'"))?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parser_handles_good_and_bad_input() {
        assert_eq!(parse_range("60:100").unwrap(), (60.0, 100.0), "plain range");
        assert_eq!(parse_range(" 55 : 90 ").unwrap(), (55.0, 90.0), "spaces ok");
        assert!(parse_range("60").is_err(), "missing colon");
        assert!(parse_range("a:b").is_err(), "non-numeric");
    }

    #[test]
    fn cli_parses_a_full_synth_invocation() {
        let cli = Cli::try_parse_from([
            "ecgsl", "synth", "--out", "/tmp/x", "--records", "100", "--classes", "3",
            "--seed", "7", "--hr-range", "60:100", "--snr", "inf",
        ])
        .unwrap();
        match cli.command {
            Command::Synth(a) => {
                assert_eq!(a.records, Some(100));
                assert_eq!(a.hr_range, Some((60.0, 100.0)));
                assert_eq!(a.snr, Some(f64::INFINITY), "inf parses to infinity");
            }
            other => panic!("wrong command {other:?}"),
        }
    }

    #[test]
    fn unknown_flag_is_a_parse_error() {
        assert!(Cli::try_parse_from(["ecgsl", "synth", "--out", "x", "--bogus", "1"]).is_err());
    }
}
