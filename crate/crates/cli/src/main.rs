//! `beansplit` command-line tool.

mod analyze;
mod evaluate;
mod study;
mod svg;
mod synth;
mod train;
mod util;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beansplit", version, about = "Split-damage quantification for canned bean images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a bean-vs-tray or split-vs-seed-coat model.
    Train(train::TrainArgs),
    /// Choose the split threshold on the validation images.
    Calibrate(evaluate::CalibrateArgs),
    /// Segment one image into tray / seed coat / split.
    Segment(analyze::SegmentArgs),
    /// Measure BSR and BSH for every image in a directory.
    Measure(analyze::MeasureArgs),
    /// Evaluate a pipeline on labeled validation images.
    Eval(evaluate::EvalArgs),
    /// Pixel-wise LDA on HSV as a split-detection baseline.
    BaselineLda(evaluate::LdaArgs),
    /// Study statistics: correlation with intactness, ANOVA, heritability.
    Stats(study::StatsArgs),
    /// Write a synthetic study (images, masks, manifest).
    Synth(synth::SynthArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Calibrate(a) => evaluate::calibrate(a),
        Command::Segment(a) => analyze::segment(a),
        Command::Measure(a) => analyze::measure(a),
        Command::Eval(a) => evaluate::eval(a),
        Command::BaselineLda(a) => evaluate::baseline_lda(a),
        Command::Stats(a) => study::run(a),
        Command::Synth(a) => synth::run(a),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(util::exit_code(&err));
    }
}
