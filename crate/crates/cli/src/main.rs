use clap::{Parser, Subcommand};

use orientrace_cli::commands::{
    cmd_completion_demo, cmd_phantom, cmd_reconstruct, cmd_score, cmd_track, cmd_validate_widths,
    cmd_vasculature, CompletionArgs, PhantomArgs, ReconstructArgs, ScoreArgs, TrackArgs,
    ValidateWidthsArgs, VasculatureArgs,
};
use orientrace_cli::{exit, resolve_threads};

#[derive(Debug, Parser)]
#[command(
    name = "orientrace",
    version,
    about = "Orientation scores and vessel tracking"
)]
struct Cli {
    /// Worker threads (ORIENTRACE_THREADS takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lift an image to an orientation score.
    Score(ScoreArgs),
    /// Invert a stored orientation score.
    Reconstruct(ReconstructArgs),
    /// Track vessels from given seeds.
    Track(TrackArgs),
    /// Build a full vasculature model.
    Vasculature(VasculatureArgs),
    /// Compare measured widths with reference cross-sections.
    ValidateWidths(ValidateWidthsArgs),
    /// Render a synthetic test scene with ground truth.
    Phantom(PhantomArgs),
    /// Completion field, its mode and the matching cubic.
    CompletionDemo(CompletionArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = resolve_threads(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not configure thread pool: {e}");
        }
    }
    let res = match &cli.cmd {
        Command::Score(a) => cmd_score(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Track(a) => cmd_track(a),
        Command::Vasculature(a) => cmd_vasculature(a),
        Command::ValidateWidths(a) => cmd_validate_widths(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::CompletionDemo(a) => cmd_completion_demo(a),
    };
    match res {
        Ok(()) => std::process::exit(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code());
        }
    }
}
