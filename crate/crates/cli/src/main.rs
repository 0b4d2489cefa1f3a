//! `mtr`: run, benchmark and visualise token reduction from the command line.
//!
//! Exit codes: 0 success, 2 bad flags or plan, 3 I/O or malformed input,
//! 4 non-finite values during the forward pass.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtr_core::bench::{sweep, BenchConfig, CSV_HEADER};
use mtr_core::checkpoint::Checkpoint;
use mtr_core::flops::{default_layers, solve_k};
use mtr_core::report::{retention_mask, run_report, RunReport};
use mtr_core::{
    Error, ForwardOptions, Image, Indicator, ModelConfig, ReductionPlan, Strategy, VisionMamba,
};

#[derive(Parser)]
#[command(
    name = "mtr",
    version,
    about = "Training-free token reduction for Mamba-style vision models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random checkpoint.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        config: Preset,
    },
    /// Solve a plan for a FLOPs target and run one image through the model.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Print the full JSON report instead of a summary.
        #[arg(long)]
        json: bool,
        /// Skip per-layer diagnostics; token and FLOPs fields become null.
        #[arg(long)]
        no_diag: bool,
    },
    /// Throughput sweep over reduction ratios, as CSV.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.3,0.4")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Spread each batch across threads instead of running it on one.
        #[arg(long)]
        parallel: bool,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long, default_value = "merge")]
        strategy: Strategy,
        #[arg(long, default_value = "delta")]
        indicator: Indicator,
        #[arg(long, default_value_t = 0)]
        image_seed: u64,
    },
    /// Render the keep/target/source partition of one reduction layer as PPM.
    Mask {
        #[command(flatten)]
        run: RunArgs,
        /// Reduction layer to render; must be part of the plan.
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Tiny,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Toy => ModelConfig::toy(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint to load; without it a seeded model is built.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    config: Preset,
}

impl ModelArgs {
    fn load(&self) -> Result<VisionMamba, Error> {
        match &self.ckpt {
            Some(path) => VisionMamba::from_checkpoint(&Checkpoint::load(path)?),
            None => VisionMamba::seeded(self.config.config(), self.seed),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input image, binary PPM (P6).
    #[arg(long, conflicts_with = "synthetic")]
    image: Option<PathBuf>,
    /// Use a seeded synthetic image instead of a file.
    #[arg(long)]
    synthetic: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    target_reduction: f64,
    #[arg(long, default_value = "merge")]
    strategy: Strategy,
    #[arg(long, default_value = "delta")]
    indicator: Indicator,
    /// Reduction layers; defaults to every fifth block starting at 5.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
}

struct Prepared {
    model: VisionMamba,
    image: Image,
    plan: ReductionPlan,
}

impl RunArgs {
    fn prepare(&self) -> Result<Prepared, Error> {
        let model = self.model.load()?;
        let c = &model.config;
        let image = match &self.image {
            Some(path) => Image::read_ppm(path)?,
            None => Image::synthetic(c.image_size, c.channels, self.synthetic.unwrap_or(0)),
        };
        let layers = self
            .layers
            .clone()
            .unwrap_or_else(|| default_layers(c.depth));
        let plan = solve_k(
            self.target_reduction,
            &layers,
            &c.flops_model(),
            self.strategy,
        )?;
        Ok(Prepared { model, image, plan })
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidRatio(_)
        | Error::Unattainable { .. }
        | Error::InvalidPlan(_)
        | Error::Config(_) => 2,
        Error::Io { .. } | Error::Checkpoint(_) | Error::Image(_) | Error::Dimension { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 1,
    }
}

fn summary(r: &RunReport) -> String {
    let p = &r.plan;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "plan: k={:.6} layers={:?} strategy={} target={:.4}",
        p.k, p.reduce_at_layers, p.strategy, p.target
    );
    let _ = match (r.flops_reduced, r.achieved_reduction) {
        (Some(reduced), Some(achieved)) => writeln!(
            s,
            "flops: baseline={} reduced={} achieved={:.4}",
            r.flops_baseline, reduced, achieved
        ),
        _ => writeln!(s, "flops: baseline={} (diagnostics off)", r.flops_baseline),
    };
    if let (Some(tin), Some(tout)) = (&r.tokens_in, &r.tokens_out) {
        let _ = writeln!(s, "tokens in:  {tin:?}");
        let _ = writeln!(s, "tokens out: {tout:?}");
    }
    let top: Vec<String> = r.top_k.iter().map(|(c, l)| format!("{c}:{l:.4}")).collect();
    let _ = writeln!(s, "top-{}: {}", top.len(), top.join(" "));
    let _ = writeln!(s, "throughput: {:.3} img/s", r.throughput);
    s
}

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn emit(text: &str) -> Result<(), Error> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Init { out, seed, config } => {
            let model = VisionMamba::seeded(config.config(), seed)?;
            model.to_checkpoint()?.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Run { run, json, no_diag } => {
            let p = run.prepare()?;
            let report = run_report(&p.model, &p.image, &p.plan, run.indicator, !no_diag)?;
            if json {
                emit(&(serde_json::to_string_pretty(&report).expect("report serialises") + "\n"))?;
            } else {
                emit(&summary(&report))?;
            }
        }
        Command::Bench {
            model,
            ratios,
            batch,
            repeats,
            warmup,
            parallel,
            layers,
            strategy,
            indicator,
            image_seed,
        } => {
            let model = model.load()?;
            let cfg = BenchConfig {
                ratios,
                batch,
                repeats,
                warmup,
                parallel,
                strategy,
                indicator,
                layers: layers.unwrap_or_else(|| default_layers(model.config.depth)),
                image_seed,
            };
            let rows = sweep(&model, &cfg)?;
            eprintln!(
                "# throughput mode: {}",
                if parallel {
                    "parallel"
                } else {
                    "single-threaded"
                }
            );
            let mut csv = format!("{CSV_HEADER}\n");
            for row in rows {
                csv.push_str(&row.to_csv());
                csv.push('\n');
            }
            emit(&csv)?;
        }
        Command::Mask { run, layer, out } => {
            let p = run.prepare()?;
            if !p.plan.reduce_at_layers.contains(&layer) {
                return Err(Error::InvalidPlan(format!(
                    "layer {layer} is not in the plan {:?}",
                    p.plan.reduce_at_layers
                )));
            }
            let opts = ForwardOptions {
                indicator: run.indicator,
                ..Default::default()
            };
            let diag = p
                .model
                .forward(&p.image, Some(&p.plan), opts)?
                .diagnostics
                .expect("diagnostics requested");
            retention_mask(&p.model.config, &p.image, &diag, layer)?.write_ppm(&out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
