mod commands;
mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "gridfield", version, about = "Semantic feature grids over Gaussian splats")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AblateArg {
    /// Skip keypoint correspondences.
    Kp,
    /// Drop the color-distribution term.
    Cd,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Max,
    Mean,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic scene.
    Synth {
        /// JSON scene spec; missing fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a dataset directory, optionally denoising its masks.
    Ingest {
        #[arg(long, value_name = "DIR")]
        check: PathBuf,
        /// Write a denoised copy here.
        #[arg(long)]
        denoise_out: Option<PathBuf>,
    },
    /// Compute keypoint correspondences and store them in the dataset.
    Match {
        #[arg(long)]
        dataset: PathBuf,
        /// `all` or `window:N`.
        #[arg(long, default_value = "all")]
        pairs: String,
        /// Defaults to DATASET/matches.bin.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Group masks across views and lay out the object lattice.
    Map {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 4)]
        tau: usize,
        #[arg(long, default_value_t = 0.95)]
        theta: f64,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        /// Only match against this many preceding views.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        no_keypoints: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per-Gaussian features against the baked lattice colors.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        /// Defaults to DATASET/gaussians.bin.
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        #[arg(long, default_value_t = 5e-3)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one query, locally or against a running service.
    Query {
        #[arg(long, required_unless_present = "server")]
        field: Option<PathBuf>,
        #[arg(long, required_unless_present = "server")]
        mapping: Option<PathBuf>,
        /// Service root URL; queries it instead of loading a field.
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        view: usize,
        /// D little-endian f32 values.
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, default_value_t = 1)]
        top_n: usize,
        #[arg(long, default_value_t = 5.0)]
        tau_ac: f64,
        #[arg(long, value_enum, default_value = "max")]
        aggregation: AggregationArg,
        #[arg(long)]
        relevancy_floor: Option<f64>,
        /// Mask PNG; the JSON response goes next to it unless --json is given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Score a field against ground-truth labels.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Rebuild the field with a stage switched off (repeatable).
        #[arg(long, value_enum)]
        ablate: Vec<AblateArg>,
        /// Training iterations for ablation rebuilds.
        #[arg(long, default_value_t = 400)]
        iters: usize,
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// queries.json whose entries are registered at startup.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Overrides GRIDFIELD_ENCODER_URL.
        #[arg(long)]
        encoder_url: Option<String>,
    },
    /// Talk to a running service.
    Remote {
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        url: String,
        #[command(subcommand)]
        action: remote::Action,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { spec, out } => commands::synth(spec.as_deref(), &out),
        Command::Ingest { check, denoise_out } => commands::ingest(&check, denoise_out.as_deref()),
        Command::Match { dataset, pairs, out } => commands::match_views(&dataset, &pairs, out.as_deref()),
        Command::Map {
            dataset,
            tau,
            theta,
            alpha,
            window,
            no_keypoints,
            out,
        } => commands::map(&dataset, tau, theta, alpha, window, !no_keypoints, &out),
        Command::Train {
            dataset,
            mapping,
            geometry,
            iters,
            seed,
            lambda,
            step,
            out,
        } => commands::train(&dataset, &mapping, geometry.as_deref(), iters, seed, lambda, step, &out),
        Command::Query {
            field,
            mapping,
            server,
            view,
            embedding,
            top_n,
            tau_ac,
            aggregation,
            relevancy_floor,
            out,
            json,
        } => commands::query(commands::QueryArgs {
            field,
            mapping,
            server,
            view,
            embedding,
            top_n,
            tau_ac,
            aggregation,
            relevancy_floor,
            out,
            json,
        }),
        Command::Eval {
            dataset,
            field,
            mapping,
            queries,
            truth,
            ablate,
            iters,
            serial,
            report,
        } => commands::eval(&dataset, &field, &mapping, &queries, &truth, &ablate, iters, serial, &report),
        Command::Serve {
            field,
            mapping,
            port,
            host,
            queries,
            encoder_url,
        } => commands::serve(field, mapping, &host, port, queries.as_deref(), encoder_url),
        Command::Remote { url, action } => remote::run(&url, action),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
