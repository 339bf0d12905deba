use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "qpcm", version, about = "Coincidence phase-contrast microscopy: simulate, process and image photon-pair data")]
pub struct Cli {
    /// Run configuration (TOML). Relative paths not found in the working
    /// directory are looked up in $QPCM_CONFIG_DIR.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; defaults to the available cores. Output does not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate source, sample, optics and camera; write raw events.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster raw events into photons. Accepts a raw event file or a CSV
    /// with columns toa_ns,x,y,tot.
    Centroid {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair near- and far-field photons.
    Pair {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the Δt histogram of accepted pairs as CSV.
        #[arg(long)]
        dt_hist: Option<PathBuf>,
    },
    /// Coincidence image for each mask: <stem>.pgm, <stem>.csv and <stem>.json in OUT_DIR.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, required = true)]
        mask: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        bin: Option<usize>,
    },
    /// Differential phase contrast of two masks; mask B defaults to the complement of A.
    Dpc {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask_a: PathBuf,
        #[arg(long)]
        mask_b: Option<PathBuf>,
        /// Output prefix: writes PREFIX.csv, PREFIX.pgm and PREFIX.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bin: Option<usize>,
        #[arg(long)]
        min_counts: Option<u32>,
    },
    /// Line-profile visibility of a masked coincidence image.
    Visibility {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        roi: RoiArgs,
        #[arg(long, default_value_t = 3)]
        n_lines: usize,
        #[arg(long)]
        bin: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run detection and pairing over a parameter list; pair counts as CSV.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RoiArgs {
    /// Profile line in frame pixels: x0,y0,x1,y1.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub roi: Vec<f64>,
    /// Pixels summed across the line.
    #[arg(long, default_value_t = 1)]
    pub roi_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    Efficiency,
    DarkRate,
    JitterFwhm,
    ClusterSizeMean,
    Window,
    TimeGate,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Efficiency => "efficiency",
            SweepParam::DarkRate => "dark_rate",
            SweepParam::JitterFwhm => "jitter_fwhm",
            SweepParam::ClusterSizeMean => "cluster_size_mean",
            SweepParam::Window => "window",
            SweepParam::TimeGate => "time_gate",
        }
    }
}
