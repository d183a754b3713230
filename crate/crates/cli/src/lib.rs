//! Command-line front end: simulate correlated-beam frame stacks, reconstruct
//! ghost images, measure SNR and NRF, sweep parameters and fit the efficiency.

pub mod meta;
pub mod scene_spec;

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ghostsim::{Error, ErrorClass, Result, SourceKind};

pub use scene_spec::SceneSpec;

#[derive(Debug, Parser)]
#[command(name = "ghostsim", version, about = "Ghost-imaging simulator and analysis tools")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true, env = "GHOSTSIM_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate probe and reference frame stacks.
    Simulate(SimulateArgs),
    /// Reconstruct an image from a pair of stacks.
    Reconstruct(ReconstructArgs),
    /// Contrast-to-noise of a reconstruction between two regions.
    Snr(SnrArgs),
    /// Noise reduction factor of a stack pair.
    Nrf(NrfArgs),
    /// Simulated and predicted SNR over a parameter grid.
    Sweep(SweepArgs),
    /// Fit the detection efficiency to an SNR curve.
    Fit(FitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Twin,
    Thermal,
}

impl From<KindArg> for SourceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Twin => SourceKind::Twin,
            KindArg::Thermal => SourceKind::Thermal,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value = "twin")]
    pub kind: KindArg,
    /// Mean detected photons per reference pixel per frame.
    #[arg(long)]
    pub n2: f64,
    /// Modes per pixel per frame.
    #[arg(long = "modes", visible_alias = "M")]
    pub modes: f64,
    /// Detection efficiency of each arm.
    #[arg(long)]
    pub eta: f64,
    /// Read-noise rms per pixel per frame, electrons.
    #[arg(long, default_value_t = 0.0)]
    pub delta_el: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// `binary:WxH:eps=E:tplus=A:tminus=B[:layout=left|rect]`,
    /// `mask:FILE.pgm:tplus=A:tminus=B`, or a bare `FILE.pgm` (tplus=1,
    /// tminus=0). Nonzero mask pixels take the tminus level.
    #[arg(long)]
    pub scene: String,
    #[arg(long)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_probe: PathBuf,
    #[arg(long)]
    pub out_ref: PathBuf,
    /// Also write the low-transmission cells as a PGM mask.
    #[arg(long)]
    pub out_scene: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KSourceArg {
    Empirical,
    Analytic,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// gi, dgi, odgi, sk (with --k) or sk=K.
    #[arg(long, default_value = "odgi")]
    pub protocol: String,
    /// Subtraction coefficient for `--protocol sk`.
    #[arg(long)]
    pub k: Option<f64>,
    /// Where the optimized coefficient comes from.
    #[arg(long, value_enum, default_value = "empirical")]
    pub k_source: KSourceArg,
    /// Simulation metadata (JSON) for `--k-source analytic`; defaults to the
    /// probe's sidecar.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Independent bucket regions, `RxC`.
    #[arg(long, default_value = "1x1")]
    pub tiles: String,
    /// Output image; `.pgm` gives a rescaled 16-bit PGM, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SnrArgs {
    /// Reconstruction in CSV form.
    #[arg(long)]
    pub recon: PathBuf,
    /// High-transmission region; defaults to the complement of the minus mask.
    #[arg(long)]
    pub mask_plus: Option<PathBuf>,
    /// Low-transmission region; defaults to the complement of the plus mask.
    #[arg(long)]
    pub mask_minus: Option<PathBuf>,
    /// Append a row to this results table.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NrfArgs {
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Pixels to average over; defaults to the whole grid.
    #[arg(long)]
    pub region: Option<PathBuf>,
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VaryArg {
    Epsilon,
    Tminus,
    Eta,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum)]
    pub vary: VaryArg,
    /// `start:stop:count`, both ends included.
    #[arg(long)]
    pub range: String,
    #[arg(long, default_value_t = 34)]
    pub width: usize,
    #[arg(long, default_value_t = 28)]
    pub height: usize,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tplus: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tminus: f64,
    #[arg(long, default_value = "left")]
    pub layout: String,
    #[arg(long)]
    pub frames: usize,
    #[arg(long, default_value = "gi,dgi,odgi", value_delimiter = ',')]
    pub protocols: Vec<String>,
    /// Independent repetitions per grid point.
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Model curve; defaults to `<out stem>.theory.csv`.
    #[arg(long)]
    pub theory: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Results table with the measured points.
    #[arg(long)]
    pub data: PathBuf,
    /// snr-vs-eps or snr-vs-tminus.
    #[arg(long)]
    pub curve: String,
    /// Rows with this protocol are fitted.
    #[arg(long)]
    pub protocol: String,
    #[arg(long, value_enum, default_value = "twin")]
    pub kind: KindArg,
    /// Held parameters: `name` takes the value from the data, `name=value`
    /// overrides it. Names: n2, M, delta_el, N (or N_pixels), H, epsilon,
    /// t_plus, t_minus.
    #[arg(long, value_delimiter = ',')]
    pub fix: Vec<String>,
    /// Write the fitted curve with its 1-sigma band.
    #[arg(long)]
    pub band: Option<PathBuf>,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numerical => 4,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Snr(a) => commands::snr(&a),
        Command::Nrf(a) => commands::nrf(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Fit(a) => commands::fit(&a),
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
