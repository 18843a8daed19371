use clap::{Args, Parser, Subcommand};
use photonq_cli::config::Kind;
use photonq_cli::{resolve, run_scenario, CliError, Invocation};
use serde_json::{json, Map, Value};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "photonq", version, about = "OAM photonics scenarios: modes, sorting, QKD, weak measurement, ghost identification")]
struct Cli {
    /// JSON scenario document; subcommand flags override its params.
    #[arg(long, global = true, env = "PHOTONQ_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "PHOTONQ_SEED")]
    seed: Option<u64>,
    /// Output directory (default out/<kind>).
    #[arg(long, global = true, env = "PHOTONQ_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "PHOTONQ_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an LG, vortex or ANG mode, or a forked hologram.
    Modes(ModesArgs),
    /// Crosstalk matrix and detector images of the log-polar sorter.
    Sorter(SorterArgs),
    /// High-dimensional BB84 or Ekert run.
    Qkd(QkdArgs),
    /// Quantum-secured imaging scan.
    Secimg(SecimgArgs),
    /// Direct measurement of an aperture-shaped OAM state.
    Weak(WeakArgs),
    /// Ghost identification of objects against a multiplexed hologram.
    Ghost(GhostArgs),
}

#[derive(Args)]
struct ModesArgs {
    /// lg, vortex, ang or hologram.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    ell: Option<i32>,
    /// ANG index.
    #[arg(long, allow_hyphen_values = true)]
    n: Option<i32>,
    #[arg(long)]
    band: Option<i32>,
    /// Propagation distance (m).
    #[arg(long)]
    z: Option<f64>,
    /// Hologram carrier period (m).
    #[arg(long)]
    period: Option<f64>,
}

#[derive(Args)]
struct SorterArgs {
    #[arg(long)]
    band: Option<i32>,
    #[arg(long)]
    copies: Option<usize>,
    /// oam or ang.
    #[arg(long)]
    basis: Option<String>,
    /// Skip the per-mode detector images.
    #[arg(long)]
    no_images: bool,
}

#[derive(Args)]
struct QkdArgs {
    /// bb84 or ekert.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    mubs: Option<usize>,
    /// none, intercept_resend or pns.
    #[arg(long)]
    eve: Option<String>,
    #[arg(long)]
    pulses: Option<u64>,
    /// Crosstalk CSV written by the sorter scenario.
    #[arg(long)]
    channel: Option<PathBuf>,
    /// Weak coherent source with vacuum, decoy and signal classes.
    #[arg(long)]
    decoy: bool,
    /// Write the per-pulse transcript CSV.
    #[arg(long)]
    transcript: bool,
}

#[derive(Args)]
struct SecimgArgs {
    #[arg(long)]
    object: Option<PathBuf>,
    #[arg(long)]
    spoof: Option<PathBuf>,
    /// none or spoof.
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    pulses_per_pixel: Option<u32>,
}

#[derive(Args)]
struct WeakArgs {
    #[arg(long)]
    band: Option<i32>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Aperture width (rad).
    #[arg(long)]
    aperture: Option<f64>,
    /// Aperture rotation (rad).
    #[arg(long, allow_hyphen_values = true)]
    rotate: Option<f64>,
    /// Photons per setting; 0 is exact.
    #[arg(long)]
    photons: Option<u64>,
}

#[derive(Args)]
struct GhostArgs {
    /// Directory of object PGMs.
    #[arg(long)]
    objects: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<u64>,
    /// Expected accidentals per detector over the run.
    #[arg(long)]
    accidental: Option<f64>,
}

fn put<T: serde::Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.to_string(), json!(v));
    }
}

fn overrides(cmd: &Command) -> (Kind, Map<String, Value>) {
    let mut m = Map::new();
    let kind = match cmd {
        Command::Modes(a) => {
            put(&mut m, "family", a.family.as_ref());
            put(&mut m, "ell", a.ell);
            put(&mut m, "n", a.n);
            put(&mut m, "band", a.band);
            put(&mut m, "z", a.z);
            put(&mut m, "period", a.period);
            Kind::Modes
        }
        Command::Sorter(a) => {
            put(&mut m, "band", a.band);
            put(&mut m, "copies", a.copies);
            put(&mut m, "basis", a.basis.as_ref());
            put(&mut m, "images", a.no_images.then_some(false));
            Kind::Sorter
        }
        Command::Qkd(a) => {
            put(&mut m, "protocol", a.protocol.as_ref());
            put(&mut m, "dimension", a.dim);
            put(&mut m, "mubs", a.mubs);
            put(&mut m, "eve", a.eve.as_ref());
            put(&mut m, "pulses", a.pulses);
            put(&mut m, "channel", a.channel.as_ref());
            put(&mut m, "source", a.decoy.then(photonq::qkd::Source::default_decoy));
            put(&mut m, "transcript", a.transcript.then_some(true));
            Kind::Qkd
        }
        Command::Secimg(a) => {
            put(&mut m, "object", a.object.as_ref());
            put(&mut m, "spoof", a.spoof.as_ref());
            put(&mut m, "attack", a.attack.as_ref());
            put(&mut m, "pulses_per_pixel", a.pulses_per_pixel);
            Kind::Secimg
        }
        Command::Weak(a) => {
            put(&mut m, "band", a.band);
            put(&mut m, "alpha", a.alpha);
            put(&mut m, "aperture", a.aperture);
            put(&mut m, "rotate", a.rotate);
            put(&mut m, "photons", a.photons);
            Kind::Weak
        }
        Command::Ghost(a) => {
            put(&mut m, "objects", a.objects.as_ref());
            put(&mut m, "pairs", a.pairs);
            put(&mut m, "accidental", a.accidental);
            Kind::Ghost
        }
    };
    (kind, m)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Validation(format!("threads: {e}")))?;
    }
    let config_text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let (kind, overrides) = overrides(&cli.command);
    let inv = Invocation { config_text, seed: cli.seed, out: cli.out, overrides };
    let (cfg, out) = resolve(kind, &inv)?;
    let manifest = run_scenario(&cfg, &out)?;
    println!("{} outputs written to {}", manifest.outputs.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
