use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use starcode::circuit::{qq_sideband_rate, qr_sideband_rate, CircuitParams};
use starcode::operators::{StateVector, E, F, G, QUTRIT_PAIR_DIMS};
use starcode::solver::{read_snapshots, refill_rate};
use starcode::tomography::{
    fidelity, reconstruct_all, simulate_counts, ConfusionMatrix, MleOptions, RotationSet,
};
use starcode::{coherence_metric, error_population, fit_exponential, LogicalLabel, SolverOptions};
use starcode_cli::run::{to_json, write_result, write_sweep};
use starcode_cli::{run_scenario, run_sweep, Scenario, Sweep};

#[derive(Parser)]
#[command(name = "starcode", version, about = "Two-transmon autonomous error-correction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write series, summary and optional tomograms.
    Run {
        config: PathBuf,
        /// Output directory (default: `<name>_out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a chevron sweep and write the maps and center estimate.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate tomography of every state in a snapshot dump and reconstruct it.
    Tomo {
        snapshot: PathBuf,
        /// Confusion matrix file, or `ideal` for perfect readout.
        confusion: String,
        #[arg(long, default_value_t = 5000)]
        shots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Logical label for the coherence and error-population columns.
        #[arg(long, default_value = "L0")]
        label: String,
    },
    /// Fit `A·exp(−t/τ) + C` to one column of a series file.
    Fit {
        series: PathBuf,
        /// Column header to fit (default: `coherence`).
        #[arg(long, default_value = "coherence")]
        column: String,
        /// Leading window (µs) excluded from the fit.
        #[arg(long, default_value_t = 0.0)]
        skip: f64,
    },
    /// Refill and sideband rate calculations.
    Rates {
        /// QR drive rate Ω (MHz) for the refill rate.
        #[arg(long)]
        omega: Option<f64>,
        /// Resonator decay rate κ (MHz) for the refill rate.
        #[arg(long)]
        kappa: Option<f64>,
        /// Transmon-resonator coupling g (MHz) for the QR sideband rate.
        #[arg(long)]
        g_qr: Option<f64>,
        /// Transmon frequency modulation amplitude (MHz) for the QR sideband rate.
        #[arg(long)]
        eps_q: Option<f64>,
        /// Transmon-resonator detuning (MHz) for the QR sideband rate.
        #[arg(long)]
        delta: Option<f64>,
        /// Coupler DC flux (Φ₀) for the QQ sideband rate.
        #[arg(long)]
        phi_dc: Option<f64>,
        /// Flux modulation amplitude (rad of πΦ/Φ₀) for the QQ sideband rate.
        #[arg(long)]
        eps_flux: Option<f64>,
        /// Transmon frequencies (GHz) for the QQ sideband rate.
        #[arg(long, num_args = 2, default_values_t = [3.2049, 3.6625])]
        omega_q: Vec<f64>,
    },
}

#[derive(Serialize)]
struct ErrorRecord {
    error: String,
    causes: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = ErrorRecord {
                error: e.to_string(),
                causes: e.chain().skip(1).map(|c| c.to_string()).collect(),
            };
            eprintln!("{}", serde_json::to_string(&record).expect("string fields"));
            ExitCode::from(2)
        }
    }
}

fn default_out(config: &Path, name: &str) -> PathBuf {
    config.parent().unwrap_or(Path::new(".")).join(format!("{name}_out"))
}

fn execute(command: Command) -> Result<()> {
    let options = SolverOptions::default();
    match command {
        Command::Run { config, out } => {
            let scenario = Scenario::from_path(&config)?;
            let result = run_scenario(&scenario, &options)?;
            let dir = out.unwrap_or_else(|| default_out(&config, &scenario.name));
            write_result(&result, scenario.section.dump_states, &dir)?;
            print!("{}", to_json(&result.summary)?);
        }
        Command::Sweep { config, out } => {
            let sweep = Sweep::from_path(&config)?;
            let result = run_sweep(&sweep, &options)?;
            let dir = out.unwrap_or_else(|| default_out(&config, &sweep.name));
            write_sweep(&result, &dir)?;
            print!("{}", to_json(&result.summary)?);
        }
        Command::Tomo {
            snapshot,
            confusion,
            shots,
            seed,
            label,
        } => tomo(&snapshot, &confusion, shots, seed, &label)?,
        Command::Fit { series, column, skip } => {
            let (t, y) = read_column(&series, &column)?;
            let fit = fit_exponential(&t, &y, skip).with_context(|| format!("fitting {column}"))?;
            print!("{}", to_json(&fit)?);
        }
        Command::Rates {
            omega,
            kappa,
            g_qr,
            eps_q,
            delta,
            phi_dc,
            eps_flux,
            omega_q,
        } => rates(omega, kappa, g_qr, eps_q, delta, phi_dc, eps_flux, &omega_q)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct TomoRow {
    t_us: f64,
    fidelity: f64,
    error_population: f64,
    coherence: f64,
    cost: f64,
    iterations: u64,
    converged: bool,
}

fn tomo(snapshot: &Path, confusion: &str, shots: u64, seed: u64, label: &str) -> Result<()> {
    let label: LogicalLabel = label.parse()?;
    let file = fs::File::open(snapshot).with_context(|| format!("opening {}", snapshot.display()))?;
    let snaps = read_snapshots(std::io::BufReader::new(file)).with_context(|| format!("reading {}", snapshot.display()))?;
    let confusion = if confusion == "ideal" {
        ConfusionMatrix::identity()
    } else {
        let text = fs::read_to_string(confusion).with_context(|| format!("reading {confusion}"))?;
        ConfusionMatrix::parse(&text).with_context(|| format!("in {confusion}"))?
    };
    let set = RotationSet::standard();
    let tomograms = snaps
        .iter()
        .enumerate()
        .map(|(i, (_, rho))| simulate_counts(rho, set.as_slice(), &confusion, shots, seed + i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let results = reconstruct_all(&tomograms, set.as_slice(), &confusion, &MleOptions::default());
    let mut rows = Vec::with_capacity(snaps.len());
    for ((t, rho), r) in snaps.iter().zip(results) {
        let m = r.with_context(|| format!("reconstructing snapshot at t = {t} µs"))?;
        let truth = starcode::operators::qutrit_pair_state(rho)?;
        rows.push(TomoRow {
            t_us: *t,
            fidelity: fidelity(&m.state, &truth)?,
            error_population: error_population(&m.state, label)?,
            coherence: coherence_metric(&m.state, label)?,
            cost: m.cost,
            iterations: m.iterations,
            converged: m.converged,
        });
    }
    print!("{}", to_json(&rows)?);
    Ok(())
}

fn read_column(path: &Path, column: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().context("series file is empty")?.split('\t').collect();
    let idx = header
        .iter()
        .position(|h| *h == column)
        .with_context(|| format!("no column {column:?}; header is {header:?}"))?;
    if idx == 0 {
        bail!("column {column:?} is the time axis");
    }
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let parse = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .with_context(|| format!("row {}: missing field {i}", n + 2))?
                .trim()
                .parse()
                .with_context(|| format!("row {}: field {i}", n + 2))
        };
        t.push(parse(0)?);
        y.push(parse(idx)?);
    }
    Ok((t, y))
}

#[derive(Serialize, Default)]
struct Rates {
    #[serde(skip_serializing_if = "Option::is_none")]
    refill_rate_mhz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qr_sideband_rate_mhz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qq_sideband_rate_mhz: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn rates(
    omega: Option<f64>,
    kappa: Option<f64>,
    g_qr: Option<f64>,
    eps_q: Option<f64>,
    delta: Option<f64>,
    phi_dc: Option<f64>,
    eps_flux: Option<f64>,
    omega_q: &[f64],
) -> Result<()> {
    let mut out = Rates::default();
    if let (Some(o), Some(k)) = (omega, kappa) {
        out.refill_rate_mhz = Some(refill_rate(o, k)?);
    }
    if let (Some(g), Some(e), Some(d)) = (g_qr, eps_q, delta) {
        out.qr_sideband_rate_mhz = Some(qr_sideband_rate(g, e, d)?);
    }
    if let (Some(phi), Some(eps)) = (phi_dc, eps_flux) {
        let ee = StateVector::basis(&QUTRIT_PAIR_DIMS, &[E, E])?;
        let gf = StateVector::basis(&QUTRIT_PAIR_DIMS, &[G, F])?;
        out.qq_sideband_rate_mhz = Some(qq_sideband_rate(
            &CircuitParams::reference(),
            phi,
            eps,
            (&ee, &gf),
            omega_q[0],
            omega_q[1],
        )?);
    }
    if out.refill_rate_mhz.is_none() && out.qr_sideband_rate_mhz.is_none() && out.qq_sideband_rate_mhz.is_none() {
        bail!("no complete parameter set: give --omega/--kappa, --g-qr/--eps-q/--delta, or --phi-dc/--eps-flux");
    }
    print!("{}", to_json(&out)?);
    Ok(())
}
