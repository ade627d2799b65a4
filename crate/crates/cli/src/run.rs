//! Scenario and sweep execution.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use starcode::model::{build_static_hamiltonian, number_operator};
use starcode::operators::{Q1, Q2};
use starcode::solver::{sweep_chevron, uniform_grid, write_series, write_snapshots, SolverStats};
use starcode::tomography::{
    reconstruct_all, simulate_counts, ConfusionMatrix, MleOptions, RotationSet, Tomogram,
};
use starcode::{
    build_full_hamiltonian, build_rotating_hamiltonian, coherence_metric, collapse_operators, error_population,
    evolve, fit_exponential, logical_state, DecayFit, DensityMatrix, HamiltonianSpec, SolverOptions, Trajectory,
};

use crate::config::{Arm, Scenario, Sweep};

/// Hamiltonian used for each arm.
pub fn hamiltonian(scenario: &Scenario) -> HamiltonianSpec {
    match scenario.arm() {
        Arm::IdealBreakeven => build_rotating_hamiltonian(&scenario.device, &scenario.drive),
        Arm::FreeDecay | Arm::Echo4qq | Arm::Aqec => build_full_hamiltonian(&scenario.device, &scenario.drive),
    }
}

pub fn simulate(scenario: &Scenario, options: &SolverOptions) -> Result<Trajectory> {
    let h = hamiltonian(scenario);
    let collapse = collapse_operators(&scenario.noise);
    let rho0 = logical_state(scenario.initial().into()).to_density();
    let times = uniform_grid(scenario.section.tmax, scenario.section.snapshots);
    evolve(&h, &collapse, &rho0, &times, options).with_context(|| format!("solving scenario {}", scenario.name))
}

/// Per-snapshot metrics: error population, coherence, `⟨n_q1⟩`, `⟨n_q2⟩`.
pub fn metrics(scenario: &Scenario, traj: &Trajectory) -> Result<DMatrix<f64>> {
    let label = scenario.initial();
    let nq = [number_operator(Q1), number_operator(Q2)];
    let mut out = DMatrix::zeros(traj.len(), 4);
    for (i, rho) in traj.states.iter().enumerate() {
        out[(i, 0)] = error_population(rho, label)?;
        out[(i, 1)] = coherence_metric(rho, label)?;
        for (j, n) in nq.iter().enumerate() {
            out[(i, 2 + j)] = starcode::expectation(rho, n)?.re;
        }
    }
    Ok(out)
}

pub const SERIES_HEADERS: [&str; 4] = ["error_population", "coherence", "n_q1", "n_q2"];

#[derive(Debug, Clone, Serialize)]
pub struct FitOutcome {
    pub fit: Option<DecayFit>,
    pub error: Option<String>,
}

impl FitOutcome {
    fn of(times: &[f64], coherence: &[f64], skip: f64) -> Self {
        match fit_exponential(times, coherence, skip) {
            Ok(fit) => Self {
                fit: Some(fit),
                error: None,
            },
            Err(e) => Self {
                fit: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn tau(&self) -> Option<f64> {
        self.fit.map(|f| f.tau)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub name: String,
    pub arm: Arm,
    pub coherence_fit: FitOutcome,
    pub improvement_factor: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotTomography {
    pub t_us: f64,
    pub fidelity: Option<f64>,
    pub cost: Option<f64>,
    pub iterations: Option<u64>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TomographySummary {
    pub shots: u64,
    pub seed: u64,
    pub snapshots: Vec<SnapshotTomography>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub initial_error_population: f64,
    pub initial_coherence: f64,
    pub final_error_population: f64,
    pub final_coherence: f64,
    pub coherence_fit: FitOutcome,
    pub baseline: Option<BaselineSummary>,
    pub solver: SolverStats,
    pub tomography: Option<TomographySummary>,
}

/// Everything a scenario produces, before anything is written.
pub struct RunResult {
    pub summary: Summary,
    pub times: Vec<f64>,
    pub series: DMatrix<f64>,
    pub states: Vec<DensityMatrix>,
    pub tomograms: Vec<Tomogram>,
}

fn coherence_fit(scenario: &Scenario, options: &SolverOptions) -> Result<(Trajectory, DMatrix<f64>, FitOutcome)> {
    let traj = simulate(scenario, options)?;
    let series = metrics(scenario, &traj)?;
    let coherence: Vec<f64> = series.column(1).iter().copied().collect();
    let fit = FitOutcome::of(&traj.times, &coherence, scenario.section.skip);
    Ok((traj, series, fit))
}

pub fn run_scenario(scenario: &Scenario, options: &SolverOptions) -> Result<RunResult> {
    let (traj, series, fit) = coherence_fit(scenario, options)?;
    let baseline = match scenario.baseline()? {
        Some(base) => {
            let (_, _, base_fit) = coherence_fit(&base, options).context("baseline run")?;
            let improvement_factor = match (fit.tau(), base_fit.tau()) {
                (Some(a), Some(b)) => Some(a / b),
                _ => None,
            };
            Some(BaselineSummary {
                name: base.name.clone(),
                arm: base.arm(),
                coherence_fit: base_fit,
                improvement_factor,
            })
        }
        None => None,
    };

    let mut tomograms = Vec::new();
    let tomography = match &scenario.section.tomography {
        Some(t) => {
            let confusion = match &t.confusion {
                Some(path) => {
                    let path = scenario.base_dir.join(path);
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    ConfusionMatrix::parse(&text).with_context(|| format!("in {}", path.display()))?
                }
                None => ConfusionMatrix::identity(),
            };
            let set = RotationSet::standard();
            for (i, rho) in traj.states.iter().enumerate() {
                tomograms.push(simulate_counts(rho, set.as_slice(), &confusion, t.shots, t.seed + i as u64)?);
            }
            let results = reconstruct_all(&tomograms, set.as_slice(), &confusion, &MleOptions::default());
            let snapshots = results
                .into_iter()
                .zip(traj.times.iter().zip(&traj.states))
                .map(|(r, (&t_us, rho))| match r {
                    Ok(m) => SnapshotTomography {
                        t_us,
                        fidelity: starcode::tomography::fidelity(
                            &m.state,
                            &starcode::operators::qutrit_pair_state(rho).expect("full-space state"),
                        )
                        .ok(),
                        cost: Some(m.cost),
                        iterations: Some(m.iterations),
                        converged: Some(m.converged),
                        error: None,
                    },
                    Err(e) => SnapshotTomography {
                        t_us,
                        fidelity: None,
                        cost: None,
                        iterations: None,
                        converged: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            Some(TomographySummary {
                shots: t.shots,
                seed: t.seed,
                snapshots,
            })
        }
        None => None,
    };

    let last = series.nrows() - 1;
    let summary = Summary {
        scenario: scenario.clone(),
        initial_error_population: series[(0, 0)],
        initial_coherence: series[(0, 1)],
        final_error_population: series[(last, 0)],
        final_coherence: series[(last, 1)],
        coherence_fit: fit,
        baseline,
        solver: traj.stats,
        tomography,
    };
    Ok(RunResult {
        summary,
        times: traj.times,
        series,
        states: traj.states,
        tomograms,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes `series.tsv`, `summary.json` and the optional dumps into `dir`.
pub fn write_result(result: &RunResult, dump_states: bool, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let series = File::create(dir.join("series.tsv"))?;
    write_series(BufWriter::new(series), &SERIES_HEADERS, &result.times, &result.series)?;
    fs::write(dir.join("summary.json"), to_json(&result.summary)?)?;
    if dump_states {
        let f = File::create(dir.join("states.bin"))?;
        write_snapshots(BufWriter::new(f), &result.times, &result.states)?;
    }
    if !result.tomograms.is_empty() {
        let tdir = dir.join("tomograms");
        fs::create_dir_all(&tdir)?;
        for (i, t) in result.tomograms.iter().enumerate() {
            fs::write(tdir.join(format!("snapshot_{i:04}.txt")), t.to_text())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub name: String,
    pub axis: starcode::model::SweepAxis,
    pub detunings: Vec<f64>,
    pub fringe_frequency_q1: Vec<Option<f64>>,
    pub fringe_frequency_q2: Vec<Option<f64>>,
    pub center_q1: Option<f64>,
    pub center_q2: Option<f64>,
}

pub struct SweepResult {
    pub summary: SweepSummary,
    pub map: starcode::solver::ChevronMap,
}

pub fn run_sweep(sweep: &Sweep, options: &SolverOptions) -> Result<SweepResult> {
    let s = &sweep.section;
    let grid = s.grid.values();
    let times = uniform_grid(s.tmax, s.points);
    let rho0 = DensityMatrix::basis(&starcode::operators::FULL_DIMS, &s.initial).context("sweep.initial")?;
    // Validates the unshifted Hamiltonian once before fanning out.
    let _ = build_static_hamiltonian(&sweep.device, &sweep.drive);
    let map = sweep_chevron(&sweep.device, &sweep.drive, s.axis, &grid, &times, &rho0, options)
        .with_context(|| format!("sweeping {}", sweep.name))?;
    let single = grid.len() < 3;
    let summary = SweepSummary {
        name: sweep.name.clone(),
        axis: s.axis,
        detunings: grid,
        fringe_frequency_q1: map.fringe_frequencies(0),
        fringe_frequency_q2: map.fringe_frequencies(1),
        center_q1: if single { None } else { map.center_estimate(0) },
        center_q2: if single { None } else { map.center_estimate(1) },
    };
    Ok(SweepResult { summary, map })
}

pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let map = &result.map;
    for (name, m) in [("chevron_q1.tsv", &map.n_q1), ("chevron_q2.tsv", &map.n_q2)] {
        let mut text = String::from("detuning_mhz");
        for t in &map.times {
            text.push_str(&format!("\t{t:.6}"));
        }
        text.push('\n');
        for (i, d) in map.detunings.iter().enumerate() {
            text.push_str(&format!("{d:.6}"));
            for j in 0..map.times.len() {
                text.push_str(&format!("\t{:.12e}", m[(i, j)]));
            }
            text.push('\n');
        }
        fs::write(dir.join(name), text)?;
    }
    fs::write(dir.join("summary.json"), to_json(&result.summary)?)?;
    Ok(())
}
