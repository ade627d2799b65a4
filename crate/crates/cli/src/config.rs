//! Scenario and sweep configuration documents.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use starcode::model::SweepAxis;
use starcode::{DeviceParams, DriveConfig, LogicalLabel, NoiseModel};

pub const PRESETS: [(&str, &str); 4] = [
    ("free_decay", include_str!("../presets/free_decay.toml")),
    ("echo_4qq", include_str!("../presets/echo_4qq.toml")),
    ("aqec", include_str!("../presets/aqec.toml")),
    ("ideal_breakeven", include_str!("../presets/ideal_breakeven.toml")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .with_context(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            format!("unknown preset {name:?}; available: {}", names.join(", "))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    FreeDecay,
    #[serde(rename = "echo_4qq")]
    Echo4qq,
    Aqec,
    IdealBreakeven,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::FreeDecay => "free_decay",
            Arm::Echo4qq => "echo_4qq",
            Arm::Aqec => "aqec",
            Arm::IdealBreakeven => "ideal_breakeven",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "free_decay" => Arm::FreeDecay,
            "echo_4qq" => Arm::Echo4qq,
            "aqec" => Arm::Aqec,
            "ideal_breakeven" => Arm::IdealBreakeven,
            _ => bail!("unknown arm {s:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
    /// Confusion matrix file; identity readout when absent.
    #[serde(default)]
    pub confusion: Option<PathBuf>,
}

fn default_snapshots() -> usize {
    109
}

fn default_tmax() -> f64 {
    27.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub preset: Option<String>,
    pub arm: Arm,
    pub initial: LogicalLabel,
    #[serde(default = "default_tmax")]
    pub tmax: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// Leading window (µs) excluded from the decay fit.
    #[serde(default)]
    pub skip: f64,
    /// Preset name or config path run with the same initial state and grid.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub tomography: Option<TomographySection>,
    /// Write the binary density-matrix dump.
    #[serde(default)]
    pub dump_states: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    #[serde(default)]
    device: Option<DeviceParams>,
    #[serde(default)]
    drive: DriveConfig,
    #[serde(default)]
    noise: NoiseModel,
    scenario: ScenarioSection,
}

/// Fully resolved and validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub device: DeviceParams,
    pub drive: DriveConfig,
    pub noise: NoiseModel,
    #[serde(flatten)]
    pub section: ScenarioSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Overlays `top` on `base`, recursing into tables.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn parse_value(text: &str, origin: &str) -> Result<toml::Value> {
    text.parse::<toml::Value>().with_context(|| format!("parsing {origin}"))
}

impl Scenario {
    /// Parses a scenario document; `[scenario] preset` supplies defaults for
    /// every section, overridden key by key.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let user = parse_value(text, "scenario config")?;
        let preset = user
            .get("scenario")
            .and_then(|s| s.get("preset"))
            .map(|p| p.as_str().map(str::to_owned).context("scenario.preset must be a string"))
            .transpose()?;
        let value = match &preset {
            Some(name) => {
                let mut base = parse_value(preset_text(name)?, &format!("preset {name}"))?;
                merge(&mut base, user);
                base
            }
            None => user,
        };
        let doc: ScenarioDocument = value.try_into().context("invalid scenario config")?;
        let device = doc.device.context("missing [device] section")?;
        let name = doc.scenario.name.clone().unwrap_or_else(|| {
            format!("{}_{}", doc.scenario.arm, doc.scenario.initial)
        });
        let scenario = Self {
            name,
            device,
            drive: doc.drive,
            noise: doc.noise,
            section: doc.scenario,
            base_dir: base_dir.to_path_buf(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, dir).with_context(|| format!("in {}", path.display()))
    }

    /// A bundled preset with the given initial state.
    pub fn preset(name: &str, initial: LogicalLabel) -> Result<Self> {
        let text = format!("[scenario]\npreset = {name:?}\ninitial = \"{initial}\"\n");
        Self::from_toml(&text, Path::new("."))
    }

    pub fn arm(&self) -> Arm {
        self.section.arm
    }

    pub fn initial(&self) -> LogicalLabel {
        self.section.initial
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate().context("[device]")?;
        self.drive.validate().context("[drive]")?;
        self.noise.validate().context("[noise]")?;
        let s = &self.section;
        if !(s.tmax >= 0.0 && s.tmax.is_finite()) {
            bail!("scenario.tmax: must be finite and non-negative, got {}", s.tmax);
        }
        if s.snapshots == 0 {
            bail!("scenario.snapshots: need at least one snapshot");
        }
        if s.snapshots == 1 && s.tmax != 0.0 {
            bail!("scenario.snapshots: a single snapshot requires tmax = 0");
        }
        if s.snapshots > 1 && s.tmax == 0.0 {
            bail!("scenario.tmax: must be positive with more than one snapshot");
        }
        if !(s.skip >= 0.0 && s.skip.is_finite()) {
            bail!("scenario.skip: must be finite and non-negative, got {}", s.skip);
        }
        if let Some(t) = &s.tomography {
            if t.shots == 0 {
                bail!("scenario.tomography.shots: must be positive");
            }
        }
        let d = &self.drive;
        let qq = d.w_r > 0.0 || d.w_b > 0.0;
        let qr = d.omega_qr1 > 0.0 || d.omega_qr2 > 0.0;
        match s.arm {
            Arm::FreeDecay => {
                if qq || qr {
                    bail!("drive: free_decay takes no sideband drives");
                }
            }
            Arm::Echo4qq => {
                if !(d.w_r > 0.0 && d.w_b > 0.0) {
                    bail!("drive.w_r, drive.w_b: echo_4qq requires both QQ sideband rates");
                }
                if qr {
                    bail!("drive.omega_qr1, drive.omega_qr2: echo_4qq takes no QR drives");
                }
            }
            Arm::Aqec | Arm::IdealBreakeven => {
                let required = [
                    ("drive.w_r", d.w_r),
                    ("drive.w_b", d.w_b),
                    ("drive.omega_qr1", d.omega_qr1),
                    ("drive.omega_qr2", d.omega_qr2),
                    ("noise.kappa_1", self.noise.kappa_1),
                    ("noise.kappa_2", self.noise.kappa_2),
                ];
                for (field, v) in required {
                    if v <= 0.0 {
                        bail!("{field}: {} requires a positive value", s.arm);
                    }
                }
            }
        }
        Ok(())
    }

    /// The baseline scenario, sharing this scenario's state and grid.
    pub fn baseline(&self) -> Result<Option<Scenario>> {
        let Some(reference) = &self.section.baseline else {
            return Ok(None);
        };
        let mut base = if PRESETS.iter().any(|(n, _)| n == reference) {
            Scenario::preset(reference, self.initial())?
        } else {
            Scenario::from_path(&self.base_dir.join(reference))?
        };
        base.section.initial = self.section.initial;
        base.section.tmax = self.section.tmax;
        base.section.snapshots = self.section.snapshots;
        base.section.baseline = None;
        base.section.tomography = None;
        base.section.dump_states = false;
        Ok(Some(base))
    }
}

fn default_sweep_points() -> usize {
    101
}

/// `start`, `stop` and `points` of a uniform detuning grid, or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Uniform { start: f64, stop: f64, points: usize },
    Values(Vec<f64>),
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Uniform { points: 0, .. } => Vec::new(),
            Grid::Uniform { start, points: 1, .. } => vec![*start],
            Grid::Uniform { start, stop, points } => (0..*points)
                .map(|i| start + (stop - start) * i as f64 / (*points - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub name: Option<String>,
    pub axis: SweepAxis,
    pub grid: Grid,
    pub tmax: f64,
    #[serde(default = "default_sweep_points")]
    pub points: usize,
    /// Initial basis state as `[q1, q2, r1, r2]` levels.
    pub initial: [usize; 4],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDocument {
    device: DeviceParams,
    #[serde(default)]
    drive: DriveConfig,
    sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub name: String,
    pub device: DeviceParams,
    pub drive: DriveConfig,
    pub section: SweepSection,
}

impl Sweep {
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: SweepDocument = toml::from_str(text).context("invalid sweep config")?;
        doc.device.validate().context("[device]")?;
        doc.drive.validate().context("[drive]")?;
        let s = &doc.sweep;
        let grid = s.grid.values();
        if grid.is_empty() {
            bail!("sweep.grid: detuning grid is empty");
        }
        if grid.iter().any(|d| !d.is_finite()) {
            bail!("sweep.grid: detunings must be finite");
        }
        if !(s.tmax > 0.0 && s.tmax.is_finite()) {
            bail!("sweep.tmax: must be positive, got {}", s.tmax);
        }
        if s.points < 2 {
            bail!("sweep.points: need at least two time points");
        }
        let name = s.name.clone().unwrap_or_else(|| "sweep".to_string());
        Ok(Self {
            name,
            device: doc.device,
            drive: doc.drive,
            section: doc.sweep,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_for_every_state() {
        for (name, _) in PRESETS {
            for l in LogicalLabel::ALL {
                let s = Scenario::preset(name, l).unwrap();
                assert_eq!(s.arm().name(), name);
                assert_eq!(s.initial(), l);
            }
        }
    }

    #[test]
    fn echo_preset_drives() {
        let s = Scenario::preset("echo_4qq", LogicalLabel::L0).unwrap();
        assert_eq!((s.drive.w_r, s.drive.w_b, s.drive.nu_r, s.drive.nu_b), (1.0, 1.7, 1.5, 0.0));
        assert_eq!((s.drive.omega_qr1, s.drive.omega_qr2), (0.0, 0.0));
    }

    #[test]
    fn user_keys_override_preset() {
        let text = "[scenario]\npreset = \"aqec\"\ninitial = \"L1\"\ntmax = 10.0\n[noise]\nkappa_1 = 1.0\n";
        let s = Scenario::from_toml(text, Path::new(".")).unwrap();
        assert_eq!(s.noise.kappa_1, 1.0);
        assert_eq!(s.noise.kappa_2, 0.48);
        assert_eq!(s.section.tmax, 10.0);
        assert_eq!(s.section.skip, 1.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[scenario]\npreset = \"aqec\"\ninitial = \"L0\"\n[noise]\nkapa_1 = 1.0\n";
        let err = format!("{:#}", Scenario::from_toml(text, Path::new(".")).unwrap_err());
        assert!(err.contains("kapa_1"), "{err}");
    }

    #[test]
    fn arm_requirements() {
        let text = "[scenario]\npreset = \"aqec\"\ninitial = \"L0\"\n[drive]\nomega_qr2 = 0.0\n";
        let err = format!("{:#}", Scenario::from_toml(text, Path::new(".")).unwrap_err());
        assert!(err.contains("omega_qr2"), "{err}");
        let text = "[scenario]\npreset = \"free_decay\"\ninitial = \"L0\"\n[drive]\nw_r = 1.0\n";
        assert!(Scenario::from_toml(text, Path::new(".")).is_err());
    }

    #[test]
    fn grids() {
        let g = Grid::Uniform {
            start: -1.0,
            stop: 1.0,
            points: 5,
        };
        assert_eq!(g.values(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(Grid::Values(vec![]).values().is_empty());
    }
}
