//! Scenario documents: `{"kind": ..., "version": 1, "seed": ..., "params": {...}}`.
//!
//! Every level rejects unknown keys. Missing parameters take the defaults below.

use crate::CliError;
use photonq::ghostid::FilterGeometry;
use photonq::modes::BeamParams;
use photonq::qkd::{Eavesdropper, Polarization, Protocol, Source};
use photonq::sorter::{SortBasis, SorterConfig};
use photonq::GridSpec;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::PathBuf;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Modes,
    Sorter,
    Qkd,
    Secimg,
    Weak,
    Ghost,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Modes => "modes",
            Kind::Sorter => "sorter",
            Kind::Qkd => "qkd",
            Kind::Secimg => "secimg",
            Kind::Weak => "weak",
            Kind::Ghost => "ghost",
        }
    }
}

/// The document as written, before the parameter tree is typed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kind: Kind,
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: Option<serde_json::Value>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        if raw.version != CONFIG_VERSION {
            return Err(CliError::Validation(format!("config version {} unsupported, expected {CONFIG_VERSION}", raw.version)));
        }
        Ok(raw)
    }
}

/// Fully typed parameters of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Modes(ModesParams),
    Sorter(SorterParams),
    Qkd(QkdParams),
    Secimg(SecimgParams),
    Weak(WeakParams),
    Ghost(GhostParams),
}

impl Params {
    pub fn parse(kind: Kind, value: Option<serde_json::Value>) -> Result<Self, CliError> {
        let value = value.unwrap_or_else(|| serde_json::json!({}));
        fn typed<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T, CliError> {
            serde_json::from_value(v).map_err(|e| CliError::Validation(format!("params: {e}")))
        }
        Ok(match kind {
            Kind::Modes => Params::Modes(typed(value)?),
            Kind::Sorter => Params::Sorter(typed(value)?),
            Kind::Qkd => Params::Qkd(typed(value)?),
            Kind::Secimg => Params::Secimg(typed(value)?),
            Kind::Weak => Params::Weak(typed(value)?),
            Kind::Ghost => Params::Ghost(typed(value)?),
        })
    }

    pub fn kind(&self) -> Kind {
        match self {
            Params::Modes(_) => Kind::Modes,
            Params::Sorter(_) => Kind::Sorter,
            Params::Qkd(_) => Kind::Qkd,
            Params::Secimg(_) => Kind::Secimg,
            Params::Weak(_) => Kind::Weak,
            Params::Ghost(_) => Kind::Ghost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub kind: Kind,
    pub version: u32,
    pub seed: u64,
    pub params: Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeFamily {
    Lg,
    Vortex,
    Ang,
    Hologram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesParams {
    pub grid: GridSpec,
    pub family: ModeFamily,
    pub ell: i32,
    /// ANG index.
    pub n: i32,
    /// OAM band for ANG synthesis and the spectrum output.
    pub band: i32,
    pub beam: BeamParams,
    /// Propagation distance for LG modes (m).
    pub z: f64,
    /// Carrier period of the forked hologram (m).
    pub period: f64,
}

impl Default for ModesParams {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            family: ModeFamily::Vortex,
            ell: 1,
            n: 0,
            band: 5,
            beam: BeamParams::default(),
            z: 0.0,
            period: 200e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SorterParams {
    pub band: i32,
    pub copies: usize,
    pub basis: SortBasis,
    /// Write a detector-plane PGM per mode.
    pub images: bool,
    /// Full geometry; `None` uses the default sorter with `copies` and `basis`.
    pub geometry: Option<SorterConfig>,
}

impl Default for SorterParams {
    fn default() -> Self {
        Self { band: 12, copies: 9, basis: SortBasis::Oam, images: true, geometry: None }
    }
}

impl SorterParams {
    pub fn resolved(&self) -> SorterConfig {
        let mut cfg = self.geometry.clone().unwrap_or_default();
        cfg.copies = self.copies;
        cfg.basis = self.basis;
        if cfg.basis == SortBasis::Ang {
            cfg.ang_modes = (2 * self.band + 1).max(0) as usize;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QkdParams {
    pub protocol: Protocol,
    pub dimension: usize,
    pub mubs: usize,
    pub eve: Eavesdropper,
    pub pulses: u64,
    pub source: Source,
    /// Crosstalk CSV applied to matched-basis transmissions.
    pub channel: Option<PathBuf>,
    /// Write the per-pulse transcript CSV.
    pub transcript: bool,
    pub detection_efficiency: f64,
    pub dark_count: f64,
    pub pns_block_fraction: f64,
}

impl Default for QkdParams {
    fn default() -> Self {
        Self {
            protocol: Protocol::Bb84,
            dimension: 2,
            mubs: 2,
            eve: Eavesdropper::None,
            pulses: 100_000,
            source: Source::SinglePhoton,
            channel: None,
            transcript: false,
            detection_efficiency: 1.0,
            dark_count: 0.0,
            pns_block_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Spoof,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecimgParams {
    /// Object reflectivity PGM; `None` uses a built-in disk of side `size`.
    pub object: Option<PathBuf>,
    /// Spoof image PGM; `None` uses a built-in square.
    pub spoof: Option<PathBuf>,
    pub attack: AttackKind,
    pub spoof_state: Polarization,
    pub pulses_per_pixel: u32,
    pub size: usize,
}

impl Default for SecimgParams {
    fn default() -> Self {
        Self { object: None, spoof: None, attack: AttackKind::None, spoof_state: Polarization::H, pulses_per_pixel: 64, size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakParams {
    pub band: i32,
    pub alpha: f64,
    /// Angular aperture width (rad).
    pub aperture: f64,
    /// Aperture rotation (rad).
    pub rotate: f64,
    /// Photons per polarization setting; 0 is exact.
    pub photons: u64,
    pub theta0: f64,
}

impl Default for WeakParams {
    fn default() -> Self {
        Self { band: 13, alpha: PI / 9.0, aperture: 2.0 * PI / 9.0, rotate: 0.0, photons: 0, theta0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectPreset {
    Two,
    Four,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhostParams {
    /// Directory of object PGMs (read in name order); `None` uses `preset`.
    pub objects: Option<PathBuf>,
    pub preset: ObjectPreset,
    /// Grid for presets.
    pub grid: GridSpec,
    /// Pixel pitch (m) assigned to PGM objects.
    pub pitch: f64,
    pub pairs: u64,
    /// Expected accidental coincidences per detector over a run.
    pub accidental: f64,
    pub filter: FilterGeometry,
}

impl Default for GhostParams {
    fn default() -> Self {
        Self {
            objects: None,
            preset: ObjectPreset::Four,
            grid: GridSpec::new(512, 512, 5.12e-3, 5.12e-3, photonq::field::HENE_WAVELENGTH).expect("static grid"),
            pitch: 10e-6,
            pairs: 10_000,
            accidental: 5.0,
            filter: FilterGeometry::default(),
        }
    }
}
