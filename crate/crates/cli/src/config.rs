//! Run configurations: resolved from flags, embedded in every output and reloadable.

use crate::{config_error, DensityArgs, Failure, Format};
use bbs_core::ensemble::Protocol;

/// A reservoir given either way, with both forms recorded.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Density {
    pub p: f64,
    /// `p/(1−p)`; absent for a full half.
    pub z: Option<f64>,
}

impl Density {
    fn from_p(p: f64) -> Result<Self, Failure> {
        if !(0.0..=1.0).contains(&p) {
            return Err(config_error(format!("density {p} outside [0, 1]")));
        }
        Ok(Density { p, z: (p < 1.0).then(|| p / (1.0 - p)) })
    }

    fn from_z(z: f64) -> Result<Self, Failure> {
        if !(z >= 0.0 && z.is_finite()) {
            return Err(config_error(format!("fugacity {z} must be finite and non-negative")));
        }
        Ok(Density { p: z / (1.0 + z), z: Some(z) })
    }
}

pub fn resolve(p: Option<f64>, z: Option<f64>, side: &str) -> Result<Density, Failure> {
    match (p, z) {
        (Some(p), None) => Density::from_p(p),
        (None, Some(z)) => Density::from_z(z),
        (None, None) => Err(config_error(format!("{side} density missing: give --p{side} or --z{side}"))),
        (Some(_), Some(_)) => Err(config_error(format!("give only one of --p{side} and --z{side}"))),
    }
}

pub fn resolve_pair(d: &DensityArgs) -> Result<(Density, Density), Failure> {
    Ok((resolve(d.p_left, d.z_left, "L")?, resolve(d.p_right, d.z_right, "R")?))
}

/// Everything that determines a simulation's output files.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimulateConfig {
    pub command: String,
    #[serde(rename = "L")]
    pub len: usize,
    pub l: u32,
    pub left: Density,
    pub right: Density,
    pub wall: usize,
    pub t: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub window: usize,
    pub stride: usize,
    pub max_amplitude: usize,
    pub r_min: Option<i64>,
    pub r_max: Option<i64>,
    pub format: Format,
}

impl SimulateConfig {
    pub fn protocol(&self) -> Protocol {
        Protocol {
            wall: self.wall,
            window: self.window,
            stride: self.stride,
            max_amplitude: self.max_amplitude,
            measure_currents: self.left == self.right,
            ..Protocol::domain_wall(self.len, self.l, self.left.p, self.right.p, self.t.clone(), self.samples, self.seed)
        }
    }
}

/// Metadata written next to simulation outputs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunMetadata {
    pub format: String,
    pub version: String,
    pub config: SimulateConfig,
    pub seed: u64,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
}

pub const METADATA_FORMAT: &str = "bbs-run v1";
pub const PREDICTION_FORMAT: &str = "bbs-predict v1";
