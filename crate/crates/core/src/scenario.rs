//! TOML scenario files and the built-in presets.
//!
//! A scenario names its shapes, regions and operators; the `experiment` and
//! `inverse` sections refer to them by name. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::TimeGrid;
use crate::geometry::{CavityShape, Grid, GridSpec, Parameterization, Region};
use crate::inverse::{Design, InitialPolicy, OptimizerSettings};
use crate::observe::{ObservationKind, Weights};
use crate::operators::{CavityCondition, EllipticOperator};
use crate::sources::{BoundaryInput, Profile, Source};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedShape {
    pub name: String,
    #[serde(flatten)]
    pub shape: CavityShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRegion {
    pub name: String,
    #[serde(flatten)]
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    #[serde(default = "zero_profile")]
    pub u0: Profile,
    /// Initial data for the second cavity, when it differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0_alt: Option<Profile>,
}

fn zero_profile() -> Profile {
    Profile::Zero
}

impl Default for Initial {
    fn default() -> Self {
        Initial { u0: Profile::Zero, u0_alt: None }
    }
}

/// What the `counterexample`, `distinguish` and `q2` commands expect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Distinguishable,
    Indistinguishable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub d1: String,
    pub d2: String,
    pub operator: String,
    /// Operator for the second cavity (two-operator comparisons).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator2: Option<String>,
    pub observation: ObservationKind,
    pub region: String,
    #[serde(default)]
    pub window_start: f64,
    #[serde(default)]
    pub cavity_bc: CavityCondition,
    #[serde(default)]
    pub weights: Weights,
    /// Regions where the source must vanish besides the two cavities.
    #[serde(default)]
    pub exclusion: Vec<String>,
    /// Exit with status 2 when a source hypothesis fails.
    #[serde(default)]
    pub require_compliance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectation>,
    /// Maximum relative deviation of the solution from `t f0` (time-affine sources).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSection {
    /// Shape that generates the synthetic data.
    pub truth: String,
    #[serde(default)]
    pub policy: InitialPolicy,
    #[serde(default)]
    pub lambda: f64,
    pub harmonics: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    /// Hausdorff distance in units of `h` below which the command reports PASS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_within_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: String,
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub shapes: Vec<NamedShape>,
    #[serde(default)]
    pub regions: Vec<NamedRegion>,
    pub operators: BTreeMap<String, EllipticOperator>,
    pub time: TimeGrid,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux: Option<BoundaryInput>,
    #[serde(default)]
    pub initial: Initial,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

const PRESETS: &[(&str, &str)] = &[
    ("nested-squares", include_str!("../presets/nested-squares.toml")),
    ("t-affine-source", include_str!("../presets/t-affine-source.toml")),
    ("bang-bang-q1", include_str!("../presets/bang-bang-q1.toml")),
    ("constant-coeff-q2", include_str!("../presets/constant-coeff-q2.toml")),
    ("robin-cavity", include_str!("../presets/robin-cavity.toml")),
    ("neumann-source", include_str!("../presets/neumann-source.toml")),
    ("zero-u0-smooth-mu", include_str!("../presets/zero-u0-smooth-mu.toml")),
    ("boundary-kink", include_str!("../presets/boundary-kink.toml")),
    ("circle-reconstruction", include_str!("../presets/circle-reconstruction.toml")),
    ("jump-location-sweep", include_str!("../presets/jump-location-sweep.toml")),
    ("ramp-width-sweep", include_str!("../presets/ramp-width-sweep.toml")),
];

/// Short names accepted by `--case`.
const ALIASES: &[(&str, &str)] = &[
    ("bang-bang", "bang-bang-q1"),
    ("q1", "bang-bang-q1"),
    ("q2", "constant-coeff-q2"),
    ("t-affine", "t-affine-source"),
    ("robin", "robin-cavity"),
    ("neumann", "neumann-source"),
    ("smooth-mu", "zero-u0-smooth-mu"),
    ("circle", "circle-reconstruction"),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// TOML text of a preset, by name or alias.
pub fn preset_source(name: &str) -> Result<&'static str> {
    let key = ALIASES.iter().find(|(a, _)| *a == name).map_or(name, |(_, t)| *t);
    PRESETS
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::MissingReference(format!("no preset named '{name}' (known: {})", preset_names().join(", "))))
}

fn parse_error(e: toml::de::Error) -> Error {
    Error::ConfigParse(e.to_string().trim_end().to_string())
}

/// Parses TOML text into a raw value (for sweeps).
pub fn parse_value(text: &str) -> Result<toml::Value> {
    toml::from_str(text).map_err(parse_error)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(parse_error)?;
        s.check()?;
        Ok(s)
    }

    pub fn from_value(v: toml::Value) -> Result<Self> {
        let s: Scenario = v.try_into().map_err(parse_error)?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml(preset_source(name)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Schema version and referential integrity.
    fn check(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::ConfigParse(format!("schema: expected {SCHEMA_VERSION}, found {}", self.schema)));
        }
        Grid::try_from(self.grid)?;
        self.time.validate()?;
        let mut names: Vec<&str> = self.shapes.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ConfigParse("shapes: duplicate name".into()));
        }
        if let Some(e) = &self.experiment {
            self.shape("experiment.d1", &e.d1)?;
            self.shape("experiment.d2", &e.d2)?;
            self.operator("experiment.operator", &e.operator)?;
            if let Some(o) = &e.operator2 {
                self.operator("experiment.operator2", o)?;
            }
            self.region("experiment.region", &e.region)?;
            for (i, r) in e.exclusion.iter().enumerate() {
                self.region(&format!("experiment.exclusion[{i}]"), r)?;
            }
        }
        if let Some(inv) = &self.inverse {
            self.shape("inverse.truth", &inv.truth)?;
            if self.experiment.is_none() {
                return Err(Error::MissingReference("inverse: needs an [experiment] section for the observation setup".into()));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::try_from(self.grid)
    }

    pub fn shape(&self, field: &str, name: &str) -> Result<&CavityShape> {
        self.shapes
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.shape)
            .ok_or_else(|| Error::MissingReference(format!("{field}: no shape named '{name}'")))
    }

    pub fn region(&self, field: &str, name: &str) -> Result<&Region> {
        self.regions
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.region)
            .ok_or_else(|| Error::MissingReference(format!("{field}: no region named '{name}'")))
    }

    pub fn operator(&self, field: &str, name: &str) -> Result<&EllipticOperator> {
        self.operators
            .get(name)
            .ok_or_else(|| Error::MissingReference(format!("{field}: no operator named '{name}'")))
    }

    pub fn experiment(&self) -> Result<&Experiment> {
        self.experiment.as_ref().ok_or_else(|| Error::MissingReference("scenario has no [experiment] section".into()))
    }

    pub fn inverse(&self) -> Result<&InverseSection> {
        self.inverse.as_ref().ok_or_else(|| Error::MissingReference("scenario has no [inverse] section".into()))
    }

    /// Forward and observation setup of the experiment.
    pub fn design(&self) -> Result<Design> {
        let e = self.experiment()?;
        Ok(Design {
            grid: self.grid()?,
            source: self.source.clone(),
            boundary: self.boundary.clone(),
            flux: self.flux.clone(),
            cavity_bc: e.cavity_bc.clone(),
            time: self.time,
            kind: e.observation,
            region: self.region("experiment.region", &e.region)?.clone(),
            region_name: e.region.clone(),
            window_start: e.window_start,
            weights: e.weights,
            candidates: vec![self.shape("experiment.d1", &e.d1)?.clone(), self.shape("experiment.d2", &e.d2)?.clone()],
        })
    }

    pub fn parameterization(&self) -> Result<Parameterization> {
        let inv = self.inverse()?;
        let p = Parameterization { harmonics: inv.harmonics, lower: inv.lower.clone(), upper: inv.upper.clone() };
        p.validate()?;
        Ok(p)
    }

    /// Replaces the grid spacing.
    pub fn with_h(mut self, h: f64) -> Result<Self> {
        self.grid.h = h;
        self.check()?;
        Ok(self)
    }
}

/// Sets a numeric entry addressed by a dotted path (`source.breakpoints.1`).
/// The entry must already exist and be numeric.
pub fn set_path(root: &mut toml::Value, path: &str, value: f64) -> Result<()> {
    let bad = || Error::BadAxis(format!("'{path}' does not name a numeric config entry"));
    let mut cur = root;
    for part in path.split('.') {
        cur = match cur {
            toml::Value::Table(t) => t.get_mut(part).ok_or_else(bad)?,
            toml::Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| bad())?;
                a.get_mut(i).ok_or_else(bad)?
            }
            _ => return Err(bad()),
        };
    }
    match cur {
        toml::Value::Float(_) | toml::Value::Integer(_) => {
            *cur = toml::Value::Float(value);
            Ok(())
        }
        _ => Err(bad()),
    }
}
