//! Sectioned TOML run configuration.
//!
//! Every key is optional; missing keys take the documented defaults and
//! unknown keys are rejected. Numbers may also be written as fraction
//! strings (`epsilon = "1/8"`). Semantic checks run over the whole file and
//! report every violation at once.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::{RampKind, SpatialFactor, TimeRamp};
use crate::geometry::{GridSpec, MAX_HOLE_RADIUS};
use crate::harness::{default_test_set, InitialCondition, StudySpec, TestFunction};
use crate::initial_data::{default_profiles, DEFAULT_N_PHI, DEFAULT_N_RHO};
use crate::macro_solver::SourceSupport;
use crate::micro_solver::{BoundaryFlux, FluxConvention, SpeciesFlux};
use crate::timestep::PhysicalParams;

/// A real number given as a TOML float, integer or `"p/q"` string.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Number(pub f64);

impl Number {
    pub fn parse(s: &str) -> Option<f64> {
        match s.split_once('/') {
            Some((p, q)) => {
                let (p, q): (f64, f64) = (p.trim().parse().ok()?, q.trim().parse().ok()?);
                (q != 0.0).then(|| p / q)
            }
            None => s.trim().parse().ok(),
        }
    }
}

impl From<f64> for Number {
    fn from(v: f64) -> Self {
        Number(v)
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for Number {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Number {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Float(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Float(v) => Ok(Number(v)),
            Raw::Int(v) => Ok(Number(v as f64)),
            Raw::Text(s) => Number::parse(&s)
                .map(Number)
                .ok_or_else(|| serde::de::Error::custom(format!("`{s}` is neither a number nor a fraction p/q"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub length: Number,
    pub epsilon: Option<Number>,
    pub epsilon_list: Option<Vec<Number>>,
    /// Grid spacing; alternative to `cells_per_period` for a single ε.
    pub h: Option<Number>,
    pub cells_per_period: Option<usize>,
    pub delta: Number,
    #[serde(rename = "Theta")]
    pub hole_radius: Number,
    /// Unit-cell resolution of the cell problem.
    pub m: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            d: 2,
            length: Number(1.0),
            epsilon: None,
            epsilon_list: None,
            h: None,
            cells_per_period: None,
            delta: Number(0.032),
            hole_radius: Number(0.25),
            m: 256,
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 0.125;
pub const DEFAULT_CELLS_PER_PERIOD: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub d1: Number,
    pub d2: Number,
    pub d3: Number,
    #[serde(rename = "T")]
    pub t_final: Number,
    pub dt: Number,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            d1: Number(1.0),
            d2: Number(1.0),
            d3: Number(1.0),
            t_final: Number(2.0),
            dt: Number(0.01),
        }
    }
}

fn unit_flux() -> SpeciesFlux {
    SpeciesFlux::constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluxConfig {
    pub ramp: RampKind,
    pub tau: Number,
    pub convention: FluxConvention,
    pub species1: SpeciesFlux,
    pub species2: SpeciesFlux,
    pub species3: SpeciesFlux,
}

impl Default for FluxConfig {
    fn default() -> Self {
        FluxConfig {
            ramp: RampKind::Linear,
            tau: Number(0.5),
            convention: FluxConvention::Gradient,
            species1: unit_flux(),
            species2: unit_flux(),
            species3: unit_flux(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcMode {
    Constant,
    #[default]
    WellPrepared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcConfig {
    pub mode: IcMode,
    /// Used by `mode = "constant"`.
    pub values: [Number; 3],
    pub a0_1: SpatialFactor,
    pub a0_2: SpatialFactor,
    pub a0_3: SpatialFactor,
    pub n_rho: usize,
    pub n_phi: usize,
    /// Compatibility residual must stay below `compat_constant · h`.
    pub compat_constant: Number,
}

impl Default for IcConfig {
    fn default() -> Self {
        let [a, b, c] = default_profiles(2);
        IcConfig {
            mode: IcMode::WellPrepared,
            values: [Number(1.0), Number(1.0), Number(0.5)],
            a0_1: a,
            a0_2: b,
            a0_3: c,
            n_rho: DEFAULT_N_RHO,
            n_phi: DEFAULT_N_PHI,
            compat_constant: Number(50.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Number of snapshots, uniformly spaced and including `t = 0` and `T`.
    pub snapshots: usize,
    pub output: PathBuf,
    /// Outputs are bitwise reproducible for a fixed thread count; there is
    /// no randomness to seed.
    pub deterministic: bool,
    pub source_support: SourceSupport,
    /// Macro grid spacing; the finest micro spacing when absent.
    pub macro_h: Option<Number>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            snapshots: 21,
            output: PathBuf::from("output"),
            deterministic: true,
            source_support: SourceSupport::Delta,
            macro_h: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub physics: PhysicsConfig,
    pub flux: FluxConfig,
    pub ic: IcConfig,
    pub run: RunSection,
    /// Test functions for the ε-study; the default set when empty.
    pub tests: Vec<TestFunction>,
}

fn is_integer_ratio(num: f64, den: f64) -> bool {
    let r = num / den;
    r >= 0.5 && (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let mut resolved = self.clone();
        if resolved.tests.is_empty() {
            resolved.tests = self.tests();
        }
        if resolved.geometry.epsilon.is_none() && resolved.geometry.epsilon_list.is_none() {
            resolved.geometry.epsilon = Some(Number(DEFAULT_EPSILON));
        }
        if resolved.geometry.h.is_none() && resolved.geometry.cells_per_period.is_none() {
            resolved.geometry.cells_per_period = Some(DEFAULT_CELLS_PER_PERIOD);
        }
        toml::to_string(&resolved).expect("configuration serializes")
    }

    /// ε values, largest first.
    pub fn epsilons(&self) -> Vec<f64> {
        let g = &self.geometry;
        let mut eps: Vec<f64> = match (&g.epsilon_list, g.epsilon) {
            (Some(list), _) => list.iter().map(|n| n.0).collect(),
            (None, Some(e)) => vec![e.0],
            (None, None) => vec![DEFAULT_EPSILON],
        };
        eps.sort_by(|a, b| b.total_cmp(a));
        eps.dedup();
        eps
    }

    pub fn cells_per_period(&self) -> usize {
        let g = &self.geometry;
        match (g.cells_per_period, g.h) {
            (Some(m), _) => m,
            (None, Some(h)) => (self.epsilons()[0] / h.0).round() as usize,
            (None, None) => DEFAULT_CELLS_PER_PERIOD,
        }
    }

    pub fn grid_spec(&self, epsilon: f64) -> GridSpec {
        GridSpec {
            dim: self.geometry.d,
            length: self.geometry.length.0,
            h: epsilon / self.cells_per_period() as f64,
            epsilon,
            delta: self.geometry.delta.0,
            hole_radius: self.geometry.hole_radius.0,
        }
    }

    pub fn params(&self) -> PhysicalParams {
        let p = &self.physics;
        PhysicalParams {
            diffusion: [p.d1.0, p.d2.0, p.d3.0],
            t_final: p.t_final.0,
            dt: p.dt.0,
        }
    }

    pub fn flux(&self) -> BoundaryFlux {
        let f = &self.flux;
        BoundaryFlux {
            ramp: TimeRamp {
                kind: f.ramp,
                tau: f.tau.0,
            },
            species: [f.species1.clone(), f.species2.clone(), f.species3.clone()],
            convention: f.convention,
        }
    }

    pub fn profiles(&self) -> [SpatialFactor; 3] {
        [self.ic.a0_1.clone(), self.ic.a0_2.clone(), self.ic.a0_3.clone()]
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match self.ic.mode {
            IcMode::Constant => InitialCondition::Constant {
                values: self.ic.values.map(|n| n.0),
            },
            IcMode::WellPrepared => InitialCondition::WellPrepared {
                profiles: self.profiles(),
                n_rho: self.ic.n_rho,
                n_phi: self.ic.n_phi,
            },
        }
    }

    pub fn tests(&self) -> Vec<TestFunction> {
        if self.tests.is_empty() {
            default_test_set(self.geometry.d, self.geometry.length.0)
        } else {
            self.tests.clone()
        }
    }

    pub fn study(&self) -> StudySpec {
        StudySpec {
            dim: self.geometry.d,
            length: self.geometry.length.0,
            delta: self.geometry.delta.0,
            hole_radius: self.geometry.hole_radius.0,
            cells_per_period: self.cells_per_period(),
            epsilons: self.epsilons(),
            macro_h: self.run.macro_h.map(|n| n.0),
            params: self.params(),
            flux: self.flux(),
            ic: self.initial_condition(),
            snapshots: self.run.snapshots,
            support: self.run.source_support,
            tests: self.tests(),
        }
    }

    /// Every semantic violation in the file.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut bad = |field: &str, reason: String| errors.push(Error::config(field, reason));
        let g = &self.geometry;
        let length = g.length.0;
        if !(g.d == 2 || g.d == 3) {
            bad("geometry.d", format!("dimension must be 2 or 3, got {}", g.d));
        }
        if !(length > 0.0) {
            bad("geometry.L", format!("must be positive, got {length}"));
        }
        let theta = g.hole_radius.0;
        if !(0.0..=MAX_HOLE_RADIUS).contains(&theta) {
            bad(
                "geometry.Theta",
                format!("hole_radius must lie in [0, 1/4] so that annuli of radius 2Θε fit in one period, got {theta}"),
            );
        }
        if !(g.delta.0 >= 0.0 && 2.0 * g.delta.0 < length) {
            bad("geometry.delta", format!("must satisfy 0 ≤ δ < L/2, got {}", g.delta.0));
        }
        // `cell` also solves at m/4
        if g.m < 32 {
            bad("geometry.m", format!("cell resolution must be at least 32, got {}", g.m));
        }
        if g.epsilon.is_some() && g.epsilon_list.is_some() {
            bad("geometry.epsilon", "give either epsilon or epsilon_list, not both".into());
        }
        if g.epsilon_list.as_ref().is_some_and(|l| l.is_empty()) {
            bad("geometry.epsilon_list", "must not be empty".into());
        }
        if g.h.is_some() && g.cells_per_period.is_some() {
            bad("geometry.h", "give either h or cells_per_period, not both".into());
        }
        if g.h.is_some() && g.epsilon_list.as_ref().is_some_and(|l| l.len() > 1) {
            bad("geometry.h", "an ε study fixes cells_per_period instead of h".into());
        }
        if let Some(h) = g.h {
            let eps = self.epsilons()[0];
            if !(h.0 > 0.0) || !is_integer_ratio(eps, h.0) {
                bad("geometry.h", format!("ε/h must be a positive integer (ε = {eps}, h = {})", h.0));
            }
        }
        let cpp = self.cells_per_period();
        if cpp < 2 {
            bad("geometry.cells_per_period", format!("must be at least 2, got {cpp}"));
        } else if theta > 0.0 && theta * (cpp as f64) < 1.0 {
            bad(
                "geometry.cells_per_period",
                format!("hole radius Θ·(ε/h) = {} cells is below one grid cell", theta * cpp as f64),
            );
        }
        for eps in self.epsilons() {
            if !(eps > 0.0) {
                bad("geometry.epsilon", format!("must be positive, got {eps}"));
            } else if length > 0.0 && !is_integer_ratio(length, eps) {
                bad(
                    "geometry.epsilon_list",
                    format!("L/ε must be an integer for divisibility into periods, got L/ε = {}", length / eps),
                );
            }
        }

        for (field, v) in [
            ("physics.d1", self.physics.d1),
            ("physics.d2", self.physics.d2),
            ("physics.d3", self.physics.d3),
        ] {
            if !(v.0 > 0.0) {
                bad(field, format!("diffusivity must be positive, got {v}"));
            }
        }
        if !(self.physics.t_final.0 >= 0.0) {
            bad("physics.T", format!("must be nonnegative, got {}", self.physics.t_final));
        }
        if !(self.physics.dt.0 > 0.0) {
            bad("physics.dt", format!("must be positive, got {}", self.physics.dt));
        } else if self.physics.t_final.0 >= 0.0 && !is_integer_ratio(self.physics.t_final.0, self.physics.dt.0) && self.physics.t_final.0 > 0.0 {
            bad("physics.dt", "T/dt must be an integer".into());
        }

        if let Err(e) = self.flux().validate(g.d) {
            match e {
                Error::ConfigList(list) => errors.extend(list),
                other => errors.push(other),
            }
        }

        match self.ic.mode {
            IcMode::Constant => {
                for (i, v) in self.ic.values.iter().enumerate() {
                    if !(v.0 >= 0.0) {
                        errors.push(Error::config(format!("ic.values[{i}]"), format!("must be nonnegative, got {v}")));
                    }
                }
            }
            IcMode::WellPrepared => {
                if g.d != 2 {
                    errors.push(Error::config("ic.mode", "well-prepared initial data are implemented for d = 2"));
                }
                for (i, p) in self.profiles().iter().enumerate() {
                    let field = format!("ic.a0_{}", i + 1);
                    if let Err(e) = p.validate(&field, g.d) {
                        errors.push(e);
                    } else if !(p.lower_bound() > 0.0) {
                        errors.push(Error::config(field, "profile must be strictly positive"));
                    } else if matches!(p, SpatialFactor::Bump { .. }) {
                        errors.push(Error::config(field, "profile must have zero normal derivative on ∂Ω"));
                    }
                }
                if self.ic.n_rho < 16 {
                    errors.push(Error::config("ic.n_rho", "at least 16 radial cells required"));
                }
                if self.ic.n_phi < 32 || self.ic.n_phi % 2 != 0 {
                    errors.push(Error::config("ic.n_phi", "an even number of at least 32 angles required"));
                }
            }
        }
        if !(self.ic.compat_constant.0 > 0.0) {
            errors.push(Error::config("ic.compat_constant", "must be positive"));
        }

        if self.run.snapshots < 2 {
            errors.push(Error::config("run.snapshots", "at least two snapshots (t = 0 and T) are required"));
        }
        if let Some(h) = self.run.macro_h {
            if !(h.0 > 0.0) || !is_integer_ratio(length, h.0) {
                errors.push(Error::config("run.macro_h", "L/macro_h must be a positive integer"));
            }
        }
        for t in &self.tests {
            if let Err(e) = t.validate(g.d, length, g.delta.0) {
                errors.push(e);
            }
        }
        Error::collect(errors)
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn violations(text: &str) -> Vec<String> {
        match RunConfig::from_toml(text) {
            Ok(_) => vec![],
            Err(Error::ConfigList(list)) => list.iter().map(|e| e.to_string()).collect(),
            Err(e) => vec![e.to_string()],
        }
    }

    #[test]
    fn empty_file_gives_documented_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.epsilons(), vec![0.125]);
        assert_eq!(cfg.cells_per_period(), 16);
        let p = cfg.params();
        assert_eq!((p.diffusion, p.t_final, p.dt), ([1.0; 3], 2.0, 0.01));
        assert_eq!(cfg.geometry.hole_radius.0, 0.25);
        assert_eq!(cfg.geometry.delta.0, 0.032);
        // the resolved echo parses back to the same configuration
        let echo = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(echo.study().epsilons, cfg.study().epsilons);
        assert_eq!(echo.tests, cfg.tests());
        assert_eq!(echo.to_toml(), cfg.to_toml());
    }

    #[test]
    fn fractions_are_accepted() {
        let cfg = RunConfig::from_toml("[geometry]\nepsilon_list = [\"1/8\", \"1/16\", 0.03125]\n").unwrap();
        assert_eq!(cfg.epsilons(), vec![0.125, 0.0625, 0.03125]);
        assert_eq!(Number::parse(" 3 / 4 "), Some(0.75));
        assert_eq!(Number::parse("1/0"), None);
        assert!(RunConfig::from_toml("[geometry]\nepsilon = \"one eighth\"\n").is_err());
    }

    #[test]
    fn oversized_hole_names_the_bound() {
        let v = violations("[geometry]\nTheta = 0.3\n");
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("geometry.Theta") && v[0].contains("1/4"), "{v:?}");
    }

    #[test]
    fn indivisible_epsilon_names_divisibility() {
        let v = violations("[geometry]\nL = 1.0\nepsilon_list = [\"1/8\", \"1/16\", 0.3]\n");
        assert!(v.iter().any(|m| m.contains("divisibility")), "{v:?}");
    }

    #[test]
    fn all_violations_are_collected() {
        let v = violations("[physics]\nd1 = -1.0\ndt = 0\n[geometry]\nTheta = 0.5\n");
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().any(|m| m.contains("physics.d1")));
        assert!(v.iter().any(|m| m.contains("physics.dt")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[physics]\ndiffusion = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
        assert!(RunConfig::from_toml("[physcs]\n").is_err());
    }

    #[test]
    fn flux_and_ic_sections() {
        let cfg = RunConfig::from_toml(
            r#"
[flux]
ramp = "smooth"
tau = 0.25
convention = "flux"
[flux.species2]
amplitude = 2.0
x = { kind = "cosine", terms = [{ coef = 1.0 }, { coef = 0.5, k = [1, 0] }] }
y = [{ coef = 1.0 }, { coef = 0.5, k = [1, 0], phase = "cos" }]
[ic]
mode = "constant"
values = [2, 1, 0]
"#,
        )
        .unwrap();
        let f = cfg.flux();
        assert_eq!(f.species[1].amplitude, 2.0);
        assert_eq!(f.species[0].amplitude, 1.0);
        assert_eq!(f.convention, FluxConvention::Flux);
        assert_eq!(cfg.initial_condition(), InitialCondition::Constant { values: [2.0, 1.0, 0.0] });

        let v = violations("[flux.species1]\namplitude = -1.0\n[ic]\nmode = \"constant\"\nvalues = [1, -1, 0]\n");
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(violations("[geometry]\nd = 3\n").iter().any(|m| m.contains("ic.mode")));
    }
}
