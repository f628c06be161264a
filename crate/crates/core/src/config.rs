//! Run configuration: a flat `key = value` text file with namespaced keys.
//!
//! Every tunable has a baked-in default. Unknown keys are rejected. The
//! canonical text form lists every key in sorted order, so writing and
//! re-parsing a configuration is lossless.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

use crate::constitutive::MaterialTable;
use crate::gmm::GmmSettings;
use crate::mesh::MeshParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
}

/// How the maximum-expansion state is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InflateMode {
    /// Inflate until the lumen mean radius is `factor` times the reference.
    MeanRadius,
    /// Ramp the lumen pressure to `solver.inflate_pressure`.
    Pressure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Radial spring stiffness on the outer boundary (kPa/mm).
    pub spring_stiffness: f64,
    pub inflate_mode: InflateMode,
    pub inflate_radius_factor: f64,
    /// Balloon pressure for [`InflateMode::Pressure`] (kPa).
    pub inflate_pressure: f64,
    pub inflate_steps: usize,
    pub unload_steps: usize,
    pub stent: bool,
    /// Stent radius relative to the reference lumen mean radius.
    pub stent_radius_factor: f64,
    /// Penalty stiffness per unit lumen boundary length (kPa/mm).
    pub k_penalty: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub line_search_cuts: usize,
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            spring_stiffness: 10.0,
            inflate_mode: InflateMode::MeanRadius,
            inflate_radius_factor: 1.1,
            inflate_pressure: 100.0,
            inflate_steps: 8,
            unload_steps: 8,
            stent: true,
            stent_radius_factor: 1.05,
            k_penalty: 1e5,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_iter: 25,
            line_search_cuts: 10,
            max_halvings: 6,
        }
    }
}

/// Which elements enter the stress statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerFilter {
    All,
    Intima,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub layers: LayerFilter,
    /// Quantiles for the light/dark stress-map bands.
    pub map_quantiles: [f64; 2],
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            layers: LayerFilter::All,
            map_quantiles: [0.80, 0.95],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsrConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    pub pooling: Pooling,
    /// Physical diameter (mm) at `reference_index`; 0 disables rescaling.
    pub reference_diameter: f64,
    pub reference_index: usize,
}

impl Default for IsrConfig {
    fn default() -> Self {
        Self {
            tau_min: 5.0,
            tau_max: 100.0,
            tau_step: 5.0,
            pooling: Pooling::Raw,
            reference_diameter: 0.0,
            reference_index: 0,
        }
    }
}

impl IsrConfig {
    pub fn tau_grid(&self) -> Vec<f64> {
        let n = ((self.tau_max - self.tau_min) / self.tau_step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.tau_min + self.tau_step * k as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub gmm: GmmSettings,
    pub mesh: MeshParams,
    pub materials: MaterialTable,
    pub solver: SolverConfig,
    pub analysis: AnalysisConfig,
    pub isr: IsrConfig,
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.into(),
        value: v.into(),
        reason: e.to_string(),
    })
}

fn invalid(key: &str, v: &str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: v.into(),
        reason: reason.into(),
    }
}

fn positive(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse_num(key, v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(key, v, "must be positive"))
    }
}

fn at_least_one(key: &str, v: &str) -> Result<usize, ConfigError> {
    let x: usize = parse_num(key, v)?;
    if x >= 1 {
        Ok(x)
    } else {
        Err(invalid(key, v, "must be >= 1"))
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, v, "expected true or false")),
    }
}

const MATERIAL_FIELDS: [&str; 5] = ["E", "nu", "k1", "k2", "phi"];

impl RunConfig {
    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines over the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::DuplicateKey(k.into()));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        if let Some(rest) = key.strip_prefix("material.") {
            return self.set_material(key, rest, v);
        }
        match key {
            "gmm.mean_lipid_rich" => self.gmm.initial_means[0] = parse_num(key, v)?,
            "gmm.mean_fibrotic" => self.gmm.initial_means[1] = parse_num(key, v)?,
            "gmm.mean_normal_intima" => self.gmm.initial_means[2] = parse_num(key, v)?,
            "gmm.mean_calcification" => self.gmm.initial_means[3] = parse_num(key, v)?,
            "gmm.variance_floor" => self.gmm.variance_floor = positive(key, v)?,
            "gmm.weight_epsilon" => self.gmm.weight_epsilon = positive(key, v)?,
            "gmm.tol" => self.gmm.tol = positive(key, v)?,
            "gmm.max_iter" => self.gmm.max_iter = at_least_one(key, v)?,
            "mesh.t_media" => self.mesh.t_media = positive(key, v)?,
            "mesh.t_adventitia" => self.mesh.t_adventitia = positive(key, v)?,
            "mesh.n_sectors" => {
                let n = parse_num(key, v)?;
                if n < 8 {
                    return Err(invalid(key, v, "must be >= 8"));
                }
                self.mesh.n_sectors = n;
            }
            "mesh.rings_intima" => self.mesh.rings[0] = at_least_one(key, v)?,
            "mesh.rings_media" => self.mesh.rings[1] = at_least_one(key, v)?,
            "mesh.rings_adventitia" => self.mesh.rings[2] = at_least_one(key, v)?,
            "solver.spring_stiffness" => {
                let k: f64 = parse_num(key, v)?;
                if !(k >= 0.0) {
                    return Err(invalid(key, v, "must be >= 0"));
                }
                self.solver.spring_stiffness = k;
            }
            "solver.inflate_mode" => {
                self.solver.inflate_mode = match v {
                    "mean_radius" => InflateMode::MeanRadius,
                    "pressure" => InflateMode::Pressure,
                    _ => return Err(invalid(key, v, "expected mean_radius or pressure")),
                }
            }
            "solver.inflate_radius_factor" => self.solver.inflate_radius_factor = positive(key, v)?,
            "solver.inflate_pressure" => {
                let p: f64 = parse_num(key, v)?;
                if !(p >= 0.0) {
                    return Err(invalid(key, v, "must be >= 0"));
                }
                self.solver.inflate_pressure = p;
            }
            "solver.inflate_steps" => self.solver.inflate_steps = at_least_one(key, v)?,
            "solver.unload_steps" => self.solver.unload_steps = at_least_one(key, v)?,
            "solver.stent" => self.solver.stent = parse_bool(key, v)?,
            "solver.stent_radius_factor" => self.solver.stent_radius_factor = positive(key, v)?,
            "solver.k_penalty" => self.solver.k_penalty = positive(key, v)?,
            "solver.abs_tol" => self.solver.abs_tol = positive(key, v)?,
            "solver.rel_tol" => self.solver.rel_tol = positive(key, v)?,
            "solver.max_iter" => self.solver.max_iter = at_least_one(key, v)?,
            "solver.line_search_cuts" => self.solver.line_search_cuts = parse_num(key, v)?,
            "solver.max_halvings" => {
                let n = parse_num(key, v)?;
                if n < 4 {
                    return Err(invalid(key, v, "must be >= 4"));
                }
                self.solver.max_halvings = n;
            }
            "analysis.layers" => {
                self.analysis.layers = match v {
                    "all" => LayerFilter::All,
                    "intima" => LayerFilter::Intima,
                    _ => return Err(invalid(key, v, "expected all or intima")),
                }
            }
            "analysis.light_quantile" | "analysis.dark_quantile" => {
                let q: f64 = parse_num(key, v)?;
                if !(0.0..=1.0).contains(&q) {
                    return Err(invalid(key, v, "must lie in [0, 1]"));
                }
                let idx = usize::from(key == "analysis.dark_quantile");
                self.analysis.map_quantiles[idx] = q;
            }
            "isr.tau_min" => self.isr.tau_min = parse_num(key, v)?,
            "isr.tau_max" => self.isr.tau_max = parse_num(key, v)?,
            "isr.tau_step" => self.isr.tau_step = positive(key, v)?,
            "isr.pooling" => {
                self.isr.pooling = match v {
                    "raw" => Pooling::Raw,
                    "normalized" => Pooling::Normalized,
                    _ => return Err(invalid(key, v, "expected raw or normalized")),
                }
            }
            "isr.reference_diameter" => {
                let d: f64 = parse_num(key, v)?;
                if !(d >= 0.0) {
                    return Err(invalid(key, v, "must be >= 0"));
                }
                self.isr.reference_diameter = d;
            }
            "isr.reference_index" => self.isr.reference_index = parse_num(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    fn set_material(&mut self, key: &str, rest: &str, v: &str) -> Result<(), ConfigError> {
        let (name, field) = rest.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        let m = self
            .materials
            .by_name_mut(name)
            .ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        let x: f64 = parse_num(key, v)?;
        let mut next = *m;
        match field {
            "E" => next.e = x,
            "nu" => next.nu = x,
            "k1" | "k2" | "phi" if !next.has_fibers => {
                return Err(invalid(key, v, "material has no fiber families"));
            }
            "k1" => next.k1 = x,
            "k2" => next.k2 = x,
            "phi" => next.phi = x,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        next.validate().map_err(|e| invalid(key, v, &e.to_string()))?;
        *m = next;
        Ok(())
    }

    /// Every key with its current value, sorted by key.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let g = &self.gmm;
        put("gmm.mean_lipid_rich", g.initial_means[0].to_string());
        put("gmm.mean_fibrotic", g.initial_means[1].to_string());
        put("gmm.mean_normal_intima", g.initial_means[2].to_string());
        put("gmm.mean_calcification", g.initial_means[3].to_string());
        put("gmm.variance_floor", g.variance_floor.to_string());
        put("gmm.weight_epsilon", g.weight_epsilon.to_string());
        put("gmm.tol", g.tol.to_string());
        put("gmm.max_iter", g.max_iter.to_string());
        let me = &self.mesh;
        put("mesh.t_media", me.t_media.to_string());
        put("mesh.t_adventitia", me.t_adventitia.to_string());
        put("mesh.n_sectors", me.n_sectors.to_string());
        put("mesh.rings_intima", me.rings[0].to_string());
        put("mesh.rings_media", me.rings[1].to_string());
        put("mesh.rings_adventitia", me.rings[2].to_string());
        for name in MaterialTable::NAMES {
            let p = self.materials.by_name(name).expect("known material");
            for field in MATERIAL_FIELDS {
                let v = match field {
                    "E" => p.e,
                    "nu" => p.nu,
                    _ if !p.has_fibers => continue,
                    "k1" => p.k1,
                    "k2" => p.k2,
                    _ => p.phi,
                };
                put(&format!("material.{name}.{field}"), v.to_string());
            }
        }
        let s = &self.solver;
        put("solver.spring_stiffness", s.spring_stiffness.to_string());
        put(
            "solver.inflate_mode",
            match s.inflate_mode {
                InflateMode::MeanRadius => "mean_radius",
                InflateMode::Pressure => "pressure",
            }
            .into(),
        );
        put("solver.inflate_radius_factor", s.inflate_radius_factor.to_string());
        put("solver.inflate_pressure", s.inflate_pressure.to_string());
        put("solver.inflate_steps", s.inflate_steps.to_string());
        put("solver.unload_steps", s.unload_steps.to_string());
        put("solver.stent", s.stent.to_string());
        put("solver.stent_radius_factor", s.stent_radius_factor.to_string());
        put("solver.k_penalty", s.k_penalty.to_string());
        put("solver.abs_tol", s.abs_tol.to_string());
        put("solver.rel_tol", s.rel_tol.to_string());
        put("solver.max_iter", s.max_iter.to_string());
        put("solver.line_search_cuts", s.line_search_cuts.to_string());
        put("solver.max_halvings", s.max_halvings.to_string());
        put(
            "analysis.layers",
            match self.analysis.layers {
                LayerFilter::All => "all",
                LayerFilter::Intima => "intima",
            }
            .into(),
        );
        put("analysis.light_quantile", self.analysis.map_quantiles[0].to_string());
        put("analysis.dark_quantile", self.analysis.map_quantiles[1].to_string());
        let i = &self.isr;
        put("isr.tau_min", i.tau_min.to_string());
        put("isr.tau_max", i.tau_max.to_string());
        put("isr.tau_step", i.tau_step.to_string());
        put(
            "isr.pooling",
            match i.pooling {
                Pooling::Raw => "raw",
                Pooling::Normalized => "normalized",
            }
            .into(),
        );
        put("isr.reference_diameter", i.reference_diameter.to_string());
        put("isr.reference_index", i.reference_index.to_string());
        m
    }

    /// Canonical text form (sorted `key = value` lines).
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("solver.k_penalty", "2500").unwrap();
        c.set("material.media.phi", "10").unwrap();
        c.set("analysis.layers", "intima").unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert_eq!(
            RunConfig::parse("gmm.max_iters = 3"),
            Err(ConfigError::UnknownKey("gmm.max_iters".into()))
        );
        assert!(matches!(RunConfig::parse("material.bone.E = 3"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::parse("material.lipid_rich.k1 = 3"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(RunConfig::parse("material.media.nu = 0.5"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(RunConfig::parse("mesh.n_sectors = 4"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(RunConfig::parse("just words"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(
            RunConfig::parse("gmm.tol = 1e-5\ngmm.tol = 1e-4"),
            Err(ConfigError::DuplicateKey(_))
        ));
    }

    #[test]
    fn comments_and_defaults() {
        let c = RunConfig::parse("# header\n\nmesh.n_sectors = 32   # coarse\n").unwrap();
        assert_eq!(c.mesh.n_sectors, 32);
        assert_eq!(c.gmm, GmmSettings::default());
        assert_eq!(c.isr.tau_grid(), crate::isr::default_tau_grid());
    }
}
