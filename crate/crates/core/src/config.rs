//! Flat TOML run configuration.
//!
//! Every key is optional and falls back to the library default. Unknown keys
//! and out-of-range values are rejected with the key named in the error.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::lifecycle::OuterConfig;
use crate::simulator::{FollowerEstimate, LayoutEntry, SimConfig};
use crate::space::{default_bounds, Dimension, ParamSpace, SpaceMode, PARAM_NAMES};
use crate::strategy::{SamplerRegistry, SamplerSettings};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    // outer loop
    pub sampler: Option<String>,
    pub batch_size: Option<usize>,
    pub crate_theta: Option<f64>,
    pub max_score: Option<f64>,
    pub kde_bandwidth: Option<f64>,
    pub kde_bias: Option<bool>,
    pub max_rounds: Option<usize>,
    pub seed: Option<u64>,
    pub probes: Option<usize>,

    // inner loop
    pub iterations: Option<usize>,
    pub points_per_iteration: Option<usize>,
    pub mu: Option<f64>,
    pub beta: Option<f64>,
    pub t0: Option<f64>,
    pub t_decay: Option<f64>,
    pub neighbor_radius: Option<f64>,
    pub r_crit: Option<f64>,
    pub r_noncrit: Option<f64>,
    pub greedy_candidates: Option<usize>,

    // simulator
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub ttc_theta: Option<f64>,
    pub a_theta: Option<f64>,
    pub desired_gap: Option<f64>,
    pub a_max: Option<f64>,
    pub v_max_av: Option<f64>,
    pub vehicle_length: Option<f64>,
    pub b_safe: Option<f64>,
    pub max_decel: Option<f64>,
    pub cut_in_sv: Option<usize>,
    pub follower_estimate: Option<FollowerEstimate>,
    pub layout: Option<Vec<LayoutEntry>>,

    // parameter space
    pub space_mode: Option<String>,
    pub space_dims: Option<Vec<String>>,
    pub fixed: Option<BTreeMap<String, f64>>,
    pub v0_bounds: Option<[f64; 2]>,
    pub alpha_bounds: Option<[f64; 2]>,
    #[serde(rename = "T_bounds")]
    pub t_bounds: Option<[f64; 2]>,
    pub b_bounds: Option<[f64; 2]>,
    pub s0_bounds: Option<[f64; 2]>,
    pub p_bounds: Option<[f64; 2]>,
    pub delta_a_th_bounds: Option<[f64; 2]>,
}

/// Everything a run needs, validated.
#[derive(Clone, Debug)]
pub struct Settings {
    pub sampler: String,
    pub outer: OuterConfig,
    pub samplers: SamplerSettings,
    pub sim: SimConfig,
    pub space: ParamSpace,
}

impl Default for Settings {
    fn default() -> Self {
        RunConfigFile::default()
            .resolve()
            .expect("defaults are valid")
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split_once("unknown field `")
                .and_then(|(_, rest)| rest.split_once('`'))
                .map(|(k, _)| k.to_string())
                .or_else(|| e.span().map(|s| span_key(text, s)))
                .unwrap_or_else(|| "<config>".to_string());
            Error::config(key, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<Settings> {
        let mut outer = OuterConfig::default();
        set(&mut outer.batch_size, self.batch_size);
        set(&mut outer.crate_theta, self.crate_theta);
        set(&mut outer.max_score, self.max_score);
        set(&mut outer.kde_bandwidth, self.kde_bandwidth);
        set(&mut outer.max_rounds, self.max_rounds);
        set(&mut outer.seed, self.seed);
        set(&mut outer.probes, self.probes);
        outer.validate().map_err(named)?;

        let mut samplers = SamplerSettings::default();
        let p = &mut samplers.packing;
        set(&mut p.iterations, self.iterations);
        set(&mut p.points_per_iteration, self.points_per_iteration);
        set(&mut p.mu, self.mu);
        set(&mut p.beta, self.beta);
        set(&mut p.t0, self.t0);
        set(&mut p.t_decay, self.t_decay);
        set(&mut p.neighbor_radius, self.neighbor_radius);
        set(&mut p.radii.r_crit, self.r_crit);
        set(&mut p.radii.r_noncrit, self.r_noncrit);
        p.validate().map_err(named)?;
        if p.points_per_iteration > outer.batch_size {
            return Err(Error::config(
                "points_per_iteration",
                format!("{} exceeds batch_size {}", p.points_per_iteration, outer.batch_size),
            ));
        }
        if p.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        set(&mut samplers.greedy_candidates, self.greedy_candidates);
        if samplers.greedy_candidates == 0 {
            return Err(Error::config("greedy_candidates", "must be at least 1"));
        }
        if self.kde_bias == Some(true) {
            samplers.kde_bias = Some(outer.kde_bandwidth);
        }

        let sampler = self.sampler.clone().unwrap_or_else(|| "packing".into());
        let registry = SamplerRegistry::standard();
        if !registry.names().any(|n| n == sampler) {
            let known: Vec<&str> = registry.names().collect();
            return Err(Error::config("sampler", format!("`{sampler}` is not one of {known:?}")));
        }

        let mut sim = SimConfig::default();
        set(&mut sim.dt, self.dt);
        set(&mut sim.t_max, self.t_max);
        set(&mut sim.ttc_theta, self.ttc_theta);
        set(&mut sim.a_theta, self.a_theta);
        set(&mut sim.desired_gap, self.desired_gap);
        set(&mut sim.a_max, self.a_max);
        set(&mut sim.v_max_av, self.v_max_av);
        set(&mut sim.vehicle_length, self.vehicle_length);
        set(&mut sim.b_safe, self.b_safe);
        set(&mut sim.max_decel, self.max_decel);
        set(&mut sim.cut_in_sv, self.cut_in_sv);
        set(&mut sim.follower_estimate, self.follower_estimate);
        if let Some(layout) = &self.layout {
            sim.layout = layout.clone();
        }
        sim.validate().map_err(named)?;

        let space = self.space()?;
        Ok(Settings {
            sampler,
            outer,
            samplers,
            sim,
            space,
        })
    }

    fn space(&self) -> Result<ParamSpace> {
        let mode = match self.space_mode.as_deref().unwrap_or("shared") {
            "shared" => SpaceMode::Shared,
            "per_vehicle" => SpaceMode::PerVehicle,
            "subset" => SpaceMode::Subset,
            other => {
                return Err(Error::config(
                    "space_mode",
                    format!("`{other}` is not shared, per_vehicle or subset"),
                ))
            }
        };
        if self.space_dims.is_some() && mode != SpaceMode::Subset {
            return Err(Error::config("space_dims", "only valid with space_mode = \"subset\""));
        }
        let overrides = [
            self.v0_bounds,
            self.alpha_bounds,
            self.t_bounds,
            self.b_bounds,
            self.s0_bounds,
            self.p_bounds,
            self.delta_a_th_bounds,
        ];
        let mut base = default_bounds();
        for (i, o) in overrides.iter().enumerate() {
            if let Some([lo, hi]) = *o {
                let key = format!("{}_bounds", PARAM_NAMES[i]);
                base[i] = Dimension::new(PARAM_NAMES[i], lo, hi).map_err(|e| Error::config(key, e.to_string()))?;
            }
        }
        let dims = self.space_dims.clone().unwrap_or_default();
        let fixed = self.fixed.clone().unwrap_or_default();
        ParamSpace::with_bounds(mode, base, &dims, &fixed).map_err(|e| match e {
            Error::UnknownParameter(name) if dims.contains(&name) => {
                Error::config("space_dims", format!("unknown parameter `{name}`"))
            }
            Error::UnknownParameter(name) | Error::ParameterOutOfBounds { name, .. } => {
                Error::config("fixed", format!("bad entry `{name}`"))
            }
            other => other,
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn named((key, reason): (&'static str, String)) -> Error {
    Error::config(key, reason)
}

/// Best-effort key name for a parse error: the `key =` on the offending line.
fn span_key(text: &str, span: std::ops::Range<usize>) -> String {
    let start = text[..span.start.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    line.split('=').next().unwrap_or("").trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: Error) -> String {
        match e {
            Error::InvalidConfig { key, .. } => key,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let s = RunConfigFile::parse("").unwrap().resolve().unwrap();
        assert_eq!(s.sampler, "packing");
        assert_eq!(s.outer, OuterConfig::default());
        assert_eq!(s.sim, SimConfig::default());
        assert_eq!(s.space.dim(), 7);
    }

    #[test]
    fn full_file_round_trip() {
        let text = r#"
sampler = "greedy"
batch_size = 50
crate_theta = 0.5
max_score = 1000
kde_bandwidth = 0.05
kde_bias = true
max_rounds = 7
seed = 9
probes = 2000
iterations = 40
points_per_iteration = 10
mu = 2.0
beta = 0.02
t0 = 0.01
t_decay = 0.1
neighbor_radius = 0.09
r_crit = 0.03
r_noncrit = 0.05
greedy_candidates = 5
dt = 0.05
t_max = 20
desired_gap = 10
follower_estimate = "idm"
space_mode = "subset"
space_dims = ["T", "p", "delta_a_th"]
fixed = { v0 = 26.0 }
T_bounds = [0.1, 1.5]
layout = [
  { role = "sv", sv = 1, lane = 0, position = 200.0, speed = 25.0 },
  { role = "av", lane = 0, position = 0.0, speed = 30.0 },
  { role = "sv", sv = 2, lane = 1, position = 15.0, speed = 24.0 },
]
"#;
        let s = RunConfigFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(s.sampler, "greedy");
        assert_eq!(s.outer.batch_size, 50);
        assert_eq!(s.outer.max_score, 1000.0);
        assert_eq!(s.samplers.kde_bias, Some(0.05));
        assert_eq!(s.samplers.packing.neighbor_radius, 0.09);
        assert_eq!(s.samplers.packing.radii.r_crit, 0.03);
        assert_eq!(s.samplers.greedy_candidates, 5);
        assert_eq!(s.sim.follower_estimate, FollowerEstimate::Idm);
        assert_eq!(s.sim.layout.len(), 3);
        assert_eq!(s.space.dim(), 3);
        assert_eq!(s.space.dims()[0].upper, 1.5);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfigFile::parse("batch_size = 3\nbach_size = 4\n").unwrap_err();
        assert_eq!(key_of(e), "bach_size");
    }

    #[test]
    fn wrong_type_is_named() {
        let e = RunConfigFile::parse("crate_theta = \"high\"\n").unwrap_err();
        assert_eq!(key_of(e), "crate_theta");
    }

    #[test]
    fn range_violations_are_named() {
        let cases = [
            ("batch_size = 0", "batch_size"),
            ("crate_theta = 1.5", "crate_theta"),
            ("kde_bandwidth = 0", "kde_bandwidth"),
            ("mu = -1", "mu"),
            ("points_per_iteration = 0", "points_per_iteration"),
            ("iterations = 0", "iterations"),
            ("neighbor_radius = 0", "neighbor_radius"),
            ("desired_gap = 20", "desired_gap"),
            ("dt = 0", "dt"),
            ("sampler = \"tabu\"", "sampler"),
            ("space_mode = \"weird\"", "space_mode"),
            ("space_dims = [\"T\"]", "space_dims"),
            ("space_mode = \"subset\"\nspace_dims = [\"zeta\"]", "space_dims"),
            ("v0_bounds = [30, 25]", "v0_bounds"),
            ("fixed = { v0 = 99.0 }", "fixed"),
            ("greedy_candidates = 0", "greedy_candidates"),
        ];
        for (text, key) in cases {
            let e = RunConfigFile::parse(text).and_then(|c| c.resolve()).unwrap_err();
            assert_eq!(key_of(e), key, "{text}");
        }
    }
}
