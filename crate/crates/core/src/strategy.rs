//! Pluggable samplers and scenario evaluators.
//!
//! Every batch-generation strategy implements [`Sampler`] and is created by
//! name through a [`SamplerRegistry`], so the outer loop, the CLI and the
//! comparison experiments all drive "packing", "smc", "qmc" and "greedy"
//! through one code path.

use std::collections::BTreeMap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{self, DEFAULT_GREEDY_CANDIDATES};
use crate::error::{Error, Result};
use crate::packing::{self, PackingConfig, StepRecord};
use crate::simulator::{run_episode, SimConfig};
use crate::space::{ParamSpace, Point, Sphere};

/// What a sampler is asked for.
#[derive(Clone, Copy, Debug)]
pub struct SampleRequest<'a> {
    pub n: usize,
    pub dim: usize,
    /// Everything evaluated so far.
    pub known: &'a [Sphere],
    pub round: usize,
    /// Number of points this run has produced before this batch.
    pub offset: usize,
    /// Run-level seed, for state that must persist across rounds.
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct SampleOutcome {
    pub points: Vec<Point>,
    /// Generation gave up on rejecting covered draws.
    pub saturated: bool,
    /// Packing trace, empty for samplers that do not iterate.
    pub trace: Vec<StepRecord>,
}

pub trait Sampler: Send + Sync {
    fn name(&self) -> &str;
    fn sample(&self, req: &SampleRequest<'_>, rng: &mut dyn RngCore) -> SampleOutcome;
}

/// Knobs shared by the registered samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSettings {
    pub packing: PackingConfig,
    pub greedy_candidates: usize,
    /// Bias packing proposals toward critical regions (`None` = uniform).
    pub kde_bias: Option<f64>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            packing: PackingConfig::default(),
            greedy_candidates: DEFAULT_GREEDY_CANDIDATES,
            kde_bias: None,
        }
    }
}

/// Generate in the unknown subspace, then relax with sphere packing.
#[derive(Clone, Debug)]
pub struct PackingSampler {
    pub config: PackingConfig,
    pub kde_bias: Option<f64>,
}

impl Sampler for PackingSampler {
    fn name(&self) -> &str {
        "packing"
    }

    fn sample(&self, req: &SampleRequest<'_>, rng: &mut dyn RngCore) -> SampleOutcome {
        let generated = crate::lifecycle::generate_round(req.known, req.dim, req.n, self.kde_bias, rng);
        let out = packing::pack(&generated.points, req.known, req.round, &self.config, rng);
        SampleOutcome {
            points: out.spheres.into_iter().map(|s| s.center).collect(),
            saturated: generated.saturated,
            trace: out.trace,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SmcSampler;

impl Sampler for SmcSampler {
    fn name(&self) -> &str {
        "smc"
    }

    fn sample(&self, req: &SampleRequest<'_>, rng: &mut dyn RngCore) -> SampleOutcome {
        SampleOutcome {
            points: baselines::smc_sample(req.n, req.dim, rng),
            ..SampleOutcome::default()
        }
    }
}

/// Shifted Halton; the shift is fixed per run and later rounds continue
/// the sequence where earlier ones stopped.
#[derive(Clone, Copy, Debug, Default)]
pub struct QmcSampler;

impl QmcSampler {
    pub fn shift(seed: u64, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        baselines::random_shift(dim, &mut rng)
    }
}

impl Sampler for QmcSampler {
    fn name(&self) -> &str {
        "qmc"
    }

    fn sample(&self, req: &SampleRequest<'_>, _rng: &mut dyn RngCore) -> SampleOutcome {
        let shift = Self::shift(req.seed, req.dim);
        let mut points = baselines::qmc_sample(req.offset + req.n, &shift);
        points.drain(..req.offset);
        SampleOutcome {
            points,
            ..SampleOutcome::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GreedySampler {
    pub candidates: usize,
    pub radius: f64,
}

impl Sampler for GreedySampler {
    fn name(&self) -> &str {
        "greedy"
    }

    fn sample(&self, req: &SampleRequest<'_>, rng: &mut dyn RngCore) -> SampleOutcome {
        let placed = baselines::greedy_sample(
            req.n,
            req.dim,
            req.known,
            self.radius,
            self.candidates,
            req.round,
            rng,
        );
        SampleOutcome {
            points: placed.into_iter().map(|s| s.center).collect(),
            ..SampleOutcome::default()
        }
    }
}

type Factory = Box<dyn Fn(&SamplerSettings) -> Box<dyn Sampler> + Send + Sync>;

/// Name → constructor table.
pub struct SamplerRegistry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for SamplerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// The four built-in strategies.
    pub fn standard() -> Self {
        let mut reg = Self::empty();
        reg.register("packing", |s| {
            Box::new(PackingSampler {
                config: s.packing.clone(),
                kde_bias: s.kde_bias,
            })
        });
        reg.register("smc", |_| Box::new(SmcSampler));
        reg.register("qmc", |_| Box::new(QmcSampler));
        reg.register("greedy", |s| {
            Box::new(GreedySampler {
                candidates: s.greedy_candidates,
                radius: s.packing.radii.r_noncrit,
            })
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&SamplerSettings) -> Box<dyn Sampler> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str, settings: &SamplerSettings) -> Result<Box<dyn Sampler>> {
        self.factories
            .get(name)
            .map(|f| f(settings))
            .ok_or_else(|| Error::UnknownSampler(name.to_string()))
    }
}

impl Default for SamplerRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

/// Outcome of testing one scenario.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub critical: bool,
    pub min_ttc: f64,
    pub min_accel: f64,
}

/// The system under test, seen from the sampler's side: a unit-cube point
/// goes in, a verdict comes out.
pub trait ScenarioEvaluator: Send + Sync {
    fn evaluate(&self, x: &Point) -> Evaluation;
}

/// Runs the built-in cut-in simulation.
#[derive(Clone, Debug)]
pub struct TrafficEvaluator {
    pub space: ParamSpace,
    pub sim: SimConfig,
}

impl ScenarioEvaluator for TrafficEvaluator {
    fn evaluate(&self, x: &Point) -> Evaluation {
        let params = self
            .space
            .to_physical(x)
            .expect("sampled point matches the space dimension");
        let behaviors = self
            .space
            .behaviors(&params)
            .expect("physical map covers every parameter");
        let res = run_episode(&behaviors, &self.sim);
        Evaluation {
            critical: res.critical,
            min_ttc: res.min_ttc,
            min_accel: res.min_accel,
        }
    }
}

/// Adapts a closure; handy for stubs.
pub struct FnEvaluator<F>(pub F);

impl<F> ScenarioEvaluator for FnEvaluator<F>
where
    F: Fn(&Point) -> bool + Send + Sync,
{
    fn evaluate(&self, x: &Point) -> Evaluation {
        let critical = (self.0)(x);
        Evaluation {
            critical,
            min_ttc: f64::INFINITY,
            min_accel: 0.0,
        }
    }
}
