//! Outer loop: generate, pack, evaluate, score, accumulate, stop on coverage.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coverage::{CoverageTracker, ProbeSet, SphereIndex, DEFAULT_PROBES};
use crate::error::{Error, Result};
use crate::space::{Point, RadiusPolicy, Sphere};
use crate::strategy::{Evaluation, SampleRequest, Sampler, ScenarioEvaluator};

#[derive(Clone, Debug, PartialEq)]
pub struct OuterConfig {
    pub batch_size: usize,
    pub crate_theta: f64,
    /// Maximum score `S`.
    pub max_score: f64,
    pub kde_bandwidth: f64,
    pub max_rounds: usize,
    pub seed: u64,
    pub probes: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            crate_theta: 0.95,
            max_score: 4000.0,
            kde_bandwidth: 0.1,
            max_rounds: 50,
            seed: 0,
            probes: DEFAULT_PROBES,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.batch_size == 0 {
            return Err(("batch_size", "must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.crate_theta) {
            return Err(("crate_theta", format!("{} is outside [0, 1]", self.crate_theta)));
        }
        if !(self.kde_bandwidth > 0.0) {
            return Err(("kde_bandwidth", "must be positive".into()));
        }
        if !self.max_score.is_finite() {
            return Err(("max_score", "must be finite".into()));
        }
        if self.probes == 0 {
            return Err(("probes", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-sphere simulation summary kept next to the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub min_ttc: f64,
    pub min_accel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub n_new: usize,
    pub n_new_critical: usize,
    /// Cumulative counts after the round.
    pub n_total: usize,
    pub n_critical: usize,
    pub score: f64,
    pub crate_rate: f64,
    pub saturated: bool,
    /// Highest critical-sample density over the knowledge centers.
    pub kde_peak: f64,
}

/// Every evaluated sphere plus per-round statistics. Append-only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeBase {
    dim: usize,
    spheres: Vec<Sphere>,
    records: Vec<Record>,
    rounds: Vec<RoundStats>,
}

impl KnowledgeBase {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spheres(&self) -> &[Sphere] {
        &self.spheres
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn rounds(&self) -> &[RoundStats] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.spheres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }

    pub fn critical_count(&self) -> usize {
        self.spheres.iter().filter(|s| s.critical).count()
    }

    fn push(&mut self, sphere: Sphere, record: Record) {
        debug_assert_eq!(sphere.center.dim(), self.dim);
        self.spheres.push(sphere);
        self.records.push(record);
    }

    /// Writes the knowledge file: one sphere per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round".to_string()];
        header.extend((0..self.dim).map(|d| format!("x{d}")));
        header.extend(["radius", "critical", "min_ttc", "min_accel"].map(String::from));
        w.write_record(&header).map_err(csv_io)?;
        for (s, r) in self.spheres.iter().zip(&self.records) {
            let mut row = vec![s.round.to_string()];
            row.extend(s.center.coords().iter().map(|&x| fmt_float(x)));
            row.push(fmt_float(s.radius));
            row.push(u8::from(s.critical).to_string());
            row.push(fmt_float(r.min_ttc));
            row.push(fmt_float(r.min_accel));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a knowledge file and replays per-round statistics.
    pub fn read_csv<R: Read>(input: R, path: &Path, max_score: f64, kde_bandwidth: f64, probes: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let bad = |line: u64, reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
        if header.len() < 6 || &header[0] != "round" {
            return Err(bad(1, "expected header `round,x0,...,radius,critical,min_ttc,min_accel`".into()));
        }
        let dim = header.len() - 5;
        let mut kb = Self::new(dim);
        for (i, row) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| bad(line, e.to_string()))?;
            if row.len() != dim + 5 {
                return Err(bad(line, format!("expected {} fields, found {}", dim + 5, row.len())));
            }
            let num = |j: usize| -> Result<f64> {
                row[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(line, format!("`{}` is not a number", &row[j])))
            };
            let round: usize = row[0]
                .trim()
                .parse()
                .map_err(|_| bad(line, format!("`{}` is not a round index", &row[0])))?;
            let coords = (1..=dim).map(num).collect::<Result<Vec<_>>>()?;
            let center = Point::new(coords).map_err(|e| bad(line, e.to_string()))?;
            let radius = num(dim + 1)?;
            if !(radius > 0.0) {
                return Err(bad(line, "radius must be positive".into()));
            }
            let critical = match row[dim + 2].trim() {
                "1" => true,
                "0" => false,
                other => return Err(bad(line, format!("critical flag `{other}` is not 0 or 1"))),
            };
            if let Some(last) = kb.spheres.last() {
                if round < last.round || round > last.round + 1 {
                    return Err(bad(line, "round indices must be contiguous and ordered".into()));
                }
            } else if round != 0 {
                return Err(bad(line, "first round must be 0".into()));
            }
            let record = Record {
                min_ttc: num(dim + 3)?,
                min_accel: num(dim + 4)?,
            };
            kb.push(Sphere::new(center, radius, critical, round), record);
        }
        kb.replay_rounds(max_score, kde_bandwidth, probes);
        Ok(kb)
    }

    fn replay_rounds(&mut self, max_score: f64, h: f64, probes: usize) {
        let mut tracker = CoverageTracker::new(ProbeSet::halton(self.dim, probes));
        let mut start = 0;
        let mut n_critical = 0;
        self.rounds.clear();
        while start < self.spheres.len() {
            let round = self.spheres[start].round;
            let end = start + self.spheres[start..].iter().take_while(|s| s.round == round).count();
            tracker.add(&self.spheres[start..end]);
            let n_new_critical = self.spheres[start..end].iter().filter(|s| s.critical).count();
            n_critical += n_new_critical;
            let kde_peak = kde_peak(&self.spheres[..end], h);
            self.rounds.push(RoundStats {
                round,
                n_new: end - start,
                n_new_critical,
                n_total: end,
                n_critical,
                score: max_score - n_critical as f64,
                crate_rate: tracker.rate(),
                saturated: false,
                kde_peak,
            });
            start = end;
        }
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Nine significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// `S` minus the number of critical scenarios found so far.
pub fn score(kb: &KnowledgeBase, max_score: f64) -> f64 {
    max_score - kb.critical_count() as f64
}

/// Gaussian-kernel density of critical samples at `x`, normalized by the
/// total sample count.
pub fn kde_density(spheres: &[Sphere], x: &Point, h: f64) -> f64 {
    if spheres.is_empty() {
        return 0.0;
    }
    let dim = x.dim() as i32;
    let norm = (2.0 * std::f64::consts::PI).powf(-(dim as f64) / 2.0) / (h.powi(dim) * spheres.len() as f64);
    let sum: f64 = spheres
        .iter()
        .filter(|s| s.critical)
        .map(|s| {
            let d = s.center.distance(x) / h;
            (-0.5 * d * d).exp()
        })
        .sum();
    norm * sum
}

/// Upper bound on [`kde_density`] (every kernel at its peak).
pub fn kde_bound(spheres: &[Sphere], dim: usize, h: f64) -> f64 {
    if spheres.is_empty() {
        return 0.0;
    }
    let crit = spheres.iter().filter(|s| s.critical).count() as f64;
    crit * (2.0 * std::f64::consts::PI).powf(-(dim as f64) / 2.0) / (h.powi(dim as i32) * spheres.len() as f64)
}

fn kde_peak(spheres: &[Sphere], h: f64) -> f64 {
    spheres
        .par_iter()
        .filter(|s| s.critical)
        .map(|s| kde_density(spheres, &s.center, h))
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub points: Vec<Point>,
    pub saturated: bool,
}

/// Uniform draws outside every known sphere.
///
/// After `1000 * n` rejected draws the space counts as saturated and the
/// remaining points are accepted uniformly. With `kde_bias = Some(h)`, a
/// draw outside the known set is additionally kept with probability
/// proportional to `1 + kde_density(x)`.
pub fn generate_round<R: Rng + ?Sized>(
    known: &[Sphere],
    dim: usize,
    n: usize,
    kde_bias: Option<f64>,
    rng: &mut R,
) -> Generated {
    let index = SphereIndex::new(known);
    let bias = kde_bias.map(|h| (h, 1.0 + kde_bound(known, dim, h)));
    let limit = 1000usize.saturating_mul(n);
    let mut failures = 0usize;
    let mut saturated = false;
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let coords: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        if saturated {
            points.push(Point::from_vec_unchecked(coords));
            continue;
        }
        let mut keep = !index.contains(&coords);
        if keep {
            if let Some((h, top)) = bias {
                let p = Point::from_vec_unchecked(coords.clone());
                keep = rng.gen::<f64>() * top < 1.0 + kde_density(known, &p, h);
            }
        }
        if keep {
            points.push(Point::from_vec_unchecked(coords));
        } else {
            failures += 1;
            saturated = failures >= limit;
        }
    }
    Generated { points, saturated }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Coverage,
    MaxRounds,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Coverage => "coverage threshold reached",
            StopReason::MaxRounds => "round cap reached",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub sampler: String,
    pub max_score: f64,
    pub final_score: f64,
    pub total: usize,
    pub total_critical: usize,
    pub final_crate: f64,
    pub rounds: Vec<RoundStats>,
    pub stop: StopReason,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sampler: {}", self.sampler)?;
        writeln!(f, "rounds: {}", self.rounds.len())?;
        writeln!(f, "scenarios: {}", self.total)?;
        writeln!(f, "critical: {}", self.total_critical)?;
        writeln!(f, "max_score: {}", fmt_float(self.max_score))?;
        writeln!(f, "final_score: {}", fmt_float(self.final_score))?;
        writeln!(f, "crate: {}", fmt_float(self.final_crate))?;
        writeln!(f, "stop: {}", self.stop)?;
        for r in &self.rounds {
            writeln!(
                f,
                "round {}: new {} ({} critical), crate {}, score {}, kde_peak {}{}",
                r.round,
                r.n_new,
                r.n_new_critical,
                fmt_float(r.crate_rate),
                fmt_float(r.score),
                fmt_float(r.kde_peak),
                if r.saturated { ", saturated" } else { "" }
            )?;
        }
        Ok(())
    }
}

/// Generator for round `round`: one ChaCha stream per round, so a resumed
/// run draws exactly what an uninterrupted one would.
pub fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

/// Runs rounds until the coverage threshold or the round cap, starting from
/// `kb` (empty for a fresh run). `after_round` sees the knowledge base after
/// every round, e.g. to persist it.
pub fn run(
    cfg: &OuterConfig,
    radii: RadiusPolicy,
    sampler: &dyn Sampler,
    evaluator: &dyn ScenarioEvaluator,
    kb: &mut KnowledgeBase,
    mut after_round: impl FnMut(&KnowledgeBase) -> Result<()>,
) -> Result<RunReport> {
    let dim = kb.dim();
    let mut tracker = CoverageTracker::new(ProbeSet::halton(dim, cfg.probes));
    tracker.add(kb.spheres());
    let mut crate_rate = tracker.rate();
    let mut stop = StopReason::Coverage;
    while crate_rate < cfg.crate_theta {
        let round = kb.rounds.len();
        if round >= cfg.max_rounds {
            stop = StopReason::MaxRounds;
            break;
        }
        let mut rng = round_rng(cfg.seed, round);
        let req = SampleRequest {
            n: cfg.batch_size,
            dim,
            known: kb.spheres(),
            round,
            offset: kb.len(),
            seed: cfg.seed,
        };
        let out = sampler.sample(&req, &mut rng as &mut dyn RngCore);
        let evals: Vec<Evaluation> = out.points.par_iter().map(|p| evaluator.evaluate(p)).collect();
        let start = kb.len();
        for (p, e) in out.points.into_iter().zip(&evals) {
            let sphere = Sphere::new(p, radii.radius(e.critical), e.critical, round);
            kb.push(
                sphere,
                Record {
                    min_ttc: e.min_ttc,
                    min_accel: e.min_accel,
                },
            );
        }
        tracker.add(&kb.spheres[start..]);
        crate_rate = tracker.rate();
        let n_new_critical = evals.iter().filter(|e| e.critical).count();
        let n_critical = kb.critical_count();
        let stats = RoundStats {
            round,
            n_new: evals.len(),
            n_new_critical,
            n_total: kb.len(),
            n_critical,
            score: cfg.max_score - n_critical as f64,
            crate_rate,
            saturated: out.saturated,
            kde_peak: kde_peak(kb.spheres(), cfg.kde_bandwidth),
        };
        kb.rounds.push(stats);
        after_round(kb)?;
    }
    let total_critical = kb.critical_count();
    Ok(RunReport {
        sampler: sampler.name().to_string(),
        max_score: cfg.max_score,
        final_score: score(kb, cfg.max_score),
        total: kb.len(),
        total_critical,
        final_crate: crate_rate,
        rounds: kb.rounds.clone(),
        stop,
    })
}

/// Writes the per-round table.
pub fn write_rounds_csv<W: Write>(rounds: &[RoundStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "n_total", "n_critical", "score", "crate"])
        .map_err(csv_io)?;
    for r in rounds {
        w.write_record([
            r.round.to_string(),
            r.n_total.to_string(),
            r.n_critical.to_string(),
            fmt_float(r.score),
            fmt_float(r.crate_rate),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
