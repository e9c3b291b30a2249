//! Inner loop: repulsive sphere packing of a new sample batch.
//!
//! New spheres are pushed away from the immovable known spheres and from
//! each other by inverse-square repulsion, kept inside the cube by a
//! log-barrier, and moved a scheduled step along the unit force direction.
//! A whole batch move is accepted outright when the mean minimum weighted
//! distance improves and otherwise with an annealing probability.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::space::{Point, RadiusPolicy, Sphere};
use crate::spatial_index::SpatialIndex;

/// Distance floor for the inverse-square law.
pub const MIN_FORCE_DISTANCE: f64 = 1e-6;
/// Coordinates are clamped into `[EDGE, 1 - EDGE]`.
pub const EDGE: f64 = 1e-9;
/// Below this force norm a sphere does not move.
const MIN_FORCE_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PackingConfig {
    /// Total iterations `K`.
    pub iterations: usize,
    /// Spheres moved per iteration `n` (clamped to the batch size).
    pub points_per_iteration: usize,
    /// Force constant.
    pub mu: f64,
    /// Boundary barrier weight.
    pub beta: f64,
    pub t0: f64,
    pub t_decay: f64,
    /// Repulsion cutoff.
    pub neighbor_radius: f64,
    pub radii: RadiusPolicy,
}

impl Default for PackingConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            points_per_iteration: 200,
            mu: 1.0,
            beta: 0.01,
            t0: 0.02,
            t_decay: 0.05,
            neighbor_radius: 0.3,
            radii: RadiusPolicy::default(),
        }
    }
}

impl PackingConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.points_per_iteration == 0 {
            return Err(("points_per_iteration", "must be at least 1".into()));
        }
        let checks = [
            ("mu", self.mu > 0.0),
            ("beta", self.beta >= 0.0),
            ("t0", self.t0 > 0.0),
            ("t_decay", self.t_decay >= 0.0),
            ("neighbor_radius", self.neighbor_radius > 0.0),
            ("r_crit", self.radii.r_crit > 0.0),
            ("r_noncrit", self.radii.r_noncrit > 0.0),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err((key, "value violates its range".into()));
            }
        }
        Ok(())
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.t0 / (1.0 + self.t_decay * k as f64)
    }
}

/// Center distance over the sum of radii: 1 when tangent, < 1 when overlapping.
pub fn weighted_distance(a: &Sphere, b: &Sphere) -> f64 {
    a.center.distance(&b.center) / (a.radius + b.radius)
}

/// Repulsion exerted by `from` on `on`, pointing from `from` toward `on`.
///
/// Magnitude is `mu * q_on * q_from / d^2` with `q = radius`. Ids only matter
/// for coincident centers, where they pick a deterministic direction that
/// flips sign when the roles swap.
pub fn repulsion(on: &Sphere, on_id: usize, from: &Sphere, from_id: usize, mu: f64) -> Vec<f64> {
    let mut out = vec![0.0; on.center.dim()];
    add_repulsion(
        &mut out,
        on.center.coords(),
        on.radius,
        on_id,
        from.center.coords(),
        from.radius,
        from_id,
        mu,
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn add_repulsion(
    out: &mut [f64],
    on: &[f64],
    q_on: f64,
    on_id: usize,
    from: &[f64],
    q_from: f64,
    from_id: usize,
    mu: f64,
) {
    let d2: f64 = on.iter().zip(from).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = d2.sqrt();
    let magnitude = mu * (q_on * q_from) / d.max(MIN_FORCE_DISTANCE).powi(2);
    if d > 0.0 {
        for ((o, a), b) in out.iter_mut().zip(on).zip(from) {
            *o += magnitude * (a - b) / d;
        }
    } else {
        let dir = tie_direction(on_id, from_id, on.len());
        for (o, u) in out.iter_mut().zip(dir) {
            *o += magnitude * u;
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Unit vector derived from the unordered id pair; negated for the larger id.
fn tie_direction(on_id: usize, from_id: usize, dim: usize) -> Vec<f64> {
    let (lo, hi) = (on_id.min(from_id) as u64, on_id.max(from_id) as u64);
    let mut state = splitmix64(lo ^ splitmix64(hi));
    let mut dir: Vec<f64> = (0..dim)
        .map(|_| {
            state = splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        dir.iter_mut().for_each(|x| *x = 0.0);
        dir[0] = 1.0;
    } else {
        dir.iter_mut().for_each(|x| *x /= norm);
    }
    if on_id > from_id {
        dir.iter_mut().for_each(|x| *x = -*x);
    }
    dir
}

/// Log-barrier pulling a center back toward the middle of every axis.
pub fn boundary_force(p: &Point, beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.dim()];
    add_boundary(&mut out, p.coords(), beta);
    out
}

fn add_boundary(out: &mut [f64], p: &[f64], beta: f64) {
    for (o, &x) in out.iter_mut().zip(p) {
        let x = x.clamp(EDGE, 1.0 - EDGE);
        *o += beta * ((1.0 - x) / x).ln();
    }
}

/// Annealing acceptance for a batch move.
///
/// Improvements are always taken. A worsening is taken with
/// `exp(-tau(k) * (old - new) / max(|old|, 1e-9))`, `tau(k) = 1 + 10 k / K`.
pub fn acceptance_probability(obj_old: f64, obj_new: f64, k: usize, total: usize) -> f64 {
    if obj_new >= obj_old {
        return 1.0;
    }
    if obj_old.is_infinite() || obj_new.is_nan() {
        return 0.0;
    }
    let tau = 1.0 + 10.0 * k as f64 / total.max(1) as f64;
    let rel = (obj_old - obj_new) / obj_old.abs().max(1e-9);
    (-tau * rel).exp().clamp(0.0, 1.0)
}

/// Mutable inner-loop state over an immovable known set.
#[derive(Clone, Debug)]
pub struct PackingState<'a> {
    known: &'a [Sphere],
    known_index: SpatialIndex,
    new: Vec<Sphere>,
    r_max: f64,
    k: usize,
    objective: f64,
    best_objective: f64,
    best: Vec<Sphere>,
}

/// One iteration's outcome, as written to the trace file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Objective of the configuration after this iteration.
    pub objective: f64,
    pub best_objective: f64,
    pub accepted: bool,
    pub probability: f64,
}

impl<'a> PackingState<'a> {
    pub fn new(known: &'a [Sphere], new: Vec<Sphere>) -> Self {
        let centers: Vec<Point> = known.iter().map(|s| s.center.clone()).collect();
        let known_index = SpatialIndex::build(&centers);
        let r_max = known
            .iter()
            .chain(new.iter())
            .map(|s| s.radius)
            .fold(0.0, f64::max);
        let mut state = Self {
            known,
            known_index,
            new,
            r_max,
            k: 0,
            objective: 0.0,
            best_objective: 0.0,
            best: Vec::new(),
        };
        state.objective = state.objective_of(&state.new);
        state.best_objective = state.objective;
        state.best = state.new.clone();
        state
    }

    pub fn known(&self) -> &[Sphere] {
        self.known
    }

    pub fn new_spheres(&self) -> &[Sphere] {
        &self.new
    }

    pub fn best_spheres(&self) -> &[Sphere] {
        &self.best
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn best_objective(&self) -> f64 {
        self.best_objective
    }

    /// Index over the current new centers, ids = batch positions.
    pub fn new_index(&self) -> SpatialIndex {
        index_of(&self.new)
    }

    fn new_id(&self, i: usize) -> usize {
        self.known.len() + i
    }

    /// Mean over `new` of the minimum weighted distance to every known
    /// sphere and every other new sphere; `+inf` when nothing else exists.
    pub fn objective_of(&self, new: &[Sphere]) -> f64 {
        if new.is_empty() {
            return f64::INFINITY;
        }
        let idx = index_of(new);
        let mins: Vec<f64> = (0..new.len())
            .into_par_iter()
            .map(|i| self.min_weighted(i, new, &idx))
            .collect();
        mins.iter().sum::<f64>() / new.len() as f64
    }

    fn min_weighted(&self, i: usize, new: &[Sphere], new_idx: &SpatialIndex) -> f64 {
        let me = &new[i];
        let c = me.center.coords();
        let r = me.radius;
        let mut best = f64::INFINITY;
        if let Some(nb) = self.known_index.nearest_k(c, 1).first() {
            best = nb.distance / (r + self.known[nb.id].radius);
        }
        if let Some(nb) = new_idx.nearest_k(c, 2).iter().find(|nb| nb.id != i) {
            best = best.min(nb.distance / (r + new[nb.id].radius));
        }
        if best.is_infinite() {
            return best;
        }
        let r_max = new.iter().map(|s| s.radius).fold(self.r_max, f64::max);
        let rho = best * (r + r_max);
        self.known_index.for_each_within(c, rho, |j, d| {
            best = best.min(d / (r + self.known[j].radius));
        });
        new_idx.for_each_within(c, rho, |j, d| {
            if j != i {
                best = best.min(d / (r + new[j].radius));
            }
        });
        best
    }

    /// Net force on new sphere `i`: repulsion from every known and new
    /// neighbor within the cutoff, plus the boundary barrier.
    pub fn total_force(&self, i: usize, new_index: &SpatialIndex, cfg: &PackingConfig) -> Vec<f64> {
        let me = &self.new[i];
        let c = me.center.coords();
        let my_id = self.new_id(i);
        let mut f = vec![0.0; c.len()];
        let mut known_hits = Vec::new();
        self.known_index
            .for_each_within(c, cfg.neighbor_radius, |j, _| known_hits.push(j));
        known_hits.sort_unstable();
        for j in known_hits {
            let s = &self.known[j];
            add_repulsion(&mut f, c, me.radius, my_id, s.center.coords(), s.radius, j, cfg.mu);
        }
        let mut new_hits = Vec::new();
        new_index.for_each_within(c, cfg.neighbor_radius, |j, _| {
            if j != i {
                new_hits.push(j)
            }
        });
        new_hits.sort_unstable();
        for j in new_hits {
            let s = &self.new[j];
            add_repulsion(
                &mut f,
                c,
                me.radius,
                my_id,
                s.center.coords(),
                s.radius,
                self.new_id(j),
                cfg.mu,
            );
        }
        add_boundary(&mut f, c, cfg.beta);
        f
    }

    /// One iteration: move `n` random spheres along their net force and
    /// accept or reject the batch.
    pub fn step<R: Rng + ?Sized>(&mut self, cfg: &PackingConfig, rng: &mut R) -> StepRecord {
        let k = self.k;
        let count = self.new.len();
        if count == 0 {
            self.k += 1;
            return StepRecord {
                k,
                objective: self.objective,
                best_objective: self.best_objective,
                accepted: false,
                probability: 0.0,
            };
        }
        let n = cfg.points_per_iteration.clamp(1, count);
        let mut selected = index::sample(rng, count, n).into_vec();
        selected.sort_unstable();

        let new_index = self.new_index();
        let t = cfg.step_size(k);
        let moves: Vec<(usize, Option<Vec<f64>>)> = selected
            .par_iter()
            .map(|&i| {
                let f = self.total_force(i, &new_index, cfg);
                let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm >= MIN_FORCE_NORM) || !norm.is_finite() {
                    return (i, None);
                }
                let c = self.new[i].center.coords();
                let next = c
                    .iter()
                    .zip(&f)
                    .map(|(x, fx)| (x + t * fx / norm).clamp(EDGE, 1.0 - EDGE))
                    .collect();
                (i, Some(next))
            })
            .collect();

        let mut proposed = self.new.clone();
        for (i, next) in moves {
            if let Some(next) = next {
                proposed[i].center.coords_mut().copy_from_slice(&next);
            }
        }
        let obj_new = self.objective_of(&proposed);
        let probability = acceptance_probability(self.objective, obj_new, k, cfg.iterations);
        let draw: f64 = rng.gen();
        let accepted = draw < probability;
        if accepted {
            self.new = proposed;
            self.objective = obj_new;
            if obj_new > self.best_objective {
                self.best_objective = obj_new;
                self.best = self.new.clone();
            }
        }
        self.k += 1;
        StepRecord {
            k,
            objective: self.objective,
            best_objective: self.best_objective,
            accepted,
            probability,
        }
    }
}

fn index_of(spheres: &[Sphere]) -> SpatialIndex {
    let dim = spheres.first().map_or(0, |s| s.center.dim());
    let mut flat = Vec::with_capacity(spheres.len() * dim);
    for s in spheres {
        flat.extend_from_slice(s.center.coords());
    }
    SpatialIndex::from_flat(dim, flat)
}

/// Objective for a standalone configuration.
pub fn objective(known: &[Sphere], new: &[Sphere]) -> f64 {
    PackingState::new(known, new.to_vec()).objective()
}

#[derive(Clone, Debug)]
pub struct PackOutcome {
    /// Best-so-far positions.
    pub spheres: Vec<Sphere>,
    pub initial_objective: f64,
    pub best_objective: f64,
    pub trace: Vec<StepRecord>,
}

/// Runs the full inner loop on `new` points against `known` spheres.
/// New spheres get the non-critical radius; criticality is unknown until
/// they are evaluated.
pub fn pack<R: Rng + ?Sized>(
    new: &[Point],
    known: &[Sphere],
    round: usize,
    cfg: &PackingConfig,
    rng: &mut R,
) -> PackOutcome {
    let spheres: Vec<Sphere> = new
        .iter()
        .map(|p| Sphere::new(p.clone(), cfg.radii.r_noncrit, false, round))
        .collect();
    if spheres.is_empty() {
        return PackOutcome {
            spheres,
            initial_objective: f64::INFINITY,
            best_objective: f64::INFINITY,
            trace: Vec::new(),
        };
    }
    let mut state = PackingState::new(known, spheres);
    let initial_objective = state.objective();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        trace.push(state.step(cfg, rng));
    }
    PackOutcome {
        spheres: state.best_spheres().to_vec(),
        initial_objective,
        best_objective: state.best_objective(),
        trace,
    }
}
