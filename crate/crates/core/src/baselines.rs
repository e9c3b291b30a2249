//! Reference samplers: plain Monte Carlo, shifted Halton and greedy
//! best-of-candidates.

use rand::Rng;

use crate::halton::Halton;
use crate::space::{euclidean, Point, RadiusPolicy, Sphere};
use crate::spatial_index::SpatialIndex;

pub const DEFAULT_GREEDY_CANDIDATES: usize = 50;

/// `n` i.i.d. uniform points, drawn point by point, coordinate by coordinate.
pub fn smc_sample<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| uniform_point(dim, rng)).collect()
}

fn uniform_point<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Point {
    Point::from_vec_unchecked((0..dim).map(|_| rng.gen::<f64>()).collect())
}

/// First `n` Halton points with a Cranley–Patterson shift (mod 1).
pub fn qmc_sample(n: usize, shift: &[f64]) -> Vec<Point> {
    let seq = Halton::new(shift.len());
    let mut row = vec![0.0; shift.len()];
    (0..n)
        .map(|i| {
            seq.point_into(i as u64 + 1, &mut row);
            let coords = row.iter().zip(shift).map(|(x, s)| (x + s).fract()).collect();
            Point::from_vec_unchecked(coords)
        })
        .collect()
}

/// A Cranley–Patterson shift drawn uniformly from the cube.
pub fn random_shift<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.gen::<f64>()).collect()
}

/// Sequential best-of-candidates placement against a fixed known set.
#[derive(Clone, Debug)]
pub struct Greedy<'a> {
    dim: usize,
    known: &'a [Sphere],
    index: SpatialIndex,
    radius: f64,
    r_max: f64,
    placed: Vec<Sphere>,
}

impl<'a> Greedy<'a> {
    pub fn new(dim: usize, known: &'a [Sphere], radius: f64) -> Self {
        let centers: Vec<Point> = known.iter().map(|s| s.center.clone()).collect();
        Self {
            dim,
            known,
            index: SpatialIndex::build(&centers),
            radius,
            r_max: known.iter().map(|s| s.radius).fold(radius, f64::max),
            placed: Vec::new(),
        }
    }

    /// Minimum weighted distance from a would-be sphere at `c` to the known
    /// set and everything placed so far.
    pub fn score(&self, c: &[f64]) -> f64 {
        let r = self.radius;
        let mut best = self
            .placed
            .iter()
            .map(|s| euclidean(c, s.center.coords()) / (r + s.radius))
            .fold(f64::INFINITY, f64::min);
        if let Some(nb) = self.index.nearest_k(c, 1).first() {
            best = best.min(nb.distance / (r + self.known[nb.id].radius));
            let rho = best * (r + self.r_max);
            self.index.for_each_within(c, rho, |j, d| {
                best = best.min(d / (r + self.known[j].radius));
            });
        }
        best
    }

    /// Draws `candidates` points, places the best (earliest on ties) and
    /// returns every candidate's score.
    pub fn step<R: Rng + ?Sized>(&mut self, candidates: usize, round: usize, rng: &mut R) -> Vec<f64> {
        let mut scores = Vec::with_capacity(candidates.max(1));
        let mut best: Option<(f64, Point)> = None;
        for _ in 0..candidates.max(1) {
            let c = uniform_point(self.dim, rng);
            let s = self.score(c.coords());
            scores.push(s);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, c));
            }
        }
        let (_, center) = best.expect("at least one candidate");
        self.placed.push(Sphere::new(center, self.radius, false, round));
        scores
    }

    pub fn placed(&self) -> &[Sphere] {
        &self.placed
    }

    pub fn into_placed(self) -> Vec<Sphere> {
        self.placed
    }
}

/// `n` greedy placements of radius-`radius` spheres.
pub fn greedy_sample<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    known: &[Sphere],
    radius: f64,
    candidates: usize,
    round: usize,
    rng: &mut R,
) -> Vec<Sphere> {
    let mut g = Greedy::new(dim, known, radius);
    for _ in 0..n {
        g.step(candidates, round, rng);
    }
    g.into_placed()
}

/// A synthetic knowledge set: `n` uniform centers, the first `n_critical`
/// of them marked critical, all in round 0.
pub fn random_knowledge<R: Rng + ?Sized>(
    n: usize,
    n_critical: usize,
    dim: usize,
    radii: RadiusPolicy,
    rng: &mut R,
) -> Vec<Sphere> {
    (0..n)
        .map(|i| {
            let critical = i < n_critical;
            Sphere::new(uniform_point(dim, rng), radii.radius(critical), critical, 0)
        })
        .collect()
}
