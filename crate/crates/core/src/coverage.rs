//! Coverage rate of a union of spheres over the unit cube.
//!
//! Volume is estimated by counting Halton probes inside at least one sphere.
//! Probes live only inside the cube, so spheres poking out of it are
//! clipped for free.

use rayon::prelude::*;

use crate::halton::Halton;
use crate::space::{Point, Sphere};
use crate::spatial_index::SpatialIndex;

pub const DEFAULT_PROBES: usize = 100_000;

/// A fixed low-discrepancy probe set, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    dim: usize,
    coords: Vec<f64>,
}

impl ProbeSet {
    pub fn halton(dim: usize, count: usize) -> Self {
        let seq = Halton::new(dim);
        let mut coords = vec![0.0; dim * count];
        for (i, row) in coords.chunks_mut(dim.max(1)).enumerate().take(count) {
            seq.point_into(i as u64 + 1, row);
        }
        Self { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn probe(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn rows(&self) -> impl IndexedParallelIterator<Item = &[f64]> {
        self.coords.par_chunks(self.dim.max(1))
    }
}

/// Spheres bundled with a KD-tree over their centers.
#[derive(Clone, Debug)]
pub struct SphereIndex<'a> {
    spheres: &'a [Sphere],
    index: SpatialIndex,
    r_max: f64,
}

impl<'a> SphereIndex<'a> {
    pub fn new(spheres: &'a [Sphere]) -> Self {
        let centers: Vec<Point> = spheres.iter().map(|s| s.center.clone()).collect();
        Self {
            spheres,
            index: SpatialIndex::build(&centers),
            r_max: max_radius(spheres),
        }
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        covered(self.spheres, &self.index, self.r_max, q)
    }
}

fn max_radius(spheres: &[Sphere]) -> f64 {
    spheres.iter().map(|s| s.radius).fold(0.0, f64::max)
}

fn covered(spheres: &[Sphere], idx: &SpatialIndex, r_max: f64, q: &[f64]) -> bool {
    idx.any_within(q, r_max, |id, d| d <= spheres[id].radius)
}

/// Fraction of probes inside at least one sphere. `idx` must index the
/// sphere centers in order.
pub fn crate_estimate(spheres: &[Sphere], probes: &ProbeSet, idx: &SpatialIndex) -> f64 {
    if spheres.is_empty() || probes.is_empty() {
        return 0.0;
    }
    debug_assert_eq!(idx.len(), spheres.len());
    let r_max = max_radius(spheres);
    let hits = probes
        .rows()
        .filter(|q| covered(spheres, idx, r_max, q))
        .count();
    hits as f64 / probes.count() as f64
}

/// True iff `p` lies inside any of `spheres` (indexed by `idx`).
pub fn is_in_known(p: &Point, spheres: &[Sphere], idx: &SpatialIndex) -> bool {
    !spheres.is_empty() && covered(spheres, idx, max_radius(spheres), p.coords())
}

/// Incremental estimator: probes once covered stay covered, so adding a
/// batch only tests the still-uncovered probes against the new spheres.
#[derive(Clone, Debug)]
pub struct CoverageTracker {
    probes: ProbeSet,
    covered: Vec<bool>,
    hits: usize,
}

impl CoverageTracker {
    pub fn new(probes: ProbeSet) -> Self {
        let n = probes.count();
        Self {
            probes,
            covered: vec![false; n],
            hits: 0,
        }
    }

    pub fn add(&mut self, spheres: &[Sphere]) {
        if spheres.is_empty() {
            return;
        }
        let index = SphereIndex::new(spheres);
        let probes = &self.probes;
        let newly: usize = self
            .covered
            .par_iter_mut()
            .enumerate()
            .map(|(i, c)| {
                if !*c && index.contains(probes.probe(i)) {
                    *c = true;
                    1
                } else {
                    0
                }
            })
            .sum();
        self.hits += newly;
    }

    pub fn rate(&self) -> f64 {
        if self.covered.is_empty() {
            0.0
        } else {
            self.hits as f64 / self.covered.len() as f64
        }
    }

    pub fn probes(&self) -> &ProbeSet {
        &self.probes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(c: &[f64], r: f64) -> Sphere {
        Sphere::new(Point::new(c.to_vec()).unwrap(), r, false, 0)
    }

    fn estimate(spheres: &[Sphere], probes: &ProbeSet) -> f64 {
        crate_estimate(spheres, probes, SphereIndex::new(spheres).index())
    }

    fn random_spheres(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Sphere> {
        (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
                sphere(&c, rng.gen_range(0.02..0.15))
            })
            .collect()
    }

    #[test]
    fn empty_and_full() {
        let probes = ProbeSet::halton(3, 2000);
        assert_eq!(estimate(&[], &probes), 0.0);
        assert_eq!(estimate(&[sphere(&[0.1, 0.9, 0.3], 3f64.sqrt())], &probes), 1.0);
    }

    #[test]
    fn probes_are_deterministic_and_inside() {
        let a = ProbeSet::halton(4, 500);
        assert_eq!(a, ProbeSet::halton(4, 500));
        assert_eq!(a.count(), 500);
        assert!(a.coords.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn disc_area_in_two_dimensions() {
        let probes = ProbeSet::halton(2, 100_000);
        let v = std::f64::consts::PI * 0.25 * 0.25;
        let se = (v * (1.0 - v) / 1e5).sqrt();
        let got = estimate(&[sphere(&[0.5, 0.5], 0.25)], &probes);
        assert!((got - v).abs() < 3.0 * se, "{got} vs {v}");
    }

    #[test]
    fn membership_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spheres = random_spheres(&mut rng, 120, 3);
        let index = SphereIndex::new(&spheres);
        assert!(!is_in_known(&Point::splat(3, 0.5), &[], index.index()));
        assert!(is_in_known(&spheres[7].center, &spheres, index.index()));
        for _ in 0..10_000 {
            let p = Point::new((0..3).map(|_| rng.gen()).collect()).unwrap();
            let brute = spheres.iter().any(|s| s.contains(&p));
            assert_eq!(is_in_known(&p, &spheres, index.index()), brute);
        }
    }

    #[test]
    fn monotone_and_union_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spheres = random_spheres(&mut rng, 40, 3);
        let probes = ProbeSet::halton(3, 20_000);
        let mut last = 0.0;
        let mut singles = 0.0;
        for k in 1..=spheres.len() {
            let now = estimate(&spheres[..k], &probes);
            assert!(now >= last);
            last = now;
            singles += estimate(&spheres[k - 1..k], &probes);
            assert!(now <= singles + 1e-12);
        }
    }

    #[test]
    fn tracker_matches_batch_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let spheres = random_spheres(&mut rng, 90, 3);
        let probes = ProbeSet::halton(3, 20_000);
        let mut tracker = CoverageTracker::new(probes.clone());
        for chunk in spheres.chunks(30) {
            tracker.add(chunk);
        }
        assert_eq!(tracker.rate(), estimate(&spheres, &probes));
    }
}
