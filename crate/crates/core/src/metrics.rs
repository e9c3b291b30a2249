//! Batch quality measures reported alongside the packing objective.

use crate::space::{Point, Sphere};
use crate::spatial_index::SpatialIndex;

/// Mean clearance of a new batch: for each new center, the signed distance
/// to the nearest surface among the known spheres and the other new ones
/// (`min_j |c_i - c_j| - R_j`). Negative when centers tend to sit inside
/// existing spheres. `+inf` if there is nothing to measure against.
pub fn clearance(known: &[Sphere], new: &[Sphere]) -> f64 {
    if new.is_empty() {
        return f64::INFINITY;
    }
    let all: Vec<&Sphere> = known.iter().chain(new.iter()).collect();
    let centers: Vec<Point> = all.iter().map(|s| s.center.clone()).collect();
    let idx = SpatialIndex::build(&centers);
    let r_max = all.iter().map(|s| s.radius).fold(0.0, f64::max);
    let total: f64 = new
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let me = known.len() + i;
            let c = s.center.coords();
            let mut best = f64::INFINITY;
            for nb in idx.nearest_k(c, 2) {
                if nb.id != me {
                    best = nb.distance - all[nb.id].radius;
                    break;
                }
            }
            if best.is_infinite() {
                return best;
            }
            idx.for_each_within(c, best + r_max, |j, d| {
                if j != me {
                    best = best.min(d - all[j].radius);
                }
            });
            best
        })
        .sum();
    total / new.len() as f64
}
