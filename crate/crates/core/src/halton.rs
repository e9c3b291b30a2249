//! Halton low-discrepancy points.

/// The first `n` primes.
pub fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut scale = inv_base;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv_base;
    }
    out
}

/// Multidimensional Halton sequence, bases = the first `dim` primes.
///
/// Indices start at 1, so the all-zero point is never emitted.
#[derive(Clone, Debug)]
pub struct Halton {
    bases: Vec<u64>,
    next: u64,
}

impl Halton {
    pub fn new(dim: usize) -> Self {
        Self {
            bases: first_primes(dim),
            next: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    /// Writes point number `index` (1-based) into `out`.
    pub fn point_into(&self, index: u64, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(&self.bases) {
            *o = radical_inverse(index, b);
        }
    }
}

impl Iterator for Halton {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.bases.len()];
        self.point_into(self.next, &mut out);
        self.next += 1;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primes() {
        assert_eq!(first_primes(7), vec![2, 3, 5, 7, 11, 13, 17]);
    }

    #[test]
    fn base_two_and_three_prefixes() {
        let pts: Vec<Vec<f64>> = Halton::new(2).take(6).collect();
        let first: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let second: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        assert_eq!(first, vec![0.5, 0.25, 0.75, 0.125, 0.625, 0.375]);
        let expected = [1.0 / 3.0, 2.0 / 3.0, 1.0 / 9.0, 4.0 / 9.0, 7.0 / 9.0, 2.0 / 9.0];
        for (a, b) in second.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
