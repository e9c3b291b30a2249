//! Scenario parameter space.
//!
//! Samples, radii, distances and forces all live in the normalized unit
//! cube. Only the simulator sees physical units, through [`ParamSpace`].

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::simulator::{BehaviorParams, IdmParams, MobilParams};

/// Behavior-model parameter names, in canonical order.
pub const PARAM_NAMES: [&str; 7] = ["v0", "alpha", "T", "b", "s0", "p", "delta_a_th"];

/// Physical parameter values keyed by dimension name.
pub type ParamMap = BTreeMap<String, f64>;

/// Number of surrounding vehicles in the cut-in scenario.
pub const SV_COUNT: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Result<Self> {
        let name = name.into();
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::config(
                name,
                format!("bounds must satisfy lower < upper, got [{lower}, {upper}]"),
            ));
        }
        Ok(Self { name, lower, upper })
    }

    fn width(&self) -> f64 {
        self.upper - self.lower
    }

    fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Default bounds for one surrounding vehicle's behavior models.
pub fn default_bounds() -> [Dimension; 7] {
    let table = [
        (25.0, 30.0),
        (1.0, 5.0),
        (0.05, 2.0),
        (0.1, 4.0),
        (0.1, 3.0),
        (0.0, 1.0),
        (0.0, 0.3),
    ];
    std::array::from_fn(|i| Dimension {
        name: PARAM_NAMES[i].to_string(),
        lower: table[i].0,
        upper: table[i].1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceMode {
    /// All surrounding vehicles share one parameter vector (D = 7).
    Shared,
    /// Every surrounding vehicle has its own parameter vector (D = 7 x 5).
    PerVehicle,
    /// A subset of the shared parameters is sampled; the rest are held fixed.
    Subset,
}

impl fmt::Display for SpaceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceMode::Shared => "shared",
            SpaceMode::PerVehicle => "per_vehicle",
            SpaceMode::Subset => "subset",
        })
    }
}

/// Named dimensions with physical bounds, plus the unit-cube mapping.
#[derive(Clone, Debug)]
pub struct ParamSpace {
    mode: SpaceMode,
    dims: Vec<Dimension>,
    base: [Dimension; 7],
    fixed: [f64; 7],
}

impl ParamSpace {
    pub fn shared() -> Self {
        Self::with_bounds(SpaceMode::Shared, default_bounds(), &[], &BTreeMap::new())
            .expect("default bounds are valid")
    }

    pub fn per_vehicle() -> Self {
        Self::with_bounds(SpaceMode::PerVehicle, default_bounds(), &[], &BTreeMap::new())
            .expect("default bounds are valid")
    }

    /// Samples only `names`; every other parameter sits at its bound midpoint.
    pub fn subset(names: &[&str]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        Self::with_bounds(SpaceMode::Subset, default_bounds(), &names, &BTreeMap::new())
    }

    /// General constructor. `subset` is only consulted in subset mode, and
    /// `fixed` overrides the midpoint for parameters that are not sampled.
    pub fn with_bounds(
        mode: SpaceMode,
        base: [Dimension; 7],
        subset: &[String],
        fixed: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        for (i, d) in base.iter().enumerate() {
            if d.name != PARAM_NAMES[i] {
                return Err(Error::config(
                    d.name.clone(),
                    format!("expected dimension `{}` at position {i}", PARAM_NAMES[i]),
                ));
            }
            Dimension::new(d.name.clone(), d.lower, d.upper)?;
        }
        let dims = match mode {
            SpaceMode::Shared => base.to_vec(),
            SpaceMode::PerVehicle => (1..=SV_COUNT)
                .flat_map(|sv| {
                    base.iter().map(move |d| Dimension {
                        name: format!("sv{sv}.{}", d.name),
                        lower: d.lower,
                        upper: d.upper,
                    })
                })
                .collect(),
            SpaceMode::Subset => {
                if subset.is_empty() {
                    return Err(Error::config("space_dims", "subset mode needs at least one dimension"));
                }
                let mut dims = Vec::with_capacity(subset.len());
                for name in subset {
                    let i = param_index(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
                    if dims.iter().any(|d: &Dimension| &d.name == name) {
                        return Err(Error::config("space_dims", format!("`{name}` listed twice")));
                    }
                    dims.push(base[i].clone());
                }
                dims
            }
        };
        let mut fixed_values: [f64; 7] = std::array::from_fn(|i| base[i].midpoint());
        for (name, &value) in fixed {
            let i = param_index(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            let d = &base[i];
            if !(d.lower..=d.upper).contains(&value) {
                return Err(Error::ParameterOutOfBounds {
                    name: name.clone(),
                    value,
                    lower: d.lower,
                    upper: d.upper,
                });
            }
            fixed_values[i] = value;
        }
        Ok(Self {
            mode,
            dims,
            base,
            fixed: fixed_values,
        })
    }

    pub fn mode(&self) -> SpaceMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    /// Affine map from the unit cube onto physical parameter values.
    pub fn to_physical(&self, p: &Point) -> Result<ParamMap> {
        self.check_dim(p.dim())?;
        Ok(self
            .dims
            .iter()
            .zip(p.coords())
            .map(|(d, &c)| (d.name.clone(), d.lower + c * d.width()))
            .collect())
    }

    pub fn from_physical(&self, params: &ParamMap) -> Result<Point> {
        for name in params.keys() {
            if !self.dims.iter().any(|d| &d.name == name) {
                return Err(Error::UnknownParameter(name.clone()));
            }
        }
        let coords = self
            .dims
            .iter()
            .map(|d| {
                let value = *params
                    .get(&d.name)
                    .ok_or_else(|| Error::MissingParameter(d.name.clone()))?;
                if !(d.lower..=d.upper).contains(&value) {
                    return Err(Error::ParameterOutOfBounds {
                        name: d.name.clone(),
                        value,
                        lower: d.lower,
                        upper: d.upper,
                    });
                }
                Ok(((value - d.lower) / d.width()).clamp(0.0, 1.0))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Point::from_vec_unchecked(coords))
    }

    /// Expands a physical parameter map into one behavior vector per
    /// surrounding vehicle, filling unsampled parameters from the fixed values.
    pub fn behaviors(&self, params: &ParamMap) -> Result<Vec<BehaviorParams>> {
        let lookup = |key: &str| -> Result<f64> {
            params
                .get(key)
                .copied()
                .ok_or_else(|| Error::MissingParameter(key.to_string()))
        };
        let vector_for = |sv: usize| -> Result<[f64; 7]> {
            let mut out = self.fixed;
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                out[i] = match self.mode {
                    SpaceMode::Shared => lookup(name)?,
                    SpaceMode::PerVehicle => lookup(&format!("sv{sv}.{name}"))?,
                    SpaceMode::Subset => params.get(*name).copied().unwrap_or(self.fixed[i]),
                };
            }
            Ok(out)
        };
        (1..=SV_COUNT)
            .map(|sv| {
                let v = vector_for(sv)?;
                Ok(BehaviorParams {
                    idm: IdmParams {
                        v0: v[0],
                        alpha: v[1],
                        time_gap: v[2],
                        b: v[3],
                        s0: v[4],
                    },
                    mobil: MobilParams {
                        politeness: v[5],
                        delta_a_th: v[6],
                    },
                })
            })
            .collect()
    }

    /// Bounds of the seven underlying behavior parameters.
    pub fn base_bounds(&self) -> &[Dimension; 7] {
        &self.base
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

impl Default for ParamSpace {
    fn default() -> Self {
        Self::shared()
    }
}

pub fn param_index(name: &str) -> Option<usize> {
    PARAM_NAMES.iter().position(|n| *n == name)
}

/// A location in the closed unit cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = coords
            .iter()
            .enumerate()
            .find(|(_, c)| !(0.0..=1.0).contains(*c))
        {
            return Err(Error::CoordinateOutOfRange { index, value });
        }
        Ok(Self { coords })
    }

    /// Caller guarantees every coordinate is within `[0, 1]`.
    pub fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| (0.0..=1.0).contains(c)));
        Self { coords }
    }

    pub fn splat(dim: usize, value: f64) -> Self {
        Self::from_vec_unchecked(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn distance(&self, other: &Point) -> f64 {
        euclidean(&self.coords, &other.coords)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A sample and the ball of scenarios it stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: Point,
    pub radius: f64,
    pub critical: bool,
    pub round: usize,
}

impl Sphere {
    pub fn new(center: Point, radius: f64, critical: bool, round: usize) -> Self {
        assert!(radius > 0.0, "sphere radius must be positive");
        Self {
            center,
            radius,
            critical,
            round,
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.center.distance(p) <= self.radius
    }
}

/// Two-level radius policy: critical samples claim a smaller neighborhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusPolicy {
    pub r_crit: f64,
    pub r_noncrit: f64,
}

impl RadiusPolicy {
    pub fn radius(&self, critical: bool) -> f64 {
        if critical {
            self.r_crit
        } else {
            self.r_noncrit
        }
    }

    pub fn max(&self) -> f64 {
        self.r_crit.max(self.r_noncrit)
    }
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        Self {
            r_crit: 0.04,
            r_noncrit: 0.06,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corners_and_midpoint_map_to_bounds() {
        let space = ParamSpace::shared();
        let lo = space.to_physical(&Point::splat(7, 0.0)).unwrap();
        let hi = space.to_physical(&Point::splat(7, 1.0)).unwrap();
        let mid = space.to_physical(&Point::splat(7, 0.5)).unwrap();
        assert_eq!(lo["v0"], 25.0);
        assert_eq!(lo["s0"], 0.1);
        assert_eq!(hi["T"], 2.0);
        assert_eq!(hi["delta_a_th"], 0.3);
        assert_eq!(mid["p"], 0.5);
    }

    #[test]
    fn from_physical_examples() {
        let space = ParamSpace::subset(&["v0"]).unwrap();
        let at = |v: f64| {
            let m: ParamMap = [("v0".to_string(), v)].into();
            space.from_physical(&m).unwrap().coords()[0]
        };
        assert_eq!(at(25.0), 0.0);
        assert_eq!(at(30.0), 1.0);
        assert_eq!(at(27.5), 0.5);
    }

    #[test]
    fn out_of_bounds_names_dimension() {
        let space = ParamSpace::subset(&["v0", "T"]).unwrap();
        let m: ParamMap = [("v0".to_string(), 26.0), ("T".to_string(), 3.0)].into();
        match space.from_physical(&m) {
            Err(Error::ParameterOutOfBounds { name, .. }) => assert_eq!(name, "T"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let space = ParamSpace::shared();
        assert!(matches!(
            space.to_physical(&Point::splat(3, 0.5)),
            Err(Error::DimensionMismatch { expected: 7, got: 3 })
        ));
    }

    #[test]
    fn modes_have_expected_dimension() {
        assert_eq!(ParamSpace::shared().dim(), 7);
        assert_eq!(ParamSpace::per_vehicle().dim(), 35);
        let names: Vec<_> = ParamSpace::shared().names().map(str::to_string).collect();
        assert_eq!(names, PARAM_NAMES);
    }

    #[test]
    fn behaviors_fill_fixed_values_in_subset_mode() {
        let space = ParamSpace::subset(&["T"]).unwrap();
        let m = space.to_physical(&Point::splat(1, 0.0)).unwrap();
        let b = space.behaviors(&m).unwrap();
        assert_eq!(b.len(), SV_COUNT);
        assert_eq!(b[0].idm.time_gap, 0.05);
        assert_eq!(b[3].idm.v0, 27.5);
        assert_eq!(b[4].mobil.politeness, 0.5);
    }

    #[test]
    fn per_vehicle_behaviors_differ() {
        let space = ParamSpace::per_vehicle();
        let coords: Vec<f64> = (0..35).map(|i| (i / 7) as f64 / 4.0).collect();
        let m = space.to_physical(&Point::new(coords).unwrap()).unwrap();
        let b = space.behaviors(&m).unwrap();
        assert_eq!(b[0].idm.v0, 25.0);
        assert_eq!(b[4].idm.v0, 30.0);
    }

    #[test]
    fn invalid_bounds_rejected() {
        let mut base = default_bounds();
        base[2].upper = base[2].lower;
        assert!(ParamSpace::with_bounds(SpaceMode::Shared, base, &[], &BTreeMap::new()).is_err());
    }

    #[test]
    fn point_rejects_outside_cube() {
        assert!(Point::new(vec![0.5, 1.2]).is_err());
        assert!(Point::new(vec![0.0, 1.0]).is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(coords in proptest::collection::vec(0.0f64..=1.0, 7)) {
            let space = ParamSpace::shared();
            let p = Point::new(coords).unwrap();
            let back = space.from_physical(&space.to_physical(&p).unwrap()).unwrap();
            for (a, b) in p.coords().iter().zip(back.coords()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn to_physical_is_increasing(a in 0.0f64..1.0, delta in 1e-6f64..0.5, d in 0usize..7) {
            let space = ParamSpace::shared();
            let b = (a + delta).min(1.0);
            let mut lo = vec![0.5; 7];
            let mut hi = vec![0.5; 7];
            lo[d] = a;
            hi[d] = b;
            let pl = space.to_physical(&Point::new(lo).unwrap()).unwrap();
            let ph = space.to_physical(&Point::new(hi).unwrap()).unwrap();
            let name = PARAM_NAMES[d];
            prop_assert!(ph[name] > pl[name]);
        }
    }
}
