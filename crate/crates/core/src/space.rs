//! Phase spaces (compact intervals and flat tori) and their points.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::MAX_DIM;
use crate::scalar::Scalar;

/// A point of a phase space of dimension at most three.
#[derive(Clone, Copy, PartialEq)]
pub struct Point<T> {
    coords: [T; MAX_DIM],
    dim: u8,
}

impl<T: Scalar> Point<T> {
    pub fn new(coords: &[T]) -> Self {
        assert!(!coords.is_empty() && coords.len() <= MAX_DIM, "point dimension must be 1..=3");
        let mut c = [T::zero(); MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Self {
            coords: c,
            dim: coords.len() as u8,
        }
    }

    pub fn scalar(x: T) -> Self {
        Self::new(&[x])
    }

    pub fn origin(dim: usize) -> Self {
        Self::new(&[T::zero(); MAX_DIM][..dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[T] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coords_mut(&mut self) -> &mut [T] {
        &mut self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn x(&self) -> T {
        self.coords[0]
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }

    /// Lexicographic total order (NaN-free points assumed).
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.coords().iter().zip(other.coords()) {
            match a.partial_cmp(b) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        std::cmp::Ordering::Equal
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.coords().iter().map(|c| c.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Point<U> {
        let v: Vec<U> = self.coords().iter().map(|c| U::lit(c.as_f64())).collect();
        Point::new(&v)
    }
}

impl<T: Scalar> fmt::Debug for Point<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl<T: Scalar> Serialize for Point<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_f64_vec().serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Point<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom("point dimension must be 1..=3"));
        }
        let c: Vec<T> = v.into_iter().map(T::lit).collect();
        Ok(Point::new(&c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseSpace<T> {
    /// `[lo, hi]` with the absolute-value metric.
    Interval { lo: T, hi: T },
    /// `ℝ^dim / ℤ^dim` with the max of coordinate-wise circle distances.
    Torus { dim: usize },
}

impl<T: Scalar> PhaseSpace<T> {
    pub fn interval(lo: T, hi: T) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!("interval needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self::Interval { lo, hi })
    }

    pub fn unit_interval() -> Self {
        Self::Interval {
            lo: T::zero(),
            hi: T::one(),
        }
    }

    pub fn torus(dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidParameter(format!("torus dimension {dim} outside 1..=3")));
        }
        Ok(Self::Torus { dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::Torus { dim } => *dim,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Self::Torus { .. })
    }

    pub fn contains(&self, p: &Point<T>) -> bool {
        if p.dim() != self.dim() || !p.is_finite() {
            return false;
        }
        match *self {
            Self::Interval { lo, hi } => p.x() >= lo && p.x() <= hi,
            Self::Torus { .. } => p.coords().iter().all(|&c| c >= T::zero() && c < T::one()),
        }
    }

    /// Canonical representative: torus coordinates reduced into `[0, 1)`.
    #[inline]
    pub fn reduce(&self, mut p: Point<T>) -> Point<T> {
        if let Self::Torus { .. } = self {
            for c in p.coords_mut() {
                *c = wrap_unit(*c);
            }
        }
        p
    }

    #[inline]
    pub fn distance(&self, a: &Point<T>, b: &Point<T>) -> T {
        match self {
            Self::Interval { .. } => (a.x() - b.x()).abs(),
            Self::Torus { .. } => a
                .coords()
                .iter()
                .zip(b.coords())
                .fold(T::zero(), |acc, (&x, &y)| acc.max(circle_distance(x, y))),
        }
    }

    /// Largest possible distance between two points.
    pub fn diameter(&self) -> T {
        match *self {
            Self::Interval { lo, hi } => hi - lo,
            Self::Torus { .. } => T::lit(0.5),
        }
    }

    /// Affine chart onto the unit cube, used by the test-function family.
    #[inline]
    pub fn unit_coords(&self, p: &Point<T>) -> [T; MAX_DIM] {
        let mut out = [T::zero(); MAX_DIM];
        match *self {
            Self::Interval { lo, hi } => out[0] = (p.x() - lo) / (hi - lo),
            Self::Torus { .. } => out[..p.dim()].copy_from_slice(p.coords()),
        }
        out
    }

    /// Inverse of [`unit_coords`](Self::unit_coords).
    pub fn from_unit_coords(&self, u: &[T]) -> Point<T> {
        match *self {
            Self::Interval { lo, hi } => Point::scalar(lo + (hi - lo) * u[0]),
            Self::Torus { dim } => self.reduce(Point::new(&u[..dim])),
        }
    }

    /// Lebesgue-uniform sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point<T> {
        let u: Vec<T> = (0..self.dim()).map(|_| T::lit(rng.gen::<f64>())).collect();
        self.from_unit_coords(&u)
    }
}

#[inline]
pub fn wrap_unit<T: Scalar>(x: T) -> T {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.
    if r >= T::one() {
        T::zero()
    } else {
        r
    }
}

#[inline]
pub fn circle_distance<T: Scalar>(a: T, b: T) -> T {
    let d = (a - b).abs();
    let d = d - d.floor();
    d.min(T::one() - d)
}
