//! Smooth maps with exact Jacobians, the built-in catalog, and orbit utilities.

use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counterexample::{CounterexampleMap, CounterexampleParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;
use crate::space::{wrap_unit, PhaseSpace, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    CInfinity,
    /// `C^r` and no better; `Cr(0)` is merely continuous.
    Cr(u32),
}

impl Smoothness {
    pub fn is_differentiable(&self) -> bool {
        !matches!(self, Smoothness::Cr(0))
    }
}

pub type EvalFn<T> = Arc<dyn Fn(&Point<T>) -> Point<T> + Send + Sync>;
pub type JacobianFn<T> = Arc<dyn Fn(&Point<T>) -> Mat<T> + Send + Sync>;

#[derive(Clone)]
pub enum MapKind<T> {
    /// `x ↦ 2x mod 1` on the circle.
    Doubling,
    /// `x ↦ x + θ mod 1` on the circle.
    Rotation { theta: T },
    /// `x ↦ 1 − |1 − 2x|` on `[0, 1]`.
    Tent,
    /// `x ↦ μx(1 − x)` on `[0, 1]`.
    Logistic { mu: T },
    /// `(x, y) ↦ (2x + y, x + y) mod 1` on the 2-torus.
    Cat,
    Identity,
    /// The finitely smooth interval map of the counterexample module.
    Counterexample(Arc<CounterexampleMap>),
    Custom {
        eval: EvalFn<T>,
        jacobian: JacobianFn<T>,
    },
}

/// A named map of a phase space together with its derivative.
#[derive(Clone)]
pub struct SystemSpec<T> {
    name: String,
    descriptor: String,
    space: PhaseSpace<T>,
    smoothness: Smoothness,
    kind: MapKind<T>,
}

impl<T: Scalar> fmt::Debug for SystemSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("descriptor", &self.descriptor)
            .field("space", &self.space)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl<T: Scalar> SystemSpec<T> {
    pub fn doubling() -> Self {
        Self {
            name: "doubling".into(),
            descriptor: "doubling".into(),
            space: PhaseSpace::Torus { dim: 1 },
            smoothness: Smoothness::CInfinity,
            kind: MapKind::Doubling,
        }
    }

    pub fn rotation(theta: T) -> Self {
        Self {
            name: "rotation".into(),
            descriptor: format!("rotation theta={}", theta.as_f64()),
            space: PhaseSpace::Torus { dim: 1 },
            smoothness: Smoothness::CInfinity,
            kind: MapKind::Rotation { theta: wrap_unit(theta) },
        }
    }

    pub fn tent() -> Self {
        Self {
            name: "tent".into(),
            descriptor: "tent".into(),
            space: PhaseSpace::unit_interval(),
            smoothness: Smoothness::Cr(0),
            kind: MapKind::Tent,
        }
    }

    pub fn logistic(mu: T) -> Result<Self> {
        if !(mu > T::zero() && mu <= T::lit(4.0)) {
            return Err(Error::InvalidParameter(format!(
                "logistic parameter mu={mu} must lie in (0, 4]"
            )));
        }
        Ok(Self {
            name: "logistic".into(),
            descriptor: format!("logistic mu={}", mu.as_f64()),
            space: PhaseSpace::unit_interval(),
            smoothness: Smoothness::CInfinity,
            kind: MapKind::Logistic { mu },
        })
    }

    pub fn cat() -> Self {
        Self {
            name: "cat".into(),
            descriptor: "cat".into(),
            space: PhaseSpace::Torus { dim: 2 },
            smoothness: Smoothness::CInfinity,
            kind: MapKind::Cat,
        }
    }

    /// Identity of `[0, 1]`.
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            descriptor: "identity".into(),
            space: PhaseSpace::unit_interval(),
            smoothness: Smoothness::CInfinity,
            kind: MapKind::Identity,
        }
    }

    pub fn counterexample(map: Arc<CounterexampleMap>) -> Self {
        let p = map.params();
        Self {
            name: "counterexample".into(),
            descriptor: format!(
                "counterexample r={} lambda={} n0={} nmax={}",
                p.r, p.lambda, p.n0, p.n_max
            ),
            space: PhaseSpace::Interval {
                lo: T::zero(),
                hi: T::lit(1.5),
            },
            smoothness: Smoothness::Cr(p.r),
            kind: MapKind::Counterexample(map),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        space: PhaseSpace<T>,
        smoothness: Smoothness,
        eval: EvalFn<T>,
        jacobian: JacobianFn<T>,
    ) -> Self {
        let name = name.into();
        Self {
            descriptor: name.clone(),
            name,
            space,
            smoothness,
            kind: MapKind::Custom { eval, jacobian },
        }
    }

    /// Parses `"<id> key=value ..."`, e.g. `"logistic mu=4.0"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut tokens = spec.split_whitespace();
        let id = tokens
            .next()
            .ok_or_else(|| Error::UnknownSystem(spec.to_string()))?;
        let params: Vec<&str> = tokens.collect();
        Self::from_parts(id, &params)
    }

    pub fn from_parts(id: &str, params: &[&str]) -> Result<Self> {
        let mut kv = Vec::with_capacity(params.len());
        for p in params {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got `{p}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("`{k}` is not a number: `{v}`")))?;
            kv.push((k, v));
        }
        let allowed: &[&str] = match id {
            "doubling" | "tent" | "cat" | "identity" => &[],
            "rotation" => &["theta"],
            "logistic" => &["mu"],
            "counterexample" => &["r", "lambda", "n0", "nmax"],
            other => return Err(Error::UnknownSystem(other.to_string())),
        };
        for (k, _) in &kv {
            if !allowed.contains(k) {
                return Err(Error::InvalidParameter(format!("`{id}` has no parameter `{k}`")));
            }
        }
        let get = |key: &str, default: f64| {
            kv.iter()
                .rev()
                .find(|(k, _)| *k == key)
                .map(|&(_, v)| v)
                .unwrap_or(default)
        };
        Ok(match id {
            "doubling" => Self::doubling(),
            "tent" => Self::tent(),
            "cat" => Self::cat(),
            "identity" => Self::identity(),
            "rotation" => Self::rotation(T::lit(get("theta", 0.618_033_988_749_894_8))),
            "logistic" => Self::logistic(T::lit(get("mu", 4.0)))?,
            "counterexample" => {
                let as_int = |key: &str, default: f64| -> Result<u32> {
                    let v = get(key, default);
                    if v.fract() != 0.0 || v < 0.0 {
                        return Err(Error::InvalidParameter(format!("`{key}` must be a nonnegative integer")));
                    }
                    Ok(v as u32)
                };
                let params = CounterexampleParams {
                    r: as_int("r", 2.0)?,
                    lambda: get("lambda", 2.0),
                    n0: as_int("n0", 5.0)?,
                    n_max: as_int("nmax", 12.0)?,
                };
                Self::counterexample(Arc::new(CounterexampleMap::build(params)?))
            }
            _ => unreachable!(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Round-trippable textual form accepted by [`parse`](Self::parse).
    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn space(&self) -> &PhaseSpace<T> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn kind(&self) -> &MapKind<T> {
        &self.kind
    }

    /// Errors unless the map is at least `C^1`.
    pub fn require_smooth(&self) -> Result<()> {
        if self.smoothness.is_differentiable() {
            Ok(())
        } else {
            Err(Error::NonSmoothSystem {
                system: self.name.clone(),
            })
        }
    }

    /// One application of the map; torus images are reduced into `[0, 1)`.
    #[inline]
    pub fn eval(&self, p: &Point<T>) -> Point<T> {
        let two = T::lit(2.0);
        match &self.kind {
            MapKind::Doubling => Point::scalar(wrap_unit(two * p.x())),
            MapKind::Rotation { theta } => Point::scalar(wrap_unit(p.x() + *theta)),
            MapKind::Tent => {
                let x = p.x();
                Point::scalar(if x < T::lit(0.5) { two * x } else { two * (T::one() - x) })
            }
            MapKind::Logistic { mu } => {
                let x = p.x();
                Point::scalar(*mu * x * (T::one() - x))
            }
            MapKind::Cat => {
                let (x, y) = (p.coords()[0], p.coords()[1]);
                Point::new(&[wrap_unit(two * x + y), wrap_unit(x + y)])
            }
            MapKind::Identity => *p,
            MapKind::Counterexample(h) => Point::scalar(T::lit(h.eval(p.x().as_f64()))),
            MapKind::Custom { eval, .. } => self.space.reduce(eval(p)),
        }
    }

    /// Derivative of the map at `p`. For the tent map the peak uses the right derivative.
    #[inline]
    pub fn jacobian(&self, p: &Point<T>) -> Mat<T> {
        let two = T::lit(2.0);
        match &self.kind {
            MapKind::Doubling => Mat::scalar(two),
            MapKind::Rotation { .. } | MapKind::Identity => Mat::identity(self.dim()),
            MapKind::Tent => Mat::scalar(if p.x() < T::lit(0.5) { two } else { -two }),
            MapKind::Logistic { mu } => Mat::scalar(*mu * (T::one() - two * p.x())),
            MapKind::Cat => Mat::from_rows(&[&[two, T::one()], &[T::one(), T::one()]]),
            MapKind::Counterexample(h) => Mat::scalar(T::lit(h.derivative(p.x().as_f64()))),
            MapKind::Custom { jacobian, .. } => jacobian(p),
        }
    }

    /// Whether the map is differentiable in a neighbourhood of `p`.
    pub fn is_smooth_at(&self, p: &Point<T>) -> bool {
        match &self.kind {
            MapKind::Tent => p.x() != T::lit(0.5),
            _ => self.smoothness.is_differentiable(),
        }
    }

    /// Points whose finite-difference neighbourhood `[p − h, p + h]` crosses a kink.
    pub fn near_kink(&self, p: &Point<T>, h: T) -> bool {
        match &self.kind {
            MapKind::Tent => (p.x() - T::lit(0.5)).abs() <= h,
            _ => false,
        }
    }
}

/// The catalog of model systems with their default parameters.
pub fn catalog<T: Scalar>() -> Result<Vec<SystemSpec<T>>> {
    Ok(vec![
        SystemSpec::doubling(),
        SystemSpec::rotation(T::lit(0.618_033_988_749_894_8)),
        SystemSpec::tent(),
        SystemSpec::logistic(T::lit(4.0))?,
        SystemSpec::cat(),
        SystemSpec::identity(),
        SystemSpec::counterexample(Arc::new(CounterexampleMap::build(CounterexampleParams::default())?)),
    ])
}

/// `[x, f x, …, f^n x]`.
pub fn iterate<T: Scalar>(sys: &SystemSpec<T>, x: &Point<T>, n: usize) -> Result<Vec<Point<T>>> {
    if !sys.space.contains(x) {
        return Err(Error::Escape {
            system: sys.name.clone(),
            index: 0,
        });
    }
    let mut orbit = Vec::with_capacity(n + 1);
    orbit.push(*x);
    let mut cur = *x;
    for k in 1..=n {
        cur = sys.eval(&cur);
        if !sys.space.contains(&cur) {
            return Err(Error::Escape {
                system: sys.name.clone(),
                index: k,
            });
        }
        orbit.push(cur);
    }
    Ok(orbit)
}

/// Bowen distance `max_{0 ≤ l < n} d(f^l x, f^l y)`.
pub fn orbit_distance<T: Scalar>(sys: &SystemSpec<T>, x: &Point<T>, y: &Point<T>, n: usize) -> T {
    let (mut a, mut b) = (*x, *y);
    let mut best = T::zero();
    for l in 0..n {
        if l > 0 {
            a = sys.eval(&a);
            b = sys.eval(&b);
        }
        best = best.max(sys.space.distance(&a, &b));
    }
    best
}

/// Orbit of length `n + 1` from a Lebesgue-random initial point drawn with `seed`.
///
/// Floating point iteration of the doubling and tent maps shifts the mantissa out and
/// collapses onto 0 after about 53 steps. For those maps the state is kept as 64 binary
/// digits and each step appends a fresh seeded digit, which is exactly the orbit of a
/// point whose binary expansion continues with independent fair digits.
pub fn lebesgue_orbit<T: Scalar>(sys: &SystemSpec<T>, n: usize, seed: u64) -> Result<Vec<Point<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match sys.kind {
        MapKind::Doubling | MapKind::Tent => {
            let tent = matches!(sys.kind, MapKind::Tent);
            let mut bits = BitSource::new(&mut rng);
            let mut state = bits.rng.next_u64();
            let mut orbit = Vec::with_capacity(n + 1);
            let to_point = |s: u64| Point::scalar(T::lit((s >> 11) as f64 * (1.0 / (1u64 << 53) as f64)));
            orbit.push(to_point(state));
            for _ in 0..n {
                if tent && state >> 63 == 1 {
                    state = !state;
                }
                state = (state << 1) | bits.next_bit();
                orbit.push(to_point(state));
            }
            Ok(orbit)
        }
        _ => {
            let x = sys.space.sample(&mut rng);
            iterate(sys, &x, n)
        }
    }
}

/// Independent seed for the `index`-th sample of a run seeded with `seed` (splitmix64).
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct BitSource<'a> {
    rng: &'a mut ChaCha8Rng,
    word: u64,
    left: u32,
}

impl<'a> BitSource<'a> {
    fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng, word: 0, left: 0 }
    }

    fn next_bit(&mut self) -> u64 {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.word & 1;
        self.word >>= 1;
        self.left -= 1;
        b
    }
}

/// Largest relative discrepancy between the Jacobian and a central difference over
/// the given points (kinks excluded).
pub fn jacobian_discrepancy(sys: &SystemSpec<f64>, points: &[Point<f64>], step: f64) -> f64 {
    let d = sys.dim();
    let mut worst: f64 = 0.0;
    for p in points {
        if sys.near_kink(p, 2.0 * step) {
            continue;
        }
        let jac = sys.jacobian(p);
        for j in 0..d {
            let mut plus = *p;
            let mut minus = *p;
            plus.coords_mut()[j] += step;
            minus.coords_mut()[j] -= step;
            let (fp, fm) = (sys.eval(&plus), sys.eval(&minus));
            for i in 0..d {
                let mut diff = fp.coords()[i] - fm.coords()[i];
                if sys.space().is_torus() {
                    diff -= diff.round();
                }
                let fd = diff / (2.0 * step);
                let exact = jac.get(i, j);
                let err = (fd - exact).abs() / exact.abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    worst
}
