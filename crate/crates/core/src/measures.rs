//! Empirical measures, the weighted weak-* metric `𝔡`, Hausdorff distance between finite
//! sets of measures, and sampled estimates of `pw(x)` and of physical-like measures.

use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::MAX_DIM;
use crate::scalar::Scalar;
use crate::space::{PhaseSpace, Point};
use crate::systems::{iterate, lebesgue_orbit, sample_seed, SystemSpec};

pub const DEFAULT_NPHI: usize = 33;
pub const DEFAULT_EPS_CLUSTER: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Const,
    Cos,
    Sin,
}

#[derive(Clone, Copy, Debug)]
struct Mode {
    freq: [i32; MAX_DIM],
    part: Part,
}

/// Truncated Fourier family on the unit-cube chart of a phase space:
/// `1, cos 2π⟨k,u⟩, sin 2π⟨k,u⟩`, frequencies ordered by max-norm then lexicographically,
/// one representative of each `±k` pair. Every member has sup norm 1.
#[derive(Clone, Debug)]
pub struct TestFunctionFamily<T> {
    space: PhaseSpace<T>,
    modes: Vec<Mode>,
    weights: Vec<T>,
    max_freq: usize,
}

impl<T: Scalar> TestFunctionFamily<T> {
    pub fn fourier(space: PhaseSpace<T>, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("test-function count must be positive".into()));
        }
        let d = space.dim();
        let mut modes = vec![Mode {
            freq: [0; MAX_DIM],
            part: Part::Const,
        }];
        let mut m = 0i32;
        while modes.len() < count {
            m += 1;
            for k in frequencies_with_max(d, m) {
                for part in [Part::Cos, Part::Sin] {
                    modes.push(Mode { freq: k, part });
                }
            }
        }
        modes.truncate(count);
        // weight_n = 1 / (2^n (1 + sup|φ_n|)), n counted from 1
        let weights = (1..=count).map(|n| T::lit(0.5f64.powi(n as i32) / 2.0)).collect();
        Ok(Self {
            space,
            modes,
            weights,
            max_freq: m as usize,
        })
    }

    pub fn count(&self) -> usize {
        self.modes.len()
    }

    pub fn space(&self) -> &PhaseSpace<T> {
        &self.space
    }

    pub fn sup_norm(&self, _n: usize) -> T {
        T::one()
    }

    /// `1 / (2^n (1 + sup|φ_n|))` for the 0-based index `i` (`n = i + 1`).
    pub fn weight(&self, i: usize) -> T {
        self.weights[i]
    }

    /// Tail bound `2^{−N_φ+1}` on the omitted terms.
    pub fn truncation_bound(&self) -> T {
        T::lit(0.5f64.powi(self.count() as i32 - 1))
    }

    /// `(φ_1(p), …, φ_N(p))`.
    pub fn features(&self, p: &Point<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.count()];
        self.accumulate(p, T::one(), &mut out);
        out
    }

    fn accumulate(&self, p: &Point<T>, w: T, out: &mut [T]) {
        let u = self.space.unit_coords(p);
        let d = self.space.dim();
        let k = self.max_freq;
        // e^{2πi j u_a} for j = 0..=k on every axis
        let mut table = [[(T::one(), T::zero()); 64]; MAX_DIM];
        let two_pi = T::lit(2.0) * T::PI();
        for a in 0..d {
            let (s, c) = (two_pi * u[a]).sin_cos();
            for j in 1..=k.min(63) {
                let (re, im) = table[a][j - 1];
                table[a][j] = (re * c - im * s, re * s + im * c);
            }
        }
        for (slot, mode) in out.iter_mut().zip(&self.modes) {
            let v = match mode.part {
                Part::Const => T::one(),
                _ => {
                    let (mut re, mut im) = (T::one(), T::zero());
                    for a in 0..d {
                        let j = mode.freq[a];
                        let (zr, zi) = if k > 63 {
                            let (s, c) = (two_pi * T::lit(j as f64) * u[a]).sin_cos();
                            (c, s)
                        } else {
                            let (zr, zi) = table[a][j.unsigned_abs() as usize];
                            (zr, if j < 0 { -zi } else { zi })
                        };
                        let nr = re * zr - im * zi;
                        im = re * zi + im * zr;
                        re = nr;
                    }
                    if mode.part == Part::Cos {
                        re
                    } else {
                        im
                    }
                }
            };
            *slot = *slot + w * v;
        }
    }

    /// `(∫φ_n dμ)_n`.
    pub fn integrals(&self, mu: &EmpiricalMeasure<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.count()];
        for (p, &w) in mu.support.iter().zip(&mu.weights) {
            self.accumulate(p, w, &mut out);
        }
        out
    }

    /// Weighted `ℓ¹` distance between integral vectors.
    pub fn feature_distance(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .fold(T::zero(), |acc, ((&x, &y), &w)| acc + w * (x - y).abs())
    }
}

/// Frequency vectors with max-norm `m` whose first nonzero entry is positive, lexicographic.
fn frequencies_with_max(d: usize, m: i32) -> Vec<[i32; MAX_DIM]> {
    let mut out = Vec::new();
    let mut k = [0i32; MAX_DIM];
    fn rec(a: usize, d: usize, m: i32, k: &mut [i32; MAX_DIM], out: &mut Vec<[i32; MAX_DIM]>) {
        if a == d {
            let first = k[..d].iter().find(|&&x| x != 0);
            if k[..d].iter().map(|x| x.abs()).max() == Some(m) && first.is_some_and(|&x| x > 0) {
                out.push(*k);
            }
            return;
        }
        for v in -m..=m {
            k[a] = v;
            rec(a + 1, d, m, k, out);
        }
        k[a] = 0;
    }
    rec(0, d, m, &mut k, &mut out);
    out
}

/// Finitely supported probability measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EmpiricalMeasure<T: Scalar> {
    support: Vec<Point<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> EmpiricalMeasure<T> {
    /// Uniform weights on `points`, exact duplicates merged.
    pub fn from_points(points: &[Point<T>]) -> Self {
        assert!(!points.is_empty(), "empirical measure of an empty orbit");
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.lex_cmp(b));
        let n = points.len();
        let mut support: Vec<Point<T>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for p in sorted {
            if support.last().is_some_and(|q| q.coords() == p.coords()) {
                *counts.last_mut().unwrap() += 1;
            } else {
                support.push(p);
                counts.push(1);
            }
        }
        let weights = counts
            .into_iter()
            .map(|c| T::from_usize_lossy(c) / T::from_usize_lossy(n))
            .collect();
        Self { support, weights }
    }

    pub fn dirac(p: Point<T>) -> Self {
        Self {
            support: vec![p],
            weights: vec![T::one()],
        }
    }

    pub fn from_weighted(support: Vec<Point<T>>, weights: Vec<T>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(Error::InvalidParameter("support and weights must be nonempty and equal length".into()));
        }
        if weights.iter().any(|&w| !(w >= T::zero())) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let total = weights.iter().fold(T::zero(), |a, &w| a + w);
        if (total - T::one()).abs() > T::lit(1e-9).max(T::default_tolerance()) {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { support, weights })
    }

    /// Midpoints of a uniform grid with `cells` cells per axis (a discretisation of Lebesgue).
    pub fn uniform_grid(space: &PhaseSpace<T>, cells: usize) -> Self {
        let d = space.dim();
        let total = cells.pow(d as u32);
        let mut support = Vec::with_capacity(total);
        for idx in 0..total {
            let mut u = [T::zero(); MAX_DIM];
            let mut rest = idx;
            for c in u.iter_mut().take(d) {
                *c = (T::from_usize_lossy(rest % cells) + T::lit(0.5)) / T::from_usize_lossy(cells);
                rest /= cells;
            }
            support.push(space.from_unit_coords(&u[..d]));
        }
        let w = T::one() / T::from_usize_lossy(total);
        Self {
            weights: vec![w; total],
            support,
        }
    }

    /// `(1/m) Σ μ_i`.
    pub fn mixture(parts: &[Self]) -> Self {
        assert!(!parts.is_empty());
        let m = T::from_usize_lossy(parts.len());
        let mut support = Vec::new();
        let mut weights = Vec::new();
        for p in parts {
            support.extend_from_slice(&p.support);
            weights.extend(p.weights.iter().map(|&w| w / m));
        }
        Self { support, weights }
    }

    pub fn support(&self) -> &[Point<T>] {
        &self.support
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn total_weight(&self) -> T {
        self.weights.iter().fold(T::zero(), |a, &w| a + w)
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// `μ_n^x = (1/n) Σ_{0≤k<n} δ_{f^k x}`.
pub fn empirical_measure<T: Scalar>(sys: &SystemSpec<T>, x: &Point<T>, n: usize) -> Result<EmpiricalMeasure<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("empirical measure needs n >= 1".into()));
    }
    let orbit = iterate(sys, x, n - 1)?;
    Ok(EmpiricalMeasure::from_points(&orbit))
}

/// `𝔡(μ, ν) = Σ_n |∫φ_n dν − ∫φ_n dμ| / (2^n (1 + sup|φ_n|))`, truncated at `fam.count()`.
pub fn dmetric<T: Scalar>(mu: &EmpiricalMeasure<T>, nu: &EmpiricalMeasure<T>, fam: &TestFunctionFamily<T>) -> T {
    fam.feature_distance(&fam.integrals(mu), &fam.integrals(nu))
}

/// Finite set of measures with the number of raw measures each member stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureSet<T: Scalar> {
    members: Vec<EmpiricalMeasure<T>>,
    multiplicities: Vec<usize>,
}

impl<T: Scalar> MeasureSet<T> {
    pub fn new(members: Vec<EmpiricalMeasure<T>>) -> Result<Self> {
        let k = members.len();
        Self::with_multiplicities(members, vec![1; k])
    }

    pub fn with_multiplicities(members: Vec<EmpiricalMeasure<T>>, multiplicities: Vec<usize>) -> Result<Self> {
        if members.is_empty() || members.len() != multiplicities.len() {
            return Err(Error::InvalidParameter("measure set must be nonempty".into()));
        }
        Ok(Self {
            members,
            multiplicities,
        })
    }

    pub fn members(&self) -> &[EmpiricalMeasure<T>] {
        &self.members
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl<T: Scalar> Serialize for MeasureSet<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.members.len()))?;
        for m in &self.members {
            seq.serialize_element(m)?;
        }
        seq.end()
    }
}

fn directed<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>], fam: &TestFunctionFamily<T>) -> T {
    a.iter().fold(T::zero(), |worst, x| {
        let near = b
            .iter()
            .map(|y| fam.feature_distance(x, y))
            .fold(T::infinity(), |m, v| m.min(v));
        worst.max(near)
    })
}

/// Hausdorff distance `𝔡^H` induced by `𝔡`.
pub fn hausdorff<T: Scalar>(a: &MeasureSet<T>, b: &MeasureSet<T>, fam: &TestFunctionFamily<T>) -> T {
    let fa: Vec<Vec<T>> = a.members.iter().map(|m| fam.integrals(m)).collect();
    let fb: Vec<Vec<T>> = b.members.iter().map(|m| fam.integrals(m)).collect();
    directed(&fa, &fb, fam).max(directed(&fb, &fa, fam))
}

/// Greedy clustering in the given order: each item joins the first representative within
/// `eps`, otherwise becomes a representative. Returns `(representative index, multiplicity)`.
pub fn cluster<T: Scalar>(features: &[Vec<T>], eps: T, fam: &TestFunctionFamily<T>) -> Vec<(usize, usize)> {
    let mut reps: Vec<(usize, usize)> = Vec::new();
    for (i, f) in features.iter().enumerate() {
        match reps.iter_mut().find(|(r, _)| fam.feature_distance(&features[*r], f) <= eps) {
            Some(rep) => rep.1 += 1,
            None => reps.push((i, 1)),
        }
    }
    reps
}

/// Empirical integral vectors at each checkpoint, computed from one orbit by prefix sums.
fn checkpoint_features<T: Scalar>(orbit: &[Point<T>], checkpoints: &[usize], fam: &TestFunctionFamily<T>) -> Vec<Vec<T>> {
    let mut acc = vec![T::zero(); fam.count()];
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut done = 0;
    for &c in checkpoints {
        for p in &orbit[done..c] {
            fam.accumulate(p, T::one(), &mut acc);
        }
        done = c;
        let n = T::from_usize_lossy(c);
        out.push(acc.iter().map(|&v| v / n).collect());
    }
    out
}

fn check_checkpoints(checkpoints: &[usize]) -> Result<()> {
    if checkpoints.len() < 2 {
        return Err(Error::InvalidParameter("need at least two checkpoints".into()));
    }
    if checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("checkpoints must be positive and increasing".into()));
    }
    Ok(())
}

/// Default checkpoints `n/2, 3n/4, n`.
pub fn default_checkpoints(n: usize) -> Vec<usize> {
    let mut c = vec![n / 2, 3 * n / 4, n];
    c.retain(|&v| v > 0);
    c.dedup();
    c
}

/// Clustered empirical measures of the orbit `orbit` at the checkpoints, latest first.
/// Returns `(checkpoint, features, multiplicity)` per cluster.
fn pw_clusters<T: Scalar>(
    orbit: &[Point<T>],
    checkpoints: &[usize],
    fam: &TestFunctionFamily<T>,
    eps: T,
) -> Vec<(usize, Vec<T>, usize)> {
    let mut feats = checkpoint_features(orbit, checkpoints, fam);
    feats.reverse();
    let order: Vec<usize> = checkpoints.iter().rev().copied().collect();
    cluster(&feats, eps, fam)
        .into_iter()
        .map(|(i, m)| (order[i], feats[i].clone(), m))
        .collect()
}

/// Approximation of `pw(x)`: empirical measures at the checkpoints, merged when within `eps`
/// (the latest checkpoint represents its cluster).
pub fn pw_estimate<T: Scalar>(
    sys: &SystemSpec<T>,
    x: &Point<T>,
    checkpoints: &[usize],
    fam: &TestFunctionFamily<T>,
    eps: T,
) -> Result<MeasureSet<T>> {
    check_checkpoints(checkpoints)?;
    let orbit = iterate(sys, x, checkpoints[checkpoints.len() - 1] - 1)?;
    pw_estimate_orbit(&orbit, checkpoints, fam, eps)
}

/// `pw` estimate from a precomputed orbit holding at least the last checkpoint's points.
pub fn pw_estimate_orbit<T: Scalar>(
    orbit: &[Point<T>],
    checkpoints: &[usize],
    fam: &TestFunctionFamily<T>,
    eps: T,
) -> Result<MeasureSet<T>> {
    check_checkpoints(checkpoints)?;
    let last = checkpoints[checkpoints.len() - 1];
    if orbit.len() < last {
        return Err(Error::InvalidParameter(format!(
            "orbit has {} points, last checkpoint is {last}",
            orbit.len()
        )));
    }
    let clusters = pw_clusters(orbit, checkpoints, fam, eps);
    let members = clusters
        .iter()
        .map(|(c, _, _)| EmpiricalMeasure::from_points(&orbit[..*c]))
        .collect();
    MeasureSet::with_multiplicities(members, clusters.iter().map(|c| c.2).collect())
}

/// Physical-like estimate: sampled stand-in for the set of measures whose basins have
/// positive Lebesgue measure.
#[derive(Clone, Debug)]
pub struct PhysicalLikeEstimate<T: Scalar> {
    pub set: MeasureSet<T>,
    /// `(sample index, checkpoint)` of each representative.
    pub origins: Vec<(usize, usize)>,
    pub samples: usize,
}

/// Draws `sample_count` Lebesgue-random orbits (sample `i` uses `sample_seed(seed, i)`),
/// estimates `pw` for each at `checkpoints`, pools the cluster representatives in sample
/// order and clusters the pool at `eps`.
pub fn physical_like_estimate<T: Scalar>(
    sys: &SystemSpec<T>,
    sample_count: usize,
    checkpoints: &[usize],
    seed: u64,
    fam: &TestFunctionFamily<T>,
    eps: T,
) -> Result<PhysicalLikeEstimate<T>> {
    if sample_count == 0 {
        return Err(Error::InvalidParameter("sample_count must be at least 1".into()));
    }
    check_checkpoints(checkpoints)?;
    let n = checkpoints[checkpoints.len() - 1];
    let per_sample: Vec<Result<Vec<(usize, Vec<T>, usize)>>> = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let orbit = lebesgue_orbit(sys, n - 1, sample_seed(seed, i as u64))?;
            Ok(pw_clusters(&orbit, checkpoints, fam, eps))
        })
        .collect();
    let mut pool = Vec::new();
    for (i, r) in per_sample.into_iter().enumerate() {
        for (c, f, m) in r? {
            pool.push((i, c, f, m));
        }
    }
    let feats: Vec<Vec<T>> = pool.iter().map(|p| p.2.clone()).collect();
    let mut reps: Vec<(usize, usize)> = Vec::new();
    for (j, f) in feats.iter().enumerate() {
        match reps.iter_mut().find(|(r, _)| fam.feature_distance(&feats[*r], f) <= eps) {
            Some(rep) => rep.1 += pool[j].3,
            None => reps.push((j, pool[j].3)),
        }
    }
    let mut members = Vec::with_capacity(reps.len());
    let mut origins = Vec::with_capacity(reps.len());
    for &(j, _) in &reps {
        let (i, c, _, _) = pool[j];
        let orbit = lebesgue_orbit(sys, n - 1, sample_seed(seed, i as u64))?;
        members.push(EmpiricalMeasure::from_points(&orbit[..c]));
        origins.push((i, c));
    }
    Ok(PhysicalLikeEstimate {
        set: MeasureSet::with_multiplicities(members, reps.iter().map(|r| r.1).collect())?,
        origins,
        samples: sample_count,
    })
}
