//! Partition entropy, itinerary refinement, plug-in entropy of orbits, dynamical balls,
//! separated sets, the Kozlovski integral and admissible-sequence counting.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{cocycle_from_orbit, report_from_record};
use crate::error::{Error, Result};
use crate::linalg::MAX_DIM;
use crate::logspace::LogSumExp;
use crate::measures::EmpiricalMeasure;
use crate::scalar::{xlogx, Scalar};
use crate::space::{PhaseSpace, Point};
use crate::systems::{iterate, lebesgue_orbit, orbit_distance, sample_seed, SystemSpec};

/// Axis-aligned uniform grid partition. Cells are half-open `[a, b)` along each axis; on an
/// interval the last cell is closed at the right end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition<T> {
    space: PhaseSpace<T>,
    cells: Vec<usize>,
}

impl<T: Scalar> Partition<T> {
    pub fn grid(space: PhaseSpace<T>, cells: &[usize]) -> Result<Self> {
        if cells.len() != space.dim() || cells.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "partition needs {} positive cell counts, got {cells:?}",
                space.dim()
            )));
        }
        if cells.iter().map(|&c| c as u128).product::<u128>() > u32::MAX as u128 {
            return Err(Error::InvalidParameter("too many partition atoms".into()));
        }
        Ok(Self {
            space,
            cells: cells.to_vec(),
        })
    }

    pub fn uniform(space: PhaseSpace<T>, cells: usize) -> Result<Self> {
        let v = vec![cells; space.dim()];
        Self::grid(space, &v)
    }

    /// Two cells per axis.
    pub fn dyadic(space: PhaseSpace<T>) -> Self {
        Self::uniform(space, 2).expect("two cells per axis is valid")
    }

    pub fn space(&self) -> &PhaseSpace<T> {
        &self.space
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn atom_count(&self) -> usize {
        self.cells.iter().product()
    }

    /// Index of the atom containing `p`; axis 0 is the most significant digit.
    #[inline]
    pub fn atom_of(&self, p: &Point<T>) -> u32 {
        let u = self.space.unit_coords(p);
        let mut idx = 0usize;
        for (a, &c) in self.cells.iter().enumerate() {
            let raw = (u[a] * T::from_usize_lossy(c)).floor();
            let i = if raw < T::zero() {
                0
            } else {
                raw.to_usize().unwrap_or(c).min(c - 1)
            };
            idx = idx * c + i;
        }
        idx as u32
    }

    /// Largest atom diameter in the phase-space metric.
    pub fn diameter(&self) -> T {
        match *self.space() {
            PhaseSpace::Interval { lo, hi } => (hi - lo) / T::from_usize_lossy(self.cells[0]),
            PhaseSpace::Torus { .. } => {
                let widest = self.cells.iter().min().copied().unwrap_or(1);
                (T::one() / T::from_usize_lossy(widest)).min(T::lit(0.5))
            }
        }
    }
}

/// `P^n`-address of a point: the atoms of `x, f x, …, f^{n−1} x`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItineraryCode {
    pub symbols: Vec<u32>,
}

pub fn itinerary<T: Scalar>(sys: &SystemSpec<T>, x: &Point<T>, p: &Partition<T>, n: usize) -> Result<ItineraryCode> {
    if n == 0 {
        return Ok(ItineraryCode { symbols: vec![] });
    }
    let orbit = iterate(sys, x, n - 1)?;
    Ok(ItineraryCode {
        symbols: orbit.iter().map(|q| p.atom_of(q)).collect(),
    })
}

/// `H_μ(P) = −Σ μ(A) log μ(A)`.
pub fn static_entropy<T: Scalar>(mu: &EmpiricalMeasure<T>, p: &Partition<T>) -> T {
    let mut mass: HashMap<u32, f64> = HashMap::new();
    for (q, &w) in mu.support().iter().zip(mu.weights()) {
        *mass.entry(p.atom_of(q)).or_default() += w.as_f64();
    }
    T::lit(entropy_of_masses(mass.into_values()))
}

fn entropy_of_masses(masses: impl IntoIterator<Item = f64>) -> f64 {
    let mut keyed: Vec<f64> = masses.into_iter().collect();
    // fixed summation order keeps results reproducible across hash seeds
    keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    -keyed.into_iter().map(xlogx).sum::<f64>()
}

/// `H_μ(P^n)`, via the itinerary codes of the support points.
pub fn refined_entropy<T: Scalar>(sys: &SystemSpec<T>, mu: &EmpiricalMeasure<T>, p: &Partition<T>, n: usize) -> Result<T> {
    if n == 0 {
        return Err(Error::InvalidParameter("refinement depth must be at least 1".into()));
    }
    let mut mass: HashMap<ItineraryCode, f64> = HashMap::new();
    for (q, &w) in mu.support().iter().zip(mu.weights()) {
        *mass.entry(itinerary(sys, q, p, n)?).or_default() += w.as_f64();
    }
    Ok(T::lit(entropy_of_masses(mass.into_values())))
}

/// `ν_n = (1/n) Σ_{0≤k<n} f^k_* μ`.
pub fn cesaro_pushforward<T: Scalar>(sys: &SystemSpec<T>, mu: &EmpiricalMeasure<T>, n: usize) -> Result<EmpiricalMeasure<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("push-forward average needs n >= 1".into()));
    }
    let nn = T::from_usize_lossy(n);
    let mut support = Vec::with_capacity(mu.len() * n);
    let mut weights = Vec::with_capacity(mu.len() * n);
    for (q, &w) in mu.support().iter().zip(mu.weights()) {
        for y in iterate(sys, q, n - 1)? {
            support.push(y);
            weights.push(w / nn);
        }
    }
    EmpiricalMeasure::from_weighted(support, weights)
}

/// `(1/n)(H_{μ_n}(P^n) − 3m log #P)`, a lower bound for `(1/m) H_{ν_n}(P^m)`.
pub fn misiurewicz_bound<T: Scalar>(h_p_n: T, n: usize, m: usize, card_p: usize) -> T {
    assert!(n >= m && m >= 1 && card_p >= 1, "need n >= m >= 1 and #P >= 1");
    (h_p_n - T::lit(3.0) * T::from_usize_lossy(m) * T::from_usize_lossy(card_p).ln()) / T::from_usize_lossy(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurvePoint {
    pub m: usize,
    /// `H_{μ_n}(P^m)`.
    pub block_entropy: f64,
    /// `(1/m) H_{μ_n}(P^m)`.
    pub rate: f64,
    /// Distinct `P^m` atoms visited.
    pub atoms: usize,
    /// `10 · atoms ≤ n`.
    pub well_sampled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub n: usize,
    pub estimate: f64,
    pub chosen_m: usize,
    pub curve: Vec<EntropyCurvePoint>,
    /// No requested `m` was well sampled; the estimate uses the smallest one.
    pub unreliable: bool,
    /// `n < 10 (#P)^{max m}`.
    pub undersampling_warning: bool,
}

/// Default block lengths: `1..=10` and powers of two up to 256. The larger ones only enter
/// while the orbit still visits few enough `P^m` atoms (zero-entropy systems).
pub fn default_m_list() -> Vec<usize> {
    let mut m: Vec<usize> = (1..=10).collect();
    m.extend([16, 32, 64, 128, 256]);
    m
}

/// Plug-in estimate `min_m (1/m) H_{μ_n^x}(P^m)` over the well-sampled `m`.
pub fn entropy_estimate<T: Scalar>(
    sys: &SystemSpec<T>,
    x: &Point<T>,
    n: usize,
    p: &Partition<T>,
    m_list: &[usize],
) -> Result<EntropyEstimate> {
    let m_max = check_m_list(m_list)?;
    let orbit = iterate(sys, x, n + m_max - 2)?;
    entropy_estimate_orbit(&orbit, n, p, m_list)
}

fn check_m_list(m_list: &[usize]) -> Result<usize> {
    if m_list.is_empty() || m_list.contains(&0) {
        return Err(Error::InvalidParameter("block lengths must be >= 1".into()));
    }
    Ok(*m_list.iter().max().unwrap())
}

/// As [`entropy_estimate`] on a precomputed orbit of length at least `n + max m − 1`.
pub fn entropy_estimate_orbit<T: Scalar>(
    orbit: &[Point<T>],
    n: usize,
    p: &Partition<T>,
    m_list: &[usize],
) -> Result<EntropyEstimate> {
    let m_max = check_m_list(m_list)?;
    if n == 0 {
        return Err(Error::InvalidParameter("entropy estimate needs n >= 1".into()));
    }
    let len = n + m_max - 1;
    if orbit.len() < len {
        return Err(Error::InvalidParameter(format!(
            "orbit of length {} is shorter than n + max m - 1 = {len}",
            orbit.len()
        )));
    }
    let card = p.atom_count();
    let sym: Vec<u32> = orbit[..len].iter().map(|q| p.atom_of(q)).collect();
    let mut wanted: Vec<usize> = m_list.to_vec();
    wanted.sort_unstable();
    wanted.dedup();

    let (mut labels, mut distinct) = compress(&sym, card);
    let mut curve = Vec::new();
    let mut next_wanted = 0;
    for m in 1..=m_max {
        let visited = count_labels(&labels[..n], distinct);
        let atoms = visited.iter().filter(|&&c| c > 0).count();
        let well_sampled = 10 * atoms <= n;
        if wanted[next_wanted] == m {
            let nf = n as f64;
            let h = entropy_of_masses(visited.iter().filter(|&&c| c > 0).map(|&c| c as f64 / nf));
            curve.push(EntropyCurvePoint {
                m,
                block_entropy: h,
                rate: h / m as f64,
                atoms,
                well_sampled,
            });
            next_wanted += 1;
        }
        if (!well_sampled && next_wanted > 0) || next_wanted == wanted.len() {
            break;
        }
        // label_{m+1}(i) = (sym(i), label_m(i+1))
        let pairs: Vec<u64> = (0..len - m)
            .map(|i| sym[i] as u64 * distinct as u64 + labels[i + 1] as u64)
            .collect();
        let (l, d) = compress_u64(&pairs, card as u64 * distinct as u64);
        labels = l;
        distinct = d;
    }

    let good: Vec<&EntropyCurvePoint> = curve.iter().filter(|c| c.well_sampled).collect();
    let (estimate, chosen_m, unreliable) = match good
        .iter()
        .min_by(|a, b| a.rate.partial_cmp(&b.rate).unwrap().then(a.m.cmp(&b.m)))
    {
        Some(c) => (c.rate, c.m, false),
        None => (curve[0].rate, curve[0].m, true),
    };
    let undersampling_warning = (n as f64) < 10.0 * (card as f64).powf(m_max as f64);
    Ok(EntropyEstimate {
        n,
        estimate,
        chosen_m,
        curve,
        unreliable,
        undersampling_warning,
    })
}

fn count_labels(labels: &[u32], distinct: usize) -> Vec<u64> {
    let mut counts = vec![0u64; distinct];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}

fn compress(sym: &[u32], card: usize) -> (Vec<u32>, usize) {
    let pairs: Vec<u64> = sym.iter().map(|&s| s as u64).collect();
    compress_u64(&pairs, card as u64)
}

/// Dense relabelling of keys below `bound`, first occurrence first.
fn compress_u64(keys: &[u64], bound: u64) -> (Vec<u32>, usize) {
    let mut next = 0u32;
    let mut out = Vec::with_capacity(keys.len());
    if bound <= 1 << 27 {
        let mut map = vec![u32::MAX; bound as usize];
        for &k in keys {
            let slot = &mut map[k as usize];
            if *slot == u32::MAX {
                *slot = next;
                next += 1;
            }
            out.push(*slot);
        }
    } else {
        let mut map: HashMap<u64, u32> = HashMap::new();
        for &k in keys {
            let id = *map.entry(k).or_insert_with(|| {
                next += 1;
                next - 1
            });
            out.push(id);
        }
    }
    (out, next as usize)
}

/// `y ∈ B_f(x, n, α)`: the first `n` iterates stay `α`-close.
pub fn dynamical_ball_contains<T: Scalar>(sys: &SystemSpec<T>, x: &Point<T>, y: &Point<T>, n: usize, alpha: T) -> bool {
    assert!(n >= 1 && alpha > T::zero(), "need n >= 1 and alpha > 0");
    orbit_distance(sys, x, y, n) < alpha
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedEstimate {
    pub n: usize,
    pub alpha: f64,
    pub grid_points: usize,
    pub separated: usize,
    /// `(1/n) log #S`.
    pub rate: f64,
}

const MAX_GRID_POINTS: usize = 20_000_000;

/// Greedy maximal `(n, α)`-separated subset of a uniform grid with spacing `grid_step`.
pub fn separated_entropy<T: Scalar>(sys: &SystemSpec<T>, n: usize, alpha: T, grid_step: T) -> Result<SeparatedEstimate> {
    if n == 0 || !(alpha > T::zero()) || !(grid_step > T::zero()) || grid_step >= alpha {
        return Err(Error::InvalidParameter("need n >= 1 and 0 < grid_step < alpha".into()));
    }
    let space = *sys.space();
    let d = space.dim();
    let (len, closed) = match space {
        PhaseSpace::Interval { lo, hi } => (hi - lo, true),
        PhaseSpace::Torus { .. } => (T::one(), false),
    };
    let ratio = (len / grid_step).as_f64();
    let mut per_axis = (ratio + 1e-9).floor() as usize;
    if closed || (per_axis as f64) < ratio - 1e-9 {
        per_axis += 1;
    }
    let total = per_axis.checked_pow(d as u32).filter(|&t| t <= MAX_GRID_POINTS).ok_or_else(|| {
        Error::InvalidParameter(format!("grid of {per_axis}^{d} points exceeds {MAX_GRID_POINTS}"))
    })?;
    let step_unit = grid_step / len;
    let alpha_unit = (alpha / len).as_f64();
    // cells at least 2α wide: a point α-close at time t lies in an adjacent cell
    let cells = ((0.5 / alpha_unit).floor() as i64).max(1);
    let wrap = space.is_torus();
    let cell_of = |u: f64| ((u * cells as f64).floor() as i64).clamp(0, cells - 1);

    let mut accepted: Vec<Point<T>> = Vec::new();
    let mut trie = OrbitTrie::default();
    for idx in 0..total {
        let mut u = [T::zero(); MAX_DIM];
        let mut rest = idx;
        for c in u.iter_mut().take(d) {
            *c = T::from_usize_lossy(rest % per_axis) * step_unit;
            rest /= per_axis;
        }
        for c in u.iter_mut().take(d) {
            *c = c.min(T::one());
        }
        let x = space.from_unit_coords(&u[..d]);
        let orbit = iterate(sys, &x, n - 1)?;
        let units: Vec<[f64; MAX_DIM]> = orbit
            .iter()
            .map(|q| {
                let uq = space.unit_coords(q);
                let mut o = [0.0; MAX_DIM];
                for a in 0..d {
                    o[a] = uq[a].as_f64();
                }
                o
            })
            .collect();
        let allowed = |t: usize, a: usize, c: i64| -> bool {
            let p = units[t][a];
            let lo = ((p - alpha_unit - 1e-12) * cells as f64).floor() as i64;
            let hi = ((p + alpha_unit + 1e-12) * cells as f64).floor() as i64;
            if wrap {
                hi - lo + 1 >= cells || (lo..=hi).any(|v| v.rem_euclid(cells) == c)
            } else {
                (lo.max(0)..=hi.min(cells - 1)).contains(&c)
            }
        };
        let close = trie.any_leaf(n, d, &allowed, |j| {
            let s = &accepted[j as usize * n..(j as usize + 1) * n];
            orbit.iter().zip(s).all(|(a, b)| space.distance(a, b) < alpha)
        });
        if !close {
            let id = (accepted.len() / n) as u32;
            accepted.extend_from_slice(&orbit);
            let path: Vec<[i64; MAX_DIM]> = units
                .iter()
                .map(|uq| {
                    let mut k = [0i64; MAX_DIM];
                    for a in 0..d {
                        k[a] = cell_of(uq[a]);
                    }
                    k
                })
                .collect();
            trie.insert(&path, id);
        }
    }
    let count = accepted.len() / n;
    Ok(SeparatedEstimate {
        n,
        alpha: alpha.as_f64(),
        grid_points: total,
        separated: count,
        rate: (count as f64).ln() / n as f64,
    })
}

/// Accepted orbits indexed by their cell at each time step.
#[derive(Default)]
struct OrbitTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Default)]
struct TrieNode {
    children: Vec<([i64; MAX_DIM], u32)>,
    leaves: Vec<u32>,
}

impl OrbitTrie {
    fn insert(&mut self, path: &[[i64; MAX_DIM]], id: u32) {
        if self.nodes.is_empty() {
            self.nodes.push(TrieNode::default());
        }
        let mut node = 0usize;
        for key in path {
            let found = self.nodes[node].children.iter().find(|(k, _)| k == key).map(|c| c.1);
            node = match found {
                Some(c) => c as usize,
                None => {
                    let c = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.push((*key, c as u32));
                    c
                }
            };
        }
        self.nodes[node].leaves.push(id);
    }

    /// Whether `hit` holds for some leaf reachable through cells passing `allowed(t, axis, cell)`.
    fn any_leaf(
        &self,
        depth: usize,
        d: usize,
        allowed: &dyn Fn(usize, usize, i64) -> bool,
        mut hit: impl FnMut(u32) -> bool,
    ) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, t)) = stack.pop() {
            if t == depth {
                if self.nodes[node].leaves.iter().any(|&j| hit(j)) {
                    return true;
                }
                continue;
            }
            for (key, child) in &self.nodes[node].children {
                if (0..d).all(|a| allowed(t, a, key[a])) {
                    stack.push((*child as usize, t + 1));
                }
            }
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KozlovskiEstimate {
    pub n: usize,
    pub samples: usize,
    /// `(1/n) log ((1/N) Σ max_k ‖Λ^k d_{x_i} f^n‖)`.
    pub estimate: f64,
    /// Sample mean of `Σχ⁺(x_i)` at the same `n`.
    pub mean_sigma_chi_plus: f64,
}

/// Monte Carlo estimate of `(1/n) log ∫ max_k ‖Λ^k d_x f^n‖ dLeb(x)`.
pub fn kozlovski_estimate<T: Scalar>(sys: &SystemSpec<T>, n: usize, sample_count: usize, seed: u64) -> Result<KozlovskiEstimate> {
    sys.require_smooth()?;
    if sample_count < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 samples, got {sample_count}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let per: Vec<Result<(f64, f64)>> = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let orbit = lebesgue_orbit(sys, n - 1, sample_seed(seed, i as u64))?;
            let rec = cocycle_from_orbit(sys, &orbit)?;
            let top = rec.log_exterior.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            Ok((top.as_f64(), report_from_record(&rec).sigma_chi_plus.as_f64()))
        })
        .collect();
    let mut acc = LogSumExp::<f64>::default();
    let mut chi_sum = 0.0;
    for r in per {
        let (log_norm, chi) = r?;
        acc.push(log_norm);
        chi_sum += chi;
    }
    Ok(KozlovskiEstimate {
        n,
        samples: sample_count,
        estimate: acc.log_mean() / n as f64,
        mean_sigma_chi_plus: chi_sum / sample_count as f64,
    })
}

/// `F(t) = t log t − (t − 1) log(t − 1)`, `F(1) = 0`; satisfies `F(t) ≤ t log 2` and `F(t)/t → 0`.
pub fn f_function<T: Scalar>(t: T) -> Result<T> {
    if !(t >= T::one()) {
        return Err(Error::InvalidParameter(format!("F is defined for t >= 1, got {t}")));
    }
    Ok(xlogx(t) - xlogx(t - T::one()))
}

/// Integer sequence `(a_l)` with threshold `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSequence {
    pub a: Vec<i64>,
    pub threshold: f64,
}

impl AdmissibleSequence {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `Σ a_l ≥ m A`.
    pub fn is_admissible(&self) -> bool {
        self.a.iter().sum::<i64>() as f64 >= self.a.len() as f64 * self.threshold
    }
}

pub const DEFAULT_RANGE_GUARD: i64 = 50;
pub const DEFAULT_ENUMERATION_CUTOFF: u128 = 200_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleCount {
    pub m: usize,
    pub threshold: f64,
    /// Mean of the one-block logs.
    pub lambda_k: f64,
    /// Number of admissible sequences, by exhaustive enumeration.
    pub count: u128,
    /// `λ^k + 2 − A`.
    pub f_argument: f64,
    /// `exp(m F(λ^k + 2 − A))`, when the argument is at least 1.
    pub bound: Option<f64>,
    /// `exp(m F(λ^k + 3 − A))`, which dominates the count for any real block logs.
    pub ceiling_bound: Option<f64>,
}

impl AdmissibleCount {
    pub fn within_bound(&self) -> Option<bool> {
        self.bound.map(|b| self.count as f64 <= b)
    }
}

struct Ranges {
    lo: i64,
    hi: Vec<i64>,
    need: i64,
}

fn admissible_ranges(blocks: &[f64], threshold: f64, range_guard: i64) -> Ranges {
    let m = blocks.len() as f64;
    Ranges {
        lo: threshold.ceil() as i64 - range_guard,
        hi: blocks.iter().map(|b| b.ceil() as i64 + 1).collect(),
        need: (m * threshold).ceil() as i64,
    }
}

/// Number of admissible sequences by dynamic programming over partial sums.
pub fn admissible_count_dp(blocks: &[f64], threshold: f64, range_guard: i64) -> u128 {
    let r = admissible_ranges(blocks, threshold, range_guard);
    if r.hi.iter().any(|&h| h < r.lo) {
        return 0;
    }
    // shifted sums s = Σ (a_l − lo)
    let max_total: i64 = r.hi.iter().map(|h| h - r.lo).sum();
    let mut ways = vec![0u128; max_total as usize + 1];
    ways[0] = 1;
    let mut reach = 0i64;
    for &h in &r.hi {
        let width = h - r.lo;
        let mut next = vec![0u128; max_total as usize + 1];
        for s in 0..=reach {
            let w = ways[s as usize];
            if w == 0 {
                continue;
            }
            for c in 0..=width {
                next[(s + c) as usize] += w;
            }
        }
        reach += width;
        ways = next;
    }
    let need_shifted = r.need - r.lo * blocks.len() as i64;
    ways.iter()
        .enumerate()
        .filter(|(s, _)| *s as i64 >= need_shifted)
        .map(|(_, &w)| w)
        .sum()
}

/// Exhaustive depth-first enumeration of admissible sequences, pruning branches that can no
/// longer reach `Σ a_l ≥ m A`. Calls `visit` on each admissible sequence.
pub fn enumerate_admissible(blocks: &[f64], threshold: f64, range_guard: i64, mut visit: impl FnMut(&[i64])) {
    let r = admissible_ranges(blocks, threshold, range_guard);
    let m = blocks.len();
    let mut suffix_max = vec![0i64; m + 1];
    for l in (0..m).rev() {
        suffix_max[l] = suffix_max[l + 1] + r.hi[l];
    }
    let mut cur = vec![0i64; m];
    fn rec(l: usize, sum: i64, r: &Ranges, suffix_max: &[i64], cur: &mut [i64], visit: &mut dyn FnMut(&[i64])) {
        if l == cur.len() {
            if sum >= r.need {
                visit(cur);
            }
            return;
        }
        if sum + suffix_max[l] < r.need {
            return;
        }
        // smallest a_l that still allows the remaining blocks to reach the threshold
        let start = r.lo.max(r.need - sum - suffix_max[l + 1]);
        for a in start..=r.hi[l] {
            cur[l] = a;
            rec(l + 1, sum + a, r, suffix_max, cur, visit);
        }
    }
    rec(0, 0, &r, &suffix_max, &mut cur, &mut visit);
}

/// Counts `A`-admissible sequences for the given one-block logs and compares with
/// `exp(m F(λ^k + 2 − A))`.
///
/// Each `a_l` ranges over `[⌈A⌉ − range_guard, ⌈b_l⌉ + 1]`.
pub fn count_admissible<T: Scalar>(one_block_logs: &[T], threshold: T, range_guard: i64, cutoff: u128) -> Result<AdmissibleCount> {
    if one_block_logs.is_empty() {
        return Err(Error::InvalidParameter("need at least one block".into()));
    }
    let blocks: Vec<f64> = one_block_logs.iter().map(|b| b.as_f64()).collect();
    let a = threshold.as_f64();
    if blocks.iter().any(|b| !b.is_finite()) || !a.is_finite() {
        return Err(Error::InvalidParameter("block logs and threshold must be finite".into()));
    }
    let predicted = admissible_count_dp(&blocks, a, range_guard);
    if predicted > cutoff {
        return Err(Error::EnumerationCutoff {
            size: predicted,
            cutoff,
        });
    }
    let mut count: u128 = 0;
    enumerate_admissible(&blocks, a, range_guard, |_| count += 1);
    let m = blocks.len();
    let lambda_k = blocks.iter().sum::<f64>() / m as f64;
    let f_argument = lambda_k + 2.0 - a;
    let bound = f_function(f_argument).ok().map(|f| (m as f64 * f).exp());
    let ceiling_bound = f_function(f_argument + 1.0).ok().map(|f| (m as f64 * f).exp());
    Ok(AdmissibleCount {
        m,
        threshold: a,
        lambda_k,
        count,
        f_argument,
        bound,
        ceiling_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn unit() -> PhaseSpace<f64> {
        PhaseSpace::unit_interval()
    }

    #[test]
    fn static_entropy_examples() {
        let p = Partition::uniform(unit(), 3).unwrap();
        assert_eq!(static_entropy(&EmpiricalMeasure::dirac(Point::scalar(0.2)), &p), 0.0);
        let two = EmpiricalMeasure::from_points(&[Point::scalar(0.1), Point::scalar(0.9)]);
        assert!((static_entropy(&two, &p) - LN2).abs() < 1e-15);
        let mu = EmpiricalMeasure::from_weighted(
            vec![Point::scalar(0.1), Point::scalar(0.5), Point::scalar(0.9)],
            vec![0.5, 0.25, 0.25],
        )
        .unwrap();
        assert!((static_entropy(&mu, &p) - 1.5 * LN2).abs() < 1e-15);
    }

    #[test]
    fn atom_boundaries_are_half_open() {
        let p = Partition::uniform(unit(), 2).unwrap();
        assert_eq!(p.atom_of(&Point::scalar(0.0)), 0);
        assert_eq!(p.atom_of(&Point::scalar(0.5)), 1);
        assert_eq!(p.atom_of(&Point::scalar(1.0)), 1);
        let q = Partition::<f64>::grid(PhaseSpace::torus(2).unwrap(), &[3, 1]).unwrap();
        assert_eq!(q.atom_count(), 3);
        assert_eq!(q.atom_of(&Point::new(&[0.7, 0.2])), 2);
        assert_eq!(q.diameter(), 0.5);
        let sq = Partition::<f64>::uniform(PhaseSpace::torus(2).unwrap(), 4).unwrap();
        assert_eq!(sq.diameter(), 0.25);
        assert!(Partition::grid(unit(), &[2, 2]).is_err());
    }

    #[test]
    fn dyadic_coding_is_a_bijection() {
        let sys = SystemSpec::<f64>::doubling();
        let pts: Vec<Point<f64>> = (0..1024).map(|k| Point::scalar(k as f64 / 1024.0)).collect();
        let mu = EmpiricalMeasure::from_points(&pts);
        let p = Partition::dyadic(*sys.space());
        let h = refined_entropy(&sys, &mu, &p, 10).unwrap();
        assert!((h - 10.0 * LN2).abs() < 1e-12);
        let codes: std::collections::HashSet<ItineraryCode> = pts.iter().map(|x| itinerary(&sys, x, &p, 10).unwrap()).collect();
        assert_eq!(codes.len(), 1024);
        assert!((refined_entropy(&sys, &mu, &p, 1).unwrap() - static_entropy(&mu, &p)).abs() < 1e-15);
    }

    #[test]
    fn refined_entropy_is_monotone() {
        let sys = SystemSpec::<f64>::logistic(3.8).unwrap();
        let orbit = iterate(&sys, &Point::scalar(0.3), 499).unwrap();
        let mu = EmpiricalMeasure::from_points(&orbit);
        let p = Partition::uniform(unit(), 4).unwrap();
        let hs: Vec<f64> = (1..8).map(|n| refined_entropy(&sys, &mu, &p, n).unwrap()).collect();
        assert!(hs.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let fixed = EmpiricalMeasure::dirac(Point::scalar(0.0));
        assert_eq!(refined_entropy(&sys, &fixed, &p, 6).unwrap(), 0.0);
    }

    #[test]
    fn misiurewicz_formula() {
        assert_eq!(misiurewicz_bound(0.0, 5, 2, 1), 0.0);
        let n = 40;
        let b = misiurewicz_bound(n as f64 * LN2, n, 1, 2);
        assert!((b - (LN2 - 3.0 * LN2 / n as f64)).abs() < 1e-15);
    }

    #[test]
    fn misiurewicz_inequality_on_doubling() {
        let sys = SystemSpec::<f64>::doubling();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point<f64>> = (0..30).map(|_| Point::scalar(rng.gen::<f64>())).collect();
        let mu = EmpiricalMeasure::from_points(&pts);
        let p = Partition::dyadic(*sys.space());
        let (n, m) = (200, 5);
        let h_n = refined_entropy(&sys, &mu, &p, n).unwrap();
        let nu = cesaro_pushforward(&sys, &mu, n).unwrap();
        let lhs = refined_entropy(&sys, &nu, &p, m).unwrap() / m as f64;
        assert!(lhs >= misiurewicz_bound(h_n, n, m, 2));
    }

    #[test]
    fn orbit_entropy_doubling() {
        let sys = SystemSpec::<f64>::doubling();
        let n = 200_000;
        let orbit = lebesgue_orbit(&sys, n + 9, 5).unwrap();
        let p = Partition::dyadic(*sys.space());
        let est = entropy_estimate_orbit(&orbit, n, &p, &(1..=10).collect::<Vec<_>>()).unwrap();
        assert!((est.estimate - LN2).abs() < 0.05, "{est:?}");
        assert!(!est.unreliable);
        assert_eq!(est.curve.len(), 10);
    }

    #[test]
    fn orbit_entropy_rotation_and_fixed_point() {
        let sys = SystemSpec::<f64>::rotation(0.618_033_988_749_894_8);
        let p = Partition::dyadic(*sys.space());
        let est = entropy_estimate(&sys, &Point::scalar(0.1), 100_000, &p, &default_m_list()).unwrap();
        assert!(est.estimate < 0.05, "{est:?}");
        assert!(est.undersampling_warning);
        let id = SystemSpec::<f64>::identity();
        let est = entropy_estimate(&id, &Point::scalar(0.4), 1000, &Partition::uniform(unit(), 5).unwrap(), &[1, 2, 3]).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn orbit_entropy_matches_refined_entropy_of_empirical_measure() {
        let sys = SystemSpec::<f64>::logistic(4.0).unwrap();
        let x = Point::scalar(0.31);
        let n = 3000;
        let p = Partition::uniform(unit(), 2).unwrap();
        let est = entropy_estimate(&sys, &x, n, &p, &[1, 2, 3, 4]).unwrap();
        let mu = crate::measures::empirical_measure(&sys, &x, n).unwrap();
        for c in &est.curve {
            let h = refined_entropy(&sys, &mu, &p, c.m).unwrap();
            assert!((h - c.block_entropy).abs() < 1e-9, "m={}", c.m);
        }
    }

    #[test]
    fn undersampled_estimate_is_flagged() {
        let sys = SystemSpec::<f64>::logistic(4.0).unwrap();
        let est = entropy_estimate(&sys, &Point::scalar(0.31), 20, &Partition::uniform(unit(), 8).unwrap(), &[3, 4]).unwrap();
        assert!(est.unreliable);
        assert_eq!(est.chosen_m, 3);
    }

    #[test]
    fn dynamical_balls() {
        let d = SystemSpec::<f64>::doubling();
        let x = Point::scalar(0.1);
        assert!(dynamical_ball_contains(&d, &x, &Point::scalar(0.1 + 2f64.powi(-9)), 5, 0.1));
        assert!(!dynamical_ball_contains(&d, &x, &Point::scalar(0.1 + 2f64.powi(-5)), 5, 0.1));
        assert!(dynamical_ball_contains(&d, &x, &Point::scalar(0.15), 1, 0.1));
        let r = SystemSpec::<f64>::rotation(0.3);
        for n in [1, 10, 100] {
            assert!(dynamical_ball_contains(&r, &x, &Point::scalar(0.15), n, 0.1));
            assert!(!dynamical_ball_contains(&r, &x, &Point::scalar(0.25), n, 0.1));
        }
    }

    #[test]
    fn separated_sets() {
        let d = SystemSpec::<f64>::doubling();
        let est = separated_entropy(&d, 15, 0.1, 1e-5).unwrap();
        assert!((est.rate - LN2).abs() < 0.1, "{est:?}");
        let id = SystemSpec::<f64>::identity();
        let a = separated_entropy(&id, 3, 0.1, 0.01).unwrap();
        let b = separated_entropy(&id, 30, 0.1, 0.01).unwrap();
        assert_eq!(a.separated, b.separated);
        let r = SystemSpec::<f64>::rotation(0.3);
        // α off the grid lattice so that rounding cannot flip ties
        let a = separated_entropy(&r, 5, 0.105, 0.01).unwrap();
        let b = separated_entropy(&r, 50, 0.105, 0.01).unwrap();
        assert_eq!(a.separated, b.separated);
        assert!(b.rate < a.rate);
        assert!(separated_entropy(&d, 5, 0.1, 0.2).is_err());
    }

    #[test]
    fn separated_count_matches_unbucketed_greedy() {
        let sys = SystemSpec::<f64>::logistic(3.9).unwrap();
        let (n, alpha) = (4, 0.05);
        let est = separated_entropy(&sys, n, alpha, 0.004).unwrap();
        let step = 0.004;
        let grid: Vec<Point<f64>> = (0..=250).map(|i| Point::scalar((i as f64 * step).min(1.0))).collect();
        let mut naive: Vec<Point<f64>> = Vec::new();
        for x in &grid {
            if naive.iter().all(|s| orbit_distance(&sys, x, s, n) >= alpha) {
                naive.push(*x);
            }
        }
        assert_eq!(est.separated, naive.len());
    }

    #[test]
    fn kozlovski_closed_forms() {
        let r = SystemSpec::<f64>::rotation(0.3);
        assert_eq!(kozlovski_estimate(&r, 10, 100, 1).unwrap().estimate, 0.0);
        let d = SystemSpec::<f64>::doubling();
        let k = kozlovski_estimate(&d, 30, 100, 1).unwrap();
        assert!((k.estimate - LN2).abs() < 1e-14);
        assert!(kozlovski_estimate(&SystemSpec::<f64>::tent(), 10, 100, 1).is_err());
        assert!(kozlovski_estimate(&d, 10, 99, 1).is_err());
    }

    #[test]
    fn f_function_values() {
        assert_eq!(f_function(1.0).unwrap(), 0.0);
        assert!((f_function(2.0).unwrap() - 2.0 * LN2).abs() < 1e-15);
        let f10 = f_function(10.0).unwrap();
        assert!((f10 - (10.0 * 10f64.ln() - 9.0 * 9f64.ln())).abs() < 1e-12);
        assert!((f10 - 3.2504).abs() < 1e-3);
        assert!(f10 / 10.0 < LN2);
        assert!(f_function(0.5).is_err());
        for i in 0..100 {
            let t = 1.0 + i as f64 * 0.37;
            assert!(f_function(t).unwrap() <= t * LN2 + 1e-12);
        }
    }

    #[test]
    fn admissible_examples() {
        let c = count_admissible(&[LN2], 0.0, DEFAULT_RANGE_GUARD, DEFAULT_ENUMERATION_CUTOFF).unwrap();
        assert_eq!(c.count, 3);
        assert!(c.within_bound().unwrap());
        assert!((c.bound.unwrap() - 5.9).abs() < 0.05);
        let c = count_admissible(&[10.0, 10.0], 50.0, DEFAULT_RANGE_GUARD, DEFAULT_ENUMERATION_CUTOFF).unwrap();
        assert_eq!(c.count, 0);
        let blocks = [4f64.ln(); 5];
        let c = count_admissible(&blocks, LN2, DEFAULT_RANGE_GUARD, DEFAULT_ENUMERATION_CUTOFF).unwrap();
        assert_eq!(c.count, 4368);
        assert!(c.within_bound().unwrap());
    }

    #[test]
    fn admissible_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let m = rng.gen_range(1..=3);
            let blocks: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
            let a: f64 = rng.gen_range(-1.0..3.0);
            let guard = 4;
            let lo = a.ceil() as i64 - guard;
            let hi: Vec<i64> = blocks.iter().map(|b| b.ceil() as i64 + 1).collect();
            let mut brute = 0u128;
            let mut seq = vec![lo; m];
            'odo: loop {
                if seq.iter().sum::<i64>() as f64 >= m as f64 * a {
                    brute += 1;
                }
                for l in 0..m {
                    if seq[l] < hi[l] {
                        seq[l] += 1;
                        continue 'odo;
                    }
                    seq[l] = lo;
                }
                break;
            }
            if hi.iter().any(|&h| h < lo) {
                brute = 0;
            }
            assert_eq!(admissible_count_dp(&blocks, a, guard), brute);
            let c = count_admissible(&blocks, a, guard, u128::MAX).unwrap();
            assert_eq!(c.count, brute);
        }
    }

    #[test]
    fn enumerated_sequences_are_admissible() {
        let mut all = Vec::new();
        enumerate_admissible(&[1.2, 0.3], 0.5, 3, |s| all.push(s.to_vec()));
        assert!(all.iter().all(|a| AdmissibleSequence { a: a.clone(), threshold: 0.5 }.is_admissible()));
        assert_eq!(all.len() as u128, admissible_count_dp(&[1.2, 0.3], 0.5, 3));
    }

    #[test]
    fn ceiling_bound_always_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let m = rng.gen_range(1..=6);
            let blocks: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..4.0)).collect();
            let lam = blocks.iter().sum::<f64>() / m as f64;
            let a = rng.gen_range(0.0..lam + 1.0);
            let c = count_admissible(&blocks, a, DEFAULT_RANGE_GUARD, DEFAULT_ENUMERATION_CUTOFF).unwrap();
            assert!(c.count as f64 <= c.ceiling_bound.unwrap());
        }
    }

    #[test]
    fn integer_profiles_meet_the_stated_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let m = rng.gen_range(1..=6);
            let blocks: Vec<f64> = (0..m).map(|_| rng.gen_range(0..=4) as f64).collect();
            let lam = blocks.iter().sum::<f64>() / m as f64;
            let a = rng.gen_range(0.0..lam + 1.0);
            let c = count_admissible(&blocks, a, DEFAULT_RANGE_GUARD, DEFAULT_ENUMERATION_CUTOFF).unwrap();
            assert!(c.within_bound().unwrap(), "{c:?}");
        }
    }

    #[test]
    fn enumeration_cutoff() {
        let blocks = [3.0; 6];
        match count_admissible(&blocks, -40.0, DEFAULT_RANGE_GUARD, 1000) {
            Err(Error::EnumerationCutoff { size, cutoff }) => assert!(size > cutoff),
            other => panic!("{other:?}"),
        }
    }
}
