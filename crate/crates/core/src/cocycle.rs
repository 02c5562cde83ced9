//! Derivative cocycle along orbits and pointwise Lyapunov quantities.
//!
//! `s_1 + … + s_k = log ‖Λ^k d_x f^n‖` is accumulated as a renormalized product of
//! compound matrices, one per `k`, so no raw product is ever formed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, ScaledProduct};
use crate::scalar::Scalar;
use crate::space::Point;
use crate::systems::{iterate, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CocycleRecord<T: Scalar> {
    pub x: Point<T>,
    pub n: usize,
    /// `s_1 ≥ … ≥ s_d`, log singular values of `d_x f^n`.
    pub log_singvals: Vec<T>,
    /// `log ‖Λ^k d_x f^n‖` for `k = 1..=d`.
    pub log_exterior: Vec<T>,
    pub per_step_jacobians_consumed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LyapunovReport<T: Scalar> {
    pub x: Point<T>,
    pub n: usize,
    /// `χ^k = (1/n) log ‖Λ^k d_x f^n‖`, `k = 1..=d`.
    pub chi: Vec<T>,
    pub sigma_chi_plus: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StrongExponentReport<T: Scalar> {
    pub x: Point<T>,
    pub n: usize,
    /// Plain average of `log⁺ ‖d_{f^l x} f^p‖` over `l = 0..=n`, keyed by `p`.
    pub lambda_p: BTreeMap<usize, T>,
    /// Max of the Cesàro averages at `n/2, 3n/4, n`.
    pub lambda_p_limsup: BTreeMap<usize, T>,
    /// `min_p lambda_p / p`.
    pub lambda: T,
    /// Same with `log⁺ max_k ‖Λ^k d f^p‖`.
    pub sigma_lambda_p: BTreeMap<usize, T>,
    pub sigma_lambda_p_limsup: BTreeMap<usize, T>,
    pub sigma_lambda: T,
}

fn jacobians_along<T: Scalar>(sys: &SystemSpec<T>, orbit: &[Point<T>], count: usize) -> Result<Vec<Mat<T>>> {
    orbit[..count]
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if sys.is_smooth_at(p) {
                Ok(sys.jacobian(p))
            } else {
                Err(Error::NonSmoothPoint {
                    system: sys.name().to_string(),
                    iterate: i,
                })
            }
        })
        .collect()
}

/// Log singular values of `d_x f^n`.
pub fn cocycle_along_orbit<T: Scalar>(sys: &SystemSpec<T>, x: &Point<T>, n: usize) -> Result<CocycleRecord<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("cocycle needs n >= 1".into()));
    }
    if x.dim() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: x.dim(),
        });
    }
    let orbit = iterate(sys, x, n - 1)?;
    cocycle_from_orbit(sys, &orbit)
}

/// Cocycle over the given orbit segment `[x, f x, …, f^{n−1} x]` (`n = orbit.len()`).
pub fn cocycle_from_orbit<T: Scalar>(sys: &SystemSpec<T>, orbit: &[Point<T>]) -> Result<CocycleRecord<T>> {
    let n = orbit.len();
    if n == 0 {
        return Err(Error::InvalidParameter("cocycle needs n >= 1".into()));
    }
    let x = &orbit[0];
    let jacs = jacobians_along(sys, orbit, n)?;
    let d = sys.dim();
    let mut products: Vec<ScaledProduct<T>> = (1..=d)
        .map(|k| ScaledProduct::identity(num_subsets(d, k)))
        .collect();
    for j in &jacs {
        for (k, prod) in products.iter_mut().enumerate() {
            prod.push(&j.compound(k + 1)?);
        }
    }
    let log_exterior: Vec<T> = products.iter().map(|p| p.log_norm()).collect();
    let mut log_singvals = Vec::with_capacity(d);
    let mut prev = T::zero();
    for &e in &log_exterior {
        log_singvals.push(if e == T::neg_infinity() { e } else { e - prev });
        prev = e;
    }
    // ordering can be violated by a few ulps when singular values coincide
    for k in 1..d {
        if log_singvals[k] > log_singvals[k - 1] {
            log_singvals[k] = log_singvals[k - 1];
        }
    }
    Ok(CocycleRecord {
        x: *x,
        n,
        log_singvals,
        log_exterior,
        per_step_jacobians_consumed: n,
    })
}

/// `log⁺` of a quantity given by its logarithm.
#[inline]
fn log_plus_of_log<T: Scalar>(l: T) -> T {
    l.max(T::zero())
}

fn num_subsets(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

pub fn lyapunov_report<T: Scalar>(sys: &SystemSpec<T>, x: &Point<T>, n: usize) -> Result<LyapunovReport<T>> {
    Ok(report_from_record(&cocycle_along_orbit(sys, x, n)?))
}

/// Finite-time exponents `χ^k = (1/n) log ‖Λ^k d_x f^n‖` from a cocycle record.
pub fn report_from_record<T: Scalar>(rec: &CocycleRecord<T>) -> LyapunovReport<T> {
    let (x, n) = (&rec.x, rec.n);
    let nn = T::from_usize_lossy(n);
    let chi: Vec<T> = rec.log_exterior.iter().map(|&e| e / nn).collect();
    let sigma_chi_plus = chi.iter().fold(T::zero(), |m, &c| m.max(c));
    LyapunovReport {
        x: *x,
        n,
        chi,
        sigma_chi_plus,
    }
}

/// `λ_p` and `Σλ` surrogates along the orbit of `x`.
pub fn strong_exponents<T: Scalar>(
    sys: &SystemSpec<T>,
    x: &Point<T>,
    p_list: &[usize],
    n: usize,
) -> Result<StrongExponentReport<T>> {
    if p_list.is_empty() || p_list.contains(&0) {
        return Err(Error::InvalidParameter("block lengths must be >= 1".into()));
    }
    if n < 4 {
        return Err(Error::InvalidParameter("strong exponents need n >= 4".into()));
    }
    let p_max = *p_list.iter().max().unwrap();
    let orbit = iterate(sys, x, n + p_max)?;
    let jacs = jacobians_along(sys, &orbit, n + p_max)?;
    let checkpoints = [n / 2, 3 * n / 4, n];

    let mut lambda_p = BTreeMap::new();
    let mut lambda_p_limsup = BTreeMap::new();
    let mut sigma_p = BTreeMap::new();
    let mut sigma_p_limsup = BTreeMap::new();
    let mut lambda = T::infinity();
    let mut sigma_lambda = T::infinity();
    for &p in p_list {
        let mut top = T::zero();
        let mut ext = T::zero();
        let mut top_ces = Vec::with_capacity(3);
        let mut ext_ces = Vec::with_capacity(3);
        let mut c = 0;
        for l in 0..=n {
            let mut prod = ScaledProduct::identity(sys.dim());
            for j in &jacs[l..l + p] {
                prod.push(j);
            }
            let logs = prod.log_singular_values();
            let mut acc = T::zero();
            let mut best = T::neg_infinity();
            for &s in &logs {
                acc = acc + s;
                best = best.max(acc);
            }
            top = top + log_plus_of_log(logs[0]);
            ext = ext + log_plus_of_log(best);
            if l == checkpoints[c] {
                let terms = T::from_usize_lossy(l + 1);
                top_ces.push(top / terms);
                ext_ces.push(ext / terms);
                c = (c + 1).min(2);
            }
        }
        let terms = T::from_usize_lossy(n + 1);
        let (lp, sp) = (top / terms, ext / terms);
        let pf = T::from_usize_lossy(p);
        lambda = lambda.min(lp / pf);
        sigma_lambda = sigma_lambda.min(sp / pf);
        lambda_p.insert(p, lp);
        sigma_p.insert(p, sp);
        lambda_p_limsup.insert(p, top_ces.iter().fold(T::neg_infinity(), |m, &v| m.max(v)));
        sigma_p_limsup.insert(p, ext_ces.iter().fold(T::neg_infinity(), |m, &v| m.max(v)));
    }
    Ok(StrongExponentReport {
        x: *x,
        n,
        lambda_p,
        lambda_p_limsup,
        lambda,
        sigma_lambda_p: sigma_p,
        sigma_lambda_p_limsup: sigma_p_limsup,
        sigma_lambda,
    })
}
