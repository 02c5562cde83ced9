//! A `C^r` interval map `h: [0, 3/2] → [0, 3/2]` whose Lebesgue-positive Cantor set `E`
//! has positive Lyapunov exponent `(log λ)/r` while every empirical measure from `E`
//! converges to the Dirac mass at the fixed point 0.
//!
//! Layout of `h`:
//!
//! * `[0, 1/λ]`: `x ↦ λx`.
//! * `J_n = [1 − 1/n − 1/(2n²), 1 − 1/n]` for `n0 ≤ n ≤ n_max`:
//!   `x ↦ c_n + α_n f_{n²}((x − 1 + 1/n)·2n²N_n)` with `f_p` a smoothed tent
//!   (see [`TentFamilyMember`]) and `c_n = g_n − α_n (1/2 − 1/p)`, `g_n = (1 − 1/(n+1)) λ^{1−r^n}`.
//!   The offset makes each affine branch of `J_n` land on `J_{n+1}` after exactly `r^n` steps.
//! * Elsewhere a background map built from order-`r` smoothstep blends. Its shape does not
//!   enter any certified property.
//!
//! Quantities of size `λ^{−r^n}` underflow `f64` long before the interesting stages, so they
//! are carried as [`LambdaPower`]: a mantissa times an integer power of `λ`. An affine step
//! on `[0, 1/λ]` is then an exact exponent increment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{dmetric, EmpiricalMeasure, TestFunctionFamily};
use crate::space::{PhaseSpace, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleParams {
    /// Smoothness order, at least 2.
    pub r: u32,
    /// Slope of the expanding affine piece, `λ = ‖h'‖` there.
    pub lambda: f64,
    /// First constructed stage, at least 3.
    pub n0: u32,
    /// Last constructed stage.
    pub n_max: u32,
}

impl Default for CounterexampleParams {
    fn default() -> Self {
        Self {
            r: 2,
            lambda: 2.0,
            n0: 5,
            n_max: 12,
        }
    }
}

impl CounterexampleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.r < 2 {
            // r = 1 makes r^n = 1: no transit, and the exponent formula degenerates to log λ.
            return bad(format!("r must be at least 2, got {}", self.r));
        }
        if !(self.lambda > 1.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be > 1, got {}", self.lambda));
        }
        if self.n0 < 3 {
            return bad(format!("n0 must be at least 3 (1/2 - 2/n^2 > 0), got {}", self.n0));
        }
        if self.n_max <= self.n0 {
            return bad(format!("nmax ({}) must exceed n0 ({})", self.n_max, self.n0));
        }
        let exp = (self.r as f64) * (self.n_max as f64).ln() / std::f64::consts::LN_2;
        if exp > 60.0 {
            return bad(format!("r^nmax = {}^{} does not fit the exponent range", self.r, self.n_max));
        }
        let first = j_interval(self.n0).0;
        if 1.0 / self.lambda >= first {
            return bad(format!(
                "affine piece [0, 1/lambda] overlaps J_{}; need lambda > {:.6}",
                self.n0,
                1.0 / first
            ));
        }
        Ok(())
    }

    fn r_pow(&self, n: u32) -> i64 {
        (self.r as i64).pow(n)
    }
}

/// `mant · λ^exp`; exact under multiplication by powers of `λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPower {
    pub mant: f64,
    pub exp: i64,
}

impl LambdaPower {
    pub fn plain(x: f64) -> Self {
        Self { mant: x, exp: 0 }
    }

    pub fn ln(&self, ln_lambda: f64) -> f64 {
        self.mant.ln() + self.exp as f64 * ln_lambda
    }

    /// Nearest `f64`; flushes to zero below the normal range.
    pub fn to_f64(&self, ln_lambda: f64) -> f64 {
        if self.mant == 0.0 {
            return 0.0;
        }
        self.mant.signum() * self.mant.abs().ln().mul_add(1.0, self.exp as f64 * ln_lambda).exp()
    }

    #[inline]
    pub fn times_lambda(self) -> Self {
        Self {
            mant: self.mant,
            exp: self.exp + 1,
        }
    }

    /// `0 ≤ self ≤ 1/λ`.
    pub fn in_affine_piece(&self, ln_lambda: f64) -> bool {
        self.mant >= 0.0 && (self.mant == 0.0 || self.mant.ln() + (self.exp + 1) as f64 * ln_lambda <= 0.0)
    }
}

/// Count that may be far beyond integer range: `exact` is set when it fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HugeCount {
    pub ln: f64,
    pub exact: Option<u64>,
}

impl HugeCount {
    pub fn log10(&self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }
}

/// Member `f_p` of the smoothed tent family, 1-periodic.
///
/// Affine branches `[1/p, 1/2 − 1/p]` (slope +1) and `[1/2 + 1/p, 1 − 1/p]` (slope −1);
/// on the remaining joins the map is an order-`r` blend vanishing with `r` derivatives at
/// `0`, `1/2` and `1`.
#[derive(Clone, Copy, Debug)]
pub struct TentFamilyMember {
    pub p: f64,
    pub r: u32,
}

impl TentFamilyMember {
    pub fn new(p: u64, r: u32) -> Self {
        assert!(p > 4, "tent family needs p > 4 for nonempty branches");
        Self { p: p as f64, r }
    }

    /// Value and derivative at `u`.
    pub fn eval(&self, u: f64) -> (f64, f64) {
        let v = u - u.floor();
        let w = 1.0 / self.p;
        let r = self.r;
        if v < w {
            let (val, dd) = edge_blend(w, -1.0, 0.0, w - v, w, r);
            (val, -dd)
        } else if v <= 0.5 - w {
            (v, 1.0)
        } else if v < 0.5 {
            edge_blend(0.5 - w, 1.0, 0.0, v - (0.5 - w), w, r)
        } else if v < 0.5 + w {
            let (val, dd) = edge_blend(0.5 - w, 1.0, 0.0, 0.5 + w - v, w, r);
            (val, -dd)
        } else if v <= 1.0 - w {
            (1.0 - v, -1.0)
        } else {
            edge_blend(w, -1.0, 0.0, v - (1.0 - w), w, r)
        }
    }

    /// Point of affine branch `side` (0 increasing, 1 decreasing) at relative position `t ∈ [0, 1]`.
    pub fn branch_point(&self, side: u8, t: f64) -> f64 {
        let w = 1.0 / self.p;
        let len = 0.5 - 2.0 * w;
        match side {
            0 => w + t * len,
            _ => 0.5 + w + t * len,
        }
    }

    /// Fraction of a period covered by affine branches.
    pub fn branch_fraction(&self) -> f64 {
        2.0 * (0.5 - 2.0 / self.p)
    }
}

/// Generalised smoothstep of order `r`: `S(0) = 0`, `S(1) = 1`, derivatives 1..=r vanish at both ends.
pub fn smoothstep(r: u32, t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    let r = r as i32;
    let mut acc = 0.0;
    for k in 0..=r {
        acc += binom((r + k) as u32, k as u32) * binom((2 * r + 1) as u32, (r - k) as u32) * (-t).powi(k);
    }
    acc * t.powi(r + 1)
}

/// `S'(t) = (2r+1)!/(r!)² · tʳ(1 − t)ʳ`.
pub fn smoothstep_deriv(r: u32, t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    let c = (1..=(2 * r + 1)).map(|i| i as f64).product::<f64>() / (1..=r).map(|i| i as f64).product::<f64>().powi(2);
    c * t.powi(r as i32) * (1.0 - t).powi(r as i32)
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Blend that leaves an edge with value `edge` and slope `slope` (w.r.t. `d`) and reaches the
/// constant `flat` at `d = width` with `r` vanishing derivatives. Returns value and `d/dd`.
fn edge_blend(edge: f64, slope: f64, flat: f64, d: f64, width: f64, r: u32) -> (f64, f64) {
    let t = d / width;
    let lin = edge - flat + slope * d;
    let s = smoothstep(r, t);
    let ds = smoothstep_deriv(r, t) / width;
    (flat + lin * (1.0 - s), slope * (1.0 - s) - lin * ds)
}

fn flat_blend(from: f64, to: f64, d: f64, width: f64, r: u32) -> (f64, f64) {
    let t = d / width;
    (from + (to - from) * smoothstep(r, t), (to - from) * smoothstep_deriv(r, t) / width)
}

/// `J_n = [1 − 1/n − 1/(2n²), 1 − 1/n]`.
pub fn j_interval(n: u32) -> (f64, f64) {
    let n = n as f64;
    (1.0 - 1.0 / n - 1.0 / (2.0 * n * n), 1.0 - 1.0 / n)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageData {
    pub n: u32,
    pub j_lo: f64,
    pub j_hi: f64,
    /// `p = n²` of the tent family member used on `J_n`.
    pub tent_p: u64,
    /// `g(1 − 1/n) = (1 − 1/(n+1)) λ^{1 − r^n}`.
    pub g_val: LambdaPower,
    pub alpha: LambdaPower,
    /// `h` at the ends of `J_n` (where `f_p` vanishes).
    pub offset: LambdaPower,
    /// Real solution of the `C^r` size condition.
    pub ln_n_star: f64,
    /// `N_n`, the rounded solution.
    pub n_periods: HugeCount,
    /// `2 N_n` affine branches.
    pub branch_count: HugeCount,
    /// `log |h'|` on the affine branches: `log(α_n · 2n² N_n)`.
    pub ln_branch_slope: f64,
    /// Fraction of `J_n` covered by affine branches.
    pub branch_fraction: f64,
}

impl StageData {
    pub fn tent(&self, r: u32) -> TentFamilyMember {
        TentFamilyMember::new(self.tent_p, r)
    }

    pub fn j_len(&self) -> f64 {
        self.j_hi - self.j_lo
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageConditions {
    pub n: u32,
    /// Relative residual of `λ^{r^n−1} α_n (1/2 − 2/n²) = 1/(2(n+1)²)` in log space.
    pub landing_residual: f64,
    /// Relative residual of `n^{2r} α_n (2n² N*)^r = 1/n` in log space.
    pub size_residual: f64,
    /// `n^{2r} α_n (2n² N_n)^r` with the rounded `N_n`, times `n`; must lie in `[1/2, 2]`.
    pub size_proxy_times_n: f64,
    pub branch_fraction_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub n: u32,
    pub branch_index: u64,
    pub transit_steps: i64,
    pub landing: (f64, f64),
    /// Largest relative deviation of the propagated branch ends from the ends of `J_{n+1}`.
    pub landing_error: f64,
}

/// The constructed map with its stage table.
#[derive(Clone, Debug)]
pub struct CounterexampleMap {
    params: CounterexampleParams,
    ln_lambda: f64,
    stages: Vec<StageData>,
}

impl CounterexampleMap {
    pub fn build(params: CounterexampleParams) -> Result<Self> {
        params.validate()?;
        let ln_lambda = params.lambda.ln();
        let r = params.r;
        let rf = r as f64;
        let mut stages = Vec::with_capacity((params.n_max - params.n0 + 1) as usize);
        for n in params.n0..=params.n_max {
            let nf = n as f64;
            let (j_lo, j_hi) = j_interval(n);
            let p = (n as u64) * (n as u64);
            let scale_exp = 1 - params.r_pow(n);
            let g_val = LambdaPower {
                mant: 1.0 - 1.0 / (nf + 1.0),
                exp: scale_exp,
            };
            // λ^{r^n − 1} α_n (1/2 − 2/n²) = 1/(2(n+1)²)
            let alpha = LambdaPower {
                mant: 1.0 / (2.0 * (nf + 1.0).powi(2) * (0.5 - 2.0 / (nf * nf))),
                exp: scale_exp,
            };
            let offset = LambdaPower {
                mant: g_val.mant - alpha.mant * (0.5 - 1.0 / p as f64),
                exp: scale_exp,
            };
            let ln_alpha = alpha.ln(ln_lambda);
            // n^{2r} α_n (2n² N)^r = 1/n
            let ln_two_n2 = (2.0 * nf * nf).ln();
            let ln_n_star = (-(2.0 * rf + 1.0) * nf.ln() - ln_alpha) / rf - ln_two_n2;
            let n_star = ln_n_star.exp();
            let n_periods = if n_star < 2f64.powi(52) {
                let rounded = n_star.round();
                if rounded < 1.0 {
                    return Err(Error::Stage {
                        stage: n,
                        reason: format!("N_n = {n_star:.3e} rounds to 0; parameters too extreme"),
                    });
                }
                HugeCount {
                    ln: rounded.ln(),
                    exact: Some(rounded as u64),
                }
            } else {
                HugeCount {
                    ln: ln_n_star,
                    exact: None,
                }
            };
            let branch_count = HugeCount {
                ln: n_periods.ln + std::f64::consts::LN_2,
                exact: n_periods.exact.and_then(|v| v.checked_mul(2)),
            };
            let tent = TentFamilyMember::new(p, r);
            stages.push(StageData {
                n,
                j_lo,
                j_hi,
                tent_p: p,
                g_val,
                alpha,
                offset,
                ln_n_star,
                n_periods,
                branch_count,
                ln_branch_slope: ln_alpha + ln_two_n2 + n_periods.ln,
                branch_fraction: tent.branch_fraction(),
            });
        }
        let map = Self {
            params,
            ln_lambda,
            stages,
        };
        for s in &map.stages {
            let c = map.conditions(s.n)?;
            if !(0.5..=2.0).contains(&c.size_proxy_times_n) {
                return Err(Error::Stage {
                    stage: s.n,
                    reason: format!(
                        "rounded N_n puts the C^r size proxy at {:.3}/n, outside [1/(2n), 2/n]",
                        c.size_proxy_times_n
                    ),
                });
            }
        }
        Ok(map)
    }

    pub fn params(&self) -> &CounterexampleParams {
        &self.params
    }

    pub fn ln_lambda(&self) -> f64 {
        self.ln_lambda
    }

    pub fn stages(&self) -> &[StageData] {
        &self.stages
    }

    pub fn stage(&self, n: u32) -> Result<&StageData> {
        if n < self.params.n0 || n > self.params.n_max {
            return Err(Error::InvalidParameter(format!(
                "stage {n} outside {}..={}",
                self.params.n0, self.params.n_max
            )));
        }
        Ok(&self.stages[(n - self.params.n0) as usize])
    }

    pub fn space(&self) -> PhaseSpace<f64> {
        PhaseSpace::Interval { lo: 0.0, hi: 1.5 }
    }

    /// Residuals of both parameter conditions for stage `n`.
    pub fn conditions(&self, n: u32) -> Result<StageConditions> {
        let s = self.stage(n)?;
        let nf = n as f64;
        let rf = self.params.r as f64;
        // Powers of λ cancel exactly in the integer exponent; only mantissas remain.
        let exp_sum = s.alpha.exp + (self.params.r_pow(n) - 1);
        let lhs = s.alpha.mant.ln() + (0.5 - 2.0 / (nf * nf)).ln() + exp_sum as f64 * self.ln_lambda;
        let rhs = -(2.0 * (nf + 1.0).powi(2)).ln();
        let landing_residual = (lhs - rhs).abs() / rhs.abs().max(1.0);

        let ln_alpha = s.alpha.ln(self.ln_lambda);
        let ln_two_n2 = (2.0 * nf * nf).ln();
        let size = |ln_n: f64| 2.0 * rf * nf.ln() + ln_alpha + rf * (ln_two_n2 + ln_n);
        let target = -nf.ln();
        let size_residual = (size(s.ln_n_star) - target).abs() / ln_alpha.abs().max(1.0);
        let size_proxy_times_n = (size(s.n_periods.ln) - target).exp();

        let branch_fraction_error = (s.branch_fraction - (1.0 - 4.0 / (nf * nf))).abs();
        Ok(StageConditions {
            n,
            landing_residual,
            size_residual,
            size_proxy_times_n,
            branch_fraction_error,
        })
    }

    /// Value of `h` at a point of affine branch `side` (relative position `t`) of stage `n`,
    /// computed from the stage formula in `λ`-power form.
    pub fn branch_image(&self, n: u32, side: u8, t: f64) -> Result<LambdaPower> {
        let s = self.stage(n)?;
        let tent = s.tent(self.params.r);
        let (f, _) = tent.eval(tent.branch_point(side, t));
        debug_assert_eq!(s.offset.exp, s.alpha.exp);
        Ok(LambdaPower {
            mant: s.offset.mant + s.alpha.mant * f,
            exp: s.alpha.exp,
        })
    }

    /// `h` at a double-precision point.
    ///
    /// Inside `J_n` the oscillation has period `1/(2n²N_n)`; once that is below `f64`
    /// resolution the phase is not representable and the branch midpoint is used.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).1
    }

    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let lam = self.params.lambda;
        let r = self.params.r;
        let inv = 1.0 / lam;
        if x <= inv {
            return (lam * x, lam);
        }
        if x > 1.0 {
            return (0.0, 0.0);
        }
        let first = &self.stages[0];
        let ll = self.ln_lambda;
        if x < first.j_lo {
            let (v, d) = edge_blend(1.0, lam, first.offset.to_f64(ll), x - inv, first.j_lo - inv, r);
            return (v, d);
        }
        for (i, s) in self.stages.iter().enumerate() {
            if x < s.j_lo {
                let prev = &self.stages[i - 1];
                return flat_blend(
                    prev.offset.to_f64(ll),
                    s.offset.to_f64(ll),
                    x - prev.j_hi,
                    s.j_lo - prev.j_hi,
                    r,
                );
            }
            if x <= s.j_hi {
                return self.eval_in_stage(s, x);
            }
        }
        let last = self.stages.last().expect("at least one stage");
        flat_blend(last.offset.to_f64(ll), 0.0, x - last.j_hi, 1.0 - last.j_hi, r)
    }

    fn eval_in_stage(&self, s: &StageData, x: f64) -> (f64, f64) {
        let nf = s.n as f64;
        let tent = s.tent(self.params.r);
        let ln_freq = (2.0 * nf * nf).ln() + s.n_periods.ln;
        let freq = ln_freq.exp();
        let (f, df) = if freq < 2f64.powi(40) {
            tent.eval((x - 1.0 + 1.0 / nf) * freq)
        } else {
            tent.eval(tent.branch_point(0, 0.5))
        };
        let ll = self.ln_lambda;
        let value = s.offset.to_f64(ll) + s.alpha.to_f64(ll) * f;
        let slope = if df == 0.0 {
            0.0
        } else {
            df.signum() * (s.alpha.ln(ll) + ln_freq + df.abs().ln()).exp()
        };
        (value, slope)
    }

    /// Endpoints of affine branch `index` of `J_n` as `f64` (only meaningful while the
    /// branch width is above double-precision resolution).
    pub fn branch_interval(&self, n: u32, index: u64) -> Result<(f64, f64)> {
        let s = self.stage(n)?;
        let count = s.n_periods.exact.ok_or_else(|| {
            Error::InvalidParameter(format!("stage {n} has too many branches to address in f64"))
        })?;
        if index >= 2 * count {
            return Err(Error::InvalidParameter(format!("branch {index} of {} at stage {n}", 2 * count)));
        }
        let tent = s.tent(self.params.r);
        let period = index / 2;
        let side = (index % 2) as u8;
        let freq = 2.0 * (n as f64).powi(2) * count as f64;
        let to_x = |u_local: f64| 1.0 - 1.0 / n as f64 + (-(count as f64) + period as f64 + u_local) / freq;
        Ok((to_x(tent.branch_point(side, 0.0)), to_x(tent.branch_point(side, 1.0))))
    }

    /// Propagates the image of each branch type of `J_n` through `r^n − 1` exact affine
    /// steps and checks it stays in `[0, 1/λ]` and lands on `J_{n+1}`.
    pub fn verify_schedule(&self, n: u32) -> Result<ScheduleEntry> {
        if n >= self.params.n_max {
            return Err(Error::InvalidParameter(format!(
                "stage {n} has no constructed successor (nmax = {})",
                self.params.n_max
            )));
        }
        self.stage(n)?;
        let transit = self.params.r_pow(n) - 1;
        let (lo, hi) = j_interval(n + 1);
        let mut worst: f64 = 0.0;
        for side in 0..2u8 {
            let mut ends = Vec::with_capacity(2);
            for t in [0.0, 1.0] {
                let mut v = self.branch_image(n, side, t)?;
                // iterates h^1 .. h^{r^n - 1} of the branch end
                for k in 1..=transit {
                    if !v.in_affine_piece(self.ln_lambda) {
                        return Err(Error::Schedule {
                            stage: n,
                            iterate: k as u64,
                            reason: format!("branch end left [0, 1/lambda]: {v:?}"),
                        });
                    }
                    v = v.times_lambda();
                }
                if v.exp != 0 {
                    return Err(Error::Schedule {
                        stage: n,
                        iterate: (transit + 1) as u64,
                        reason: format!("landing still scaled by lambda^{}", v.exp),
                    });
                }
                ends.push(v.mant);
            }
            ends.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let err = ((ends[0] - lo).abs() / lo).max((ends[1] - hi).abs() / hi);
            if err > 1e-9 {
                return Err(Error::Schedule {
                    stage: n,
                    iterate: (transit + 1) as u64,
                    reason: format!("image [{}, {}] misses J_{} = [{lo}, {hi}]", ends[0], ends[1], n + 1),
                });
            }
            worst = worst.max(err);
        }
        Ok(ScheduleEntry {
            n,
            branch_index: 0,
            transit_steps: transit,
            landing: (lo, hi),
            landing_error: worst,
        })
    }

    /// Lebesgue measure of the surviving set after stages `n0..=up_to`, from the branch data,
    /// alongside the closed forms.
    pub fn cantor_measure(&self, up_to: u32) -> Result<CantorMeasure> {
        if up_to < self.params.n0 {
            return Err(Error::InvalidParameter(format!("up_to {up_to} < n0 {}", self.params.n0)));
        }
        let first = self.stage(self.params.n0)?;
        let base = first.j_len() * first.branch_fraction;
        // Beyond n_max the same affine construction is continued.
        let mut construction = 1.0;
        for n in (self.params.n0 + 1)..=up_to {
            construction *= match self.stage(n) {
                Ok(s) => s.branch_fraction,
                Err(_) => TentFamilyMember::new((n as u64).pow(2), self.params.r).branch_fraction(),
            };
        }
        let mut product = 1.0;
        for n in (self.params.n0 + 1)..=up_to {
            let nf = n as f64;
            product *= 1.0 - 4.0 / (nf * nf);
        }
        let a = (self.params.n0 + 1) as f64;
        let m = up_to as f64;
        let telescoped = if up_to == self.params.n0 {
            1.0
        } else {
            (a - 2.0) * (a - 1.0) * (m + 1.0) * (m + 2.0) / (a * (a + 1.0) * (m - 1.0) * m)
        };
        let limit = (a - 2.0) * (a - 1.0) / (a * (a + 1.0));
        Ok(CantorMeasure {
            up_to,
            base_measure: base,
            surviving_fraction: construction,
            product,
            telescoped,
            limit_fraction: limit,
            measure: base * construction,
            limit_measure: base * limit,
        })
    }

    /// Symbolic orbit through stages `n0 .. n0 + stages`: at each stage the left end of the
    /// first affine branch, then its `r^n − 1` transit iterates.
    pub fn symbolic_orbit(&self, stages: u32) -> Result<Vec<OrbitStep>> {
        let mut out = Vec::new();
        for n in self.params.n0..self.params.n0 + stages {
            let s = self.stage(n)?;
            let first = TentFamilyMember::new(s.tent_p, self.params.r).branch_point(0, 0.0);
            let x = match s.n_periods.exact {
                Some(count) => 1.0 - 1.0 / n as f64 + (-(count as f64) + first) / (2.0 * (n as f64).powi(2) * count as f64),
                None => s.j_lo,
            };
            out.push(OrbitStep {
                stage: n,
                value: LambdaPower::plain(x),
                ln_derivative: s.ln_branch_slope,
            });
            let mut v = self.branch_image(n, 0, 0.0)?;
            for _ in 1..self.params.r_pow(n) {
                out.push(OrbitStep {
                    stage: n,
                    value: v,
                    ln_derivative: self.ln_lambda,
                });
                v = v.times_lambda();
            }
        }
        Ok(out)
    }

    /// `Σ log|h'| / Σ r^n` over the symbolic `E`-orbit of the first `stages` stages.
    pub fn exponent_on_e(&self, stages: u32) -> Result<f64> {
        Ok(self.exponent_curve(stages)?.last().map(|c| c.exponent).unwrap_or(0.0))
    }

    /// Running exponent at the end of each stage.
    pub fn exponent_curve(&self, stages: u32) -> Result<Vec<ExponentPoint>> {
        if stages == 0 {
            return Err(Error::InvalidParameter("stages must be at least 1".into()));
        }
        let mut sum = 0.0;
        let mut steps: i64 = 0;
        let mut out = Vec::new();
        for n in self.params.n0..self.params.n0 + stages {
            let s = self.stage(n)?;
            let rn = self.params.r_pow(n);
            sum += (rn - 1) as f64 * self.ln_lambda + s.ln_branch_slope;
            steps += rn;
            out.push(ExponentPoint {
                stage: n,
                steps,
                exponent: sum / steps as f64,
                stage_ln_derivative: (rn - 1) as f64 * self.ln_lambda + s.ln_branch_slope,
                telescoped_stage_term: (rn - (rn / self.params.r as i64) * (self.params.r as i64 - 1)) as f64
                    * self.ln_lambda,
            });
        }
        Ok(out)
    }

    pub fn target_exponent(&self) -> f64 {
        self.ln_lambda / self.params.r as f64
    }

    /// Runs every check over the constructed stages.
    pub fn certify(&self, orbit_steps: u64) -> Result<CertificationReport> {
        let p = self.params;
        let mut stages = 0u32;
        let mut covered: u64 = 0;
        while p.n0 + stages <= p.n_max {
            let next = p.r_pow(p.n0 + stages) as u64;
            if covered + next > orbit_steps {
                break;
            }
            covered += next;
            stages += 1;
        }
        if stages < 3 {
            return Err(Error::InvalidParameter(format!(
                "orbit_steps = {orbit_steps} covers {stages} stages; at least 3 are needed"
            )));
        }
        let mut stage_reports = Vec::new();
        let mut all_ok = true;
        for s in &self.stages {
            let cond = self.conditions(s.n)?;
            let conditions_ok = cond.landing_residual <= 1e-12 && cond.size_residual <= 1e-12;
            let schedule = if s.n < p.n_max {
                Some(self.verify_schedule(s.n).map_err(|e| e.to_string()))
            } else {
                None
            };
            let schedule_ok = !matches!(schedule, Some(Err(_)));
            all_ok &= conditions_ok && schedule_ok;
            stage_reports.push(StageReport {
                n: s.n,
                log10_alpha: s.alpha.ln(self.ln_lambda) / std::f64::consts::LN_10,
                log10_n_periods: s.n_periods.log10(),
                n_periods_exact: s.n_periods.exact,
                conditions: cond,
                conditions_ok,
                schedule_ok,
                schedule: schedule.map(|r| r.err().unwrap_or_else(|| "ok".into())),
            });
        }

        let orbit = self.symbolic_orbit(stages)?;
        let values: Vec<f64> = orbit.iter().map(|o| o.value.to_f64(self.ln_lambda)).collect();
        let delta = 0.01;
        let small = values.iter().filter(|&&v| v < delta).count();
        let time_fraction = small as f64 / values.len() as f64;
        let time_threshold = 1.0 - 10.0 / 2f64.powi(p.n0 as i32);

        let space = self.space();
        let points: Vec<Point<f64>> = values.iter().map(|&v| Point::scalar(v)).collect();
        let empirical = EmpiricalMeasure::from_points(&points);
        let fam = TestFunctionFamily::fourier(space, crate::measures::DEFAULT_NPHI)?;
        let dirac = EmpiricalMeasure::dirac(Point::scalar(0.0));
        let dirac_distance = dmetric(&empirical, &dirac, &fam);

        let curve = self.exponent_curve(p.n_max - p.n0 + 1)?;
        let exponent = curve.last().map(|c| c.exponent).unwrap_or(0.0);
        let target = self.target_exponent();
        let exponent_rel_error = (exponent - target).abs() / target;

        let measure = self.cantor_measure(p.n_max)?;

        let time_ok = time_fraction > time_threshold;
        let exponent_ok = exponent_rel_error <= 0.05;
        let dirac_ok = dirac_distance < 0.05;
        let passed = all_ok && time_ok && exponent_ok && dirac_ok;
        Ok(CertificationReport {
            params: p,
            stages_in_orbit: stages,
            orbit_steps: values.len() as u64,
            stages: stage_reports,
            time_fraction_below: delta,
            time_fraction,
            time_threshold,
            dirac_distance,
            exponent,
            target_exponent: target,
            exponent_rel_error,
            exponent_curve: curve,
            cantor: measure,
            passed,
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OrbitStep {
    pub stage: u32,
    pub value: LambdaPower,
    /// `log |h'|` at this point.
    pub ln_derivative: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentPoint {
    pub stage: u32,
    pub steps: i64,
    pub exponent: f64,
    pub stage_ln_derivative: f64,
    /// `(r^n − r^{n−1}(r − 1)) log λ`.
    pub telescoped_stage_term: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CantorMeasure {
    pub up_to: u32,
    /// `Leb(E_{n0}) = |J_{n0}| (1 − 4/n0²)`.
    pub base_measure: f64,
    /// Product of per-stage branch fractions taken from the construction.
    pub surviving_fraction: f64,
    /// `∏_{n0 < n ≤ up_to} (1 − 4/n²)` evaluated term by term.
    pub product: f64,
    /// Same product from the telescoped closed form.
    pub telescoped: f64,
    /// `∏_{n > n0} (1 − 4/n²) = (n0 − 1) n0 / ((n0 + 1)(n0 + 2))`.
    pub limit_fraction: f64,
    pub measure: f64,
    pub limit_measure: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageReport {
    pub n: u32,
    pub log10_alpha: f64,
    pub log10_n_periods: f64,
    pub n_periods_exact: Option<u64>,
    pub conditions: StageConditions,
    pub conditions_ok: bool,
    pub schedule_ok: bool,
    pub schedule: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationReport {
    pub params: CounterexampleParams,
    pub stages_in_orbit: u32,
    pub orbit_steps: u64,
    pub stages: Vec<StageReport>,
    pub time_fraction_below: f64,
    pub time_fraction: f64,
    pub time_threshold: f64,
    pub dirac_distance: f64,
    pub exponent: f64,
    pub target_exponent: f64,
    pub exponent_rel_error: f64,
    pub exponent_curve: Vec<ExponentPoint>,
    pub cantor: CantorMeasure,
    pub passed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_map() -> CounterexampleMap {
        CounterexampleMap::build(CounterexampleParams::default()).unwrap()
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let base = CounterexampleParams::default();
        for bad in [
            CounterexampleParams { r: 1, ..base },
            CounterexampleParams { lambda: 1.0, ..base },
            CounterexampleParams { n0: 2, ..base },
            CounterexampleParams { n_max: 5, ..base },
            CounterexampleParams { lambda: 1.1, ..base },
        ] {
            assert!(CounterexampleMap::build(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn stage_five_alpha_and_periods() {
        let map = default_map();
        let s = map.stage(5).unwrap();
        // 1 / (2·36·(1/2 − 2/25)·2^31)
        let alpha = 1.0 / (2.0 * 36.0 * (0.5 - 2.0 / 25.0) * 2f64.powi(31));
        assert!((s.alpha.to_f64(map.ln_lambda()) - alpha).abs() / alpha < 1e-12);
        assert!((alpha - 1.54e-11).abs() < 0.01e-11);
        let n_star = (1.0 / (5.0 * 625.0 * alpha * 2500.0)).sqrt();
        assert_eq!(s.n_periods.exact, Some(n_star.round() as u64));
        assert_eq!(s.n_periods.exact, Some(91));
        assert_eq!(s.branch_count.exact, Some(182));
    }

    #[test]
    fn branch_fraction_removed() {
        let map = default_map();
        let s = map.stage(10).unwrap();
        assert!((1.0 - s.branch_fraction - 0.04).abs() < 1e-12);
    }

    #[test]
    fn h_is_affine_near_zero() {
        let map = default_map();
        assert_eq!(map.eval(0.0), 0.0);
        for x in [1e-300, 1e-10, 0.1, 0.37, 0.5] {
            assert_eq!(map.eval(x), 2.0 * x);
            assert_eq!(map.derivative(x), 2.0);
        }
        assert_eq!(map.eval(1.0), 0.0);
    }

    #[test]
    fn h_at_branch_left_endpoint_of_j5() {
        let map = default_map();
        let s = map.stage(5).unwrap();
        let (a, _) = map.branch_interval(5, 0).unwrap();
        let ll = map.ln_lambda();
        let g5 = (1.0 - 1.0 / 6.0) * 2f64.powi(-31);
        assert!((s.g_val.to_f64(ll) - g5).abs() / g5 < 1e-14);
        // f_25 at the branch start is 1/25
        let expected = g5 - s.alpha.to_f64(ll) * (0.5 - 1.0 / 25.0) + s.alpha.to_f64(ll) / 25.0;
        let got = map.eval(a);
        assert!((got - expected).abs() / expected < 1e-6, "{got} vs {expected}");
        // and this is the left end of λ^{-31} J_6
        let (j6_lo, _) = j_interval(6);
        assert!((got * 2f64.powi(31) - j6_lo).abs() < 1e-6);
    }

    #[test]
    fn tent_member_invariants() {
        let f = TentFamilyMember::new(25, 2);
        for u in [0.0, 0.5, 1.0, 3.0, -2.5] {
            assert!(f.eval(u).0.abs() < 1e-15, "f({u}) = {}", f.eval(u).0);
        }
        for i in 0..=1000 {
            let u = i as f64 / 1000.0;
            let (v, _) = f.eval(u);
            assert!((0.0..=0.5).contains(&v), "f({u}) = {v}");
        }
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(f.eval(f.branch_point(0, t)).1, 1.0);
            assert_eq!(f.eval(f.branch_point(1, t)).1, -1.0);
        }
    }

    #[test]
    fn tent_member_is_continuous_with_flat_joins() {
        let f = TentFamilyMember::new(9, 3);
        let eps = 1e-9;
        for knot in [1.0 / 9.0, 0.5 - 1.0 / 9.0, 0.5, 0.5 + 1.0 / 9.0, 1.0 - 1.0 / 9.0] {
            let (a, da) = f.eval(knot - eps);
            let (b, db) = f.eval(knot + eps);
            assert!((a - b).abs() < 1e-8, "value jump at {knot}");
            assert!((da - db).abs() < 1e-6, "slope jump at {knot}");
        }
        assert!(f.eval(1e-6).1.abs() < 1e-6);
        assert!(f.eval(0.5 + 1e-6).1.abs() < 1e-6);
    }

    #[test]
    fn smoothstep_properties() {
        for r in 1..5 {
            assert!(smoothstep(r, 0.0).abs() < 1e-15);
            assert!((smoothstep(r, 1.0) - 1.0).abs() < 1e-12);
            assert!((smoothstep(r, 0.5) - 0.5).abs() < 1e-12);
            for i in 1..100 {
                let t = i as f64 / 100.0;
                let fd = (smoothstep(r, t + 1e-7) - smoothstep(r, t - 1e-7)) / 2e-7;
                assert!((fd - smoothstep_deriv(r, t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parameter_conditions_hold() {
        let map = default_map();
        for s in map.stages() {
            let c = map.conditions(s.n).unwrap();
            assert!(c.landing_residual <= 1e-12, "{c:?}");
            assert!(c.size_residual <= 1e-12, "{c:?}");
            assert!((0.5..=2.0).contains(&c.size_proxy_times_n), "{c:?}");
            assert!(c.branch_fraction_error <= 1e-12);
        }
    }

    #[test]
    fn schedule_stage_five() {
        let map = default_map();
        let e = map.verify_schedule(5).unwrap();
        assert_eq!(e.transit_steps, 31);
        let (lo, hi) = e.landing;
        assert!((lo - (1.0 - 1.0 / 6.0 - 1.0 / 72.0)).abs() < 1e-15);
        assert!((hi - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
        assert!((hi - lo - 1.0 / (2.0 * 36.0)).abs() < 1e-15);
        assert!(map.verify_schedule(12).is_err());
    }

    #[test]
    fn schedule_every_stage_and_r3() {
        let map = default_map();
        for n in 5..12 {
            assert!(map.verify_schedule(n).unwrap().landing_error < 1e-12);
        }
        let map3 = CounterexampleMap::build(CounterexampleParams {
            r: 3,
            lambda: 2.0,
            n0: 5,
            n_max: 9,
        })
        .unwrap();
        for n in 5..9 {
            map3.verify_schedule(n).unwrap();
        }
    }

    #[test]
    fn cantor_measure_closed_forms() {
        let map = default_map();
        let at_n0 = map.cantor_measure(5).unwrap();
        let (lo, hi) = j_interval(5);
        assert!((at_n0.measure - (hi - lo) * (1.0 - 4.0 / 25.0)).abs() < 1e-15);
        assert!((at_n0.limit_fraction - 10.0 / 21.0).abs() < 1e-12);
        let m100 = map.cantor_measure(100).unwrap();
        assert!((m100.product - m100.telescoped).abs() < 1e-12);
        assert!((m100.product - m100.surviving_fraction).abs() < 1e-12);
        assert!((m100.product - m100.limit_fraction).abs() / m100.product <= 0.04);
    }

    #[test]
    fn exponent_partial_sums() {
        let map = default_map();
        let target = std::f64::consts::LN_2 / 2.0;
        // the construction's log corrections decay like log(n)/r^n
        let all = map.exponent_on_e(8).unwrap();
        assert!((all - target).abs() / target < 0.05, "{all}");
        let curve = map.exponent_curve(8).unwrap();
        let rel: Vec<f64> = curve.iter().map(|c| (c.exponent - target).abs()).collect();
        assert!(rel.windows(2).all(|w| w[1] < w[0]));
        let r3 = CounterexampleMap::build(CounterexampleParams {
            r: 3,
            lambda: 2.0,
            n0: 5,
            n_max: 9,
        })
        .unwrap();
        let e = r3.exponent_on_e(3).unwrap();
        let t3 = std::f64::consts::LN_2 / 3.0;
        assert!((e - t3).abs() / t3 < 0.10, "{e}");
    }

    #[test]
    fn stage_log_derivative_tracks_telescoped_term() {
        let map = default_map();
        let curve = map.exponent_curve(8).unwrap();
        let rel: Vec<f64> = curve
            .iter()
            .map(|c| (c.stage_ln_derivative - c.telescoped_stage_term).abs() / c.telescoped_stage_term)
            .collect();
        assert!(rel.windows(2).all(|w| w[1] < w[0]), "{rel:?}");
        assert!(*rel.last().unwrap() < 0.01);
    }

    #[test]
    fn symbolic_orbit_shape() {
        let map = default_map();
        let orbit = map.symbolic_orbit(3).unwrap();
        assert_eq!(orbit.len(), 32 + 64 + 128);
        let ll = map.ln_lambda();
        // every transit value sits in [0, 1/λ]
        for o in orbit.iter().filter(|o| o.value.exp != 0) {
            assert!(o.value.in_affine_piece(ll));
        }
    }

    #[test]
    fn h_maps_into_itself() {
        let map = default_map();
        for i in 0..=150_000 {
            let x = i as f64 * 1e-5;
            let y = map.eval(x);
            assert!((0.0..=1.5).contains(&y), "h({x}) = {y}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences_off_stages() {
        let map = default_map();
        for i in 0..400 {
            let x = 0.0005 + i as f64 * (1.4999 / 400.0);
            if map.stages().iter().any(|s| x >= s.j_lo - 1e-6 && x <= s.j_hi + 1e-6) {
                continue;
            }
            let h = 1e-7;
            let fd = (map.eval(x + h) - map.eval(x - h)) / (2.0 * h);
            let d = map.derivative(x);
            assert!((fd - d).abs() <= 1e-5 * d.abs().max(1.0), "x={x}: fd {fd} vs {d}");
        }
    }

    #[test]
    fn derivative_inside_first_stage_branches() {
        let map = default_map();
        let s = map.stage(5).unwrap();
        let expected = s.ln_branch_slope.exp();
        for idx in [0u64, 1, 57, 181] {
            let (a, b) = map.branch_interval(5, idx).unwrap();
            let mid = 0.5 * (a + b);
            let d = map.derivative(mid);
            assert!((d.abs() - expected).abs() / expected < 1e-9);
            let h = (b - a) * 1e-3;
            let fd = (map.eval(mid + h) - map.eval(mid - h)) / (2.0 * h);
            assert!((fd - d).abs() / expected < 1e-4, "branch {idx}: {fd} vs {d}");
        }
    }

    #[test]
    fn certify_default() {
        let map = default_map();
        let report = map.certify(u64::MAX).unwrap();
        assert!(report.passed, "{report:#?}");
        assert!(report.time_fraction >= 0.95);
        assert!(report.dirac_distance < 0.05);
        assert!(map.certify(100).is_err());
    }

    #[test]
    fn certify_three_stages_meets_time_threshold() {
        let map = default_map();
        let report = map.certify(32 + 64 + 128).unwrap();
        assert_eq!(report.stages_in_orbit, 3);
        assert!(report.time_fraction > report.time_threshold);
        assert!(report.dirac_distance < 0.05, "{}", report.dirac_distance);
    }
}
