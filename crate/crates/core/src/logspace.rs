//! Streaming log-sum-exp.

use crate::scalar::Scalar;

/// Accumulates `log Σ exp(v_i)` without overflow.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp<T> {
    max: T,
    scaled_sum: T,
    count: usize,
}

impl<T: Scalar> Default for LogSumExp<T> {
    fn default() -> Self {
        Self {
            max: T::neg_infinity(),
            scaled_sum: T::zero(),
            count: 0,
        }
    }
}

impl<T: Scalar> LogSumExp<T> {
    pub fn push(&mut self, v: T) {
        self.count += 1;
        if v == T::neg_infinity() {
            return;
        }
        if v > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - v).exp() + T::one();
            self.max = v;
        } else {
            self.scaled_sum = self.scaled_sum + (v - self.max).exp();
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `log Σ exp(v_i)`; `-∞` when empty.
    pub fn value(&self) -> T {
        if self.scaled_sum == T::zero() {
            return T::neg_infinity();
        }
        self.max + self.scaled_sum.ln()
    }

    /// `log((1/count) Σ exp(v_i))`.
    pub fn log_mean(&self) -> T {
        self.value() - T::from_usize_lossy(self.count.max(1)).ln()
    }
}

pub fn log_sum_exp<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = LogSumExp::default();
    for v in values {
        acc.push(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_sum() {
        let v = [0.1_f64, -2.0, 3.5, 1.0];
        let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(v) - direct).abs() < 1e-14);
    }

    #[test]
    fn no_overflow() {
        let v = [1000.0_f64, 1000.0, 1000.0];
        assert!((log_sum_exp(v) - (1000.0 + 3f64.ln())).abs() < 1e-12);
        let mut acc = LogSumExp::default();
        for x in v {
            acc.push(x);
        }
        assert!((acc.log_mean() - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn handles_negative_infinity() {
        assert_eq!(log_sum_exp::<f64>([]), f64::NEG_INFINITY);
        assert!((log_sum_exp([f64::NEG_INFINITY, 0.0]) - 0.0).abs() < 1e-15);
    }
}
