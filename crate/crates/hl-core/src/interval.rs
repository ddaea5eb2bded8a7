//! Outward-rounded interval arithmetic.
//!
//! Every rigorous bound in the verifier is built from [`Interval`] values:
//! closed enclosures `[lo, hi]` of real numbers such that the exact result of
//! any arithmetic expression over reals drawn from the operand intervals is
//! guaranteed to lie inside the result interval.
//!
//! Outward rounding is implemented by perturbing round-to-nearest results to
//! the next representable value in each direction rather than by switching the
//! hardware rounding mode; this is portable and costs at most one ulp of extra
//! width per operation. Elementary functions are enclosed by monotone-branch
//! endpoint evaluation with a fixed two-ulp guard band (the underlying scalar
//! functions are assumed faithfully rounded).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from interval construction and arithmetic.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("non-finite endpoint produced or supplied: [{0}, {1}]")]
    NonFinite(f64, f64),
    #[error("division by an interval containing zero: [{0}, {1}]")]
    DivByZero(f64, f64),
    #[error("domain violation for {func}: argument [{lo}, {hi}]")]
    Domain {
        func: &'static str,
        lo: f64,
        hi: f64,
    },
    #[error("invalid decimal literal: {0}")]
    BadDecimal(String),
}

/// Step a finite float to the next representable value toward `+inf`.
#[inline]
pub fn next_up(x: f64) -> f64 {
    // Bit-level successor; total-order trick on the IEEE-754 representation.
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Step a finite float to the next representable value toward `-inf`.
#[inline]
pub fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Step `n` representable values toward `+inf` / `-inf`.
#[inline]
fn step_up(x: f64, n: u32) -> f64 {
    let mut y = x;
    for _ in 0..n {
        y = next_up(y);
    }
    y
}

#[inline]
fn step_down(x: f64, n: u32) -> f64 {
    let mut y = x;
    for _ in 0..n {
        y = next_down(y);
    }
    y
}

/// A closed enclosure `[lo, hi]` of a real number.
///
/// Invariant: `lo <= hi`, both finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Exact point interval `[x, x]` for a value that *is* the intended real.
    pub fn point(x: f64) -> Self {
        debug_assert!(x.is_finite());
        Interval { lo: x, hi: x }
    }

    /// Enclosure of a real known only to its nearest floating-point value:
    /// `[next_down(x), next_up(x)]` (width two ulps).
    pub fn from_nearest(x: f64) -> Self {
        debug_assert!(x.is_finite());
        Interval {
            lo: next_down(x),
            hi: next_up(x),
        }
    }

    /// Tight enclosure of a decimal literal such as `"0.1"` or `"-3.25e-2"`.
    ///
    /// Returns the width-zero interval when the decimal is exactly
    /// representable, otherwise the width-one-ulp interval between the two
    /// neighbouring floats.
    pub fn from_decimal_str(s: &str) -> Result<Self, IntervalError> {
        let x: f64 = s
            .trim()
            .parse()
            .map_err(|_| IntervalError::BadDecimal(s.to_string()))?;
        if !x.is_finite() {
            return Err(IntervalError::BadDecimal(s.to_string()));
        }
        // `x` is the round-to-nearest value of the decimal. Decide which side
        // the exact decimal lies on by comparing exactly via integers.
        match decimal_cmp(s, x) {
            Some(std::cmp::Ordering::Equal) => Ok(Interval::point(x)),
            Some(std::cmp::Ordering::Less) => Ok(Interval {
                lo: x,
                hi: next_up(x),
            }),
            Some(std::cmp::Ordering::Greater) => Ok(Interval {
                lo: next_down(x),
                hi: x,
            }),
            // Fall back to the safe two-ulp enclosure when exact comparison
            // overflows the integer scratch arithmetic.
            None => Ok(Interval::from_nearest(x)),
        }
    }

    /// Enclosure `[lo, hi]` from explicit endpoints.
    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(IntervalError::NonFinite(lo, hi));
        }
        Ok(Interval { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Magnitude bound: max |y| over y in the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Widen both endpoints outward by `pad >= 0`.
    pub fn widen(&self, pad: f64) -> Interval {
        debug_assert!(pad >= 0.0);
        Interval {
            lo: next_down(self.lo - pad),
            hi: next_up(self.hi + pad),
        }
    }

    fn check(lo: f64, hi: f64) -> Result<Interval, IntervalError> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Interval { lo, hi })
        } else {
            Err(IntervalError::NonFinite(lo, hi))
        }
    }

    pub fn neg(&self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn add(&self, b: &Interval) -> Result<Interval, IntervalError> {
        Interval::check(next_down(self.lo + b.lo), next_up(self.hi + b.hi))
    }

    pub fn sub(&self, b: &Interval) -> Result<Interval, IntervalError> {
        Interval::check(next_down(self.lo - b.hi), next_up(self.hi - b.lo))
    }

    pub fn mul(&self, b: &Interval) -> Result<Interval, IntervalError> {
        let p = [
            self.lo * b.lo,
            self.lo * b.hi,
            self.hi * b.lo,
            self.hi * b.hi,
        ];
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval::check(next_down(lo), next_up(hi))
    }

    pub fn div(&self, b: &Interval) -> Result<Interval, IntervalError> {
        if b.lo <= 0.0 && b.hi >= 0.0 {
            return Err(IntervalError::DivByZero(b.lo, b.hi));
        }
        let p = [
            self.lo / b.lo,
            self.lo / b.hi,
            self.hi / b.lo,
            self.hi / b.hi,
        ];
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval::check(next_down(lo), next_up(hi))
    }

    /// |a|: image of the interval under absolute value.
    pub fn abs(&self) -> Interval {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval {
                lo: 0.0,
                hi: self.mag(),
            }
        }
    }

    /// Integer power with even-power tightening at zero.
    pub fn powi(&self, n: i32) -> Result<Interval, IntervalError> {
        if n == 0 {
            return Ok(Interval::point(1.0));
        }
        if n < 0 {
            return Interval::point(1.0).div(&self.powi(-n)?);
        }
        if n % 2 == 1 || self.lo >= 0.0 {
            // Monotone on the whole line (odd) or on [0, inf).
            Interval::check(
                step_down(pow_rn(self.lo, n), 2),
                step_up(pow_rn(self.hi, n), 2),
            )
        } else if self.hi <= 0.0 {
            Interval::check(
                step_down(pow_rn(self.hi, n), 2),
                step_up(pow_rn(self.lo, n), 2),
            )
        } else {
            // Even power across zero: minimum is exactly 0.
            Interval::check(0.0, step_up(pow_rn(self.mag(), n), 2))
        }
    }

    /// Natural logarithm; requires `lo > 0`.
    pub fn ln(&self) -> Result<Interval, IntervalError> {
        if self.lo <= 0.0 {
            return Err(IntervalError::Domain {
                func: "ln",
                lo: self.lo,
                hi: self.hi,
            });
        }
        Interval::check(step_down(self.lo.ln(), 2), step_up(self.hi.ln(), 2))
    }

    /// Square root; requires `lo >= 0`.
    pub fn sqrt(&self) -> Result<Interval, IntervalError> {
        if self.lo < 0.0 {
            return Err(IntervalError::Domain {
                func: "sqrt",
                lo: self.lo,
                hi: self.hi,
            });
        }
        Interval::check(step_down(self.lo.sqrt(), 2), step_up(self.hi.sqrt(), 2))
    }

    pub fn exp(&self) -> Result<Interval, IntervalError> {
        Interval::check(step_down(self.lo.exp(), 2), step_up(self.hi.exp(), 2))
    }

    pub fn atan(&self) -> Interval {
        Interval {
            lo: step_down(self.lo.atan(), 2),
            hi: step_up(self.hi.atan(), 2),
        }
    }

    /// `x^p` for real exponent `p`; requires `lo > 0`.
    pub fn pow_real(&self, p: f64) -> Result<Interval, IntervalError> {
        if self.lo <= 0.0 {
            return Err(IntervalError::Domain {
                func: "pow_real",
                lo: self.lo,
                hi: self.hi,
            });
        }
        // Monotone increasing in x for p > 0, decreasing for p < 0.
        // powf composes exp/ln internally; use a 3-ulp guard band.
        let (a, b) = if p >= 0.0 {
            (self.lo.powf(p), self.hi.powf(p))
        } else {
            (self.hi.powf(p), self.lo.powf(p))
        };
        Interval::check(step_down(a, 3), step_up(b, 3))
    }

    /// Cotangent on a monotone branch: requires the interval strictly inside
    /// `(0, pi)`. Computed as cos/sin with interval division.
    pub fn cot(&self) -> Result<Interval, IntervalError> {
        if self.lo <= 0.0 || self.hi >= std::f64::consts::PI {
            return Err(IntervalError::Domain {
                func: "cot",
                lo: self.lo,
                hi: self.hi,
            });
        }
        let cos = Interval::check(step_down(self.hi.cos(), 2), step_up(self.lo.cos(), 2))?;
        // sin on (0, pi): increasing to pi/2, decreasing after.
        let half_pi = std::f64::consts::FRAC_PI_2;
        let sin_lo = step_down(self.lo.sin().min(self.hi.sin()), 2).max(0.0);
        let sin_hi = if self.lo <= half_pi && half_pi <= self.hi {
            1.0
        } else {
            step_up(self.lo.sin().max(self.hi.sin()), 2)
        };
        let sin = Interval::check(sin_lo, sin_hi)?;
        cos.div(&sin)
    }

    /// sin enclosure for arguments in `[0, pi]`.
    pub fn sin_0_pi(&self) -> Result<Interval, IntervalError> {
        if self.lo < 0.0 || self.hi > std::f64::consts::PI {
            return Err(IntervalError::Domain {
                func: "sin_0_pi",
                lo: self.lo,
                hi: self.hi,
            });
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        let lo = step_down(self.lo.sin().min(self.hi.sin()), 2).max(-1.0);
        let hi = if self.lo <= half_pi && half_pi <= self.hi {
            1.0
        } else {
            step_up(self.lo.sin().max(self.hi.sin()), 2).min(1.0)
        };
        Interval::check(lo, hi)
    }
}

/// Round-to-nearest integer power by repeated multiplication (binary
/// exponentiation kept simple; accumulated error is covered by the two-ulp
/// guard band per multiplication level).
fn pow_rn(x: f64, n: i32) -> f64 {
    x.powi(n)
}

/// Compare the exact decimal value written in `s` with the exact rational
/// value of the float `x`. Returns the ordering of `x` relative to the
/// decimal (`Less` means `x <` decimal), or `None` when the comparison does
/// not fit the integer scratch space.
fn decimal_cmp(s: &str, x: f64) -> Option<std::cmp::Ordering> {
    // Parse s as sign * digits * 10^e10.
    let t = s.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (mant_str, exp_str) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], &t[i + 1..]),
        None => (t, ""),
    };
    let e_in: i64 = if exp_str.is_empty() {
        0
    } else {
        exp_str.parse().ok()?
    };
    let (int_part, frac_part) = match mant_str.find('.') {
        Some(i) => (&mant_str[..i], &mant_str[i + 1..]),
        None => (mant_str, ""),
    };
    let digits: String = format!("{int_part}{frac_part}");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let d: u128 = digits.parse().ok()?;
    let e10 = e_in - frac_part.len() as i64;
    // decimal = sign * d * 10^e10 ; float x = m2 * 2^e2 exactly.
    if x == 0.0 {
        return Some(if d == 0 {
            std::cmp::Ordering::Equal
        } else if neg {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Less
        });
    }
    if (x < 0.0) != neg {
        return Some(if x < 0.0 {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        });
    }
    // Work with magnitudes; flip ordering at the end for negatives.
    let bits = x.abs().to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (m2, e2): (u128, i64) = if raw_exp == 0 {
        (frac as u128, -1074)
    } else {
        ((frac | (1 << 52)) as u128, raw_exp - 1075)
    };
    // Compare m2 * 2^e2 with d * 10^e10 = d * 2^e10 * 5^e10.
    // Bring both to a common integer form; bail out on overflow.
    let mut lhs = m2; // float magnitude numerator
    let mut rhs = d; // decimal magnitude numerator
    let mut p2 = e2;
    let mut p10 = e10;
    // Fold 10^e10 into powers of 2 and 5: rhs * 2^p10 * 5^p10.
    // Move all powers of two onto one side.
    // lhs * 2^p2  vs  rhs * 2^p10 * 5^p10
    let shift = p2 - p10;
    p2 = 0;
    p10 = 0;
    let _ = (p2, p10);
    if shift > 0 {
        lhs = lhs.checked_shl(shift.try_into().ok()?)?;
    } else if shift < 0 {
        rhs = rhs.checked_shl((-shift).try_into().ok()?)?;
    }
    // Remaining factor 5^e10 on the decimal side.
    let mut five: u128 = 1;
    let e10a = e10.unsigned_abs();
    for _ in 0..e10a {
        five = five.checked_mul(5)?;
    }
    if e10 >= 0 {
        rhs = rhs.checked_mul(five)?;
    } else {
        lhs = lhs.checked_mul(five)?;
    }
    let ord = lhs.cmp(&rhs);
    Some(if neg { ord.reverse() } else { ord })
}

/// A rectangular matrix of intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Interval>, // row-major
}

impl IntervalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntervalMatrix {
            rows,
            cols,
            entries: vec![Interval::point(0.0); rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Interval {
        self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Interval) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn matmul(&self, b: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
        assert_eq!(self.cols, b.rows, "dimension mismatch");
        let mut out = IntervalMatrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for j in 0..b.cols {
                let mut acc = Interval::point(0.0);
                for k in 0..self.cols {
                    acc = acc.add(&self.get(i, k).mul(&b.get(k, j))?)?;
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> IntervalMatrix {
        let mut out = IntervalMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn trace(&self) -> Result<Interval, IntervalError> {
        assert_eq!(self.rows, self.cols, "trace needs a square matrix");
        let mut acc = Interval::point(0.0);
        for i in 0..self.rows {
            acc = acc.add(&self.get(i, i))?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_zero_is_exact() {
        let z = Interval::from_decimal_str("0").unwrap();
        assert_eq!(z.lo, 0.0);
        assert_eq!(z.hi, 0.0);
    }

    #[test]
    fn pi_widens_to_at_most_two_ulps() {
        let p = Interval::from_nearest(std::f64::consts::PI);
        assert!(p.lo < std::f64::consts::PI && std::f64::consts::PI < p.hi);
        assert!(p.width() <= 2.0 * (next_up(std::f64::consts::PI) - std::f64::consts::PI));
    }

    #[test]
    fn decimal_tenth_has_one_ulp_width() {
        let t = Interval::from_decimal_str("0.1").unwrap();
        // The nearest float to 0.1 is slightly above the real 0.1.
        assert_eq!(t.hi, 0.1);
        assert_eq!(t.lo, next_down(0.1));
        assert_eq!(t.width(), 0.1 - next_down(0.1));
    }

    #[test]
    fn add_basic() {
        let a = Interval::new(1.0, 2.0).unwrap();
        let b = Interval::new(3.0, 4.0).unwrap();
        let c = a.add(&b).unwrap();
        assert!(c.contains(4.0) && c.contains(6.0));
        assert!(c.lo <= 4.0 && c.hi >= 6.0);
    }

    #[test]
    fn mul_sign_cases() {
        let a = Interval::new(-1.0, 2.0).unwrap();
        let b = Interval::new(3.0, 4.0).unwrap();
        let c = a.mul(&b).unwrap();
        assert!(c.lo <= -4.0 && c.hi >= 8.0);
    }

    #[test]
    fn div_third_is_tight() {
        let one = Interval::point(1.0);
        let three = Interval::point(3.0);
        let t = one.div(&three).unwrap();
        assert!(t.contains(1.0 / 3.0));
        assert!(t.width() <= 2.0 * (next_up(1.0 / 3.0) - (1.0 / 3.0)));
    }

    #[test]
    fn div_by_zero_rejected() {
        let a = Interval::point(1.0);
        let b = Interval::new(-1.0, 1.0).unwrap();
        assert!(matches!(a.div(&b), Err(IntervalError::DivByZero(_, _))));
    }

    #[test]
    fn ln_one_contains_zero() {
        let l = Interval::point(1.0).ln().unwrap();
        assert!(l.contains(0.0));
        assert!(l.width() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn sqrt_four_nine() {
        let s = Interval::new(4.0, 9.0).unwrap().sqrt().unwrap();
        assert!(s.contains(2.0) && s.contains(3.0));
        assert!(s.lo <= 2.0 && s.hi >= 3.0);
    }

    #[test]
    fn cot_pi_over_six_encloses_sqrt3() {
        let x = Interval::point(std::f64::consts::FRAC_PI_6);
        let c = x.cot().unwrap();
        assert!(c.contains(3.0_f64.sqrt()), "cot(pi/6) = sqrt(3): {c:?}");
        assert!(c.width() < 1e-14);
    }

    #[test]
    fn powi_even_across_zero() {
        let a = Interval::new(-2.0, 1.0).unwrap();
        let p = a.powi(2).unwrap();
        assert!(p.lo <= 0.0 && p.hi >= 4.0);
        assert!(p.lo >= -1e-300, "even power is nonnegative up to rounding");
    }

    #[test]
    fn matrix_mul_contains_scalar_product() {
        let mut a = IntervalMatrix::zeros(2, 2);
        a.set(0, 0, Interval::point(1.0));
        a.set(0, 1, Interval::point(2.0));
        a.set(1, 0, Interval::point(3.0));
        a.set(1, 1, Interval::point(4.0));
        let b = a.matmul(&a).unwrap();
        assert!(b.get(0, 0).contains(7.0));
        assert!(b.get(1, 1).contains(22.0));
        assert!(b.trace().unwrap().contains(29.0));
    }
}
