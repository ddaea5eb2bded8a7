//! The explicit far-field parts of the approximate steady state.
//!
//! The profile pair is built from two analytic ingredients, both odd:
//!
//! - the power-tail bump `F_a(x) = x^5 / (1 + |x|^{5+a})`, which behaves like
//!   `x^5` near the origin and `|x|^{-a}` in the far field, with exact
//!   derivatives of every order up to 24 via a polynomial recursion, a
//!   10-term power series with rigorous remainder for `x >= 9`, and
//!   per-interval derivative bounds;
//! - the rational normalizer `G_{s,r}(x) = s x / (1 + (r x)^2)`, whose
//!   derivatives and Hilbert transform are closed-form.
//!
//! `omega_b = b_om F_{a_om} + G_{s_om, r_om}` and
//! `v_b = b_v F_{a_v} + G_{s_v, r_v}`, with `a_v = 2 a_om` so that the decay
//! rates of the two fields are compatible.

use crate::grid::{AdaptiveMesh, PiecewiseBound};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("exponent a = {0} outside (0,1)")]
    BadExponent(f64),
    #[error("derivative order {0} beyond table order {1}")]
    OrderTooHigh(u32, u32),
    #[error("series requires x >= 9 and k <= 20 (got x = {x}, k = {k})")]
    SeriesDomain { x: f64, k: u32 },
    #[error("far bound requires r*x >= 1e10 and k <= 4 (got r*x = {rx}, k = {k})")]
    FarBoundDomain { rx: f64, k: u32 },
    #[error("derivative of F_a of order {0} > 10 does not exist at x = 0")]
    NotDifferentiableAtZero(u32),
}

/// Highest derivative order carried by the coefficient tables.
pub const MAX_ORDER: u32 = 24;
/// Recursion evaluation is overflow-safe up to this |x|.
pub const RECURSION_X_MAX: f64 = 1e5;
/// The power series is valid from this x on.
pub const SERIES_X_MIN: f64 = 9.0;

/// Parameters of the explicit profile parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplicitParams {
    pub b_om: f64,
    pub a_om: f64,
    pub s_om: f64,
    pub r_om: f64,
    pub b_v: f64,
    pub a_v: f64,
    pub s_v: f64,
    pub r_v: f64,
}

impl ExplicitParams {
    /// Reference parameter set of the converged construction.
    pub fn standard() -> Self {
        let a_om = 1.00043212 / 3.0;
        ExplicitParams {
            b_om: 1.37954,
            a_om,
            s_om: 0.6734,
            r_om: 1.3468,
            b_v: 1.7711,
            a_v: 2.0 * a_om,
            s_v: 1.0101,
            r_v: 1.0101,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for &a in &[self.a_om, self.a_v] {
            if !(a > 0.0 && a < 1.0) {
                return Err(ProfileError::BadExponent(a));
            }
        }
        Ok(())
    }
}

/// Coefficient tables for the derivatives of `F_a`.
///
/// `d^k F_a = sum_j g^(j)(x^{5+a}) x^{ja+5-k} P_{j,k}(x)` with
/// `g(y) = 1/(1+y)`, where the polynomials obey
/// `P_{j,k} = x^5 (5+a) P_{j-1,k-1} + (ja + 6 - k) P_{j,k-1} + x d_x P_{j,k-1}`
/// from `P_{0,0} = 1`. `P_{0,k} = 5!/(5-k)!` and `P_{j,k}` for `j >= 1` is a
/// multiple of `x^5`.
#[derive(Debug, Clone)]
pub struct FaDerivTable {
    pub a: f64,
    pub max_k: u32,
    /// `polys[k][j]` = dense ascending coefficients of `P_{j,k}`.
    polys: Vec<Vec<Vec<f64>>>,
    /// Same with absolute coefficients, for upper bounds.
    abs_polys: Vec<Vec<Vec<f64>>>,
}

impl FaDerivTable {
    pub fn new(a: f64, max_k: u32) -> Result<Self, ProfileError> {
        if !(a > 0.0 && a < 1.0) {
            return Err(ProfileError::BadExponent(a));
        }
        let kk = max_k as usize;
        let mut polys: Vec<Vec<Vec<f64>>> = Vec::with_capacity(kk + 1);
        polys.push(vec![vec![1.0]]); // P_{0,0} = 1
        for k in 1..=kk {
            let prev = &polys[k - 1];
            let mut row: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
            for j in 0..=k {
                let mut p: Vec<f64> = Vec::new();
                // x^5 (5+a) P_{j-1,k-1}
                if j >= 1 && j - 1 < prev.len() {
                    let q = &prev[j - 1];
                    p.resize(q.len() + 5, 0.0);
                    for (d, &c) in q.iter().enumerate() {
                        p[d + 5] += (5.0 + a) * c;
                    }
                }
                if j < prev.len() {
                    let q = &prev[j];
                    if p.len() < q.len() {
                        p.resize(q.len(), 0.0);
                    }
                    let f = j as f64 * a + 6.0 - k as f64;
                    for (d, &c) in q.iter().enumerate() {
                        // (ja + 6 - k) P_{j,k-1} + x d_x P_{j,k-1}
                        p[d] += (f + d as f64) * c;
                    }
                }
                row.push(p);
            }
            polys.push(row);
        }
        let abs_polys = polys
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| p.iter().map(|c| c.abs()).collect())
                    .collect()
            })
            .collect();
        Ok(FaDerivTable {
            a,
            max_k,
            polys,
            abs_polys,
        })
    }

    /// Exact `k`-th derivative via the recursion tables. Overflow-safe for
    /// `|x| <= 1e5`; odd extension for `x < 0`.
    pub fn eval(&self, x: f64, k: u32) -> Result<f64, ProfileError> {
        if k > self.max_k {
            return Err(ProfileError::OrderTooHigh(k, self.max_k));
        }
        if x < 0.0 {
            let v = self.eval(-x, k)?;
            return Ok(if k % 2 == 0 { -v } else { v });
        }
        if x == 0.0 {
            return match k {
                5 => Ok(120.0),
                _ if k <= 10 => Ok(0.0),
                _ => Err(ProfileError::NotDifferentiableAtZero(k)),
            };
        }
        let a = self.a;
        let y = x.powf(5.0 + a);
        let q = 1.0 / (1.0 + y);
        let z = y * q; // in (0,1)
        let u = 1.0 / x;
        let row = &self.polys[k as usize];
        let mut sum = 0.0;
        let mut fact = 1.0; // j!
        let x5mk = x.powi(5 - k as i32);
        let mut zj = 1.0;
        for (j, p) in row.iter().enumerate() {
            if j > 0 {
                fact *= j as f64;
                zj *= z;
            }
            if p.is_empty() {
                continue;
            }
            // sum_d c_d u^{5j-d}, exponents nonnegative since deg <= 5j.
            let mut s = 0.0;
            for (d, &c) in p.iter().enumerate() {
                let e = 5 * j as i32 - d as i32;
                s += c * u.powi(e);
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * fact * q * x5mk * zj * s;
        }
        Ok(sum)
    }

    /// Series coefficient `C_{i,k} = prod_{j<k} ((5+a)i + a + j)`.
    fn c_ik(&self, i: u32, k: u32) -> f64 {
        let mut c = 1.0;
        for j in 0..k {
            c *= (5.0 + self.a) * i as f64 + self.a + j as f64;
        }
        c
    }

    /// Truncated power series for `x >= 9`, `k <= 20`:
    /// `d^k F_a = sum_{i=0}^{9} (-1)^{i+k} C_{i,k} x^{-(5+a)i - a - k} + Err`,
    /// `|Err| <= x^{-30-a} / (1 - x^{-3})`. Returns `(value, |Err| bound)`.
    pub fn eval_series(&self, x: f64, k: u32) -> Result<(f64, f64), ProfileError> {
        if x < SERIES_X_MIN || k > 20 {
            return Err(ProfileError::SeriesDomain { x, k });
        }
        let a = self.a;
        let mut v = 0.0;
        for i in 0..10u32 {
            let sign = if (i + k) % 2 == 0 { 1.0 } else { -1.0 };
            v += sign * self.c_ik(i, k) * x.powf(-(5.0 + a) * i as f64 - a - k as f64);
        }
        let err = x.powf(-30.0 - a) / (1.0 - x.powi(-3));
        Ok((v, err))
    }

    /// Tail constant `C(x0, a, k)` such that
    /// `|d^k (F_a - x^{-a})| <= C(x0,a,k) x^{-5-2a-k}` for `x >= x0 >= 9`.
    pub fn c_tail(&self, x0: f64, k: u32) -> f64 {
        let a = self.a;
        let mut c = 0.0;
        for i in 1..10u32 {
            c += self.c_ik(i, k) * x0.powf(-(5.0 + a) * (i - 1) as f64);
        }
        c + x0.powf(-25.0 + a + k as f64) / (1.0 - x0.powi(-3))
    }

    /// Recursion below 9, series beyond (both valid on the overlap).
    pub fn eval_auto(&self, x: f64, k: u32) -> Result<f64, ProfileError> {
        if x.abs() <= SERIES_X_MIN || k > 20 {
            self.eval(x, k)
        } else if x < 0.0 {
            let v = self.eval_auto(-x, k)?;
            Ok(if k % 2 == 0 { -v } else { v })
        } else {
            Ok(self.eval_series(x, k)?.0)
        }
    }

    /// Upper bound of `|d^k F_a|` on `[lo, hi]` (`0 <= lo < hi`) by taking
    /// each monotone factor at its worst endpoint:
    /// `|d^k F_a| <= sum_j j! (1+y)^{-(j+1)}|_{x=lo} * x^{ja+5-k}|_{worst} *
    /// |P|_{j,k}(hi)`.
    /// Evaluated in log space (safe for large `hi`) and inflated by 1e-8
    /// relative to absorb the evaluation rounding. Returns infinity when the
    /// bound genuinely diverges (first cell, k > 10).
    pub fn abs_bound_on(&self, lo: f64, hi: f64, k: u32) -> f64 {
        debug_assert!(k <= self.max_k);
        let a = self.a;
        if lo <= 0.0 && k > 10 {
            return f64::INFINITY;
        }
        let row = &self.abs_polys[k as usize];
        let ln_lo = if lo > 0.0 { lo.ln() } else { f64::NEG_INFINITY };
        let ln_hi = hi.ln();
        // ln(1 + lo^{5+a}), stable for all sizes.
        let ln1y = if lo > 0.0 {
            let e = (5.0 + a) * ln_lo;
            if e > 40.0 {
                e + (-e).exp().ln_1p()
            } else {
                lo.powf(5.0 + a).ln_1p()
            }
        } else {
            0.0
        };
        let mut total = 0.0;
        let mut ln_fact = 0.0;
        for (j, p) in row.iter().enumerate() {
            if j > 0 {
                ln_fact += (j as f64).ln();
            }
            if p.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for (d, &c) in p.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                // Total exponent on x from the power factor and the monomial;
                // x^{e_tot} is monotone, so take the worst endpoint; the
                // 1/(1+y)^{j+1} factor is decreasing, so take `lo`.
                let e_tot = j as f64 * a + 5.0 - k as f64 + d as f64;
                let ln_x_pow = if e_tot >= 0.0 {
                    e_tot * ln_hi
                } else {
                    e_tot * ln_lo
                };
                if !ln_x_pow.is_finite() {
                    return f64::INFINITY;
                }
                let ln_term = c.ln() + ln_fact + ln_x_pow - (j as f64 + 1.0) * ln1y;
                s += ln_term.exp();
            }
            total += s;
        }
        total * (1.0 + 1e-8)
    }

    /// Per-interval bounds for `d^k F_a`, `k = 0..=max_k`, on a mesh.
    ///
    /// The two highest orders use the monotone-factor bound on every
    /// interval; lower orders combine exact endpoint evaluations with the
    /// midpoint-interpolation inequality
    /// `|g(x) - max(endpoints)| <= h^2/8 * sup |g''|`.
    pub fn bounds_on_mesh(
        &self,
        mesh: &Arc<AdaptiveMesh>,
        max_k: u32,
    ) -> Result<Vec<PiecewiseBound>, ProfileError> {
        assert!(max_k + 2 <= self.max_k + 2 && max_k <= self.max_k);
        let n = mesh.n_intervals();
        let mut out: Vec<PiecewiseBound> = vec![PiecewiseBound::constant(mesh, 0.0); max_k as usize + 1];
        for k in (0..=max_k).rev() {
            let mut low = Vec::with_capacity(n);
            let mut up = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = (mesh.nodes[i], mesh.nodes[i + 1]);
                let m = self.abs_bound_on(a, b, k);
                let (lo_i, hi_i) = if k + 2 <= max_k && out[(k + 2) as usize].up[i].is_finite() {
                    // Interpolation from endpoint values + curvature bound.
                    let va = self.eval_checked(a, k);
                    let vb = self.eval_checked(b, k);
                    let pad = (b - a).powi(2) / 8.0
                        * abs_cell(&out[(k + 2) as usize], i)
                        + 1e-13 * (va.abs() + vb.abs());
                    let lo = (va.min(vb) - pad).max(-m);
                    let hi = (va.max(vb) + pad).min(m);
                    (lo, hi)
                } else {
                    (-m, m)
                };
                low.push(lo_i);
                up.push(hi_i);
            }
            out[k as usize] = PiecewiseBound {
                mesh: Arc::clone(mesh),
                low,
                up,
            };
        }
        Ok(out)
    }

    fn eval_checked(&self, x: f64, k: u32) -> f64 {
        if x.abs() <= RECURSION_X_MAX {
            self.eval(x, k).unwrap_or(f64::NAN)
        } else {
            self.eval_series(x, k).map(|(v, _)| v).unwrap_or(f64::NAN)
        }
    }
}

fn abs_cell(b: &PiecewiseBound, i: usize) -> f64 {
    b.low[i].abs().max(b.up[i].abs())
}

/// `k`-th derivative of `G_{s,r}(x) = s x / (1 + (rx)^2)`.
///
/// With `G(y) = y/(1+y^2) = Re[(y - i)^{-1}]`-type partial fractions,
/// `G^(k)(y) = (-1)^k k! (1+y^2)^{-(k+1)/2} cos((k+1) atan2(1, y))`, and
/// `G_{s,r}^(k)(x) = s r^{k-1} G^(k)(r x)`.
pub fn eval_rational(s: f64, r: f64, x: f64, k: u32) -> f64 {
    let y = r * x;
    let mut fact = 1.0;
    for m in 1..=k {
        fact *= m as f64;
    }
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    if x == 0.0 {
        // cos((k+1) pi/2) exactly: 0 for even k (odd function), +-1 otherwise.
        let c = match (k + 1) % 4 {
            0 => 1.0,
            2 => -1.0,
            _ => return 0.0,
        };
        return s * r.powi(k as i32 - 1) * sign * fact * c;
    }
    let g_k = sign * fact * (1.0 + y * y).powf(-((k as f64 + 1.0) / 2.0))
        * ((k as f64 + 1.0) * (1.0_f64).atan2(y)).cos();
    s * r.powi(k as i32 - 1) * g_k
}

/// Far-field bound `|d^k G_{s,r}| <= (s/r) r^k (1 + eps2) k! (rx)^{-k-1}`
/// with `eps2 = 0.02`, valid for `r x >= 1e10`, `k <= 4`.
pub fn rational_far_bound(s: f64, r: f64, x: f64, k: u32) -> Result<f64, ProfileError> {
    let rx = r * x;
    if rx < 1e10 || k > 4 {
        return Err(ProfileError::FarBoundDomain { rx, k });
    }
    let mut fact = 1.0;
    for m in 1..=k {
        fact *= m as f64;
    }
    Ok((s / r) * r.powi(k as i32) * 1.02 * fact * rx.powi(-(k as i32) - 1))
}

/// Explicit profile: parameters plus cached derivative tables.
#[derive(Debug, Clone)]
pub struct ExplicitProfile {
    pub params: ExplicitParams,
    pub fa_om: FaDerivTable,
    pub fa_v: FaDerivTable,
}

impl ExplicitProfile {
    pub fn new(params: ExplicitParams) -> Result<Self, ProfileError> {
        params.validate()?;
        Ok(ExplicitProfile {
            fa_om: FaDerivTable::new(params.a_om, MAX_ORDER)?,
            fa_v: FaDerivTable::new(params.a_v, MAX_ORDER)?,
            params,
        })
    }

    pub fn standard() -> Self {
        Self::new(ExplicitParams::standard()).expect("standard parameters are valid")
    }

    /// `d^k omega_b(x) = b_om d^k F_{a_om} + d^k G_{s_om, r_om}`.
    pub fn omega_b(&self, x: f64, k: u32) -> Result<f64, ProfileError> {
        Ok(self.params.b_om * self.fa_om.eval_auto(x, k)?
            + eval_rational(self.params.s_om, self.params.r_om, x, k))
    }

    /// `d^k v_b(x) = b_v d^k F_{a_v} + d^k G_{s_v, r_v}`.
    pub fn v_b(&self, x: f64, k: u32) -> Result<f64, ProfileError> {
        Ok(self.params.b_v * self.fa_v.eval_auto(x, k)?
            + eval_rational(self.params.s_v, self.params.r_v, x, k))
    }
}
