//! Rigorous verification suite: per-interval quadrature error budgets,
//! weighted-integral bounds with far-field tails, the third-derivative
//! velocity bound, the optimal-constant Schatten-trace bound, far-field
//! residual decay coefficients, and the inequality checklist.
//!
//! The budgets in this module differ from the per-point budgets of the
//! velocity evaluator in one key way: each budget is valid for *every* point
//! of a mesh interval simultaneously. This is achieved by classifying source
//! cells into index sets with interval-uniform subsets and supersets
//! (`J_i^l ⊆ J_i(x) ⊆ J_i^u`), so a single sweep certifies the whole mesh.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{
    cost_functions_with, damping_with, eval_weights, ode_functions, EnergyError, ProfileEval,
    StabilityParams, WeightSet,
};
use crate::grid::{AdaptiveMesh, GridError, PiecewiseBound};
use crate::hilbert::{
    df_comb, df_inv, df_log, GaussRule, HilbertError, SplineVelocity, SINGULAR_WIDTHS,
    TAYLOR_DELTA,
};
use crate::interval::{Interval, IntervalError, IntervalMatrix};
use crate::profile::ExplicitParams;
use crate::spline::{QuinticSpline, SplineError};

/// Hardy-type constant for the weight exponent `p = 3`: `4/(2p-1)^2`.
pub const HARDY_P3: f64 = 4.0 / 25.0;
/// Hardy-type constant for the weight exponent `p = 2`: `4/(2p-1)^2`.
pub const HARDY_P2: f64 = 4.0 / 9.0;
/// Hardy-type constant for the weight exponent `p = 5/3`: `4/(2p-1)^2`.
pub const HARDY_P53: f64 = 36.0 / 49.0;

/// `4/(2p-1)^2`: the sharp constant in the weighted Hardy inequality
/// `|| f x^{-p} ||_2^2 <= 4/(2p-1)^2 || f_x x^{-p+1} ||_2^2`.
pub fn hardy_constant(p: f64) -> f64 {
    4.0 / ((2.0 * p - 1.0) * (2.0 * p - 1.0))
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error("tail bound requires decay exponent > 1, got {0}")]
    BadTailExponent(f64),
    #[error("trapezoid rule 1 requires weight exponent > 1, got {0}")]
    BadWeightExponent(f64),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("singular damping matrix: 1 + s ||g||^2 = {0}")]
    SingularD(f64),
    #[error("matrix dimension mismatch")]
    Dimension,
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Per-interval quadrature budgets for the velocity integrals
// ---------------------------------------------------------------------------

/// Which velocity derivative the budget certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VelTarget {
    U,
    Ux,
    Uxx,
    Uxxx,
}

impl VelTarget {
    /// Derivative order of the integrand after integration by parts.
    pub fn integrand_order(self) -> usize {
        match self {
            VelTarget::U | VelTarget::Ux => 0,
            VelTarget::Uxx => 1,
            VelTarget::Uxxx => 2,
        }
    }

    pub fn order(self) -> u32 {
        match self {
            VelTarget::U => 0,
            VelTarget::Ux => 1,
            VelTarget::Uxx => 2,
            VelTarget::Uxxx => 3,
        }
    }

    fn log_kernel(self) -> bool {
        self == VelTarget::U
    }

    /// Whether the paired-kernel cancellation refinement applies.
    fn paired_cancellation(self) -> bool {
        matches!(self, VelTarget::Ux | VelTarget::Uxxx)
    }

    fn taylor_used(self) -> bool {
        matches!(self, VelTarget::U | VelTarget::Uxx)
    }
}

/// Source-cell classification for one target interval `[x_i, x_{i+1}]`:
/// interval-uniform subsets (`*_lower`) and supersets (`*_upper`) of the
/// pointwise index sets. `j1` is the near-singular band `|x - x_j| <= m h`,
/// `j3` its reflection `|x + x_j| <= m h`, `jtl` the Taylor-expansion band,
/// and `j5_lower` the certified intersection of the two nonsingular bands
/// where the paired-kernel cancellation may be used.
#[derive(Debug, Clone, Default)]
pub struct RegimeSets {
    pub j1_lower: Vec<usize>,
    pub j1_upper: Vec<usize>,
    pub j3_lower: Vec<usize>,
    pub j3_upper: Vec<usize>,
    pub jtl_lower: Vec<usize>,
    pub jtl_upper: Vec<usize>,
    pub j5_lower: Vec<usize>,
}

impl RegimeSets {
    pub fn build(mesh: &AdaptiveMesh, i: usize, target: VelTarget) -> Self {
        let n = mesh.n_intervals();
        let nodes = &mesh.nodes;
        let mh = SINGULAR_WIDTHS * mesh.width(i);
        let delta = TAYLOR_DELTA;
        let (xi, xi1) = (nodes[i], nodes[i + 1]);
        let mut sets = RegimeSets::default();
        let mut in_j1u = vec![false; n];
        let mut in_j3u = vec![false; n];
        for j in 0..n {
            let dm0 = (xi - nodes[j]).abs();
            let dm1 = (xi1 - nodes[j]).abs();
            if dm0.max(dm1) <= mh {
                sets.j1_lower.push(j);
            }
            if dm0.min(dm1) <= mh {
                sets.j1_upper.push(j);
                in_j1u[j] = true;
            }
            let dp0 = xi + nodes[j];
            let dp1 = xi1 + nodes[j];
            if dp0.max(dp1) <= mh {
                sets.j3_lower.push(j);
            }
            if dp0.min(dp1) <= mh {
                sets.j3_upper.push(j);
                in_j3u[j] = true;
            }
            let (tl_l, tl_u) = match target {
                VelTarget::U => (
                    nodes[j + 1] <= delta * xi || xi1 <= delta * nodes[j],
                    nodes[j + 1] <= delta * xi1 || xi <= delta * nodes[j],
                ),
                VelTarget::Uxx => (
                    nodes[j + 1] <= delta * xi,
                    nodes[j + 1] <= delta * xi1,
                ),
                _ => (false, false),
            };
            if tl_l {
                sets.jtl_lower.push(j);
            }
            if tl_u {
                sets.jtl_upper.push(j);
            }
        }
        if target.paired_cancellation() {
            for j in 0..n {
                if !in_j1u[j] && !in_j3u[j] {
                    sets.j5_lower.push(j);
                }
            }
        }
        sets
    }
}

/// Per-interval quadrature error budgets for one velocity derivative,
/// together with the chosen truncation order of the error lemma.
#[derive(Debug, Clone)]
pub struct QuadBudget {
    pub mesh: Arc<AdaptiveMesh>,
    pub target: VelTarget,
    /// `budgets[i]` bounds the quadrature error of the evaluator for every
    /// `x` in mesh interval `i` simultaneously.
    pub budgets: Vec<f64>,
    /// Truncation order `K_1` minimizing the error bound, per interval.
    pub orders: Vec<usize>,
}

/// Gauss error lemma: given `df(k) >= sup |d^{2k}F/dt^{2k}|`, bound the error
/// of the 8-point rule on `[0,1]`, minimized over the truncation order, and
/// return the minimizing order.
fn e_gq_tracked(rule: &GaussRule, df: &dyn Fn(usize) -> f64) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut best_k = 1;
    let mut cache = [f64::NAN; 9];
    let mut dfc = |kk: usize, cache: &mut [f64; 9]| -> f64 {
        if cache[kk].is_nan() {
            cache[kk] = df(kk);
        }
        cache[kk]
    };
    for k1 in 1..=8usize {
        let mut e = 0.0;
        for k in 1..k1 {
            e += dfc(k, &mut cache) * rule.eps[k]
                / (crate::hilbert::factorial(2 * k) * 2f64.powi(2 * k as i32 + 1));
        }
        e += dfc(k1, &mut cache) / crate::hilbert::factorial(2 * k1)
            * (1.0 / ((2.0 * k1 as f64 + 1.0) * 2f64.powi(2 * k1 as i32))
                + rule.moments[k1] / 2f64.powi(2 * k1 as i32 + 1));
        if e < best {
            best = e;
            best_k = k1;
        }
    }
    (best, best_k)
}

/// Falling-power derivative of a monomial: `d^l/dy^l y^k` evaluated at its
/// monotone upper bound `y`.
fn mono_deriv_sup(y: f64, k: usize, l: usize) -> f64 {
    if l > k {
        return 0.0;
    }
    let mut c = 1.0;
    for q in 0..l {
        c *= (k - q) as f64;
    }
    c * y.powi((k - l) as i32)
}

/// Distance bounds `d_-^{l/u}(j)` of the minus-kernel for source cell `j`
/// and any `x` in target interval `i`. `None` when the cell touches the
/// singular band (it is then handled analytically).
fn d_minus(mesh: &AdaptiveMesh, i: usize, j: usize) -> Option<(f64, f64)> {
    let nodes = &mesh.nodes;
    let hj = mesh.width(j);
    let mh = SINGULAR_WIDTHS * mesh.width(i);
    if j >= i + 2 {
        let dl = ((nodes[j] - nodes[i + 1]) / hj).max(mh / hj);
        let du = (nodes[j] - nodes[i]) / hj + 1.0;
        if dl > 0.0 {
            return Some((dl, du));
        }
    } else if i >= 2 && j <= i - 2 {
        let dl = ((nodes[i] - nodes[j]) / hj - 1.0).max(mh / hj - 1.0);
        let du = (nodes[i + 1] - nodes[j]) / hj;
        if dl > 0.0 {
            return Some((dl, du));
        }
    }
    None
}

/// Distance bounds `d_+^{l/u}(j)` of the plus-kernel.
fn d_plus(mesh: &AdaptiveMesh, i: usize, j: usize) -> (f64, f64) {
    let nodes = &mesh.nodes;
    let hj = mesh.width(j);
    let mh = SINGULAR_WIDTHS * mesh.width(i);
    let dl = (mh / hj).max((nodes[i] + nodes[j]) / hj);
    let du = (nodes[i + 1] + nodes[j]) / hj + 1.0;
    (dl, du)
}

/// Build per-interval quadrature budgets for `target` from a spline source.
///
/// Sums the Gauss error lemma over the nonsingular supersets (with the
/// paired-kernel cancellation on the certified intersection for `u_x` and
/// `u_xxx`), plus the Taylor-expansion main-term error and remainder over the
/// Taylor superset, plus rounding slop. The analytic singular cells are exact
/// up to rounding and contribute no quadrature error.
pub fn gq_budget(spline: &QuinticSpline, target: VelTarget) -> Result<QuadBudget, VerifyError> {
    let mesh = Arc::clone(&spline.mesh);
    let n = mesh.n_intervals();
    let bounds = spline.derivative_bounds()?;
    // Per-cell sup of |f^(l)| for l = 0..=5.
    let sup: Vec<[f64; 6]> = (0..n)
        .map(|j| {
            let mut s = [0.0; 6];
            for (l, b) in bounds.iter().enumerate() {
                s[l] = b.low[j].abs().max(b.up[j].abs());
            }
            s
        })
        .collect();
    let rule = GaussRule::new();
    let d_ord = target.integrand_order();
    let delta = TAYLOR_DELTA;

    let results: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sets = RegimeSets::build(&mesh, i, target);
            let mut in_j1l = vec![false; n];
            let mut in_j3l = vec![false; n];
            let mut in_tll = vec![false; n];
            let mut in_j5l = vec![false; n];
            for &j in &sets.j1_lower {
                in_j1l[j] = true;
            }
            for &j in &sets.j3_lower {
                in_j3l[j] = true;
            }
            for &j in &sets.jtl_lower {
                in_tll[j] = true;
            }
            for &j in &sets.j5_lower {
                in_j5l[j] = true;
            }

            // Main Gauss-cell derivative sums.
            let df = |kk: usize| -> f64 {
                let mut acc = 0.0;
                for j in 0..n {
                    let hj = mesh.width(j);
                    let gauss_minus = !in_j1l[j] && !in_tll[j];
                    let gauss_plus = !in_j3l[j] && !in_tll[j];
                    if target.paired_cancellation() && in_j5l[j] && gauss_minus && gauss_plus {
                        if let Some((dm, _)) = d_minus(&mesh, i, j) {
                            let (dp, _) = d_plus(&mesh, i, j);
                            acc += df_comb(
                                &sup[j],
                                hj,
                                d_ord,
                                dm,
                                dp,
                                mesh.nodes[j] / hj,
                                kk,
                            );
                            continue;
                        }
                    }
                    if gauss_minus {
                        if let Some((dl, du)) = d_minus(&mesh, i, j) {
                            acc += if target.log_kernel() {
                                df_log(&sup[j], hj, dl, du, kk)
                            } else {
                                df_inv(&sup[j], hj, d_ord, dl, kk)
                            };
                        }
                    }
                    if gauss_plus {
                        let (dl, du) = d_plus(&mesh, i, j);
                        if dl > 0.0 {
                            acc += if target.log_kernel() {
                                df_log(&sup[j], hj, dl, du, kk)
                            } else {
                                df_inv(&sup[j], hj, d_ord, dl, kk)
                            };
                        }
                    }
                }
                acc
            };
            let (main_err, k1) = e_gq_tracked(&rule, &df);

            // Taylor-band contributions (u and u_xx only).
            let mut taylor_rem = 0.0;
            let mut taylor_main = 0.0;
            if target.taylor_used() && !sets.jtl_upper.is_empty() {
                let xi = mesh.nodes[i];
                let xi1 = mesh.nodes[i + 1];
                let tl_df = |kk: usize| -> f64 {
                    let mut acc = 0.0;
                    for &j in &sets.jtl_upper {
                        let hj = mesh.width(j);
                        let xj = mesh.nodes[j];
                        let xj1 = mesh.nodes[j + 1];
                        let two_k = 2 * kk;
                        match target {
                            VelTarget::U => {
                                if xj1 <= delta * xi1 {
                                    // Near cell, kernel expanded in y/x.
                                    let xlo = xi.max(xj1 / delta);
                                    for l in 0..=two_k.min(5) {
                                        acc += crate::hilbert::binomial(two_k, l)
                                            * hj.powi(two_k as i32 + 1)
                                            * sup[j][l]
                                            * (2.0 / xlo * mono_deriv_sup(xj1, 1, two_k - l)
                                                + 2.0 / (3.0 * xlo.powi(3))
                                                    * mono_deriv_sup(xj1, 3, two_k - l));
                                    }
                                } else {
                                    // Far cell, kernel expanded in x/y.
                                    let xup = xi1.min(delta * xj);
                                    if xup <= 0.0 || xj <= 0.0 {
                                        continue;
                                    }
                                    for l in 0..=two_k.min(5) {
                                        let m = two_k - l;
                                        acc += crate::hilbert::binomial(two_k, l)
                                            * hj.powi(two_k as i32 + 1)
                                            * sup[j][l]
                                            * (2.0
                                                * xup
                                                * crate::hilbert::factorial(m)
                                                * xj.powi(-(m as i32 + 1))
                                                + 2.0 / 3.0
                                                    * xup.powi(3)
                                                    * crate::hilbert::factorial(m + 2)
                                                    / 2.0
                                                    * xj.powi(-(m as i32 + 3)));
                                    }
                                }
                            }
                            VelTarget::Uxx => {
                                let xlo = xi.max(xj1 / delta);
                                for l in 0..=two_k.min(4) {
                                    let m = two_k - l;
                                    let kernel = 2.0 / xlo
                                        * (if m == 0 { 1.0 } else { 0.0 }
                                            + mono_deriv_sup(xj1, 2, m) / xlo.powi(2)
                                            + mono_deriv_sup(xj1, 4, m) / xlo.powi(4));
                                    acc += crate::hilbert::binomial(two_k, l)
                                        * hj.powi(two_k as i32 + 1)
                                        * sup[j][l + 1]
                                        * kernel;
                                }
                            }
                            _ => unreachable!(),
                        }
                    }
                    acc
                };
                let (tm, _) = e_gq_tracked(&rule, &tl_df);
                taylor_main = tm;
                for &j in &sets.jtl_upper {
                    let hj = mesh.width(j);
                    let xj = mesh.nodes[j];
                    let xj1 = mesh.nodes[j + 1];
                    match target {
                        VelTarget::U => {
                            if xj1 <= delta * xi1 {
                                let xlo = xi.max(xj1 / delta);
                                taylor_rem += 0.41
                                    * sup[j][0]
                                    * hj
                                    * (xj1 / xlo).powi(5).min(delta.powi(5));
                            } else if xj > 0.0 {
                                let xup = xi1.min(delta * xj);
                                taylor_rem += 0.41
                                    * sup[j][0]
                                    * hj
                                    * (xup.max(0.0) / xj).powi(5).min(delta.powi(5));
                            }
                        }
                        VelTarget::Uxx => {
                            let xlo = xi.max(xj1 / delta);
                            taylor_rem += 2.02 * hj / xlo
                                * (xj1 / xlo).powi(6).min(delta.powi(6))
                                * sup[j][1];
                        }
                        _ => unreachable!(),
                    }
                }
            }

            // Rounding slop mirroring the evaluator's absolute-magnitude
            // accounting: each cell contributes kernel sums whose coefficient
            // magnitudes are a small multiple of the local derivative sup.
            let absacc: f64 = sup.iter().map(|s| 50.0 * s[d_ord]).sum();
            let budget = (main_err + taylor_main + taylor_rem) / std::f64::consts::PI
                + 1e-13 * (1.0 + absacc);
            (budget, k1)
        })
        .collect();

    let (budgets, orders) = results.into_iter().unzip();
    Ok(QuadBudget {
        mesh,
        target,
        budgets,
        orders,
    })
}

// ---------------------------------------------------------------------------
// Composite rules for weighted integrals
// ---------------------------------------------------------------------------

/// Which trapezoid error lemma to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapezoidVariant {
    /// One-sided: `int f^2/x^k - T <= h^2/(k^2-1) * sum h_i (f_xx^2/x^{k-2})_i`.
    Rule1,
    /// Two-sided: `|int f^2/x^{k+1} - T| <= h/(k+1) * sum h_i (f_x^2/x^k)_i`.
    Rule2,
}

/// Trapezoid error budget for a weighted square integral on `[0, M]`.
///
/// `piece_max[i]` is the per-interval max of `f_xx^2/x^{k-2}` (Rule1) or
/// `f_x^2/x^k` (Rule2). Rule1 is an upper bound on `int - T` only; Rule2
/// bounds the absolute error.
pub fn trapezoid_budget(
    nodes: &[f64],
    k: f64,
    piece_max: &[f64],
    variant: TrapezoidVariant,
) -> Result<f64, VerifyError> {
    if piece_max.len() + 1 != nodes.len() {
        return Err(VerifyError::LengthMismatch {
            expected: nodes.len().saturating_sub(1),
            got: piece_max.len(),
        });
    }
    match variant {
        TrapezoidVariant::Rule1 if k <= 1.0 => return Err(VerifyError::BadWeightExponent(k)),
        TrapezoidVariant::Rule2 if k < 0.0 => return Err(VerifyError::BadWeightExponent(k)),
        _ => {}
    }
    let mut h = 0.0_f64;
    let mut sum = 0.0;
    for i in 0..piece_max.len() {
        let hi = nodes[i + 1] - nodes[i];
        h = h.max(hi);
        sum += hi * piece_max[i];
    }
    Ok(match variant {
        TrapezoidVariant::Rule1 => h * h / (k * k - 1.0) * sum,
        TrapezoidVariant::Rule2 => h / (k + 1.0) * sum,
    })
}

/// `L^2` bound via piecewise-linear interpolation: returns
/// `(||interpolant||_2, defect)` with `||f||_2 <= ||interpolant||_2 + defect`,
/// `defect = (sum h_i^5/90 (f_xx^2)_i^max)^{1/2}`.
pub fn l2_interp_budget(
    nodes: &[f64],
    values: &[f64],
    fxx_sq_max: &[f64],
) -> Result<(f64, f64), VerifyError> {
    if values.len() != nodes.len() {
        return Err(VerifyError::LengthMismatch {
            expected: nodes.len(),
            got: values.len(),
        });
    }
    if fxx_sq_max.len() + 1 != nodes.len() {
        return Err(VerifyError::LengthMismatch {
            expected: nodes.len().saturating_sub(1),
            got: fxx_sq_max.len(),
        });
    }
    let mut norm_sq = 0.0;
    let mut defect_sq = 0.0;
    for i in 0..fxx_sq_max.len() {
        let h = nodes[i + 1] - nodes[i];
        let (a, b) = (values[i], values[i + 1]);
        // Exact L^2 of the linear segment.
        norm_sq += h / 3.0 * (a * a + a * b + b * b);
        defect_sq += h.powi(5) / 90.0 * fxx_sq_max[i];
    }
    Ok((norm_sq.sqrt(), defect_sq.sqrt()))
}

/// Closed-form tail bound: `int_{L_B}^inf a x^{-b} dx = a/(b-1) L_B^{-b+1}`.
pub fn tail_budget(a: f64, b: f64, l_b: f64) -> Result<f64, VerifyError> {
    if b <= 1.0 {
        return Err(VerifyError::BadTailExponent(b));
    }
    Ok(a / (b - 1.0) * l_b.powf(-b + 1.0))
}

// ---------------------------------------------------------------------------
// Far-field residual decay
// ---------------------------------------------------------------------------

/// Coefficients of the far-field residual bounds
/// `|(x d/dx)^i F_omega| <= c_fw[i][0] x^{-a} + c_fw[i][1] x^{-2a}` and
/// `|(x d/dx)^i F_v| <= c_fv[i][0] x^{-2a} + c_fv[i][1] x^{-3a}` for
/// `x >= l_b`, with `a` the vorticity decay exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarDecay {
    pub a_om: f64,
    pub l_b: f64,
    pub c_fw: [[f64; 2]; 2],
    pub c_fv: [[f64; 2]; 2],
}

impl FarDecay {
    pub fn bound_fw(&self, i: usize, x: f64) -> f64 {
        self.c_fw[i][0] * x.powf(-self.a_om) + self.c_fw[i][1] * x.powf(-2.0 * self.a_om)
    }

    pub fn bound_fv(&self, i: usize, x: f64) -> f64 {
        self.c_fv[i][0] * x.powf(-2.0 * self.a_om) + self.c_fv[i][1] * x.powf(-3.0 * self.a_om)
    }
}

/// Residual of the vorticity equation and its `x d/dx` derivative at `x`.
pub fn residual_omega(p: &dyn ProfileEval, x: f64, i: usize) -> Result<f64, EnergyError> {
    let (cl, cw) = (p.c_l(), p.c_omega());
    let u = p.u(x, 0)?;
    let w1 = p.omega(x, 1)?;
    if i == 0 {
        Ok(-(cl * x + u) * w1 + cw * p.omega(x, 0)? + p.theta_x(x, 0)?)
    } else {
        let ux = p.u(x, 1)?;
        let w2 = p.omega(x, 2)?;
        Ok(x * (-(cl + ux) * w1 - (cl * x + u) * w2 + cw * w1 + p.theta_x(x, 1)?))
    }
}

/// Residual of the scalar-gradient equation and its `x d/dx` derivative.
pub fn residual_v(p: &dyn ProfileEval, x: f64, i: usize) -> Result<f64, EnergyError> {
    let (cl, cw) = (p.c_l(), p.c_omega());
    let u = p.u(x, 0)?;
    let ux = p.u(x, 1)?;
    let v1 = p.theta_x(x, 1)?;
    if i == 0 {
        Ok(-(cl * x + u) * v1 + (2.0 * cw - ux) * p.theta_x(x, 0)?)
    } else {
        let uxx = p.u(x, 2)?;
        let v2 = p.theta_x(x, 2)?;
        Ok(x * (-(cl + ux) * v1 - (cl * x + u) * v2 + (2.0 * cw - ux) * v1
            - uxx * p.theta_x(x, 0)?))
    }
}

/// Assemble the far-field residual decay coefficients at `l_b` (beyond any
/// perturbation support): the explicit leading terms of the slowest-decaying
/// profile parts plus the remainder sampled at `l_b` and rescaled by the
/// decay-ordering argument.
pub fn far_error_decay(
    p: &dyn ProfileEval,
    params: &ExplicitParams,
    l_b: f64,
) -> Result<FarDecay, VerifyError> {
    let a = params.a_om;
    let c_a = -(std::f64::consts::FRAC_PI_2 * a).tan().recip() / (1.0 - a);
    let (cl, cw) = (p.c_l(), p.c_omega());
    let lead_w1 = params.b_om * (cl * a + cw);
    let lead_w2 = c_a * params.b_om * params.b_om * a + params.b_v;
    let lead_v1 = 2.0 * params.b_v * (cl * a + cw);
    let lead_v2 = c_a * params.b_om * params.b_v * (3.0 * a - 1.0);

    let mut c_fw = [[0.0; 2]; 2];
    let mut c_fv = [[0.0; 2]; 2];
    for i in 0..2 {
        let sgn_a = (-a).powi(i as i32);
        let sgn_2a = (-2.0 * a).powi(i as i32);
        let sgn_3a = (-3.0 * a).powi(i as i32);
        let fw = residual_omega(p, l_b, i)?;
        let err_w = (fw
            - lead_w1 * sgn_a * l_b.powf(-a)
            - lead_w2 * sgn_2a * l_b.powf(-2.0 * a))
        .abs();
        c_fw[i][0] = (lead_w1 * sgn_a).abs();
        c_fw[i][1] = (lead_w2 * sgn_2a).abs() + l_b.powf(2.0 * a) * err_w;
        let fv = residual_v(p, l_b, i)?;
        let err_v = (fv
            - lead_v1 * sgn_2a * l_b.powf(-2.0 * a)
            - lead_v2 * sgn_3a * l_b.powf(-3.0 * a))
        .abs();
        c_fv[i][0] = (lead_v1 * sgn_2a).abs();
        c_fv[i][1] = (lead_v2 * sgn_3a).abs() + l_b.powf(3.0 * a) * err_v;
    }
    Ok(FarDecay {
        a_om: a,
        l_b,
        c_fw,
        c_fv,
    })
}

// ---------------------------------------------------------------------------
// Third-derivative velocity bounds
// ---------------------------------------------------------------------------

/// Per-interval bounds for `u, u_x, u_xx, u_xxx` of a spline vorticity.
#[derive(Debug, Clone)]
pub struct VelocityBounds {
    pub u: PiecewiseBound,
    pub ux: PiecewiseBound,
    pub uxx: PiecewiseBound,
    pub uxxx: PiecewiseBound,
    /// Largest per-node evaluation budget folded into the bounds.
    pub node_budget: f64,
}

/// Build interval bounds for `u..u_xxx` from a spline vorticity.
///
/// `u_xxx` on each interval is pinched between its endpoint values widened by
/// `I_i = min(sqrt(h_i) ||d^3 omega||_2, (2+sqrt3)-weighted far branch)`;
/// lower orders follow by downward recursion from their endpoint values and
/// the magnitude of the next order.
pub fn uxxx_bounds(spline: &QuinticSpline) -> Result<VelocityBounds, VerifyError> {
    let mesh = Arc::clone(&spline.mesh);
    let n = mesh.n_intervals();
    let vel = SplineVelocity::new(spline)?;
    let rule = GaussRule::new();

    // Global norms of the third derivative, plain and weighted by x^{8/3}.
    let mut norm_sq = 0.0;
    let mut wnorm_sq = 0.0;
    for j in 0..n {
        let a = mesh.nodes[j];
        let b = mesh.nodes[j + 1];
        let mut s = 0.0;
        let mut ws = 0.0;
        for (&z, &wq) in rule.nodes.iter().zip(&rule.weights) {
            let t = 0.5 * (z + 1.0);
            let x = a + (b - a) * t;
            let d3 = spline.eval(x, 3)?;
            s += 0.5 * wq * d3 * d3;
            ws += 0.5 * wq * (x.powf(8.0 / 3.0) * d3).powi(2);
        }
        norm_sq += (b - a) * s;
        wnorm_sq += (b - a) * ws;
    }
    // The integrands are piecewise smooth but not polynomial (fractional
    // weight); widen by a quadrature safety factor.
    let norm = (norm_sq * 1.02).sqrt();
    let wnorm = (wnorm_sq * 1.02).sqrt();

    // Node values for all four orders, tracking the worst budget.
    let mut node_vals = vec![[0.0f64; 4]; n + 1];
    let mut node_budget = 0.0f64;
    for (idx, vals) in node_vals.iter_mut().enumerate() {
        let x = mesh.nodes[idx];
        for (k, slot) in vals.iter_mut().enumerate() {
            let e = vel.eval(x, k as u32)?;
            *slot = e.value;
            node_budget = node_budget.max(e.budget);
        }
    }

    let pinch = |k: usize, travel: &dyn Fn(usize) -> f64| -> PiecewiseBound {
        let mut low = Vec::with_capacity(n);
        let mut up = Vec::with_capacity(n);
        for i in 0..n {
            let a = node_vals[i][k];
            let b = node_vals[i + 1][k];
            let t = travel(i);
            up.push(a.min(b) + t + node_budget);
            low.push(a.max(b) - t - node_budget);
        }
        PiecewiseBound {
            mesh: Arc::clone(&mesh),
            low,
            up,
        }
    };

    let i_bound = |i: usize| -> f64 {
        let h = mesh.width(i);
        let i1 = h.sqrt() * norm;
        let xl = mesh.nodes[i];
        if xl <= 0.0 {
            return i1;
        }
        let xr = mesh.nodes[i + 1];
        let decay = (xl.powf(-13.0 / 3.0) - xr.powf(-13.0 / 3.0)) / (13.0 / 3.0);
        let i2 = (2.0 + 3f64.sqrt()) * decay.max(0.0).sqrt() * wnorm;
        i1.min(i2)
    };
    let uxxx = pinch(3, &i_bound);

    // Downward recursion: |d^k u| travels at most (h/2) sup |d^{k+1} u|.
    let mut out = vec![uxxx];
    for k in (0..3usize).rev() {
        let prev = out.last().unwrap();
        let travel = |i: usize| -> f64 {
            0.5 * mesh.width(i) * prev.low[i].abs().max(prev.up[i].abs())
        };
        out.push(pinch(k, &travel));
    }
    let uxxx = out.remove(0);
    let uxx = out.remove(0);
    let ux = out.remove(0);
    let u = out.remove(0);
    Ok(VelocityBounds {
        u,
        ux,
        uxx,
        uxxx,
        node_budget,
    })
}

// ---------------------------------------------------------------------------
// Optimal-constant Schatten-trace bound
// ---------------------------------------------------------------------------

/// `v_i^T D^{-1} v_j` reduced to inner products of the direction functions:
/// zero across the three orthogonal-by-construction spaces, a `d_11` (or
/// `d_55`) scaling when one index is the mode direction, and a rank-one
/// correction otherwise. `gram` is the 9x9 interval table of `<g_i, g_j>`
/// (1-based indices).
pub fn copt_entry(
    gram: &IntervalMatrix,
    s1: f64,
    s2: f64,
    i: usize,
    j: usize,
) -> Result<Interval, VerifyError> {
    let space = |k: usize| -> usize {
        match k {
            1..=4 => 1,
            5..=7 => 2,
            _ => 3,
        }
    };
    if space(i) != space(j) {
        return Ok(Interval::point(0.0));
    }
    let g = |a: usize, b: usize| gram.get(a - 1, b - 1);
    let one = Interval::point(1.0);
    match space(i) {
        1 => {
            let d11 = one.add(&Interval::point(s1).mul(&g(1, 1))?)?;
            if d11.lo <= 0.0 {
                return Err(VerifyError::SingularD(d11.lo));
            }
            if i == 1 || j == 1 {
                Ok(g(i, j).div(&d11)?)
            } else {
                let corr = one
                    .div(&d11)?
                    .sub(&one)?
                    .mul(&g(i, 1))?
                    .mul(&g(j, 1))?
                    .div(&g(1, 1))?;
                Ok(g(i, j).add(&corr)?)
            }
        }
        2 => {
            let d55 = one.add(&Interval::point(s2).mul(&g(5, 5))?)?;
            if d55.lo <= 0.0 {
                return Err(VerifyError::SingularD(d55.lo));
            }
            if i == 5 || j == 5 {
                Ok(g(i, j).div(&d55)?)
            } else {
                let corr = one
                    .div(&d55)?
                    .sub(&one)?
                    .mul(&g(i, 5))?
                    .mul(&g(j, 5))?
                    .div(&g(5, 5))?;
                Ok(g(i, j).add(&corr)?)
            }
        }
        _ => Ok(g(i, j)),
    }
}

/// Upper bound for the optimal interaction constant:
/// `C_opt <= 2^{-1} (Tr (U2^T D^{-1} U1)^p)^{1/p}` with the mean/fluctuation
/// split of the interval matrix (Schatten triangle inequality; the
/// fluctuation part is dominated by its Frobenius norm since `p >= 2`).
pub fn copt_bound(
    gram: &IntervalMatrix,
    s1: f64,
    s2: f64,
    lambda2: f64,
    lambda3: f64,
    d_theta_bar: f64,
    p: usize,
) -> Result<Interval, VerifyError> {
    if gram.rows != 9 || gram.cols != 9 {
        return Err(VerifyError::Dimension);
    }
    // Columns of U2 and U1 in the fixed pairing order of the estimate.
    let u2 = [3usize, 7, 5, 2, 6, 4, 8, 9];
    let u1: [(usize, f64); 8] = [
        (1, 1.0),
        (1, 1.0),
        (1, -(lambda2 - d_theta_bar * lambda3)),
        (1, lambda2),
        (5, -lambda3),
        (5, lambda3),
        (1, lambda2),
        (5, -lambda3),
    ];
    let mut m = IntervalMatrix::zeros(8, 8);
    for (r, &gi) in u2.iter().enumerate() {
        for (c, &(base, scale)) in u1.iter().enumerate() {
            let e = copt_entry(gram, s1, s2, gi, base)?;
            m.set(r, c, e.mul(&Interval::point(scale))?);
        }
    }

    // Mean part: midpoints as thin intervals; interval matrix power.
    let mut mean = IntervalMatrix::zeros(8, 8);
    let mut fluct_frob_sq = 0.0;
    for r in 0..8 {
        for c in 0..8 {
            let e = m.get(r, c);
            let mid = Interval::from_nearest(e.mid());
            mean.set(r, c, mid);
            let d = e.sub(&mid).unwrap_or(Interval { lo: 0.0, hi: 0.0 });
            let mag = d.lo.abs().max(d.hi.abs());
            fluct_frob_sq += mag * mag;
        }
    }
    let mut power = mean.clone();
    for _ in 1..p {
        power = power.matmul(&mean)?;
    }
    let tr = power.trace()?;
    let mean_part = tr.hi.max(0.0).powf(1.0 / p as f64);
    let fluct_part = fluct_frob_sq.sqrt();
    let hi = 0.5 * (mean_part + fluct_part);
    let lo = 0.5 * (tr.lo.max(0.0).powf(1.0 / p as f64) - fluct_part).max(0.0);
    Ok(Interval { lo, hi })
}

// ---------------------------------------------------------------------------
// Verification report
// ---------------------------------------------------------------------------

/// Comparison direction of a checklist entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckDirection {
    /// Pass when the value's certain lower bound meets the threshold.
    Ge,
    /// Pass when the value's certain upper bound stays below the threshold.
    Le,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub value: Interval,
    pub threshold: f64,
    pub direction: CheckDirection,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn push(&mut self, name: &str, value: Interval, threshold: f64, dir: CheckDirection) {
        let pass = match dir {
            CheckDirection::Ge => value.lo >= threshold,
            CheckDirection::Le => value.hi <= threshold,
        };
        self.checks.push(CheckResult {
            check: name.to_string(),
            value,
            threshold,
            direction: dir,
            pass,
        });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Result<String, VerifyError> {
        Ok(serde_json::to_string_pretty(&self.checks)?)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<38} {:>14} {:>14} {:>4} {:>6}\n",
            "check", "value", "threshold", "dir", "status"
        ));
        for c in &self.checks {
            out.push_str(&format!(
                "{:<38} {:>14.6e} {:>14.6e} {:>4} {:>6}\n",
                c.check,
                match c.direction {
                    CheckDirection::Ge => c.value.lo,
                    CheckDirection::Le => c.value.hi,
                },
                c.threshold,
                match c.direction {
                    CheckDirection::Ge => ">=",
                    CheckDirection::Le => "<=",
                },
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}


#[cfg(test)]
mod debug_probe {
    use super::*;
    use crate::grid::AdaptiveMesh;
    use crate::spline::fit_curvatures;

    #[test]
    #[ignore]
    fn probe_budget_values() {
        let mesh = AdaptiveMesh::build(30.0, 0.3, 0.2).expect("mesh");
        let f = |x: f64| x / (1.0 + x * x);
        let fp = |x: f64| (1.0 - x * x) / (1.0 + x * x).powi(2);
        let values: Vec<f64> = mesh.nodes.iter().map(|&x| f(x)).collect();
        let slopes: Vec<f64> = mesh.nodes.iter().map(|&x| fp(x)).collect();
        let sigma = fit_curvatures(&mesh, &values, &slopes).expect("sig");
        let spline = QuinticSpline::from_nodal_data(&mesh, values, slopes, sigma);
        for target in [VelTarget::U, VelTarget::Ux, VelTarget::Uxx, VelTarget::Uxxx] {
            let qb = gq_budget(&spline, target).expect("budget");
            for (i, &b) in qb.budgets.iter().enumerate() {
                if !b.is_finite() || b < 0.0 || b > 1.0 {
                    println!("{:?} interval {} ({:.3}..{:.3}): budget {:.3e} order {}",
                        target, i, spline.mesh.nodes[i], spline.mesh.nodes[i+1], b, qb.orders[i]);
                }
            }
            let worst = qb.budgets.iter().cloned().fold(0.0f64, f64::max);
            println!("{:?}: n={} max budget {:.3e}", target, qb.budgets.len(), worst);
        }
    }
}
