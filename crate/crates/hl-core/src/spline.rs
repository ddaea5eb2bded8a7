//! Quintic splines from nodal values and slopes.
//!
//! Each mesh interval carries a degree-5 polynomial in the normalized local
//! variable `t = (x - x_i)/h_i`, uniquely determined by the values, first
//! derivatives, and second derivatives at both endpoints. Values and slopes
//! are data; the curvatures are solved from third-derivative continuity at
//! the interior nodes.
//!
//! Exact closed system for the curvatures (n intervals, n+1 unknowns):
//! - `sigma_0 = 0` (odd symmetry of the represented function);
//! - third-derivative continuity at nodes `1 .. n-1`;
//! - fourth-derivative continuity at node `n-1`.
//!
//! The last equation (rather than pinning `sigma_n = 0`) makes the fit
//! reproduce any single global quintic exactly; for compactly supported
//! profile data the end curvature comes out near zero on its own.
//!
//! Evaluation extends the spline oddly to `x < 0` and by zero beyond `L`.
//! Per-interval derivative bounds start from the exact piecewise-constant
//! fifth derivative and recurse downward through
//! [`crate::grid::bounds_from_derivative`].

use crate::grid::{bounds_from_derivative, AdaptiveMesh, GridError, PiecewiseBound};
use crate::interval::Interval;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("data length {got} does not match node count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("derivative order {0} exceeds 5")]
    OrderTooHigh(u32),
    #[error("degenerate curvature system (closure equation vanished)")]
    DegenerateSystem,
    #[error("curvature system residual {0} exceeds tolerance")]
    ResidualTooLarge(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Quintic spline on an adaptive mesh.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuinticSpline {
    #[serde(skip, default = "crate::spline::placeholder_mesh")]
    pub mesh: Arc<AdaptiveMesh>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub curvatures: Vec<f64>,
    /// Per-interval monomial coefficients `c_0..c_5` in `t = (x - x_i)/h_i`.
    pub coeffs: Vec<[f64; 6]>,
}

pub(crate) fn placeholder_mesh() -> Arc<AdaptiveMesh> {
    Arc::new(AdaptiveMesh {
        nodes: vec![0.0, 1.0],
        abs_cap: 1.0,
        rel_cap: 0.5,
    })
}

/// Monomial coefficients of the interval polynomial from endpoint data
/// (v, s, sigma at both ends; h the width). Derivatives are with respect to
/// `t`, so slopes enter as `s*h` and curvatures as `sigma*h^2`.
fn hermite_coeffs(v0: f64, s0: f64, k0: f64, v1: f64, s1: f64, k1: f64, h: f64) -> [f64; 6] {
    let a1 = s0 * h;
    let a2 = 0.5 * k0 * h * h;
    let a = v1 - v0 - a1 - a2;
    let b = s1 * h - a1 - 2.0 * a2;
    let c = k1 * h * h - 2.0 * a2;
    [
        v0,
        a1,
        a2,
        10.0 * a - 4.0 * b + 0.5 * c,
        -15.0 * a + 7.0 * b - c,
        6.0 * a - 3.0 * b + 0.5 * c,
    ]
}

/// Third derivative (in `t`) of the interval polynomial at `t = 0` / `t = 1`,
/// split into the coefficient on each endpoint curvature and the slope/value
/// part. Used to assemble the continuity system.
///
/// With A, B, C as in [`hermite_coeffs`]:
/// `p'''(0) = 6 c3 = 60A - 24B + 3C`,
/// `p'''(1) = 6 c3 + 24 c4 + 60 c5 = 60A - 36B + 9C`,
/// `p''''(0) = 24 c4 = -360A + 168B - 24C`,
/// `p''''(1) = 24 c4 + 120 c5 = 360A - 192B + 36C`.
struct RowTerms {
    /// Coefficient multiplying the left curvature `sigma_i`.
    left: f64,
    /// Coefficient multiplying the right curvature `sigma_{i+1}`.
    right: f64,
    /// Data (values/slopes) contribution.
    known: f64,
}

fn third_at(end: bool, v0: f64, s0: f64, v1: f64, s1: f64, h: f64) -> RowTerms {
    // A = dv - s0 h - sigma_l h^2/2 ; B = (s1 - s0) h - sigma_l h^2 ;
    // C = (sigma_r - sigma_l) h^2.
    let dv = v1 - v0;
    let (ca, cb, cc) = if end {
        (60.0, -36.0, 9.0)
    } else {
        (60.0, -24.0, 3.0)
    };
    let known = ca * (dv - s0 * h) + cb * (s1 - s0) * h;
    let left = (-0.5 * ca - cb - cc) * h * h;
    let right = cc * h * h;
    RowTerms { left, right, known }
}

fn fourth_at(end: bool, v0: f64, s0: f64, v1: f64, s1: f64, h: f64) -> RowTerms {
    let dv = v1 - v0;
    let (ca, cb, cc) = if end {
        (360.0, -192.0, 36.0)
    } else {
        (-360.0, 168.0, -24.0)
    };
    let known = ca * (dv - s0 * h) + cb * (s1 - s0) * h;
    let left = (-0.5 * ca - cb - cc) * h * h;
    let right = cc * h * h;
    RowTerms { left, right, known }
}

/// Solve the curvature system for given end value `sigma_n`, using the
/// Thomas algorithm on the (strictly diagonally dominant) C3 rows.
fn solve_c3_tridiag(
    mesh: &AdaptiveMesh,
    values: &[f64],
    slopes: &[f64],
    sigma_n: f64,
) -> Vec<f64> {
    let n = mesh.n_intervals();
    let mut sigma = vec![0.0; n + 1];
    sigma[n] = sigma_n;
    if n < 2 {
        return sigma;
    }
    // Row j (j = 1..n-1): continuity of the third derivative at node j:
    // p'''_{j-1}(1)/h_{j-1}^3 = p'''_j(0)/h_j^3.
    let mut sub = vec![0.0; n - 1]; // coefficient on sigma_{j-1}
    let mut diag = vec![0.0; n - 1];
    let mut sup = vec![0.0; n - 1]; // coefficient on sigma_{j+1}
    let mut rhs = vec![0.0; n - 1];
    for j in 1..n {
        let hl = mesh.width(j - 1);
        let hr = mesh.width(j);
        let l = third_at(true, values[j - 1], slopes[j - 1], values[j], slopes[j], hl);
        let r = third_at(false, values[j], slopes[j], values[j + 1], slopes[j + 1], hr);
        let (il, ir) = (1.0 / (hl * hl * hl), 1.0 / (hr * hr * hr));
        let k = j - 1;
        sub[k] = l.left * il;
        diag[k] = l.right * il - r.left * ir;
        sup[k] = -r.right * ir;
        rhs[k] = r.known * ir - l.known * il;
    }
    // Fold in the boundary curvatures (sigma_0 = 0 contributes nothing).
    rhs[n - 2] -= sup[n - 2] * sigma_n;
    // Thomas sweep.
    let m = n - 1;
    let mut cp = vec![0.0; m];
    let mut dp = vec![0.0; m];
    cp[0] = sup[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for k in 1..m {
        let denom = diag[k] - sub[k] * cp[k - 1];
        cp[k] = sup[k] / denom;
        dp[k] = (rhs[k] - sub[k] * dp[k - 1]) / denom;
    }
    sigma[m] = dp[m - 1];
    for k in (0..m - 1).rev() {
        sigma[k + 1] = dp[k] - cp[k] * sigma[k + 2];
    }
    sigma
}

/// Residual of the fourth-derivative continuity closure at node `n-1`.
fn c4_residual(mesh: &AdaptiveMesh, values: &[f64], slopes: &[f64], sigma: &[f64]) -> f64 {
    let n = mesh.n_intervals();
    let (hl, hr) = (mesh.width(n - 2), mesh.width(n - 1));
    let l = fourth_at(
        true,
        values[n - 2],
        slopes[n - 2],
        values[n - 1],
        slopes[n - 1],
        hl,
    );
    let r = fourth_at(false, values[n - 1], slopes[n - 1], values[n], slopes[n], hr);
    let il = 1.0 / hl.powi(4);
    let ir = 1.0 / hr.powi(4);
    (l.known + l.left * sigma[n - 2] + l.right * sigma[n - 1]) * il
        - (r.known + r.left * sigma[n - 1] + r.right * sigma[n]) * ir
}

/// Solve for the nodal curvatures: `sigma_0 = 0`, C3 continuity at interior
/// nodes, C4 continuity at node `n-1`. Superposition: solve the C3 system
/// for `sigma_n = 0` and `sigma_n = 1`, then pick the combination that zeroes
/// the C4 closure residual.
pub fn fit_curvatures(
    mesh: &Arc<AdaptiveMesh>,
    values: &[f64],
    slopes: &[f64],
) -> Result<Vec<f64>, SplineError> {
    let n = mesh.n_intervals();
    if values.len() != n + 1 || slopes.len() != n + 1 {
        return Err(SplineError::LengthMismatch {
            expected: n + 1,
            got: values.len().min(slopes.len()),
        });
    }
    let s0 = solve_c3_tridiag(mesh, values, slopes, 0.0);
    let s1 = solve_c3_tridiag(mesh, values, slopes, 1.0);
    let r0 = c4_residual(mesh, values, slopes, &s0);
    let r1 = c4_residual(mesh, values, slopes, &s1);
    let dr = r1 - r0;
    // Scale of the closure row, for relative tests.
    let scale = mesh.width(n - 1).powi(-2).max(1.0);
    if dr.abs() <= 1e-300 * scale {
        return Err(SplineError::DegenerateSystem);
    }
    let alpha = -r0 / dr;
    let sigma: Vec<f64> = s0
        .iter()
        .zip(&s1)
        .map(|(&a, &b)| a + alpha * (b - a))
        .collect();
    let res = c4_residual(mesh, values, slopes, &sigma).abs() / scale.max(sigma_norm(&sigma));
    if res > 1e-9 {
        return Err(SplineError::ResidualTooLarge(res));
    }
    Ok(sigma)
}

fn sigma_norm(s: &[f64]) -> f64 {
    s.iter().fold(1.0_f64, |a, &b| a.max(b.abs()))
}

impl QuinticSpline {
    /// Fit from nodal values and slopes; curvatures from [`fit_curvatures`].
    pub fn fit(
        mesh: &Arc<AdaptiveMesh>,
        values: Vec<f64>,
        slopes: Vec<f64>,
    ) -> Result<Self, SplineError> {
        let curvatures = fit_curvatures(mesh, &values, &slopes)?;
        Ok(Self::from_nodal_data(mesh, values, slopes, curvatures))
    }

    /// Assemble the per-interval coefficients from complete nodal data.
    pub fn from_nodal_data(
        mesh: &Arc<AdaptiveMesh>,
        values: Vec<f64>,
        slopes: Vec<f64>,
        curvatures: Vec<f64>,
    ) -> Self {
        let n = mesh.n_intervals();
        let coeffs = (0..n)
            .map(|i| {
                hermite_coeffs(
                    values[i],
                    slopes[i],
                    curvatures[i],
                    values[i + 1],
                    slopes[i + 1],
                    curvatures[i + 1],
                    mesh.width(i),
                )
            })
            .collect();
        QuinticSpline {
            mesh: Arc::clone(mesh),
            values,
            slopes,
            curvatures,
            coeffs,
        }
    }

    /// Evaluate the `k`-th derivative (`k <= 5`). Odd extension for `x < 0`,
    /// zero beyond the support `[0, L]` (values only decay to the boundary
    /// data; callers keep boundary data near zero for a consistent extension).
    pub fn eval(&self, x: f64, k: u32) -> Result<f64, SplineError> {
        if k > 5 {
            return Err(SplineError::OrderTooHigh(k));
        }
        if x < 0.0 {
            // f(-x) = -f(x) => f^(k)(-x) = (-1)^(k+1) f^(k)(x).
            let v = self.eval(-x, k)?;
            return Ok(if k % 2 == 0 { -v } else { v });
        }
        if x > self.mesh.l() {
            return Ok(0.0);
        }
        let (i, h) = self.mesh.locate(x).map_err(GridError::from)?;
        let t = (x - self.mesh.nodes[i]) / h;
        Ok(poly_deriv(&self.coeffs[i], t, k) / h.powi(k as i32))
    }

    /// Exact per-interval fifth derivative (piecewise constant).
    pub fn fifth_derivative(&self) -> PiecewiseBound {
        let n = self.mesh.n_intervals();
        let vals: Vec<f64> = (0..n)
            .map(|i| 120.0 * self.coeffs[i][5] / self.mesh.width(i).powi(5))
            .collect();
        PiecewiseBound {
            mesh: Arc::clone(&self.mesh),
            low: vals.clone(),
            up: vals,
        }
    }

    /// Rigorous per-interval bounds for derivatives `0..=5`, returned as
    /// `bounds[k]`. The fifth derivative is exact; each lower order is bounded
    /// from its nodal values plus half-width times the next order's magnitude.
    pub fn derivative_bounds(&self) -> Result<Vec<PiecewiseBound>, SplineError> {
        let n = self.mesh.n_intervals();
        let mut bounds = vec![self.fifth_derivative()];
        for k in (0..5u32).rev() {
            let prev = bounds.last().unwrap();
            let dmax = PiecewiseBound {
                mesh: Arc::clone(&self.mesh),
                low: vec![0.0; n],
                up: prev
                    .low
                    .iter()
                    .zip(&prev.up)
                    .map(|(&l, &u)| Interval { lo: l, hi: u }.abs().hi)
                    .collect(),
            };
            let mut vals = Vec::with_capacity(n + 1);
            for node in 0..=n {
                vals.push(self.eval(self.mesh.nodes[node], k)?);
            }
            bounds.push(bounds_from_derivative(&self.mesh, &vals, &dmax)?);
        }
        bounds.reverse();
        Ok(bounds)
    }
}

/// `k`-th derivative in `t` of the monomial polynomial `sum c_j t^j`.
fn poly_deriv(c: &[f64; 6], t: f64, k: u32) -> f64 {
    let k = k as usize;
    let mut acc = 0.0;
    for j in (k..6).rev() {
        // falling factorial j (j-1) ... (j-k+1)
        let mut f = 1.0;
        for m in 0..k {
            f *= (j - m) as f64;
        }
        acc = acc * t + f * c[j];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AdaptiveMesh;

    fn mesh10() -> Arc<AdaptiveMesh> {
        AdaptiveMesh::build(10.0, 0.05, 0.05).unwrap()
    }

    #[test]
    fn zero_data_zero_curvatures() {
        let m = mesh10();
        let n = m.n_intervals();
        let sig = fit_curvatures(&m, &vec![0.0; n + 1], &vec![0.0; n + 1]).unwrap();
        assert!(sig.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn recovers_quintic_curvatures() {
        // p(x) = x^3 (L - x)^2 satisfies p(0)=0, p''(0)=0, p(L)=p'(L)=0.
        let m = mesh10();
        let l = m.l();
        let p = |x: f64| x.powi(3) * (l - x).powi(2);
        let dp = |x: f64| 3.0 * x * x * (l - x).powi(2) - 2.0 * x.powi(3) * (l - x);
        let d2p = |x: f64| 6.0 * x * (l - x).powi(2) - 12.0 * x * x * (l - x) + 2.0 * x.powi(3);
        let vals: Vec<f64> = m.nodes.iter().map(|&x| p(x)).collect();
        let slopes: Vec<f64> = m.nodes.iter().map(|&x| dp(x)).collect();
        let sig = fit_curvatures(&m, &vals, &slopes).unwrap();
        for (i, &x) in m.nodes.iter().enumerate() {
            let truth = d2p(x);
            let scale = (l * l * l).max(truth.abs());
            assert!(
                (sig[i] - truth).abs() / scale < 1e-10,
                "node {i}: got {}, want {truth}",
                sig[i]
            );
        }
        // Pointwise reproduction on dense samples.
        let s = QuinticSpline::fit(&m, vals, slopes).unwrap();
        let mut x = 0.0;
        while x <= l {
            let scale = (l.powi(5)).max(p(x).abs());
            assert!((s.eval(x, 0).unwrap() - p(x)).abs() / scale < 1e-12, "x={x}");
            x += 0.00317 * l;
        }
    }

    #[test]
    fn knot_interpolation_and_odd_extension() {
        let m = mesh10();
        let vals: Vec<f64> = m.nodes.iter().map(|&x| x * (10.0 - x)).collect();
        let slopes: Vec<f64> = m.nodes.iter().map(|&x| 10.0 - 2.0 * x).collect();
        let mut vals = vals;
        let mut slopes = slopes;
        // Pin the support boundary.
        let n = m.n_intervals();
        vals[n] = 0.0;
        slopes[n] = 0.0;
        let s = QuinticSpline::fit(&m, vals.clone(), slopes.clone()).unwrap();
        for i in 0..=n {
            assert!((s.eval(m.nodes[i], 0).unwrap() - vals[i]).abs() < 1e-9);
            assert!((s.eval(m.nodes[i], 1).unwrap() - slopes[i]).abs() < 1e-9);
        }
        assert_eq!(s.eval(11.0, 0).unwrap(), 0.0);
        assert_eq!(s.eval(11.0, 3).unwrap(), 0.0);
        let v = s.eval(1.3, 0).unwrap();
        assert!((s.eval(-1.3, 0).unwrap() + v).abs() < 1e-14);
        let d2 = s.eval(1.3, 2).unwrap();
        assert!((s.eval(-1.3, 2).unwrap() + d2).abs() < 1e-14);
        let d1 = s.eval(1.3, 1).unwrap();
        assert!((s.eval(-1.3, 1).unwrap() - d1).abs() < 1e-14);
    }

    #[test]
    fn c3_continuity_at_interior_nodes() {
        let m = mesh10();
        let vals: Vec<f64> = m.nodes.iter().map(|&x| (x / (1.0 + x * x)).sin()).collect();
        let slopes: Vec<f64> = m
            .nodes
            .iter()
            .map(|&x| {
                let g = x / (1.0 + x * x);
                let gp = (1.0 - x * x) / (1.0 + x * x).powi(2);
                g.cos() * gp
            })
            .collect();
        let s = QuinticSpline::fit(&m, vals, slopes).unwrap();
        for j in 1..m.n_intervals() {
            let hl = m.width(j - 1);
            let left = poly_deriv(&s.coeffs[j - 1], 1.0, 3) / hl.powi(3);
            let right = poly_deriv(&s.coeffs[j], 0.0, 3) / m.width(j).powi(3);
            let scale = left.abs().max(right.abs()).max(1.0);
            assert!((left - right).abs() / scale <= 1e-9, "node {j}");
        }
    }

    #[test]
    fn derivative_bounds_contain_dense_samples() {
        let m = AdaptiveMesh::build(5.0, 0.1, 0.1).unwrap();
        let vals: Vec<f64> = m.nodes.iter().map(|&x| x.powi(3) * (5.0 - x).powi(2)).collect();
        let slopes: Vec<f64> = m
            .nodes
            .iter()
            .map(|&x| 3.0 * x * x * (5.0 - x).powi(2) - 2.0 * x.powi(3) * (5.0 - x))
            .collect();
        let s = QuinticSpline::fit(&m, vals, slopes).unwrap();
        let bounds = s.derivative_bounds().unwrap();
        for k in 0..=5u32 {
            let b = &bounds[k as usize];
            for i in 0..m.n_intervals() {
                let (a, c) = (m.nodes[i], m.nodes[i + 1]);
                for q in 0..50 {
                    let x = a + (c - a) * (q as f64 + 0.5) / 50.0;
                    let v = s.eval(x, k).unwrap();
                    assert!(
                        b.low[i] - 1e-9 <= v && v <= b.up[i] + 1e-9,
                        "k={k} i={i} x={x} v={v} bound=[{},{}]",
                        b.low[i],
                        b.up[i]
                    );
                }
            }
        }
    }

    #[test]
    fn cubic_data_has_zero_high_derivatives() {
        let m = mesh10();
        let l = m.l();
        // Cubic with compatible constraints: q(x) = x(L-x)^2 has q(0)=0 but
        // q''(0) != 0, so use q = x^3 - (3x^2 L)/... simplest compatible cubic
        // with q(0)=0, q''(0)=0: q = a x + b x^3. Pick a=1, b=-1/L^2 so that
        // q(L) = 0; q'(L) != 0 is fine (boundary data taken as given).
        let q = |x: f64| x - x.powi(3) / (l * l);
        let dq = |x: f64| 1.0 - 3.0 * x * x / (l * l);
        let vals: Vec<f64> = m.nodes.iter().map(|&x| q(x)).collect();
        let slopes: Vec<f64> = m.nodes.iter().map(|&x| dq(x)).collect();
        let s = QuinticSpline::fit(&m, vals, slopes).unwrap();
        let bounds = s.derivative_bounds().unwrap();
        for i in 0..m.n_intervals() {
            assert!(bounds[4].up[i].abs() < 1e-7, "d4 interval {i}");
            assert!(bounds[5].up[i].abs() < 1e-7, "d5 interval {i}");
        }
    }
}
