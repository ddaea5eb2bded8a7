//! Adaptive meshes and per-interval function bounds.
//!
//! The mesh on `[0, L]` is dense near the origin and geometric in the far
//! field: every spacing satisfies either an absolute cap or a relative cap
//! against its right endpoint. All rigorous pointwise estimates downstream
//! are expressed as [`PiecewiseBound`]s: one `[low, up]` pair per mesh
//! interval, combined with outward-rounded interval arithmetic.

use crate::interval::{Interval, IntervalError};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid mesh parameters: L={l}, abs_cap={abs_cap}, rel_cap={rel_cap}")]
    BadParams { l: f64, abs_cap: f64, rel_cap: f64 },
    #[error("negative evaluation point {0}")]
    NegativeX(f64),
    #[error("bounds defined on different meshes")]
    MeshMismatch,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("division through zero on interval {0}")]
    DivThroughZero(usize),
    #[error("removable-ratio eps {eps} smaller than first interval width {h0}")]
    EpsTooSmall { eps: f64, h0: f64 },
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

/// Mesh on `[0, L]` with nodes `0 = x_0 < x_1 < ... < x_n = L`.
///
/// Spacing invariant: for every interval, `x_i - x_{i-1} <= abs_cap` or
/// `(x_i - x_{i-1}) / x_i <= rel_cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveMesh {
    pub nodes: Vec<f64>,
    pub abs_cap: f64,
    pub rel_cap: f64,
}

impl AdaptiveMesh {
    /// Build the mesh: uniform spacing `abs_cap` until the relative cap
    /// allows larger steps, then geometric growth at ratio `1/(1 - rel_cap)`.
    pub fn build(l: f64, abs_cap: f64, rel_cap: f64) -> Result<Arc<Self>, GridError> {
        if !(l >= 1.0) || !(abs_cap > 0.0) || !(rel_cap > 0.0 && rel_cap < 1.0) {
            return Err(GridError::BadParams {
                l,
                abs_cap,
                rel_cap,
            });
        }
        let mut nodes = vec![0.0_f64];
        let mut x = 0.0_f64;
        loop {
            // Largest step allowed at the current position: the absolute cap,
            // or the step whose relative size at its right endpoint is exactly
            // rel_cap (x_next = x / (1 - rel_cap)).
            let h_rel = x * rel_cap / (1.0 - rel_cap);
            let h = abs_cap.max(h_rel);
            let mut next = x + h;
            if next >= l * (1.0 - 1e-12) {
                next = l;
            }
            nodes.push(next);
            x = next;
            if x >= l {
                break;
            }
        }
        if nodes.len() < 3 {
            // Guarantee n >= 2 intervals even for tiny domains.
            let mid = 0.5 * l;
            nodes = vec![0.0, mid, l];
        }
        let mesh = AdaptiveMesh {
            nodes,
            abs_cap,
            rel_cap,
        };
        debug_assert!(mesh.spacing_invariant_holds());
        Ok(Arc::new(mesh))
    }

    /// Number of intervals.
    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn l(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Width of interval `i` (`[x_i, x_{i+1}]`, zero-based).
    pub fn width(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Direct scan of the spacing invariant.
    pub fn spacing_invariant_holds(&self) -> bool {
        self.nodes.windows(2).all(|w| {
            let h = w[1] - w[0];
            h > 0.0 && (h <= self.abs_cap * (1.0 + 1e-12) || h / w[1] <= self.rel_cap * (1.0 + 1e-12))
        })
    }

    /// Locate `x >= 0`: returns the zero-based interval index `j` with
    /// `x in [x_j, x_{j+1})` (last interval for `x >= L`) and the local
    /// spacing `h(x)`; for `x >= L` the spacing is the last interval's width.
    pub fn locate(&self, x: f64) -> Result<(usize, f64), GridError> {
        if x < 0.0 || !x.is_finite() {
            return Err(GridError::NegativeX(x));
        }
        let n = self.n_intervals();
        if x >= self.l() {
            return Ok((n - 1, self.width(n - 1)));
        }
        // partition_point: first node strictly greater than x.
        let j = self.nodes.partition_point(|&v| v <= x).saturating_sub(1);
        Ok((j.min(n - 1), self.width(j.min(n - 1))))
    }

    /// Split every interval into `factor` equal parts. Preserves the spacing
    /// invariant for any `factor >= 1`.
    pub fn refine(&self, factor: usize) -> Arc<AdaptiveMesh> {
        assert!(factor >= 1);
        let mut nodes = Vec::with_capacity(self.n_intervals() * factor + 1);
        nodes.push(0.0);
        for i in 0..self.n_intervals() {
            let (a, b) = (self.nodes[i], self.nodes[i + 1]);
            for k in 1..=factor {
                let t = k as f64 / factor as f64;
                nodes.push(if k == factor { b } else { a + t * (b - a) });
            }
        }
        let mesh = AdaptiveMesh {
            nodes,
            abs_cap: self.abs_cap,
            rel_cap: self.rel_cap,
        };
        debug_assert!(mesh.spacing_invariant_holds());
        Arc::new(mesh)
    }

    /// The interval `[x_i, x_{i+1}]` as an [`Interval`].
    pub fn cell(&self, i: usize) -> Interval {
        Interval {
            lo: self.nodes[i],
            hi: self.nodes[i + 1],
        }
    }
}

/// Per-interval enclosure of a scalar function on a mesh: `low_i <= g(x) <=
/// up_i` for all `x` in interval `i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseBound {
    #[serde(skip, default = "empty_mesh")]
    pub mesh: Arc<AdaptiveMesh>,
    pub low: Vec<f64>,
    pub up: Vec<f64>,
}

fn empty_mesh() -> Arc<AdaptiveMesh> {
    Arc::new(AdaptiveMesh {
        nodes: vec![0.0, 1.0],
        abs_cap: 1.0,
        rel_cap: 0.5,
    })
}

impl PiecewiseBound {
    pub fn constant(mesh: &Arc<AdaptiveMesh>, c: f64) -> Self {
        let n = mesh.n_intervals();
        PiecewiseBound {
            mesh: Arc::clone(mesh),
            low: vec![c; n],
            up: vec![c; n],
        }
    }

    /// Build a bound by evaluating an interval extension of `g` on each cell.
    pub fn from_interval_fn<F>(mesh: &Arc<AdaptiveMesh>, mut g: F) -> Result<Self, GridError>
    where
        F: FnMut(Interval) -> Result<Interval, IntervalError>,
    {
        let n = mesh.n_intervals();
        let mut low = Vec::with_capacity(n);
        let mut up = Vec::with_capacity(n);
        for i in 0..n {
            let v = g(mesh.cell(i))?;
            low.push(v.lo);
            up.push(v.hi);
        }
        Ok(PiecewiseBound {
            mesh: Arc::clone(mesh),
            low,
            up,
        })
    }

    pub fn interval(&self, i: usize) -> Interval {
        Interval {
            lo: self.low[i],
            hi: self.up[i],
        }
    }

    /// Global supremum of |g| implied by the bound.
    pub fn sup_abs(&self) -> f64 {
        self.low
            .iter()
            .zip(&self.up)
            .map(|(&l, &u)| l.abs().max(u.abs()))
            .fold(0.0, f64::max)
    }

    /// Global maximum of `up` (supremum of g).
    pub fn sup(&self) -> f64 {
        self.up.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Global minimum of `low` (infimum of g).
    pub fn inf(&self) -> f64 {
        self.low.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn same_mesh(&self, other: &PiecewiseBound) -> Result<(), GridError> {
        if Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.nodes == other.mesh.nodes {
            Ok(())
        } else {
            Err(GridError::MeshMismatch)
        }
    }
}

/// Bound `g` on each interval from its node values and a bound on `|g_x|`:
/// `up_i = max(g(x_i), g(x_{i+1})) + (h_i/2) * (|g_x|)^up_i`, and the mirror
/// image for `low`. Tight for affine `g`; sound because the interior maximum
/// of `g` is within half a width (in `|g_x|`-weighted distance) of the nearer
/// endpoint.
pub fn bounds_from_derivative(
    mesh: &Arc<AdaptiveMesh>,
    values: &[f64],
    dmax: &PiecewiseBound,
) -> Result<PiecewiseBound, GridError> {
    let n = mesh.n_intervals();
    if values.len() != n + 1 {
        return Err(GridError::LengthMismatch {
            expected: n + 1,
            got: values.len(),
        });
    }
    if dmax.low.len() != n {
        return Err(GridError::MeshMismatch);
    }
    let mut low = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    for i in 0..n {
        let h = Interval::point(mesh.width(i));
        let half = h.mul(&Interval::point(0.5))?;
        // dmax bounds |g_x|; its upper endpoint is the usable slope bound.
        let slope = Interval::point(dmax.up[i].max(0.0));
        let pad = half.mul(&slope)?;
        let vmax = values[i].max(values[i + 1]);
        let vmin = values[i].min(values[i + 1]);
        up.push(Interval::point(vmax).add(&pad)?.hi);
        low.push(Interval::point(vmin).sub(&pad)?.lo);
    }
    Ok(PiecewiseBound {
        mesh: Arc::clone(mesh),
        low,
        up,
    })
}

/// Binary combination of bounds via per-interval interval arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundOp {
    Add,
    Sub,
    Mul,
    Div,
}

pub fn bound_combine(
    op: BoundOp,
    a: &PiecewiseBound,
    b: &PiecewiseBound,
) -> Result<PiecewiseBound, GridError> {
    a.same_mesh(b)?;
    let n = a.low.len();
    let mut low = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = (a.interval(i), b.interval(i));
        let r = match op {
            BoundOp::Add => x.add(&y)?,
            BoundOp::Sub => x.sub(&y)?,
            BoundOp::Mul => x.mul(&y)?,
            BoundOp::Div => x.div(&y).map_err(|e| match e {
                IntervalError::DivByZero(_, _) => GridError::DivThroughZero(i),
                other => GridError::Interval(other),
            })?,
        };
        low.push(r.lo);
        up.push(r.hi);
    }
    Ok(PiecewiseBound {
        mesh: Arc::clone(&a.mesh),
        low,
        up,
    })
}

/// Composition with an interval extension of a monotone (or otherwise
/// range-sound) scalar function.
pub fn bound_map<F>(a: &PiecewiseBound, mut f: F) -> Result<PiecewiseBound, GridError>
where
    F: FnMut(Interval) -> Result<Interval, IntervalError>,
{
    let n = a.low.len();
    let mut low = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    for i in 0..n {
        let r = f(a.interval(i))?;
        low.push(r.lo);
        up.push(r.hi);
    }
    Ok(PiecewiseBound {
        mesh: Arc::clone(&a.mesh),
        low,
        up,
    })
}

/// Bound `f(x)/x` for `f` with `f(0) = 0` (removable singularity).
///
/// Away from the origin (`x_{i} >= eps`) the ratio is bounded by endpoint
/// interval division. Near the origin the mean-value theorem gives
/// `f(x)/x = f_x(xi)` for some `xi in (0, x)`, so the range of `f_x` over
/// `[0, max(x_{i+1}, eps)]` is a valid bound.
pub fn bound_ratio_removable(
    f: &PiecewiseBound,
    fx: &PiecewiseBound,
    eps: f64,
) -> Result<PiecewiseBound, GridError> {
    f.same_mesh(fx)?;
    let mesh = &f.mesh;
    let h0 = mesh.width(0);
    if eps < h0 {
        return Err(GridError::EpsTooSmall { eps, h0 });
    }
    let n = f.low.len();
    // Range of f_x over [0, y]: hull of the fx intervals whose cell meets
    // [0, y].
    let fx_range_to = |y: f64| -> Interval {
        let mut acc: Option<Interval> = None;
        for i in 0..n {
            if mesh.nodes[i] > y {
                break;
            }
            let iv = fx.interval(i);
            acc = Some(match acc {
                None => iv,
                Some(a) => a.hull(&iv),
            });
        }
        acc.unwrap_or(Interval::point(0.0))
    };
    let mut low = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (mesh.nodes[i], mesh.nodes[i + 1]);
        let r = if a >= eps {
            f.interval(i).div(&mesh.cell(i))?
        } else {
            fx_range_to(b.max(eps))
        };
        low.push(r.lo);
        up.push(r.hi);
    }
    Ok(PiecewiseBound {
        mesh: Arc::clone(mesh),
        low,
        up,
    })
}

/// Default `eps` for [`bound_ratio_removable`]: ten first-interval widths.
pub fn default_ratio_eps(mesh: &AdaptiveMesh) -> f64 {
    10.0 * mesh.width(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_respects_caps() {
        let m = AdaptiveMesh::build(10.0, 1e-3, 0.05).unwrap();
        assert!(m.spacing_invariant_holds());
        // Dense region: spacing equals abs_cap while x <= abs_cap/rel_cap*(1-rel_cap).
        assert!(m.width(0) <= 1e-3 * (1.0 + 1e-12));
        // Far region: relative spacing near the cap.
        let n = m.n_intervals();
        let h = m.width(n - 2);
        let x = m.nodes[n - 1];
        assert!(h / x <= 0.05 * (1.0 + 1e-12));
    }

    #[test]
    fn tiny_domain_still_valid() {
        let m = AdaptiveMesh::build(1.0, 1.0, 0.5).unwrap();
        assert!(m.n_intervals() >= 2);
        assert!(m.spacing_invariant_holds());
    }

    #[test]
    fn node_count_matches_direct_construction() {
        let m = AdaptiveMesh::build(1e4, 1e-3, 0.05).unwrap();
        assert!(m.spacing_invariant_holds());
        // Uniform region ~ (abs_cap/rel_cap)/abs_cap = 1/rel_cap intervals
        // before geometric growth takes over near x ~ abs_cap*(1-r)/r.
        // Geometric region: log(L/x_switch)/log(1/(1-r)) intervals.
        let x_switch: f64 = 1e-3 * (1.0 - 0.05) / 0.05;
        let uniform = (x_switch / 1e-3_f64).ceil();
        let geometric = ((1e4_f64 / x_switch).ln() / (1.0 / 0.95_f64).ln()).ceil();
        let predicted = uniform + geometric;
        let got = m.n_intervals() as f64;
        assert!(
            (got - predicted).abs() / predicted < 0.05,
            "predicted {predicted}, got {got}"
        );
    }

    #[test]
    fn locate_matches_linear_scan() {
        let m = AdaptiveMesh::build(100.0, 0.01, 0.05).unwrap();
        let mut x = 0.0;
        while x < 120.0 {
            let (j, h) = m.locate(x).unwrap();
            if x >= m.l() {
                assert_eq!(j, m.n_intervals() - 1);
            } else {
                // Linear-scan oracle.
                let mut k = 0;
                while m.nodes[k + 1] <= x {
                    k += 1;
                }
                assert_eq!(j, k, "x = {x}");
                assert_eq!(h, m.width(k));
            }
            x += 0.0371;
        }
        assert_eq!(m.locate(0.0).unwrap().0, 0);
        let (j, h) = m.locate(m.l()).unwrap();
        assert_eq!(j, m.n_intervals() - 1);
        assert_eq!(h, m.width(m.n_intervals() - 1));
    }

    #[test]
    fn derivative_bound_constant_and_affine() {
        let m = AdaptiveMesh::build(1.0, 1.0, 0.5).unwrap();
        let n = m.n_intervals();
        // Constant g = 3, |g_x| <= 0.
        let vals = vec![3.0; n + 1];
        let zero = PiecewiseBound::constant(&m, 0.0);
        let b = bounds_from_derivative(&m, &vals, &zero).unwrap();
        for i in 0..n {
            assert!((b.up[i] - 3.0).abs() < 1e-14 && (b.low[i] - 3.0).abs() < 1e-14);
        }
        // g = x on one-interval-dominated mesh: up = max + h/2, low = min - h/2.
        let vals: Vec<f64> = m.nodes.clone();
        let one = PiecewiseBound::constant(&m, 1.0);
        let b = bounds_from_derivative(&m, &vals, &one).unwrap();
        for i in 0..n {
            let h = m.width(i);
            assert!((b.up[i] - (m.nodes[i + 1] + h / 2.0)).abs() < 1e-12);
            assert!((b.low[i] - (m.nodes[i] - h / 2.0)).abs() < 1e-12);
            // Containment of the true range.
            assert!(b.low[i] <= m.nodes[i] && b.up[i] >= m.nodes[i + 1]);
        }
    }

    #[test]
    fn combine_mul_identity_and_sign() {
        let m = AdaptiveMesh::build(1.0, 1.0, 0.5).unwrap();
        let a = PiecewiseBound {
            mesh: Arc::clone(&m),
            low: vec![1.0; m.n_intervals()],
            up: vec![2.0; m.n_intervals()],
        };
        let one = PiecewiseBound::constant(&m, 1.0);
        let id = bound_combine(BoundOp::Mul, &a, &one).unwrap();
        for i in 0..m.n_intervals() {
            assert!(id.low[i] <= 1.0 && id.up[i] >= 2.0);
            assert!((id.low[i] - 1.0).abs() < 1e-14 && (id.up[i] - 2.0).abs() < 1e-14);
        }
        let pm = PiecewiseBound {
            mesh: Arc::clone(&m),
            low: vec![-1.0; m.n_intervals()],
            up: vec![1.0; m.n_intervals()],
        };
        let prod = bound_combine(BoundOp::Mul, &a, &pm).unwrap();
        for i in 0..m.n_intervals() {
            assert!(prod.low[i] <= -2.0 && prod.up[i] >= 2.0);
        }
    }

    #[test]
    fn ratio_removable_linear_contains_one() {
        let m = AdaptiveMesh::build(10.0, 0.01, 0.05).unwrap();
        let f = PiecewiseBound::from_interval_fn(&m, |c| Ok(c)).unwrap(); // f = x
        let fx = PiecewiseBound::constant(&m, 1.0);
        let r = bound_ratio_removable(&f, &fx, default_ratio_eps(&m)).unwrap();
        for i in 0..m.n_intervals() {
            assert!(r.low[i] <= 1.0 + 1e-12 && r.up[i] >= 1.0 - 1e-12, "i={i}");
        }
    }

    #[test]
    fn ratio_removable_quadratic_near_zero() {
        let m = AdaptiveMesh::build(10.0, 0.01, 0.05).unwrap();
        let f = PiecewiseBound::from_interval_fn(&m, |c| c.mul(&c)).unwrap(); // x^2
        let fx = bound_map(&f, |_| Ok(Interval::point(0.0))).unwrap();
        // f_x = 2x per cell.
        let fx = PiecewiseBound {
            mesh: Arc::clone(&fx.mesh),
            low: (0..m.n_intervals()).map(|i| 2.0 * m.nodes[i]).collect(),
            up: (0..m.n_intervals()).map(|i| 2.0 * m.nodes[i + 1]).collect(),
        };
        let eps = default_ratio_eps(&m);
        let r = bound_ratio_removable(&f, &fx, eps).unwrap();
        // Near zero the bound must contain the true ratio x and lie within
        // the mean-value window [0, 2*eps].
        for i in 0..m.n_intervals() {
            let (a, b) = (m.nodes[i], m.nodes[i + 1]);
            if b <= eps {
                assert!(r.low[i] <= a && r.up[i] >= b);
                // Window extends through the whole cell containing eps.
                assert!(r.up[i] <= 2.0 * (eps + m.abs_cap) + 1e-12);
            } else if a >= eps {
                assert!(r.low[i] <= a && r.up[i] >= b, "i={i}");
            }
        }
    }

    #[test]
    fn ratio_eps_too_small_rejected() {
        let m = AdaptiveMesh::build(10.0, 0.01, 0.05).unwrap();
        let f = PiecewiseBound::constant(&m, 0.0);
        let fx = PiecewiseBound::constant(&m, 0.0);
        assert!(matches!(
            bound_ratio_removable(&f, &fx, 1e-6),
            Err(GridError::EpsTooSmall { .. })
        ));
    }

    #[test]
    fn refine_preserves_invariant() {
        let m = AdaptiveMesh::build(100.0, 1e-2, 0.05).unwrap();
        let r = m.refine(4);
        assert!(r.spacing_invariant_holds());
        assert_eq!(r.n_intervals(), 4 * m.n_intervals());
        assert_eq!(r.l(), m.l());
    }
}
