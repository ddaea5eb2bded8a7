//! Time marching of the rescaled system to an approximate steady state.
//!
//! The unknowns are the nodal values and slopes of the two perturbation
//! fields `ω_p` and `v_p` on an adaptive mesh; the totals are
//! `ω = ω_b + ω_p`, `v = v_b + v_p` with the fixed explicit background.
//! The four coupled transport equations
//!
//! ```text
//! (ω_p)_t  + (c_l x + u) ω_x  = c_ω ω + v
//! (∂ω_p)_t + (c_l x + u) ω_xx = -(c_l + u_x) ω_x + c_ω ω_x + v_x
//! (v_p)_t  + (c_l x + u) v_x  = (2 c_ω - u_x) v
//! (∂v_p)_t + (c_l x + u) v_xx = (2 c_ω - c_l - 2 u_x) v_x - u_xx v
//! ```
//!
//! are advanced with the classical four-stage Runge–Kutta scheme under a
//! CFL-limited adaptive step. The scaling parameters are recomputed from the
//! normalization `c_l = 2 v_x(0)/ω_x(0)`, `c_ω = c_l/2 + u_x(0)` at every
//! stage, which conserves `ω_x(0)` and `v_x(0)` exactly in the continuum.
//! Curvatures are refit from values and slopes each stage; the velocity is
//! the cached background plus the fast per-node quadrature weights applied
//! to the perturbation spline.

use crate::grid::{AdaptiveMesh, GridError};
use crate::hilbert::{HilbertError, TotalVelocity, VelocityWeights};
use crate::profile::{ExplicitParams, ExplicitProfile, ProfileError};
use crate::spline::{fit_curvatures, QuinticSpline, SplineError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("unknown initial family {0} (valid: 1..=4)")]
    UnknownFamily(u8),
    #[error("degenerate normalization: omega_x(0) = {0}")]
    DegenerateNormalization(f64),
    #[error("nonpositive time step {0} (transport speed sign anomaly)")]
    NonpositiveStep(f64),
    #[error("residual diverged: Re = {re} after reaching minimum {min}")]
    Diverged { re: f64, min: f64 },
    #[error("step budget exhausted after {steps} steps (Re = {re})")]
    StepBudget { steps: u64, re: f64 },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// Which initial data to march from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    /// Zero perturbations: the totals start at the explicit background.
    ZeroPerturbation,
    /// One of the four bump families (1..=4), normalized to
    /// `ω_x(0) = 1`, `u_x(0) = -2.5`, with `v` chosen so the ω-equation
    /// residual vanishes identically at `t = 0`.
    Family(u8),
}

/// Run configuration with desk-scale defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mesh_l: f64,
    pub abs_cap: f64,
    pub rel_cap: f64,
    /// Stop when the max grid-point residual drops to this.
    pub tol: f64,
    pub max_steps: u64,
    pub init: InitKind,
    /// CFL safety factor multiplying the stable step estimate.
    pub safety: f64,
    /// Mesh refinement factor (1 = none).
    pub refine: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mesh_l: 1e4,
            abs_cap: 0.01,
            rel_cap: 0.02,
            tol: 1e-6,
            max_steps: 2_000_000,
            init: InitKind::ZeroPerturbation,
            safety: 0.1,
            refine: 1,
        }
    }
}

/// Grid residuals of the two evolution equations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `F_ω = -(c_l x + u) ω_x + c_ω ω + v` at the nodes.
    pub f_omega: Vec<f64>,
    /// `F_v = -(c_l x + u) v_x + (2 c_ω - u_x) v` at the nodes.
    pub f_v: Vec<f64>,
    /// `max_i max(|F_ω(x_i)|, |F_v(x_i)|)`.
    pub re: f64,
}

impl ResidualReport {
    fn from_grids(f_omega: Vec<f64>, f_v: Vec<f64>) -> Self {
        let re = f_omega
            .iter()
            .chain(&f_v)
            .fold(0.0_f64, |a, &b| a.max(b.abs()));
        ResidualReport { f_omega, f_v, re }
    }
}

/// Background data cached at the nodes (the explicit parts are steady).
struct BackgroundCache {
    /// `∂^k ω_b`, `k = 0, 1, 2`.
    wb: [Vec<f64>; 3],
    /// `∂^k v_b`, `k = 0, 1, 2`.
    vb: [Vec<f64>; 3],
    /// `∂^k u_b` (velocity of `ω_b`), `k = 0, 1, 2`.
    ub: [Vec<f64>; 3],
}

/// The marching state: perturbation nodal data plus scaling parameters.
pub struct SolutionState {
    pub mesh: Arc<AdaptiveMesh>,
    pub profile: ExplicitProfile,
    pub omega_p_values: Vec<f64>,
    pub omega_p_slopes: Vec<f64>,
    pub v_p_values: Vec<f64>,
    pub v_p_slopes: Vec<f64>,
    pub c_l: f64,
    pub c_omega: f64,
    pub t: f64,
    pub steps: u64,
    /// Pin the last node (only valid when the perturbation support ends
    /// strictly inside the domain; desk-scale runs march it free since the
    /// steady perturbation tail extends past any affordable L, and pinning
    /// it drives a grid-scale boundary instability).
    pub pin_outer: bool,
    background: BackgroundCache,
    weights: Arc<VelocityWeights>,
}

/// One right-hand-side evaluation: time derivatives plus the raw residuals.
struct RhsEval {
    dwp: Vec<f64>,
    dwps: Vec<f64>,
    dvp: Vec<f64>,
    dvps: Vec<f64>,
    f_omega: Vec<f64>,
    f_v: Vec<f64>,
    c_l: f64,
    c_omega: f64,
    /// `u` at the nodes (for the CFL estimate).
    u0: Vec<f64>,
}

fn family_shape(which: u8, x: f64) -> Result<(f64, f64), SolverError> {
    // Returns (f(x), f'(x)); every family has f(0) = 0, f'(0) = 1.
    match which {
        1 => {
            let d = 1.0 + x * x;
            Ok((x / d, (1.0 - x * x) / (d * d)))
        }
        2 => {
            let d = 1.0 + x * x;
            let g = (-(x / 10.0) * (x / 10.0)).exp();
            let f = x * g / d;
            let fp = g * ((1.0 - x * x) / (d * d) - x * x / (50.0 * d));
            Ok((f, fp))
        }
        3 => {
            let d = 1.0 + x.powi(4);
            Ok((x / d, (1.0 - 3.0 * x.powi(4)) / (d * d)))
        }
        4 => {
            let s = x * x;
            let d = 1.0 + s;
            let f = x * (1.0 - s) * (1.0 - s) / d.powi(3);
            let fp = ((1.0 - s) * (1.0 - 5.0 * s) * d - 6.0 * s * (1.0 - s) * (1.0 - s))
                / d.powi(4);
            Ok((f, fp))
        }
        _ => Err(SolverError::UnknownFamily(which)),
    }
}

/// `(2/π) ∫_0^∞ f(s)/s ds` for the four families (sets the amplitude that
/// produces `u_x(0) = -2.5` after normalizing `ω_x(0) = 1`).
fn family_strength(which: u8) -> Result<f64, SolverError> {
    match which {
        // ∫ ds/(1+s²) = π/2.
        1 => Ok(1.0),
        // ∫ e^{-(s/10)²}/(1+s²) ds, composite Simpson; the integrand is
        // below 1e-17 past s = 63.
        2 => {
            let (a, b, n) = (0.0_f64, 80.0_f64, 40_000usize);
            let h = (b - a) / n as f64;
            let f = |s: f64| (-(s / 10.0) * (s / 10.0)).exp() / (1.0 + s * s);
            let mut acc = f(a) + f(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(a + h * i as f64);
            }
            Ok(acc * h / 3.0 * std::f64::consts::FRAC_2_PI)
        }
        // ∫ ds/(1+s⁴) = π/(2√2).
        3 => Ok(std::f64::consts::FRAC_1_SQRT_2),
        // ∫ (1-s²)²/(1+s²)³ ds = π/4  (substitute s = tan θ: ∫ cos² 2θ dθ).
        4 => Ok(0.5),
        _ => Err(SolverError::UnknownFamily(which)),
    }
}

impl SolutionState {
    /// Fresh state on a mesh built from the configuration.
    pub fn init(config: &SolverConfig, profile: ExplicitProfile) -> Result<Self, SolverError> {
        let mut mesh = AdaptiveMesh::build(config.mesh_l, config.abs_cap, config.rel_cap)?;
        if config.refine > 1 {
            mesh = mesh.refine(config.refine);
        }
        let n = mesh.nodes.len();
        let mut wb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut vb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut ub = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let total = TotalVelocity::new(profile.clone())?;
        for (i, &x) in mesh.nodes.iter().enumerate() {
            for k in 0..3u32 {
                wb[k as usize][i] = profile.omega_b(x, k)?;
                vb[k as usize][i] = profile.v_b(x, k)?;
                ub[k as usize][i] = total.background(x, k)?.value;
            }
        }
        let weights = Arc::new(VelocityWeights::build(&mesh));
        let mut state = SolutionState {
            mesh,
            profile,
            omega_p_values: vec![0.0; n],
            omega_p_slopes: vec![0.0; n],
            v_p_values: vec![0.0; n],
            v_p_slopes: vec![0.0; n],
            c_l: 0.0,
            c_omega: 0.0,
            t: 0.0,
            steps: 0,
            pin_outer: false,
            background: BackgroundCache { wb, vb, ub },
            weights,
        };
        match config.init {
            InitKind::ZeroPerturbation => {
                let (c_l, c_omega) = state.normalize()?;
                state.c_l = c_l;
                state.c_omega = c_omega;
            }
            InitKind::Family(which) => state.init_family(which)?,
        }
        Ok(state)
    }

    fn init_family(&mut self, which: u8) -> Result<(), SolverError> {
        let strength = family_strength(which)?;
        // ω = a f(bx) with a b = 1 (slope one at zero) and
        // u_x(0) = -a * strength = -2.5.
        let a = 2.5 / strength;
        let b = 1.0 / a;
        let n = self.mesh.nodes.len();
        for i in 0..n {
            let x = self.mesh.nodes[i];
            let (f, fp) = family_shape(which, b * x)?;
            self.omega_p_values[i] = a * f - self.background.wb[0][i];
            self.omega_p_slopes[i] = fp - self.background.wb[1][i];
        }
        // v = (c_l x + u) ω_x - c_ω ω with the preliminary c_l = 3 zeroes the
        // ω-equation residual at t = 0. c_ω is taken self-consistently as
        // c_l/2 + u_x(0) with the *discrete* u_x(0) (≈ -2.5 up to the domain
        // truncation of the slowly decaying tails), so that v_x(0) = c_l/2
        // exactly and the recomputed normalization reproduces c_l = 3.
        let c_l = 3.0;
        let sigma = fit_curvatures(&self.mesh, &self.omega_p_values, &self.omega_p_slopes)?;
        let spline = QuinticSpline::from_nodal_data(
            &self.mesh,
            self.omega_p_values.clone(),
            self.omega_p_slopes.clone(),
            sigma.clone(),
        );
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        self.weights.apply(&spline.coeffs, 0, &mut u0);
        self.weights.apply(&spline.coeffs, 1, &mut u1);
        let c_omega = 0.5 * c_l + self.background.ub[1][0] + u1[0];
        for i in 0..n {
            let x = self.mesh.nodes[i];
            let u = self.background.ub[0][i] + u0[i];
            let ux = self.background.ub[1][i] + u1[i];
            let w = self.background.wb[0][i] + self.omega_p_values[i];
            let wx = self.background.wb[1][i] + self.omega_p_slopes[i];
            let wxx = self.background.wb[2][i] + sigma[i];
            let v = (c_l * x + u) * wx - c_omega * w;
            let vx = (c_l + ux) * wx + (c_l * x + u) * wxx - c_omega * wx;
            self.v_p_values[i] = v - self.background.vb[0][i];
            self.v_p_slopes[i] = vx - self.background.vb[1][i];
        }
        // Odd symmetry at the origin.
        self.v_p_values[0] = -self.background.vb[0][0];
        self.c_l = c_l;
        self.c_omega = c_omega;
        self.pin_outer = false;
        Ok(())
    }

    /// Scaling parameters from the normalization conditions.
    pub fn normalize(&self) -> Result<(f64, f64), SolverError> {
        let wx0 = self.background.wb[1][0] + self.omega_p_slopes[0];
        if wx0 == 0.0 || !wx0.is_finite() {
            return Err(SolverError::DegenerateNormalization(wx0));
        }
        let vx0 = self.background.vb[1][0] + self.v_p_slopes[0];
        // u_x(0) needs the perturbation velocity; evaluate via the weights.
        let sigma = fit_curvatures(&self.mesh, &self.omega_p_values, &self.omega_p_slopes)?;
        let spline = QuinticSpline::from_nodal_data(
            &self.mesh,
            self.omega_p_values.clone(),
            self.omega_p_slopes.clone(),
            sigma,
        );
        let mut u1 = vec![0.0; self.mesh.nodes.len()];
        self.weights.apply(&spline.coeffs, 1, &mut u1);
        let c_l = 2.0 * vx0 / wx0;
        let c_omega = 0.5 * c_l + self.background.ub[1][0] + u1[0];
        Ok((c_l, c_omega))
    }

    fn rhs(
        &self,
        wp: &[f64],
        wps: &[f64],
        vp: &[f64],
        vps: &[f64],
    ) -> Result<RhsEval, SolverError> {
        let n = self.mesh.nodes.len();
        let bg = &self.background;
        let sigma_w = fit_curvatures(&self.mesh, wp, wps)?;
        let sigma_v = fit_curvatures(&self.mesh, vp, vps)?;
        let spline = QuinticSpline::from_nodal_data(
            &self.mesh,
            wp.to_vec(),
            wps.to_vec(),
            sigma_w.clone(),
        );
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        self.weights.apply(&spline.coeffs, 0, &mut u0);
        self.weights.apply(&spline.coeffs, 1, &mut u1);
        self.weights.apply(&spline.coeffs, 2, &mut u2);
        for i in 0..n {
            u0[i] += bg.ub[0][i];
            u1[i] += bg.ub[1][i];
            u2[i] += bg.ub[2][i];
        }
        let wx0 = bg.wb[1][0] + wps[0];
        if wx0 == 0.0 || !wx0.is_finite() {
            return Err(SolverError::DegenerateNormalization(wx0));
        }
        let c_l = 2.0 * (bg.vb[1][0] + vps[0]) / wx0;
        let c_omega = 0.5 * c_l + u1[0];
        let mut dwp = vec![0.0; n];
        let mut dwps = vec![0.0; n];
        let mut dvp = vec![0.0; n];
        let mut dvps = vec![0.0; n];
        let mut f_omega = vec![0.0; n];
        let mut f_v = vec![0.0; n];
        for i in 0..n {
            let x = self.mesh.nodes[i];
            let w = bg.wb[0][i] + wp[i];
            let wx = bg.wb[1][i] + wps[i];
            let wxx = bg.wb[2][i] + sigma_w[i];
            let v = bg.vb[0][i] + vp[i];
            let vx = bg.vb[1][i] + vps[i];
            let vxx = bg.vb[2][i] + sigma_v[i];
            let speed = c_l * x + u0[i];
            f_omega[i] = -speed * wx + c_omega * w + v;
            f_v[i] = -speed * vx + (2.0 * c_omega - u1[i]) * v;
            dwp[i] = f_omega[i];
            dwps[i] = -speed * wxx + (c_omega - c_l - u1[i]) * wx + vx;
            dvp[i] = f_v[i];
            dvps[i] = -speed * vxx + (2.0 * c_omega - c_l - 2.0 * u1[i]) * vx - u2[i] * v;
        }
        // Pins: the origin is always fixed by symmetry and normalization;
        // the outer node is fixed only when the fields are supported away
        // from it.
        for d in [&mut dwp, &mut dwps, &mut dvp, &mut dvps] {
            d[0] = 0.0;
            if self.pin_outer {
                d[n - 1] = 0.0;
            }
        }
        Ok(RhsEval {
            dwp,
            dwps,
            dvp,
            dvps,
            f_omega,
            f_v,
            c_l,
            c_omega,
            u0,
        })
    }

    /// Grid residuals of the current state.
    pub fn residual(&self) -> Result<ResidualReport, SolverError> {
        let eval = self.rhs(
            &self.omega_p_values,
            &self.omega_p_slopes,
            &self.v_p_values,
            &self.v_p_slopes,
        )?;
        Ok(ResidualReport::from_grids(eval.f_omega, eval.f_v))
    }

    fn cfl_dt(&self, c_l: f64, u0: &[f64], safety: f64) -> Result<f64, SolverError> {
        let n = self.mesh.nodes.len();
        let mut dt = f64::INFINITY;
        for i in 1..n {
            let x = self.mesh.nodes[i];
            let speed = c_l * x + u0[i];
            if speed <= 0.0 {
                continue;
            }
            let mut h = x - self.mesh.nodes[i - 1];
            if i + 1 < n {
                h = h.min(self.mesh.nodes[i + 1] - x);
            }
            dt = dt.min(h / speed);
        }
        let dt = safety * dt;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SolverError::NonpositiveStep(dt));
        }
        Ok(dt)
    }

    /// One adaptive RK4 step. Returns the residual report evaluated at the
    /// step's starting point (stage one is exactly the residual).
    pub fn step(&mut self, safety: f64) -> Result<ResidualReport, SolverError> {
        let k1 = self.rhs(
            &self.omega_p_values,
            &self.omega_p_slopes,
            &self.v_p_values,
            &self.v_p_slopes,
        )?;
        let dt = self.cfl_dt(k1.c_l, &k1.u0, safety)?;
        let n = self.mesh.nodes.len();
        let blend = |base: &[f64], d: &[f64], f: f64| -> Vec<f64> {
            base.iter().zip(d).map(|(&b, &k)| b + f * k).collect()
        };
        let half = 0.5 * dt;
        let k2 = self.rhs(
            &blend(&self.omega_p_values, &k1.dwp, half),
            &blend(&self.omega_p_slopes, &k1.dwps, half),
            &blend(&self.v_p_values, &k1.dvp, half),
            &blend(&self.v_p_slopes, &k1.dvps, half),
        )?;
        let k3 = self.rhs(
            &blend(&self.omega_p_values, &k2.dwp, half),
            &blend(&self.omega_p_slopes, &k2.dwps, half),
            &blend(&self.v_p_values, &k2.dvp, half),
            &blend(&self.v_p_slopes, &k2.dvps, half),
        )?;
        let k4 = self.rhs(
            &blend(&self.omega_p_values, &k3.dwp, dt),
            &blend(&self.omega_p_slopes, &k3.dwps, dt),
            &blend(&self.v_p_values, &k3.dvp, dt),
            &blend(&self.v_p_slopes, &k3.dvps, dt),
        )?;
        let sixth = dt / 6.0;
        for i in 0..n {
            self.omega_p_values[i] +=
                sixth * (k1.dwp[i] + 2.0 * k2.dwp[i] + 2.0 * k3.dwp[i] + k4.dwp[i]);
            self.omega_p_slopes[i] +=
                sixth * (k1.dwps[i] + 2.0 * k2.dwps[i] + 2.0 * k3.dwps[i] + k4.dwps[i]);
            self.v_p_values[i] +=
                sixth * (k1.dvp[i] + 2.0 * k2.dvp[i] + 2.0 * k3.dvp[i] + k4.dvp[i]);
            self.v_p_slopes[i] +=
                sixth * (k1.dvps[i] + 2.0 * k2.dvps[i] + 2.0 * k3.dvps[i] + k4.dvps[i]);
        }
        self.c_l = k1.c_l;
        self.c_omega = k1.c_omega;
        self.t += dt;
        self.steps += 1;
        Ok(ResidualReport::from_grids(k1.f_omega, k1.f_v))
    }

    /// Evaluate the assembled totals `(ω, ω_x, v, v_x, u, u_x)` at node `i`
    /// plus the residuals, for exports.
    pub fn node_totals(&self, report: &ResidualReport) -> Result<Vec<[f64; 9]>, SolverError> {
        let sigma = fit_curvatures(&self.mesh, &self.omega_p_values, &self.omega_p_slopes)?;
        let spline = QuinticSpline::from_nodal_data(
            &self.mesh,
            self.omega_p_values.clone(),
            self.omega_p_slopes.clone(),
            sigma,
        );
        let n = self.mesh.nodes.len();
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        self.weights.apply(&spline.coeffs, 0, &mut u0);
        self.weights.apply(&spline.coeffs, 1, &mut u1);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            rows.push([
                self.mesh.nodes[i],
                self.background.wb[0][i] + self.omega_p_values[i],
                self.background.wb[1][i] + self.omega_p_slopes[i],
                self.background.vb[0][i] + self.v_p_values[i],
                self.background.vb[1][i] + self.v_p_slopes[i],
                self.background.ub[0][i] + u0[i],
                self.background.ub[1][i] + u1[i],
                report.f_omega[i],
                report.f_v[i],
            ]);
        }
        Ok(rows)
    }

    /// Total `ω` at an arbitrary point (spline part + background).
    pub fn omega_total(&self, x: f64) -> Result<f64, SolverError> {
        let sigma = fit_curvatures(&self.mesh, &self.omega_p_values, &self.omega_p_slopes)?;
        let spline = QuinticSpline::from_nodal_data(
            &self.mesh,
            self.omega_p_values.clone(),
            self.omega_p_slopes.clone(),
            sigma,
        );
        Ok(self.profile.omega_b(x, 0)? + spline.eval(x, 0)?)
    }
}

/// Outcome of a full run.
pub struct RunOutcome {
    pub state: SolutionState,
    pub history: Vec<f64>,
    pub final_re: f64,
}

/// March from the configured initial data until `Re <= tol`.
///
/// Fails if the residual grows tenfold above its running minimum
/// (divergence) or the step budget runs out.
pub fn run(config: &SolverConfig, profile: ExplicitProfile) -> Result<RunOutcome, SolverError> {
    let mut state = SolutionState::init(config, profile)?;
    let mut history = Vec::new();
    let mut min_re = f64::INFINITY;
    loop {
        let report = state.step(config.safety)?;
        history.push(report.re);
        min_re = min_re.min(report.re);
        if report.re <= config.tol {
            return Ok(RunOutcome {
                final_re: report.re,
                state,
                history,
            });
        }
        if report.re > 10.0 * min_re && report.re > 1e3 * config.tol {
            return Err(SolverError::Diverged {
                re: report.re,
                min: min_re,
            });
        }
        if state.steps >= config.max_steps {
            return Err(SolverError::StepBudget {
                steps: state.steps,
                re: report.re,
            });
        }
    }
}

/// On-disk snapshot of a state. Version-tagged JSON.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mesh_nodes: Vec<f64>,
    pub mesh_abs_cap: f64,
    pub mesh_rel_cap: f64,
    pub omega_p_values: Vec<f64>,
    pub omega_p_slopes: Vec<f64>,
    pub v_p_values: Vec<f64>,
    pub v_p_slopes: Vec<f64>,
    pub profile_params: ExplicitParams,
    pub c_l: f64,
    pub c_omega: f64,
    pub t: f64,
    pub residual: f64,
    pub pin_outer: bool,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_save(state: &SolutionState, path: &Path) -> Result<(), SolverError> {
    let report = state.residual()?;
    let cp = Checkpoint {
        version: CHECKPOINT_VERSION,
        mesh_nodes: state.mesh.nodes.clone(),
        mesh_abs_cap: state.mesh.abs_cap,
        mesh_rel_cap: state.mesh.rel_cap,
        omega_p_values: state.omega_p_values.clone(),
        omega_p_slopes: state.omega_p_slopes.clone(),
        v_p_values: state.v_p_values.clone(),
        v_p_slopes: state.v_p_slopes.clone(),
        profile_params: state.profile.params,
        c_l: state.c_l,
        c_omega: state.c_omega,
        t: state.t,
        residual: report.re,
        pin_outer: state.pin_outer,
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &cp)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<SolutionState, SolverError> {
    let file = std::fs::File::open(path)?;
    let cp: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if cp.version != CHECKPOINT_VERSION {
        return Err(SolverError::Format(format!(
            "unsupported checkpoint version {} (expected {})",
            cp.version, CHECKPOINT_VERSION
        )));
    }
    let n = cp.mesh_nodes.len();
    if [
        cp.omega_p_values.len(),
        cp.omega_p_slopes.len(),
        cp.v_p_values.len(),
        cp.v_p_slopes.len(),
    ]
    .iter()
    .any(|&l| l != n)
        || n < 3
    {
        return Err(SolverError::Format("field/mesh length mismatch".into()));
    }
    let mesh = Arc::new(AdaptiveMesh {
        nodes: cp.mesh_nodes,
        abs_cap: cp.mesh_abs_cap,
        rel_cap: cp.mesh_rel_cap,
    });
    let profile = ExplicitProfile::new(cp.profile_params)?;
    let total = TotalVelocity::new(profile.clone())?;
    let mut wb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut vb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut ub = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, &x) in mesh.nodes.iter().enumerate() {
        for k in 0..3u32 {
            wb[k as usize][i] = profile.omega_b(x, k)?;
            vb[k as usize][i] = profile.v_b(x, k)?;
            ub[k as usize][i] = total.background(x, k)?.value;
        }
    }
    let weights = Arc::new(VelocityWeights::build(&mesh));
    Ok(SolutionState {
        mesh,
        profile,
        omega_p_values: cp.omega_p_values,
        omega_p_slopes: cp.omega_p_slopes,
        v_p_values: cp.v_p_values,
        v_p_slopes: cp.v_p_slopes,
        c_l: cp.c_l,
        c_omega: cp.c_omega,
        t: cp.t,
        steps: 0,
        pin_outer: cp.pin_outer,
        background: BackgroundCache { wb, vb, ub },
        weights,
    })
}
