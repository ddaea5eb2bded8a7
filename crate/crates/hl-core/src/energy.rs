//! Singular weights, damping coefficients, cost functions, and weighted-norm
//! machinery for the stability ledger.
//!
//! The stability argument controls perturbations of the steady profile in a
//! weighted norm built from two singular weights: `psi` (for the transported
//! scalar gradient `theta_x`) and `phi` (for the vorticity `omega`). The
//! pointwise *damping* coefficients combine the transport field and scaling
//! factors; the *cost functions* collect the Young-inequality prices paid for
//! every nonlocal interaction; the ledger gathers the scalar constants
//! (sup-norms, quadrature scalars, parameter identities) that the verifier
//! checks.

use std::sync::Arc;

use crate::grid::AdaptiveMesh;
use crate::hilbert::{
    fa_velocity, velocity_closed_rational, FaVelocity, GaussRule, HilbertError, SplineVelocity,
    TotalVelocity,
};
use crate::profile::{ExplicitProfile, ProfileError};
use crate::solver::SolutionState;
use crate::spline::{fit_curvatures, QuinticSpline, SplineError};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// `2 + sqrt(3)`: the operator norm constant of the weighted Hilbert
/// transform bounds used throughout the interaction estimates.
const TWO_PLUS_SQRT3: f64 = 2.0 + SQRT3;

#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("weights are defined for x > 0, got {0}")]
    NonpositiveX(f64),
    #[error("weight denominator not positive at x = {x}: {value}")]
    BadDenominator { x: f64, value: f64 },
    #[error("damping surplus T{index} not positive at x = {x}: {value}")]
    NonpositiveSurplus { index: u8, x: f64, value: f64 },
    #[error("derivative order {0} out of range for this evaluator")]
    BadOrder(u32),
}

/// Parameters of the singular weights: the far-field matching constants
/// `e1..e3`, the amplitude ladder `alpha1..alpha6`, and the cutoff geometry
/// `l1, l2` (the far-field switch `chi` turns on at `l1`).
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
    pub alpha6: f64,
    pub l1: f64,
    pub l2: f64,
}

impl WeightSet {
    pub fn standard() -> Self {
        WeightSet {
            e1: 1.5349,
            e2: 1.2650,
            e3: 1.3729,
            alpha1: 5.3,
            alpha2: 3.3,
            alpha3: 0.68,
            alpha4: 12.1,
            alpha5: 2.1,
            alpha6: 0.77,
            l1: 5e8,
            l2: 5e9,
        }
    }

    /// Far-field switch: `0` below `l1`, then `(2/pi) atan(((x-l1)/l2)^3)`.
    pub fn chi(&self, x: f64) -> f64 {
        if x <= self.l1 {
            0.0
        } else {
            let t = (x - self.l1) / self.l2;
            std::f64::consts::FRAC_2_PI * (t * t * t).atan()
        }
    }

    /// Derivative of [`Self::chi`].
    pub fn chi_x(&self, x: f64) -> f64 {
        if x <= self.l1 {
            0.0
        } else {
            let t = (x - self.l1) / self.l2;
            let t3 = t * t * t;
            std::f64::consts::FRAC_2_PI * 3.0 * t * t / (self.l2 * (1.0 + t3 * t3))
        }
    }
}

/// Scalar parameters of the stability estimate: the norm couplings
/// `lambda1..lambda4`, the Young-inequality splitting parameters `t_*`, the
/// damping margins `kappa, kappa2`, and the derived constants `d_u, t12, t62`.
#[derive(Debug, Clone)]
pub struct StabilityParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub t1: f64,
    pub t12: f64,
    pub t2: f64,
    pub t22: f64,
    pub t31: f64,
    pub t32: f64,
    pub t34: f64,
    pub tau1: f64,
    pub t4: f64,
    pub t61: f64,
    pub t62: f64,
    pub kappa: f64,
    pub r_c_omega: f64,
    pub kappa2: f64,
    pub t71: f64,
    pub t72: f64,
    pub t81: f64,
    pub t82: f64,
    pub t91: f64,
    pub t92: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub e_star: f64,
    pub a_h1: f64,
    /// `d_u = t1 alpha3 lambda1 alpha6 / sqrt(3)`: coefficient of the good
    /// `||u_x x^{-2/3}||^2` term produced by the far-field cancellation.
    pub d_u: f64,
}

impl StabilityParams {
    pub fn standard(w: &WeightSet) -> Self {
        let lambda1 = 0.32;
        let t1 = 1.29;
        let d_u = t1 * w.alpha3 * lambda1 * w.alpha6 / SQRT3;
        let t12 = 49.0 / 9.0 * 0.9 * d_u;
        // Chosen so the u_x surplus in the optimal-constant step almost
        // cancels, leaving exactly 1e-6 of it.
        let t62 = (d_u - 9.0 / 49.0 * t12 - 72.0 * lambda1 / 49.0 * 1e-5 - 1e-6)
            / (1.0 / 25.0 + 8.0 / 15.0 * 36.0 / 49.0);
        StabilityParams {
            lambda1,
            lambda2: 2.15,
            lambda3: 0.135,
            lambda4: 0.005,
            t1,
            t12,
            t2: 5.5,
            t22: 13.5,
            t31: 3.2,
            t32: 0.5,
            t34: 2.9,
            tau1: 4.7,
            t4: 3.8,
            t61: 0.16,
            t62,
            kappa: 0.03,
            r_c_omega: 0.15,
            kappa2: 0.024,
            t71: 2.8,
            t72: 2.0,
            t81: 5.0,
            t82: 0.7,
            t91: 1.0,
            t92: 1.2,
            gamma1: 0.98,
            gamma2: 0.07,
            e_star: 2.5e-5,
            a_h1: 0.31,
            d_u,
        }
    }

    /// `k_c = (pi lambda2 / 2)^{-1/2}`: the constant in `|c_omega| <= k_c E`.
    pub fn k_c(&self) -> f64 {
        (std::f64::consts::FRAC_PI_2 * self.lambda2).powf(-0.5)
    }
}

/// Pointwise access to the steady profile and its induced velocity.
///
/// `theta_x(x, k)` is the k-th derivative of the transported gradient (the
/// `v` variable of the solver), `omega(x, k)` the k-th derivative of the
/// vorticity, `u(x, k)` the k-th derivative of the velocity induced by
/// `omega`, and `u_theta(x, k)` the k-th derivative of the velocity induced
/// by `theta_x` through the same transform. All orders are `<= 3`.
pub trait ProfileEval {
    fn theta_x(&self, x: f64, k: u32) -> Result<f64, EnergyError>;
    fn omega(&self, x: f64, k: u32) -> Result<f64, EnergyError>;
    fn u(&self, x: f64, k: u32) -> Result<f64, EnergyError>;
    fn u_theta(&self, x: f64, k: u32) -> Result<f64, EnergyError>;
    fn c_l(&self) -> f64;
    fn c_omega(&self) -> f64;
    /// `u_x(0)`, recovered from the normalization `c_omega = c_l/2 + u_x(0)`.
    fn u_x0(&self) -> f64 {
        self.c_omega() - 0.5 * self.c_l()
    }
}

/// The explicit background pair together with the published scaling targets.
/// Useful for cheap evaluations and tests; the marched state refines it.
pub struct BackgroundProfile {
    pub profile: ExplicitProfile,
    total: TotalVelocity,
    fa_vel_v: Arc<FaVelocity>,
    c_l: f64,
    c_omega: f64,
}

impl BackgroundProfile {
    pub fn standard() -> Result<Self, EnergyError> {
        let profile = ExplicitProfile::standard();
        let fa_vel_v = fa_velocity(profile.params.a_v)?;
        let total = TotalVelocity::new(profile.clone())?;
        // The scaling pair of the converged construction: the length factor
        // is exactly 2 v'(0)/omega'(0) = 3 and the amplitude factor matches
        // the far-field decay exponent, c_omega = -3 a_omega.
        let c_l = 2.0 * profile.params.s_v / profile.params.s_om;
        let c_omega = -3.0 * profile.params.a_om;
        Ok(BackgroundProfile {
            profile,
            total,
            fa_vel_v,
            c_l,
            c_omega,
        })
    }
}

impl ProfileEval for BackgroundProfile {
    fn theta_x(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        Ok(self.profile.v_b(x, k)?)
    }

    fn omega(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        Ok(self.profile.omega_b(x, k)?)
    }

    fn u(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        Ok(self.total.background(x, k)?.value)
    }

    fn u_theta(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        let p = &self.profile.params;
        Ok(p.b_v * self.fa_vel_v.eval(x, k)?.value
            + velocity_closed_rational(p.s_v, p.r_v, x, k)?)
    }

    fn c_l(&self) -> f64 {
        self.c_l
    }

    fn c_omega(&self) -> f64 {
        self.c_omega
    }
}

/// A marched state frozen into spline form: background plus perturbation
/// splines for both fields, with spline-velocity evaluators for the nonlocal
/// parts. Beyond the mesh the perturbation is zero and only the explicit
/// background contributes.
pub struct SteadyProfile {
    pub mesh: Arc<AdaptiveMesh>,
    pub profile: ExplicitProfile,
    pub c_l: f64,
    pub c_omega: f64,
    spline_w: QuinticSpline,
    spline_v: QuinticSpline,
    vel_w: SplineVelocity,
    vel_v: SplineVelocity,
    total: TotalVelocity,
    fa_vel_v: Arc<FaVelocity>,
}

impl SteadyProfile {
    pub fn from_state(state: &SolutionState) -> Result<Self, EnergyError> {
        let sigma_w = fit_curvatures(&state.mesh, &state.omega_p_values, &state.omega_p_slopes)?;
        let sigma_v = fit_curvatures(&state.mesh, &state.v_p_values, &state.v_p_slopes)?;
        let spline_w = QuinticSpline::from_nodal_data(
            &state.mesh,
            state.omega_p_values.clone(),
            state.omega_p_slopes.clone(),
            sigma_w,
        );
        let spline_v = QuinticSpline::from_nodal_data(
            &state.mesh,
            state.v_p_values.clone(),
            state.v_p_slopes.clone(),
            sigma_v,
        );
        let vel_w = SplineVelocity::new(&spline_w)?;
        let vel_v = SplineVelocity::new(&spline_v)?;
        let total = TotalVelocity::new(state.profile.clone())?;
        let fa_vel_v = fa_velocity(state.profile.params.a_v)?;
        Ok(SteadyProfile {
            mesh: state.mesh.clone(),
            profile: state.profile.clone(),
            c_l: state.c_l,
            c_omega: state.c_omega,
            spline_w,
            spline_v,
            vel_w,
            vel_v,
            total,
            fa_vel_v,
        })
    }
}

impl ProfileEval for SteadyProfile {
    fn theta_x(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        Ok(self.profile.v_b(x, k)? + self.spline_v.eval(x, k)?)
    }

    fn omega(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        Ok(self.profile.omega_b(x, k)? + self.spline_w.eval(x, k)?)
    }

    fn u(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        Ok(self.total.background(x, k)?.value + self.vel_w.eval(x, k)?.value)
    }

    fn u_theta(&self, x: f64, k: u32) -> Result<f64, EnergyError> {
        let p = &self.profile.params;
        Ok(p.b_v * self.fa_vel_v.eval(x, k)?.value
            + velocity_closed_rational(p.s_v, p.r_v, x, k)?
            + self.vel_v.eval(x, k)?.value)
    }

    fn c_l(&self) -> f64 {
        self.c_l
    }

    fn c_omega(&self) -> f64 {
        self.c_omega
    }
}

/// The weight family evaluated at one point, with first derivatives.
#[derive(Debug, Clone, Copy)]
pub struct WeightValues {
    pub chi: f64,
    pub chi_x: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub xi1_x: f64,
    pub xi2_x: f64,
    pub xi3_x: f64,
    pub psi_n: f64,
    pub psi_f: f64,
    pub psi: f64,
    pub psi_x: f64,
    pub phi_s: f64,
    pub phi_n: f64,
    pub phi_f: f64,
    pub phi: f64,
    pub phi_x: f64,
}

/// Evaluate the weight family at `x > 0`.
///
/// `psi = psi_n + psi_f` divides explicit powers by profile-dependent
/// denominators (switched to pure powers in the far field by `chi`);
/// `phi = phi_s + phi_n + phi_f` is a pure power ladder.
pub fn eval_weights(
    w: &WeightSet,
    p: &dyn ProfileEval,
    x: f64,
) -> Result<WeightValues, EnergyError> {
    if !(x > 0.0) {
        return Err(EnergyError::NonpositiveX(x));
    }
    let tx = p.theta_x(x, 0)?;
    let txx = p.theta_x(x, 1)?;
    let txxx = p.theta_x(x, 2)?;
    let wx = p.omega(x, 1)?;
    let wxx = p.omega(x, 2)?;
    let chi = w.chi(x);
    let chi_x = w.chi_x(x);

    let xm23 = x.powf(-2.0 / 3.0);
    let xm53 = x.powf(-5.0 / 3.0);
    let xm43 = x.powf(-4.0 / 3.0);
    let xm73 = x.powf(-7.0 / 3.0);

    let xi1 = w.e1 * xm23 - (tx + 0.2 * x * txx);
    let xi1_x = -2.0 / 3.0 * w.e1 * xm53 - (1.2 * txx + 0.2 * x * txxx);
    let xi2 = w.e2 * xm23 - (tx + 3.0 / 7.0 * x * txx);
    let xi2_x = -2.0 / 3.0 * w.e2 * xm53 - (10.0 / 7.0 * txx + 3.0 / 7.0 * x * txxx);
    let xi3 = -w.e3 / 3.0 * xm43 - wx;
    let xi3_x = 4.0 / 9.0 * w.e3 * xm73 - wxx;

    let den_n = tx + 0.2 * x * txx + chi * xi1;
    if !(den_n > 0.0) {
        return Err(EnergyError::BadDenominator { x, value: den_n });
    }
    let den_n_x = 1.2 * txx + 0.2 * x * txxx + chi_x * xi1 + chi * xi1_x;
    let num_n = w.alpha1 * x.powi(-4) + w.alpha2 * x.powi(-3);
    let num_n_x = -4.0 * w.alpha1 * x.powi(-5) - 3.0 * w.alpha2 * x.powi(-4);
    let psi_n = num_n / den_n;
    let psi_n_x = (num_n_x * den_n - num_n * den_n_x) / (den_n * den_n);

    let den_f = tx + 3.0 / 7.0 * x * txx + chi * xi2;
    if !(den_f > 0.0) {
        return Err(EnergyError::BadDenominator { x, value: den_f });
    }
    let den_f_x = 10.0 / 7.0 * txx + 3.0 / 7.0 * x * txxx + chi_x * xi2 + chi * xi2_x;
    let num_f = w.alpha3 * xm43;
    let num_f_x = -4.0 / 3.0 * w.alpha3 * xm73;
    let psi_f = num_f / den_f;
    let psi_f_x = (num_f_x * den_f - num_f * den_f_x) / (den_f * den_f);

    let phi_s = w.alpha4 * x.powi(-4);
    let phi_n = w.alpha5 * (w.alpha1 * x.powi(-3) + w.alpha2 * x.powi(-2));
    let phi_f = w.alpha6 * xm23;
    let phi = phi_s + phi_n + phi_f;
    let phi_x = -4.0 * w.alpha4 * x.powi(-5)
        + w.alpha5 * (-3.0 * w.alpha1 * x.powi(-4) - 2.0 * w.alpha2 * x.powi(-3))
        - 2.0 / 3.0 * w.alpha6 * xm53;

    Ok(WeightValues {
        chi,
        chi_x,
        xi1,
        xi2,
        xi3,
        xi1_x,
        xi2_x,
        xi3_x,
        psi_n,
        psi_f,
        psi: psi_n + psi_f,
        psi_x: psi_n_x + psi_f_x,
        phi_s,
        phi_n,
        phi_f,
        phi,
        phi_x,
    })
}

/// Pointwise damping coefficients of the two transported fields.
#[derive(Debug, Clone, Copy)]
pub struct DampingValues {
    pub d_theta: f64,
    pub d_omega: f64,
}

/// `D_theta = ((c_l x + u) psi)_x / (2 psi) + 2 c_omega - u_x` and
/// `D_omega = ((c_l x + u) phi)_x / (2 phi) + c_omega`.
pub fn damping(w: &WeightSet, p: &dyn ProfileEval, x: f64) -> Result<DampingValues, EnergyError> {
    let wv = eval_weights(w, p, x)?;
    damping_with(&wv, p, x)
}

/// Same as [`damping`] but reusing precomputed weight values.
pub fn damping_with(
    wv: &WeightValues,
    p: &dyn ProfileEval,
    x: f64,
) -> Result<DampingValues, EnergyError> {
    let u = p.u(x, 0)?;
    let ux = p.u(x, 1)?;
    let cl = p.c_l();
    let cw = p.c_omega();
    let speed = cl * x + u;
    let d_theta = 0.5 * (cl + ux) + speed * wv.psi_x / (2.0 * wv.psi) + 2.0 * cw - ux;
    let d_omega = 0.5 * (cl + ux) + speed * wv.phi_x / (2.0 * wv.phi) + cw;
    Ok(DampingValues { d_theta, d_omega })
}

/// Cost-function values at a point: the Young-inequality prices of the
/// nonlocal interactions, grouped as in the coercivity estimates.
#[derive(Debug, Clone, Copy)]
pub struct CostValues {
    pub a_theta: f64,
    pub a_omega: f64,
    pub b_theta: f64,
    pub b_omega: f64,
    pub a_omega2: f64,
    pub g_theta: f64,
    pub g_omega: f64,
    pub g_omega2: f64,
    pub g_omega3: f64,
    pub s_u1: f64,
    pub s_u2: f64,
    pub s_u3: f64,
    pub s_u4: f64,
    pub k_uw: f64,
    pub k_uw2: f64,
}

pub fn cost_functions(
    w: &WeightSet,
    sp: &StabilityParams,
    p: &dyn ProfileEval,
    x: f64,
) -> Result<CostValues, EnergyError> {
    let wv = eval_weights(w, p, x)?;
    cost_functions_with(&wv, w, sp, p, x)
}

pub fn cost_functions_with(
    wv: &WeightValues,
    w: &WeightSet,
    sp: &StabilityParams,
    p: &dyn ProfileEval,
    x: f64,
) -> Result<CostValues, EnergyError> {
    let txx = p.theta_x(x, 1)?;
    let txxx = p.theta_x(x, 2)?;
    let wx = p.omega(x, 1)?;
    let wxx = p.omega(x, 2)?;
    let l1 = sp.lambda1;

    let xm23 = x.powf(-2.0 / 3.0);
    let xm43 = x.powf(-4.0 / 3.0);
    let xm103 = x.powf(-10.0 / 3.0);
    let x53 = x.powf(5.0 / 3.0);
    let x43 = x.powf(4.0 / 3.0);

    // Cutoff error prices (identically zero where chi vanishes).
    let g_theta = 1e10 * TWO_PLUS_SQRT3 * TWO_PLUS_SQRT3 / 4.0
        * (wv.chi * (wv.xi1 * wv.psi_n + wv.xi2 * wv.psi_f)).powi(2);
    let far_coef = x43 * wv.chi * wv.xi3 * wv.phi;
    let g_omega = 1e-10 * xm43
        + 1e-5 * xm23
        + 1e5 / 4.0 * (6.0 * l1 * TWO_PLUS_SQRT3 / 5.0).powi(2) * far_coef * far_coef
        + 1e-2 * wv.chi * wv.phi;
    let g_omega2 = 0.25e-6 * (2.0 * l1 * TWO_PLUS_SQRT3 / 5.0).powi(2) * xm23;
    let g_omega3 = 1e6 * far_coef * far_coef + 1e-3 * wv.chi * wv.phi;

    // Interaction weights for the velocity remainder estimates.
    let s_u1 = sp.t31 * x.powi(-6) + sp.t32 * x.powi(-4) + 2e-5 * xm103;
    let s_u2 = sp.t71 * x.powi(-6) + sp.t72 * x.powi(-4) + 2e-6 * xm103;
    let s_u3 = sp.t81 * x.powi(-6) + sp.t82 * x.powi(-4) + 2e-6 * xm103;
    let s_u4 = sp.t91 * x.powi(-6) + sp.t92 * x.powi(-4) + 5e-4 * xm103;

    // Remainder coefficients after peeling off the explicit near/far parts.
    let k_uw = (wx + wv.chi * wv.xi3) * wv.phi + w.e3 * w.alpha6 / 3.0 * x.powi(-2)
        - sp.tau1 * x.powi(-4);
    let k_uw2 = (wx + x * wxx - wv.chi * wv.xi3 / 3.0) * wv.phi
        - w.e3 * w.alpha6 / 9.0 * x.powi(-2);

    let a_theta = 0.25 / sp.t1 * xm23
        + 0.25 / sp.t12 * (wv.psi_f * txx * x53).powi(2)
        + 0.25 / sp.t2 * (w.alpha2 / x + w.alpha1 / (x * x)).powi(2)
        + 0.25 / sp.t22 * (x.powi(3) * txx * wv.psi_n).powi(2)
        + (l1 * w.alpha4).powi(2) / (4.0 * sp.t4) * x.powi(-5)
        + g_theta;

    let a_omega = sp.t1
        * (w.alpha3 * w.alpha3 / (x * x)
            + w.alpha3 * l1 * w.alpha6 / SQRT3 * xm43
            + (l1 * w.alpha6).powi(2) * xm23)
        + (sp.t2 * x.powi(-4)
            + sp.t22 / 25.0 * x.powi(-4)
            + sp.t2 * (l1 * w.alpha5).powi(2) / (x * x))
        + sp.t4 * x.powi(-3)
        + l1 * (4.0 * sp.t31 / 25.0 * x.powi(-4)
            + 4.0 * sp.t32 / 9.0 / (x * x)
            + 0.25 * k_uw * k_uw / s_u1
            + sp.tau1 * (sp.t34 / 25.0 * x.powi(-4) + 0.25 / sp.t34 / (x * x)))
        + g_omega;

    let b_theta = 0.25 / s_u2 * (txx * wv.psi).powi(2)
        + 0.25 / s_u3 * ((txx + x * txxx) * wv.psi).powi(2);
    let b_omega = l1 / 4.0 * k_uw2 * k_uw2 / s_u4 + g_omega3;

    let a_omega2 = (sp.t71 + 4.0 * sp.t81 / 25.0) * x.powi(-4)
        + (sp.t72 + 4.0 * sp.t82 / 9.0) / (x * x)
        + l1 * (4.0 * sp.t91 / 25.0 * x.powi(-4) + 4.0 * sp.t92 / 9.0 / (x * x))
        + g_omega2;

    Ok(CostValues {
        a_theta,
        a_omega,
        b_theta,
        b_omega,
        a_omega2,
        g_theta,
        g_omega,
        g_omega2,
        g_omega3,
        s_u1,
        s_u2,
        s_u3,
        s_u4,
        k_uw,
        k_uw2,
    })
}

/// Scalar inputs of the optimal-constant step shared by all grid points.
#[derive(Debug, Clone, Copy)]
pub struct OdeScalars {
    /// `s1`: surplus of the `c_omega^2` damping after all prices.
    pub s1: f64,
    /// `s2`: surplus of the `d_theta^2` damping.
    pub s2: f64,
    /// `d_theta_bar = <theta_x, 1/x>` of the steady profile.
    pub d_theta_bar: f64,
    /// Cutoff error scalar entering `s1`.
    pub g_c: f64,
    /// Cutoff error scalar of the first-order estimate.
    pub g_c2: f64,
}

/// Pointwise data of the optimal-constant step: the coupling functions
/// `f2..f9`, the damping surpluses `T1..T3`, and the normalized directions
/// `g1..g9` obtained by dividing by `sqrt(T_i)`.
#[derive(Debug, Clone, Copy)]
pub struct OdeFunctions {
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
    pub f6: f64,
    pub f7: f64,
    pub f8: f64,
    pub f9: f64,
    pub t_1: f64,
    pub t_2: f64,
    pub t_3: f64,
    pub g: [f64; 9],
}

pub fn ode_functions(
    w: &WeightSet,
    sp: &StabilityParams,
    p: &dyn ProfileEval,
    x: f64,
) -> Result<OdeFunctions, EnergyError> {
    let wv = eval_weights(w, p, x)?;
    let dv = damping_with(&wv, p, x)?;
    let cv = cost_functions_with(&wv, w, sp, p, x)?;

    let u = p.u(x, 0)?;
    let ux = p.u(x, 1)?;
    let uxx = p.u(x, 2)?;
    let utx = p.u_theta(x, 1)?;
    let utxx = p.u_theta(x, 2)?;
    let w0 = p.omega(x, 0)?;
    let wx = p.omega(x, 1)?;
    let tx = p.theta_x(x, 0)?;
    let txx = p.theta_x(x, 1)?;

    let f2 = 0.25 * ux / x - 0.2 * (0.75 * uxx + 0.25 * ux / x) - ux / x + u / (x * x);
    let f3 = sp.lambda1 * (w0 - x * wx) * wv.phi;
    let f4 = 0.6 * utx / x + 0.2 * (0.6 * utxx + 0.4 * utx / x);
    let f6 = u / (x * x);
    let f7 = (tx - x * txx) * wv.psi;
    let f8 = 0.75 * wx + 0.25 * w0 / x;
    let f9 = 0.6 * txx + 0.4 * tx / x;

    let t_1 = (-sp.lambda1 * dv.d_omega - cv.a_omega / wv.phi - sp.lambda1 * sp.kappa) * wv.phi
        - sp.t61 * x.powi(-4);
    let t_2 = (-dv.d_theta - cv.a_theta / wv.psi - sp.kappa) * wv.psi;
    let t_3 = 25.0 * sp.t61 * x.powi(-4) + sp.t62 * x.powf(-4.0 / 3.0);
    for (idx, t) in [(1u8, t_1), (2, t_2), (3, t_3)] {
        if !(t > 0.0) {
            return Err(EnergyError::NonpositiveSurplus { index: idx, x, value: t });
        }
    }
    let (r1, r2, r3) = (t_1.sqrt().recip(), t_2.sqrt().recip(), t_3.sqrt().recip());
    let g = [
        -std::f64::consts::FRAC_2_PI / x * r1,
        f2 * r1,
        f3 * r1,
        f4 * r1,
        r2 / x,
        f6 * r2,
        f7 * r2,
        f8 * r3,
        f9 * r3,
    ];

    Ok(OdeFunctions {
        f2,
        f3,
        f4,
        f6,
        f7,
        f8,
        f9,
        t_1,
        t_2,
        t_3,
        g,
    })
}

/// Integrate `f` over the mesh intervals with the 8-point Gauss rule and add
/// a caller-supplied tail value for `[L, infinity)`. Returns `(value,
/// refinement_gap)` where the gap is the absolute difference against a
/// bisected evaluation (an empirical accuracy indicator, not a bound).
pub fn mesh_integral<F>(
    mesh: &AdaptiveMesh,
    mut f: F,
    tail: f64,
) -> Result<(f64, f64), EnergyError>
where
    F: FnMut(f64) -> Result<f64, EnergyError>,
{
    let rule = GaussRule::new();
    let mut coarse = 0.0;
    let mut fine = 0.0;
    for i in 0..mesh.n_intervals() {
        let a = mesh.nodes[i];
        let b = mesh.nodes[i + 1];
        let mut err: Option<EnergyError> = None;
        {
            let mut g = |t: f64| -> f64 {
                match f(a + (b - a) * t) {
                    Ok(v) => v,
                    Err(e) => {
                        if err.is_none() {
                            err = Some(e);
                        }
                        0.0
                    }
                }
            };
            coarse += (b - a) * rule.integrate_unit(&mut g);
            let m = 0.5 * (a + b);
            let mut g1 = |t: f64| -> f64 {
                match f(a + (m - a) * t) {
                    Ok(v) => v,
                    Err(e) => {
                        if err.is_none() {
                            err = Some(e);
                        }
                        0.0
                    }
                }
            };
            fine += (m - a) * rule.integrate_unit(&mut g1);
            let mut g2 = |t: f64| -> f64 {
                match f(m + (b - m) * t) {
                    Ok(v) => v,
                    Err(e) => {
                        if err.is_none() {
                            err = Some(e);
                        }
                        0.0
                    }
                }
            };
            fine += (b - m) * rule.integrate_unit(&mut g2);
        }
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok((fine + tail, (fine - coarse).abs()))
}

/// `<theta_x, 1/x>` over `(0, infinity)`: mesh quadrature of the profile plus
/// the closed-form background tail beyond the mesh.
pub fn d_theta_bar(
    mesh: &AdaptiveMesh,
    p: &dyn ProfileEval,
    profile: &ExplicitProfile,
) -> Result<f64, EnergyError> {
    let l = mesh.l();
    let tail = background_theta_tail(profile, l);
    let (value, _gap) = mesh_integral(mesh, |x| Ok(p.theta_x(x, 0)? / x), tail)?;
    Ok(value)
}

/// `int_L^inf theta_x_b / x dx` for the explicit background: power-series in
/// `x^{-5-a}` for the bump part plus the exact logarithmic rational tail.
fn background_theta_tail(profile: &ExplicitProfile, l: f64) -> f64 {
    let p = &profile.params;
    let a = p.a_v;
    // F_a(x)/x = x^{-1-a} (1 - x^{-5-a} + x^{-10-2a} - ...).
    let mut bump = 0.0;
    let mut sign = 1.0;
    for j in 0..4 {
        let e = a + (5.0 + a) * j as f64;
        bump += sign * l.powf(-e) / e;
        sign = -sign;
    }
    let rational = 0.5 * p.s_v * (1.0 + (p.r_v * l).powi(-2)).ln();
    p.b_v * bump + rational
}

/// Closed-form bounds for the cutoff error scalars `G_c, G_c2`.
///
/// Both are `const * || x xi3 chi^{1/2} phi^{1/2} ||_2^2` with support in
/// `x >= l1`, far beyond any mesh, so only the explicit background enters:
/// `|xi3| <= C3 x^{-4/3}` and `phi <= C_phi x^{-2/3}` there give
/// `|| . ||^2 <= C3^2 C_phi 3 l1^{-1/3}`.
pub fn chi_tail_constants(
    w: &WeightSet,
    sp: &StabilityParams,
    profile: &ExplicitProfile,
) -> (f64, f64) {
    let p = &profile.params;
    let l1 = w.l1;
    let a = p.a_om;
    // sup_{x >= l1} x^{4/3} |omega_b'|: |F_a'| <= 5 x^{-6-2a} + a x^{-1-a}
    // and the rational slope is below s/(r x)^2; all pieces decrease.
    let bump = p.b_om * (5.0 * l1.powf(-14.0 / 3.0 - 2.0 * a) + a * l1.powf(1.0 / 3.0 - a));
    let rational = p.s_om / (p.r_om * p.r_om) * l1.powf(-2.0 / 3.0);
    let c3 = w.e3 / 3.0 + bump + rational;
    let c_phi = w.alpha6
        + w.alpha4 * l1.powf(-10.0 / 3.0)
        + w.alpha5 * (w.alpha1 * l1.powf(-7.0 / 3.0) + w.alpha2 * l1.powf(-4.0 / 3.0));
    let norm_sq = c3 * c3 * c_phi * 3.0 * l1.powf(-1.0 / 3.0);
    let g_c = sp.lambda1 * sp.lambda1 / 4.0 * 1e2 * norm_sq;
    let g_c2 = sp.lambda1 * sp.lambda1 / 36.0 * 1e3 * norm_sq;
    (g_c, g_c2)
}

/// Assemble the scalar ledger of the optimal-constant step.
pub fn ode_scalars(
    w: &WeightSet,
    sp: &StabilityParams,
    mesh: &AdaptiveMesh,
    p: &dyn ProfileEval,
    profile: &ExplicitProfile,
) -> Result<OdeScalars, EnergyError> {
    let (g_c, g_c2) = chi_tail_constants(w, sp, profile);
    let d_th = d_theta_bar(mesh, p, profile)?;
    let cw = p.c_omega();
    let ux0 = p.u_x0();
    let s1 = -std::f64::consts::FRAC_PI_2 * sp.lambda2 * (cw + ux0)
        - sp.r_c_omega
        - std::f64::consts::PI * sp.lambda1 * w.e3 * w.alpha6 / 12.0
        - g_c;
    let s2 = -2.0 * cw * sp.lambda3 - sp.kappa * sp.lambda3;
    Ok(OdeScalars {
        s1,
        s2,
        d_theta_bar: d_th,
        g_c,
        g_c2,
    })
}

/// Weighted norms of a perturbation pair and the resulting energies
/// `E1` (weighted `L^2` plus the two scalar modes) and `E` (adds the
/// first-order terms scaled by `lambda4`).
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    /// `|| theta_x psi^{1/2} ||_2^2`.
    pub theta_l2: f64,
    /// `|| omega phi^{1/2} ||_2^2`.
    pub omega_l2: f64,
    /// `|| x d(theta_x) psi^{1/2} ||_2^2`.
    pub theta_h1: f64,
    /// `|| x d(omega) phi^{1/2} ||_2^2`.
    pub omega_h1: f64,
    /// `c_omega` of the perturbation, `-(2/pi) <omega, 1/x>`.
    pub c_omega: f64,
    /// `d_theta` of the perturbation, `<theta_x, 1/x>`.
    pub d_theta: f64,
    pub e1: f64,
    pub e: f64,
    /// Sum of the quadrature refinement gaps (empirical accuracy indicator).
    pub quadrature_gap: f64,
}

/// Energy of a perturbation pair given as callbacks `(value, slope)` on the
/// mesh; tails beyond the mesh must be zero (perturbations are compactly
/// supported on the mesh).
pub fn energy<FT, FW>(
    w: &WeightSet,
    sp: &StabilityParams,
    mesh: &AdaptiveMesh,
    p: &dyn ProfileEval,
    mut theta_x: FT,
    mut omega: FW,
) -> Result<EnergyBreakdown, EnergyError>
where
    FT: FnMut(f64, u32) -> Result<f64, EnergyError>,
    FW: FnMut(f64, u32) -> Result<f64, EnergyError>,
{
    let mut gap = 0.0;
    let (theta_l2, g) = mesh_integral(
        mesh,
        |x| {
            let wv = eval_weights(w, p, x)?;
            Ok(theta_x(x, 0)?.powi(2) * wv.psi)
        },
        0.0,
    )?;
    gap += g;
    let (omega_l2, g) = mesh_integral(
        mesh,
        |x| {
            let wv = eval_weights(w, p, x)?;
            Ok(omega(x, 0)?.powi(2) * wv.phi)
        },
        0.0,
    )?;
    gap += g;
    let (theta_h1, g) = mesh_integral(
        mesh,
        |x| {
            let wv = eval_weights(w, p, x)?;
            Ok((x * theta_x(x, 1)?).powi(2) * wv.psi)
        },
        0.0,
    )?;
    gap += g;
    let (omega_h1, g) = mesh_integral(
        mesh,
        |x| {
            let wv = eval_weights(w, p, x)?;
            Ok((x * omega(x, 1)?).powi(2) * wv.phi)
        },
        0.0,
    )?;
    gap += g;
    let (int_w, g) = mesh_integral(mesh, |x| Ok(omega(x, 0)? / x), 0.0)?;
    gap += g;
    let (d_theta, g) = mesh_integral(mesh, |x| Ok(theta_x(x, 0)? / x), 0.0)?;
    gap += g;
    let c_omega = -std::f64::consts::FRAC_2_PI * int_w;

    let e1_sq = theta_l2
        + sp.lambda1 * omega_l2
        + sp.lambda2 * std::f64::consts::FRAC_PI_2 * c_omega * c_omega
        + sp.lambda3 * d_theta * d_theta;
    let e_sq = e1_sq + sp.lambda4 * (theta_h1 + sp.lambda1 * omega_h1);
    Ok(EnergyBreakdown {
        theta_l2,
        omega_l2,
        theta_h1,
        omega_h1,
        c_omega,
        d_theta,
        e1: e1_sq.max(0.0).sqrt(),
        e: e_sq.max(0.0).sqrt(),
        quadrature_gap: gap,
    })
}

/// Energy of a state's perturbation away from the explicit background.
pub fn state_energy(
    w: &WeightSet,
    sp: &StabilityParams,
    state: &SolutionState,
) -> Result<EnergyBreakdown, EnergyError> {
    let steady = SteadyProfile::from_state(state)?;
    let sigma_w = fit_curvatures(&state.mesh, &state.omega_p_values, &state.omega_p_slopes)?;
    let sigma_v = fit_curvatures(&state.mesh, &state.v_p_values, &state.v_p_slopes)?;
    let sw = QuinticSpline::from_nodal_data(
        &state.mesh,
        state.omega_p_values.clone(),
        state.omega_p_slopes.clone(),
        sigma_w,
    );
    let sv = QuinticSpline::from_nodal_data(
        &state.mesh,
        state.v_p_values.clone(),
        state.v_p_slopes.clone(),
        sigma_v,
    );
    energy(
        w,
        sp,
        &state.mesh,
        &steady,
        |x, k| Ok(sv.eval(x, k)?),
        |x, k| Ok(sw.eval(x, k)?),
    )
}

/// Supremum of `f` over the mesh by dense sampling (endpoints plus interior
/// points of every interval). An empirical sup for ledger constants; the
/// far-field limit should be folded in by the caller when it dominates.
pub fn sup_on_mesh<F>(mesh: &AdaptiveMesh, mut f: F) -> Result<f64, EnergyError>
where
    F: FnMut(f64) -> Result<f64, EnergyError>,
{
    let mut sup = f64::NEG_INFINITY;
    for i in 0..mesh.n_intervals() {
        let a = mesh.nodes[i];
        let b = mesh.nodes[i + 1];
        for j in 0..=4 {
            let x = a + (b - a) * j as f64 / 4.0;
            if x <= 0.0 {
                continue;
            }
            sup = sup.max(f(x)?);
        }
    }
    Ok(sup)
}

/// The scalar constants of the nonlinear estimates, assembled from grid
/// sup-norms and closed-form parameter combinations.
#[derive(Debug, Clone)]
pub struct ConstantLedger {
    pub k_c: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub b3: f64,
    pub p4: f64,
    pub p5: f64,
    pub p6: f64,
    pub p7: f64,
    pub p8: f64,
    pub z: [f64; 4],
    pub q: [f64; 6],
    /// `sup C_u` (the velocity interpolation constant).
    pub c_u_sup: f64,
    /// `|| (S_3 x)^{-1/2} ||_inf`.
    pub s3_inv_sup: f64,
    /// `K1 = || d(x^3 theta_xxx psi) psi^{-1/2} ||_2`.
    pub k1: f64,
    /// `K2 = || d(x^3 omega_xx phi) phi^{-1/2} ||_2`.
    pub k2: f64,
    pub scalars: OdeScalars,
    pub d_u: f64,
    pub t12: f64,
    pub t62: f64,
}

/// `C_u(x)`: minimum of the weighted-interpolation branch and the constant
/// far-field branch.
pub fn c_u(w: &WeightSet, sp: &StabilityParams, x: f64) -> f64 {
    let p1 = ledger_p1(w);
    let phi_u = w.alpha4 * x.powi(-4) + p1 / (x * x);
    let near = (sp.lambda1 * sp.lambda4.sqrt()).powf(-0.5) * (x * phi_u).powf(-0.5);
    let far = (TWO_PLUS_SQRT3 * 0.87_f64.sqrt() / (sp.lambda1 * (w.alpha6 * sp.lambda4).sqrt()))
        .sqrt();
    near.min(far)
}

fn ledger_p1(w: &WeightSet) -> f64 {
    1.75 * (w.alpha5 * w.alpha1 * (4.0 / 3.0 * w.alpha6).powf(0.75)).powf(4.0 / 7.0)
        * (1.0 - 1e-7)
        + w.alpha5 * w.alpha2
}

pub fn constant_ledger(
    w: &WeightSet,
    sp: &StabilityParams,
    mesh: &AdaptiveMesh,
    p: &dyn ProfileEval,
    profile: &ExplicitProfile,
) -> Result<ConstantLedger, EnergyError> {
    let k_c = sp.k_c();
    let p1 = ledger_p1(w);
    let p2 = 6.5_f64;
    let p3 = 0.87_f64;
    let b3 = 0.5_f64;
    let p4 = (12.0 * TWO_PLUS_SQRT3 * p3.sqrt() / (7.0 * w.alpha6.sqrt())).sqrt();

    let c_u_far =
        (TWO_PLUS_SQRT3 * p3.sqrt() / (sp.lambda1 * (w.alpha6 * sp.lambda4).sqrt())).sqrt();
    let c_u_sup = sup_on_mesh(mesh, |x| Ok(c_u(w, sp, x)))?.max(c_u_far);

    // sup (S_3 x)^{-1/2}: S_3 x grows at both ends, so the mesh sup is the
    // global sup.
    let s3 = |x: f64| {
        w.alpha4 * x.powi(-4)
            + w.alpha2 * w.alpha5 / (x * x)
            + w.alpha6 / (TWO_PLUS_SQRT3 * TWO_PLUS_SQRT3) * x.powf(-2.0 / 3.0)
    };
    let s3_inv_sup = sup_on_mesh(mesh, |x| Ok((s3(x) * x).powf(-0.5)))?;

    // z constants: sup of the pointwise combinations; the far-field limit
    // (psi~x^{-2/3}, phi~x^{-2/3}, so the log-slopes tend to -2/3) is folded
    // in as the asymptotic branch.
    let zfun = |x: f64, which: usize| -> Result<f64, EnergyError> {
        let wv = eval_weights(w, p, x)?;
        let cu = c_u(w, sp, x);
        let psi_t = x * wv.psi_x / wv.psi;
        let phi_t = x * wv.phi_x / wv.phi;
        Ok(match which {
            0 => 0.5 * (cu + cu * psi_t.abs() + k_c * (3.0 + psi_t).abs()),
            1 => 0.5 * (cu + cu * phi_t.abs() + k_c * (3.0 + phi_t).abs()),
            2 => 0.5 * (3.0 * cu + cu * (2.0 + psi_t).abs() + k_c * (3.0 + psi_t).abs()),
            _ => 0.5 * (cu + cu * (phi_t + 2.0).abs() + k_c * (3.0 + phi_t).abs()),
        })
    };
    let mut z = [0.0; 4];
    for (which, zi) in z.iter_mut().enumerate() {
        let grid = sup_on_mesh(mesh, |x| zfun(x, which))?;
        // Asymptotic slope -2/3 for both weights beyond the mesh.
        let t = -2.0_f64 / 3.0;
        let asym = match which {
            0 | 1 => 0.5 * (c_u_far + c_u_far * t.abs() + k_c * (3.0 + t)),
            2 => 0.5 * (3.0 * c_u_far + c_u_far * (2.0 + t) + k_c * (3.0 + t)),
            _ => 0.5 * (c_u_far + c_u_far * (t + 2.0) + k_c * (3.0 + t)),
        };
        *zi = grid.max(asym);
    }

    let root = (p3 * sp.lambda3 / (w.alpha6 * sp.lambda1)).sqrt();
    let q = [
        z[0] + 3.0 / 7.0 * root,
        z[1] + 3.0 / 7.0 * root + k_c * sp.lambda2 / sp.lambda1 * (p3 / w.alpha6).sqrt(),
        z[2] + 15f64.sqrt() / (2.0 * sp.lambda1.sqrt()) * s3_inv_sup,
        z[3] + 15f64.sqrt() / (2.0 * sp.lambda1.sqrt()) * s3_inv_sup,
        k_c,
        k_c,
    ];

    let p5 = z[0]
        + p4 * (sp.lambda1 * sp.lambda4).powf(-0.5)
        + k_c * (1.0 + 2.0 / sp.lambda4.sqrt())
        + 15f64.sqrt() * s3_inv_sup / sp.lambda1.sqrt();
    let p6 = z[1] + p4 * (sp.lambda1 * sp.lambda4).powf(-0.5) + k_c * (1.0 + 2.0 / sp.lambda4.sqrt());
    let p7 = 12.0 / 7.0 * (p3 * sp.lambda3 / (b3 * sp.lambda1)).sqrt() + 2.0 * k_c;
    let p8 = sp.lambda2 * k_c * 2.0 / sp.lambda1 * (p3 / w.alpha6).sqrt()
        + sp.lambda2 * std::f64::consts::PI * k_c.powi(3);

    // K1, K2: mesh quadrature; the integrands decay quickly so the tail is
    // dominated by the last mesh decade and dropped (documented ledger
    // approximation on the desk scale).
    let (k1_sq, _) = mesh_integral(
        mesh,
        |x| {
            let h = 1e-4 * x.max(1e-4);
            let val = |y: f64| -> Result<f64, EnergyError> {
                let wv = eval_weights(w, p, y)?;
                Ok(y.powi(3) * p.theta_x(y, 2)? * wv.psi)
            };
            let d = (val(x + h)? - val(x - h)?) / (2.0 * h);
            let wv = eval_weights(w, p, x)?;
            Ok(d * d / wv.psi)
        },
        0.0,
    )?;
    let (k2_sq, _) = mesh_integral(
        mesh,
        |x| {
            let h = 1e-4 * x.max(1e-4);
            let val = |y: f64| -> Result<f64, EnergyError> {
                let wv = eval_weights(w, p, y)?;
                Ok(y.powi(3) * p.omega(y, 2)? * wv.phi)
            };
            let d = (val(x + h)? - val(x - h)?) / (2.0 * h);
            let wv = eval_weights(w, p, x)?;
            Ok(d * d / wv.phi)
        },
        0.0,
    )?;

    let scalars = ode_scalars(w, sp, mesh, p, profile)?;
    Ok(ConstantLedger {
        k_c,
        p1,
        p2,
        p3,
        b3,
        p4,
        p5,
        p6,
        p7,
        p8,
        z,
        q,
        c_u_sup,
        s3_inv_sup,
        k1: k1_sq.max(0.0).sqrt(),
        k2: k2_sq.max(0.0).sqrt(),
        scalars,
        d_u: sp.d_u,
        t12: sp.t12,
        t62: sp.t62,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (WeightSet, StabilityParams, BackgroundProfile) {
        let w = WeightSet::standard();
        let sp = StabilityParams::standard(&w);
        let p = BackgroundProfile::standard().expect("background profile");
        (w, sp, p)
    }

    #[test]
    fn partition_identities_hold() {
        let (w, _sp, p) = setup();
        for &x in &[0.05, 0.5, 3.0, 17.0, 211.0, 4e3] {
            let wv = eval_weights(&w, &p, x).expect("weights");
            assert!(((wv.psi_n + wv.psi_f) - wv.psi).abs() <= 1e-12 * wv.psi.abs());
            assert!(((wv.phi_s + wv.phi_n + wv.phi_f) - wv.phi).abs() <= 1e-12 * wv.phi.abs());
            assert!(wv.psi > 0.0 && wv.phi > 0.0);
        }
    }

    #[test]
    fn chi_vanishes_below_cutoff_and_saturates() {
        let w = WeightSet::standard();
        assert_eq!(w.chi(1e8), 0.0);
        assert_eq!(w.chi(5e8), 0.0);
        assert_eq!(w.chi_x(1e8), 0.0);
        assert!(w.chi(1e12) > 0.99);
        assert!(w.chi(6e8) > 0.0 && w.chi(6e8) < 1.0);
    }

    #[test]
    fn weight_derivatives_match_finite_differences() {
        let (w, _sp, p) = setup();
        for &x in &[0.3, 2.0, 40.0, 900.0] {
            let h = 1e-5 * x;
            let wm = eval_weights(&w, &p, x - h).expect("w-");
            let wp = eval_weights(&w, &p, x + h).expect("w+");
            let wv = eval_weights(&w, &p, x).expect("w");
            let psi_fd = (wp.psi - wm.psi) / (2.0 * h);
            let phi_fd = (wp.phi - wm.phi) / (2.0 * h);
            assert!(
                (psi_fd - wv.psi_x).abs() <= 1e-5 * wv.psi_x.abs().max(1e-12),
                "psi_x mismatch at {x}: fd {psi_fd} analytic {}",
                wv.psi_x
            );
            assert!(
                (phi_fd - wv.phi_x).abs() <= 1e-5 * wv.phi_x.abs().max(1e-12),
                "phi_x mismatch at {x}: fd {phi_fd} analytic {}",
                wv.phi_x
            );
        }
    }

    #[test]
    fn parameter_identities() {
        let (w, sp, _p) = setup();
        // d_u ties t12 to its definition; t62 zeroes the u_x surplus at 1e-6.
        assert!((sp.t12 - 49.0 / 9.0 * 0.9 * sp.d_u).abs() < 1e-14);
        let leftover = sp.d_u
            - 9.0 / 49.0 * sp.t12
            - 72.0 * sp.lambda1 / 49.0 * 1e-5
            - (1.0 / 25.0 + 8.0 / 15.0 * 36.0 / 49.0) * sp.t62;
        assert!((leftover - 1e-6).abs() < 1e-14, "leftover {leftover}");
        assert!((sp.d_u - sp.t1 * w.alpha3 * sp.lambda1 * w.alpha6 / SQRT3).abs() < 1e-16);
        // k_c = (pi lambda2 / 2)^{-1/2} ~ 0.5442.
        assert!((sp.k_c() - 0.544153).abs() < 1e-5);
    }

    // The raw explicit background overshoots the converged velocity near the
    // origin (u_x(0) ~ -3.15 instead of -2.5), so D_theta < 0 there only for
    // the marched profile; the acceptance suite checks the sharp margins on
    // the converged state. Here we check the signs the background does give:
    // D_omega < 0 everywhere and D_theta < 0 once the velocity error fades.
    #[test]
    fn damping_signs_for_background() {
        let (w, _sp, p) = setup();
        for &x in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 500.0] {
            let dv = damping(&w, &p, x).expect("damping");
            assert!(dv.d_omega < 0.0, "D_omega = {} at {x}", dv.d_omega);
            if x >= 5.0 {
                assert!(dv.d_theta < 0.0, "D_theta = {} at {x}", dv.d_theta);
            }
        }
    }

    #[test]
    fn comparison_inequalities_on_grid() {
        let (w, sp, p) = setup();
        let p1 = ledger_p1(&w);
        for i in 0..200 {
            let x = 0.05 * (i as f64 + 1.0) * (1.0 + 0.12 * i as f64);
            let wv = eval_weights(&w, &p, x).expect("weights");
            let phi_u = w.alpha4 * x.powi(-4) + p1 / (x * x);
            assert!(phi_u <= wv.phi * (1.0 + 1e-12), "phi_u > phi at {x}");
            let lhs = x.powf(-4.0 / 3.0) + 3.0 / 6.5 * x.powf(-2.0 / 3.0) + 6.5 / (x * x);
            assert!(lhs <= 0.87 * wv.phi, "p3 comparison fails at {x}");
            assert!(x * wv.psi_x < -0.5 * wv.psi, "psi slope bound fails at {x}");
            // The sharp constant b3 = 0.5 needs the marched profile (the
            // background dips to ~0.475 around x = 20); check a relaxed
            // version here, the verifier checks the sharp one on the state.
            assert!(0.45 * x.powf(-2.0 / 3.0) <= wv.psi, "b3 bound fails at {x}");
            let _ = sp;
        }
    }

    #[test]
    fn cost_functions_positive_and_chi_free_near_field() {
        let (w, sp, p) = setup();
        for &x in &[0.2, 1.0, 7.0, 33.0] {
            let cv = cost_functions(&w, &sp, &p, x).expect("costs");
            assert_eq!(cv.g_theta, 0.0);
            assert!(cv.a_theta > 0.0 && cv.a_omega > 0.0);
            assert!(cv.b_theta > 0.0 && cv.b_omega >= 0.0);
            assert!(cv.s_u1 > 0.0 && cv.s_u4 > 0.0);
        }
    }

    #[test]
    fn chi_tail_scalars_are_small() {
        let (w, sp, p) = setup();
        let (g_c, g_c2) = chi_tail_constants(&w, &sp, &p.profile);
        assert!(g_c > 0.0 && g_c < 0.05, "g_c = {g_c}");
        assert!(g_c2 > 0.0 && g_c2 < 0.2, "g_c2 = {g_c2}");
    }

    #[test]
    fn ode_scalars_positive() {
        let (w, sp, p) = setup();
        let mesh = AdaptiveMesh::build(1e4, 0.05, 0.05).expect("mesh");
        let sc = ode_scalars(&w, &sp, &mesh, &p, &p.profile).expect("scalars");
        assert!(sc.s1 > 0.0, "s1 = {}", sc.s1);
        assert!(sc.s2 > 0.0, "s2 = {}", sc.s2);
        // s2 = -2 c_omega lambda3 - kappa lambda3 with c_omega ~ -1.0004.
        assert!((sc.s2 - 0.2660).abs() < 1e-3, "s2 = {}", sc.s2);
        assert!(sc.d_theta_bar > 0.0);
    }

    #[test]
    fn energy_of_zero_perturbation_vanishes() {
        let (w, sp, p) = setup();
        let mesh = AdaptiveMesh::build(100.0, 0.1, 0.1).expect("mesh");
        let eb = energy(&w, &sp, &mesh, &p, |_x, _k| Ok(0.0), |_x, _k| Ok(0.0)).expect("energy");
        assert_eq!(eb.e, 0.0);
        assert_eq!(eb.e1, 0.0);
    }

    #[test]
    fn constant_ledger_within_published_windows() {
        let (w, sp, p) = setup();
        let mesh = AdaptiveMesh::build(1e3, 0.05, 0.05).expect("mesh");
        let ledger = constant_ledger(&w, &sp, &mesh, &p, &p.profile).expect("ledger");
        assert!(ledger.c_u_sup < 20.0, "C_u sup = {}", ledger.c_u_sup);
        for (i, &qi) in ledger.q.iter().enumerate() {
            assert!(qi < 36.0, "q{} = {qi}", i + 1);
        }
        let psum = ledger.p5 + ledger.p6 + ledger.p7 + ledger.p8;
        assert!(psum < 300.0, "p-sum = {psum}");
        assert!(ledger.k1.is_finite() && ledger.k2.is_finite());
    }
}

#[cfg(test)]
mod probe {
    use super::*;
    #[test]
    #[ignore]
    fn scan_background() {
        let w = WeightSet::standard();
        let p = BackgroundProfile::standard().unwrap();
        for i in 0..60 {
            let x = 0.05 * 1.25_f64.powi(i);
            if x > 9e3 { break; }
            let wv = eval_weights(&w, &p, x).unwrap();
            let dv = damping_with(&wv, &p, x).unwrap();
            println!("x={:9.4} Dth={:8.4} Dom={:8.4} psi*x23={:8.4} slope={:8.4}",
                x, dv.d_theta, dv.d_omega, wv.psi * x.powf(2.0/3.0), x*wv.psi_x/wv.psi);
        }
    }
}
