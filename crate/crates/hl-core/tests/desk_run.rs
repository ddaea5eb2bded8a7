//! Long-running desk-scale convergence probes (run explicitly with --ignored).

use hl_core::profile::ExplicitProfile;
use hl_core::solver::{run, InitKind, SolverConfig};

#[test]
#[ignore]
fn desk_zero_run_probe() {
    let cfg = SolverConfig {
        tol: 1e-6,
        ..SolverConfig::default()
    };
    let t0 = std::time::Instant::now();
    let out = run(&cfg, ExplicitProfile::standard()).expect("run converged");
    println!(
        "steps={} t={:.3} Re={:.3e} c_l={:.8} c_omega={:.8} ratio={:.6} wall={:?}",
        out.state.steps,
        out.state.t,
        out.final_re,
        out.state.c_l,
        out.state.c_omega,
        out.state.c_omega / out.state.c_l,
        t0.elapsed()
    );
    for (i, re) in out.history.iter().enumerate() {
        if i % 500 == 0 {
            println!("  step {i}: Re = {re:.3e}");
        }
    }
}

#[test]
#[ignore]
fn desk_diag() {
    use hl_core::solver::SolutionState;
    let cfg = SolverConfig::default();
    let mut state = SolutionState::init(&cfg, ExplicitProfile::standard()).expect("init");
    if std::env::var("FREE_OUTER").is_ok() {
        state.pin_outer = false;
        println!("outer node marching free");
    }
    let safety: f64 = std::env::var("SAFETY")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(cfg.safety);
    println!(
        "n = {}, c_l = {:.8}, c_omega = {:.8}",
        state.mesh.nodes.len(),
        state.c_l,
        state.c_omega
    );
    let argmax = |v: &[f64]| -> (usize, f64) {
        let mut bi = 0;
        let mut bv = 0.0_f64;
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > bv {
                bv = x.abs();
                bi = i;
            }
        }
        (bi, bv)
    };
    let rep = state.residual().expect("residual");
    let (iw, mw) = argmax(&rep.f_omega);
    let (iv, mv) = argmax(&rep.f_v);
    println!(
        "init: |F_w|max = {:.3e} at x = {:.4}, |F_v|max = {:.3e} at x = {:.4}",
        mw, state.mesh.nodes[iw], mv, state.mesh.nodes[iv]
    );
    for step in 0..400 {
        let rep = state.step(safety).expect("step");
        if step % 20 == 0 || rep.re > 5.0 {
            let (iw, mw) = argmax(&rep.f_omega);
            let (iv, mv) = argmax(&rep.f_v);
            println!(
                "step {:4}: Re {:.3e}  Fw {:.3e}@{:.4}  Fv {:.3e}@{:.4}  c_l {:.5} c_w {:.5}",
                step, rep.re, mw, state.mesh.nodes[iw], mv, state.mesh.nodes[iv],
                state.c_l, state.c_omega
            );
            if rep.re > 5.0 && step > 50 {
                break;
            }
        }
    }
}

#[test]
#[ignore]
fn desk_family_probe() {
    let cfg = SolverConfig {
        tol: 1e-4,
        init: InitKind::Family(1),
        ..SolverConfig::default()
    };
    let t0 = std::time::Instant::now();
    let out = run(&cfg, ExplicitProfile::standard()).expect("family run converged");
    println!(
        "family 1: steps={} t={:.3} Re={:.3e} ratio={:.6} wall={:?}",
        out.state.steps,
        out.state.t,
        out.final_re,
        out.state.c_omega / out.state.c_l,
        t0.elapsed()
    );
}
