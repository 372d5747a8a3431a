//! Damped Newton-Raphson on the MNA residual.

use nalgebra::DVector;

use super::mna::{Layout, MnaSystem, RowKind};
use crate::error::SimError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub reltol: f64,
    /// KCL residual and branch-current update tolerance, amperes.
    pub abstol_current: f64,
    /// Branch-equation residual and node-voltage update tolerance, volts.
    pub abstol_voltage: f64,
    /// Memristor state residual and update tolerance.
    pub abstol_state: f64,
    pub max_iterations: usize,
    /// Accept after the first solve whose residual is within tolerance.
    pub linear: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            reltol: 1e-4,
            abstol_current: 1e-9,
            abstol_voltage: 1e-6,
            abstol_state: 1e-12,
            max_iterations: 50,
            linear: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub unknowns: Vec<f64>,
    pub iterations: usize,
    /// Largest absolute KCL residual at the accepted iterate.
    pub max_kcl_residual: f64,
}

/// Candidate iterate: unknowns, system, weighted norm, step fraction.
type Trial = (Vec<f64>, MnaSystem, (f64, usize), f64);

/// Terms within this many ulps of the largest summand count as zero.
const ROUNDOFF_ULPS: f64 = 64.0;

fn residual_tolerance(layout: &Layout, row: usize, sys: &MnaSystem, opts: &NewtonOptions) -> f64 {
    let abs = match layout.kind(row) {
        RowKind::Node => opts.abstol_current,
        RowKind::Branch => opts.abstol_voltage,
        RowKind::State => opts.abstol_state,
    };
    abs + ROUNDOFF_ULPS * f64::EPSILON * sys.scale[row]
}

fn update_tolerance(layout: &Layout, row: usize, a: f64, b: f64, opts: &NewtonOptions) -> f64 {
    let abs = match layout.kind(row) {
        RowKind::Node => opts.abstol_voltage,
        RowKind::Branch => opts.abstol_current,
        RowKind::State => opts.abstol_state,
    };
    abs + opts.reltol * a.abs().max(b.abs())
}

/// Residual norm in tolerance units; at most 1 means converged.
fn weighted_norm(layout: &Layout, sys: &MnaSystem, opts: &NewtonOptions) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for r in 0..layout.dim() {
        let w = sys.residual[r].abs() / residual_tolerance(layout, r, sys, opts);
        if !(w <= worst.0) {
            worst = (w, r);
        }
    }
    worst
}

fn max_kcl(layout: &Layout, sys: &MnaSystem) -> f64 {
    (0..layout.dim())
        .filter(|&r| layout.kind(r) == RowKind::Node)
        .map(|r| sys.residual[r].abs())
        .fold(0.0, f64::max)
}

/// Solves `F(u) = 0` from `u0`. `build` stamps the system at an iterate.
pub fn newton_solve(
    layout: &Layout,
    u0: &[f64],
    opts: &NewtonOptions,
    mut build: impl FnMut(&[f64]) -> Result<MnaSystem, SimError>,
) -> Result<NewtonOutcome, SimError> {
    let n = layout.dim();
    let mut u = u0.to_vec();
    if n == 0 {
        return Ok(NewtonOutcome {
            unknowns: u,
            iterations: 0,
            max_kcl_residual: 0.0,
        });
    }
    let mut sys = build(&u)?;
    let mut norm = weighted_norm(layout, &sys, opts);

    for iteration in 1..=opts.max_iterations {
        let rhs: DVector<f64> = -&sys.residual;
        let delta = sys
            .jacobian
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| SimError::Singular(singular_hint(layout, &sys)))?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(SimError::Singular(singular_hint(layout, &sys)));
        }

        // Backtrack while the residual grows. If no damped trial improves
        // on the current iterate, take the full step: row scales differ by
        // many decades, so a norm increase alone is not evidence of
        // divergence.
        let mut chosen: Option<Trial> = None;
        let mut full: Option<Trial> = None;
        let mut alpha = 1.0;
        for _ in 0..8 {
            let trial: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Ok(s) = build(&trial) {
                let t_norm = weighted_norm(layout, &s, opts);
                if t_norm.0.is_finite() {
                    if t_norm.0 <= norm.0 || t_norm.0 <= 1.0 {
                        chosen = Some((trial, s, t_norm, alpha));
                        break;
                    }
                    if full.is_none() {
                        full = Some((trial, s, t_norm, alpha));
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, s, t_norm, alpha)) = chosen.or(full) else {
            return Err(SimError::NonFinite(f64::NAN));
        };
        let small_update = (0..n).all(|r| {
            (alpha * delta[r]).abs() <= update_tolerance(layout, r, trial[r], u[r], opts)
        });
        u = trial;
        sys = s;
        norm = t_norm;

        if norm.0 <= 1.0 && (small_update || opts.linear) {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite(f64::NAN));
            }
            return Ok(NewtonOutcome {
                max_kcl_residual: max_kcl(layout, &sys),
                unknowns: u,
                iterations: iteration,
            });
        }
    }
    Err(SimError::NewtonFailed {
        iterations: opts.max_iterations,
        worst: format!("{} (residual {:e})", layout.name(norm.1), sys.residual[norm.1]),
    })
}

fn singular_hint(layout: &Layout, sys: &MnaSystem) -> String {
    let n = layout.dim();
    let empty: Vec<&str> = (0..n)
        .filter(|&r| (0..n).all(|c| sys.jacobian[(r, c)] == 0.0))
        .map(|r| layout.name(r))
        .collect();
    if empty.is_empty() {
        " (check for voltage-source loops or floating nodes)".to_string()
    } else {
        format!(" (no conductance at {})", empty.join(", "))
    }
}
