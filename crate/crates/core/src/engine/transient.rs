//! Time stepping with step halving on failure and optional step-doubling
//! error control.

use super::mna::{History, Mode, RowKind};
use super::newton::{newton_solve, NewtonOutcome};
use super::{recorders, BiasHints, Integrator, Simulator, Solution, TraceSet, TransientConfig};
use crate::circuit::Circuit;
use crate::error::SimError;

/// Absolute tolerance on memristor state for local error estimates.
const STATE_LTE_ABSTOL: f64 = 1e-6;

/// Operating point followed by a transient run.
pub fn transient(circuit: &Circuit, config: &TransientConfig, hints: &BiasHints) -> Result<TraceSet, SimError> {
    let sim = Simulator::new(circuit)?;
    let op = sim.dc_operating_point(hints)?;
    sim.transient_from(config, &op)
}

struct Step {
    unknowns: Vec<f64>,
    history: History,
    outcome: NewtonOutcome,
}

impl Simulator<'_> {
    pub fn transient(&self, config: &TransientConfig, hints: &BiasHints) -> Result<TraceSet, SimError> {
        let op = self.dc_operating_point(hints)?;
        self.transient_from(config, &op)
    }

    /// Transient starting from a given operating point.
    pub fn transient_from(&self, config: &TransientConfig, op: &Solution) -> Result<TraceSet, SimError> {
        config.validate()?;
        let prep = &self.prep;
        if op.unknowns.len() != prep.layout.dim() {
            return Err(SimError::InvalidConfig("operating point belongs to another circuit".into()));
        }
        let record = recorders(prep);
        let mut traces = TraceSet::new(record.iter().map(|(n, _)| n.clone()).collect());
        let sample = |u: &[f64]| record.iter().map(|(_, f)| f(u)).collect::<Vec<f64>>();

        let mut u = op.unknowns.clone();
        let mut history = prep.history_from(&u);
        traces.push(0.0, &sample(&u), op.max_kcl_residual, op.iterations);

        let order = match config.integrator {
            Integrator::BackwardEuler => 1,
            Integrator::Trapezoidal => 2,
        };
        let end_slack = config.dt_min * 1e-3;
        let mut t = 0.0;
        let mut h = config.dt;
        let mut last_error: Option<SimError> = None;

        while t < config.t_stop - end_slack {
            if h < config.dt_min * (1.0 - 1e-9) {
                return Err(match last_error {
                    Some(SimError::NonFinite(_)) => SimError::NonFinite(t),
                    _ => SimError::TimestepUnderflow { time: t, dt: h },
                });
            }
            let h_try = h.min(config.t_stop - t);
            let result = if config.adaptive {
                self.doubled_step(&u, &history, h_try, config, order)
            } else {
                self.step(&u, &history, h_try, config).map(|s| (s, 0.0))
            };
            match result {
                Ok((s, err)) if err <= 1.0 => {
                    t += h_try;
                    // Keep fixed-step runs on the exact nominal grid.
                    let grid = (t / config.dt).round() * config.dt;
                    if (config.t_stop - t).abs() <= end_slack {
                        t = config.t_stop;
                    } else if !config.adaptive && (grid - t).abs() <= 1e-6 * config.dt {
                        t = grid;
                    }
                    if s.unknowns.iter().any(|v| !v.is_finite()) {
                        return Err(SimError::NonFinite(t));
                    }
                    traces.push(t, &sample(&s.unknowns), s.outcome.max_kcl_residual, s.outcome.iterations);
                    u = s.unknowns;
                    history = s.history;
                    last_error = None;
                    h = if config.adaptive {
                        let grow = if err > 0.0 { 0.9 * err.powf(-1.0 / (order as f64 + 1.0)) } else { 2.0 };
                        (h_try * grow.clamp(1.0, 2.0)).min(config.dt_max)
                    } else {
                        (h_try * 2.0).min(config.dt)
                    };
                }
                Ok((_, err)) => {
                    let shrink = 0.9 * err.powf(-1.0 / (order as f64 + 1.0));
                    h = h_try * shrink.clamp(0.25, 0.5);
                }
                Err(e @ SimError::Singular(_)) => return Err(e),
                Err(e) => {
                    last_error = Some(e);
                    h = h_try / 2.0;
                }
            }
        }
        Ok(traces)
    }

    fn step(&self, u: &[f64], history: &History, h: f64, config: &TransientConfig) -> Result<Step, SimError> {
        let prep = &self.prep;
        let mode = Mode::Transient {
            h,
            integrator: config.integrator,
            history,
        };
        let opts = config.newton_options(prep.circuit.is_linear());
        let outcome = newton_solve(&prep.layout, u, &opts, |v| prep.stamp(v, &mode))?;
        let mut unknowns = outcome.unknowns.clone();
        let history = prep.advance_history(&mut unknowns, history, h, config.integrator);
        Ok(Step {
            unknowns,
            history,
            outcome,
        })
    }

    /// One step of `h` against two of `h/2`; returns the finer result and
    /// the scaled error estimate.
    fn doubled_step(
        &self,
        u: &[f64],
        history: &History,
        h: f64,
        config: &TransientConfig,
        order: i32,
    ) -> Result<(Step, f64), SimError> {
        let coarse = self.step(u, history, h, config)?;
        let half = self.step(u, history, h / 2.0, config)?;
        let mut fine = self.step(&half.unknowns, &half.history, h / 2.0, config)?;
        fine.outcome.iterations += half.outcome.iterations;
        let layout = &self.prep.layout;
        let denom = f64::from(2i32.pow(order as u32) - 1);
        let mut err: f64 = 0.0;
        for r in 0..layout.dim() {
            let abs = match layout.kind(r) {
                RowKind::Node => config.abstol_voltage,
                RowKind::State => STATE_LTE_ABSTOL,
                RowKind::Branch => continue,
            };
            let (a, b) = (coarse.unknowns[r], fine.unknowns[r]);
            let tol = abs + config.reltol * a.abs().max(b.abs());
            err = err.max((a - b).abs() / denom / tol);
        }
        Ok((fine, err))
    }
}
