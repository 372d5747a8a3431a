//! Operating point with hint, gmin, and source-stepping fallbacks.

use super::mna::{History, Mode, Prepared};
use super::newton::{newton_solve, NewtonOptions, NewtonOutcome};
use super::{BiasHints, Simulator, Solution};
use crate::circuit::{Circuit, ElementKind};
use crate::error::SimError;

const GMIN_LADDER: [f64; 11] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10, 1e-11, 1e-12];
const SOURCE_STEPS: usize = 10;

/// Operating point of `circuit`. Capacitor `IC=` values and `.IC` node
/// voltages are enforced; memristors sit at their initial state.
pub fn dc_operating_point(circuit: &Circuit, hints: &BiasHints) -> Result<Solution, SimError> {
    Simulator::new(circuit)?.dc_operating_point(hints)
}

struct Attempt<'a, 'c> {
    prep: &'a Prepared<'c>,
    history: &'a History,
    opts: NewtonOptions,
}

impl Attempt<'_, '_> {
    fn run(&self, u0: &[f64], source_scale: f64, gmin: f64, pinned: &[(usize, f64)]) -> Result<NewtonOutcome, SimError> {
        let mode = Mode::Dc {
            source_scale,
            gmin,
            pinned_outputs: pinned,
            history: self.history,
        };
        newton_solve(&self.prep.layout, u0, &self.opts, |u| self.prep.stamp(u, &mode))
    }
}

impl Simulator<'_> {
    pub fn dc_operating_point(&self, hints: &BiasHints) -> Result<Solution, SimError> {
        let prep = &self.prep;
        let history = prep.initial_history()?;
        let pinned = self.resolve_hints(hints)?;
        let attempt = Attempt {
            prep,
            history: &history,
            opts: NewtonOptions {
                linear: prep.circuit.is_linear(),
                ..NewtonOptions::default()
            },
        };
        let u0 = prep.flat_start(&history);
        let finish = |out: NewtonOutcome| Solution {
            time: 0.0,
            unknowns: out.unknowns,
            iterations: out.iterations,
            max_kcl_residual: out.max_kcl_residual,
            layout: prep.layout.clone(),
        };

        if !pinned.is_empty() {
            if let Ok(seed) = attempt.run(&u0, 1.0, 0.0, &pinned) {
                if let Ok(out) = attempt.run(&seed.unknowns, 1.0, 0.0, &[]) {
                    return Ok(finish(out));
                }
            }
        }
        let first = match attempt.run(&u0, 1.0, 0.0, &[]) {
            Ok(out) => return Ok(finish(out)),
            // Homotopies cannot repair a structurally singular matrix
            // unless gmin is what is missing; let gmin stepping decide.
            Err(e) => e,
        };

        // gmin stepping
        let mut u = u0.clone();
        let mut floor: Option<NewtonOutcome> = None;
        for &g in &GMIN_LADDER {
            match attempt.run(&u, 1.0, g, &[]) {
                Ok(out) => {
                    u = out.unknowns.clone();
                    floor = Some(out);
                }
                Err(_) => {
                    floor = None;
                    break;
                }
            }
        }
        if let Some(floor) = floor {
            return Ok(match attempt.run(&floor.unknowns, 1.0, 0.0, &[]) {
                Ok(out) => finish(out),
                // Keep the smallest-gmin solution when gmin = 0 is singular.
                Err(_) => finish(floor),
            });
        }

        // source stepping
        let mut u = u0;
        let mut last = None;
        for k in 1..=SOURCE_STEPS {
            match attempt.run(&u, k as f64 / SOURCE_STEPS as f64, 0.0, &[]) {
                Ok(out) => {
                    u = out.unknowns.clone();
                    last = Some(out);
                }
                Err(_) => {
                    last = None;
                    break;
                }
            }
        }
        if let Some(out) = last {
            return Ok(finish(out));
        }
        Err(match first {
            SimError::Singular(m) => SimError::Singular(m),
            SimError::NewtonFailed { worst, .. } => SimError::DcFailed { worst },
            other => other,
        })
    }

    fn resolve_hints(&self, hints: &BiasHints) -> Result<Vec<(usize, f64)>, SimError> {
        hints
            .opamp_outputs
            .iter()
            .map(|(name, v)| {
                let name = name.to_lowercase();
                self.prep
                    .circuit
                    .elements
                    .iter()
                    .position(|e| e.name == name && matches!(e.kind, ElementKind::OpAmp { .. }))
                    .map(|i| (i, *v))
                    .ok_or_else(|| SimError::InvalidConfig(format!("bias hint names unknown op-amp '{name}'")))
            })
            .collect()
    }
}
