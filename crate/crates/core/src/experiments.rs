//! Resistance-copying feedback circuits and their metrics.
//!
//! Both circuits share an op-amp comparator whose inverting input sits on
//! the R1/R2 divider of its own output `v1` (so `v3 = v1/2` for R1 = R2)
//! and whose non-inverting input `v2` is the midpoint of the
//! memristor/R_ref divider. The loop drives the memristor until `v2 = v3`,
//! i.e. until R_mem = R_ref.
//!
//! - increase: `v1 -> memristor -> v2 -> R_ref -> 0`, plus terminal at `v2`
//! - decrease: `v1 -> R_ref -> v2 -> memristor -> 0`, plus terminal at `v2`

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::circuit::Circuit;
use crate::device::{MemristorParams, OpAmpModel};
use crate::engine::{BiasHints, Simulator, TraceSet, TransientConfig};
use crate::error::ExperimentError;
use crate::netlist::{flatten, parse_netlist};

/// The behavioral HP subcircuit, defining `memristor`.
pub const HP_SUBCKT: &str = include_str!("../fixtures/hp_subckt.sp");

/// Relative error of the final resistance that counts as converged.
pub const CONVERGED_BAND: f64 = 0.02;

/// Instance names in generated circuits.
pub const OPAMP_NAME: &str = "xop";
pub const MEMRISTOR_NAME: &str = "xmem";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Increase,
    Decrease,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Increase => "increase",
            ExperimentKind::Decrease => "decrease",
        }
    }
}

/// How the memristor is put into the circuit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Realization {
    /// Built-in device with its state coupled inside Newton.
    #[default]
    Native,
    /// The behavioral HP subcircuit.
    Subcircuit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub r_ref: f64,
    pub r_init: f64,
    pub r1: f64,
    pub r2: f64,
    /// Supply A; the op-amp saturates at ±A.
    pub supply: f64,
    /// `r_init` here is ignored in favor of the field above.
    pub memristor: MemristorParams,
    /// Gain and pole; `v_sat` is taken from `supply`.
    pub opamp: OpAmpModel,
    pub transient: TransientConfig,
    pub realization: Realization,
}

impl ExperimentSpec {
    fn defaults(kind: ExperimentKind, r_ref: f64, r_init: f64) -> Self {
        ExperimentSpec {
            kind,
            r_ref,
            r_init,
            r1: 1e3,
            r2: 1e3,
            supply: 5.0,
            memristor: MemristorParams::default(),
            opamp: OpAmpModel::default(),
            transient: TransientConfig::new(15e-3, 1e-6),
            realization: Realization::Native,
        }
    }

    /// Increase circuit with R_init = 1 kΩ, R1 = R2 = 1 kΩ, A = 5 V,
    /// 15 ms at 1 µs trapezoidal.
    pub fn increase(r_ref: f64) -> Self {
        Self::defaults(ExperimentKind::Increase, r_ref, 1e3)
    }

    /// Decrease circuit with R_init = 2 kΩ and otherwise the same defaults.
    pub fn decrease(r_ref: f64) -> Self {
        Self::defaults(ExperimentKind::Decrease, r_ref, 2e3)
    }

    pub fn name(&self) -> String {
        format!("{}-rref{}", self.kind.as_str(), self.r_ref)
    }

    pub fn memristor_params(&self) -> MemristorParams {
        MemristorParams {
            r_init: self.r_init,
            ..self.memristor
        }
    }

    pub fn opamp_model(&self) -> OpAmpModel {
        OpAmpModel {
            v_sat: self.supply,
            ..self.opamp
        }
    }

    /// Checks preconditions; returns warnings for legal but unusual specs.
    pub fn validate(&self) -> Result<Vec<String>, ExperimentError> {
        let cfg = |m: String| Err(ExperimentError::Config(m));
        for (what, v) in [("r_ref", self.r_ref), ("r1", self.r1), ("r2", self.r2), ("supply", self.supply)] {
            if !(v.is_finite() && v > 0.0) {
                return cfg(format!("{what} must be positive, got {v}"));
            }
        }
        let p = self.memristor_params();
        p.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.opamp_model()
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        match self.kind {
            ExperimentKind::Increase if self.r_ref <= self.r_init => {
                return cfg(format!(
                    "increase circuit needs r_ref > r_init (got {} <= {})",
                    self.r_ref, self.r_init
                ))
            }
            ExperimentKind::Decrease if self.r_ref >= self.r_init => {
                return cfg(format!(
                    "decrease circuit needs r_ref < r_init (got {} >= {})",
                    self.r_ref, self.r_init
                ))
            }
            _ => {}
        }
        if !(p.r_on..=p.r_off).contains(&self.r_ref) {
            return cfg(format!(
                "r_ref {} is outside the device range [{}, {}]",
                self.r_ref, p.r_on, p.r_off
            ));
        }
        let mut warnings = Vec::new();
        if self.r1 != self.r2 {
            warnings.push(format!(
                "r1 != r2: v3 = v1*{:.4} instead of v1/2, so the loop settles away from r_ref",
                self.r2 / (self.r1 + self.r2)
            ));
        }
        Ok(warnings)
    }

    /// Netlist text of the circuit.
    pub fn netlist(&self) -> String {
        let p = self.memristor_params();
        let op = self.opamp_model();
        let mut s = format!("* {} circuit\n", self.kind.as_str());
        let mem_model = match self.realization {
            Realization::Native => format!(
                "hpmem ron={:e} roff={:e} rinit={:e} d={:e} uv={:e} p={}",
                p.r_on, p.r_off, p.r_init, p.d, p.mu_v, p.p
            ),
            Realization::Subcircuit => {
                s.push_str(HP_SUBCKT);
                format!(
                    "memristor ron={:e} roff={:e} rinit={:e} d={:e} uv={:e} p={}",
                    p.r_on, p.r_off, p.r_init, p.d, p.mu_v, p.p
                )
            }
        };
        s += &format!(
            "{OPAMP_NAME} v1 v2 v3 opamp gain={:e} vsat={:e} pole={:e}\n",
            op.open_loop_gain,
            op.v_sat,
            op.pole_freq.unwrap_or(0.0)
        );
        match self.kind {
            ExperimentKind::Increase => {
                s += &format!("{MEMRISTOR_NAME} v2 v1 {mem_model}\n");
                s += &format!("rref v2 0 {:e}\n", self.r_ref);
            }
            ExperimentKind::Decrease => {
                s += &format!("rref v1 v2 {:e}\n", self.r_ref);
                s += &format!("{MEMRISTOR_NAME} v2 0 {mem_model}\n");
            }
        }
        s += &format!("r1 v1 v3 {:e}\nr2 v3 0 {:e}\n", self.r1, self.r2);
        s += &format!(".tran {:e} {:e}\n.end\n", self.transient.dt, self.transient.t_stop);
        s
    }

    /// The comparator starts at the rail that drives R_mem toward R_ref:
    /// for both orientations that is `+A`, since `v2 > v1/2` initially.
    pub fn bias_hints(&self) -> BiasHints {
        BiasHints::opamp(OPAMP_NAME, self.supply)
    }
}

fn build(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<Circuit, ExperimentError> {
    if spec.kind != kind {
        return Err(ExperimentError::Config(format!(
            "spec is for the {} circuit, not {}",
            spec.kind.as_str(),
            kind.as_str()
        )));
    }
    let warnings = spec.validate()?;
    let name = spec.name();
    let doc = parse_netlist(&spec.netlist()).map_err(|source| ExperimentError::Parse {
        experiment: name.clone(),
        source,
    })?;
    let mut circuit = flatten(&doc, &HashMap::new()).map_err(|source| ExperimentError::Flatten {
        experiment: name,
        source,
    })?;
    circuit.warnings.extend(warnings);
    Ok(circuit)
}

pub fn build_increase_circuit(spec: &ExperimentSpec) -> Result<Circuit, ExperimentError> {
    build(spec, ExperimentKind::Increase)
}

pub fn build_decrease_circuit(spec: &ExperimentSpec) -> Result<Circuit, ExperimentError> {
    build(spec, ExperimentKind::Decrease)
}

pub fn build_circuit(spec: &ExperimentSpec) -> Result<Circuit, ExperimentError> {
    build(spec, spec.kind)
}

/// Earliest time after which `|r - target| <= band * target` holds for
/// every later sample. `None` if the last sample is outside the band.
pub fn settling_time(time: &[f64], r: &[f64], target: f64, band: f64) -> Option<f64> {
    let tol = band * target;
    let mut settled = None;
    for (t, v) in time.iter().zip(r).rev() {
        if (v - target).abs() <= tol {
            settled = Some(*t);
        } else {
            break;
        }
    }
    settled
}

/// Least-squares slope (with intercept) of `(x, y)` pairs. `None` when the
/// abscissae have no spread.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let scale = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if !(sxx > (f64::EPSILON * scale).powi(2) * n) {
        return None;
    }
    Some(sxy / sxx)
}

/// Memristor V-I trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ViCurve {
    /// Time-ordered (current A, voltage V) pairs.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope over the final 10% of samples, ohms.
    pub steady_slope: Option<f64>,
}

/// Fraction of samples used for the steady-state slope.
pub const STEADY_FRACTION: f64 = 0.1;

pub fn extract_vi_curve(traces: &TraceSet, memristor: &str) -> Result<ViCurve, ExperimentError> {
    let get = |sel: String| {
        traces
            .probe(&sel)
            .map_err(|_| ExperimentError::MissingSignal(sel.clone()))
    };
    let i = get(format!("i({memristor})"))?;
    let v = get(format!("vd({memristor})"))?;
    let points: Vec<(f64, f64)> = i.iter().copied().zip(v.iter().copied()).collect();
    let tail = ((points.len() as f64 * STEADY_FRACTION).ceil() as usize).clamp(2.min(points.len()), points.len());
    let steady_slope = least_squares_slope(&points[points.len() - tail..]);
    Ok(ViCurve { points, steady_slope })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentMetrics {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub r_ref: f64,
    /// Memristance at the last time point, from the recorded state.
    pub final_r: f64,
    pub settling_time_2pct: Option<f64>,
    pub settling_time_5pct: Option<f64>,
    pub converged: bool,
    /// Steady-state V-I slope; falls back to the mean memristance over the
    /// same window when the current has no spread.
    pub steady_slope: f64,
    /// Mean |v1| over the final 5% of samples.
    pub mean_abs_v1_tail: f64,
    pub steps: usize,
    #[serde(skip)]
    pub vi_curve: Vec<(f64, f64)>,
}

impl ExperimentMetrics {
    pub fn from_traces(spec: &ExperimentSpec, traces: &TraceSet) -> Result<Self, ExperimentError> {
        let missing = |s: &str| ExperimentError::MissingSignal(s.to_string());
        let r_sel = format!("r({MEMRISTOR_NAME})");
        let r = traces.probe(&r_sel).map_err(|_| missing(&r_sel))?;
        let time = traces.time();
        let final_r = *r.last().ok_or_else(|| missing(&r_sel))?;
        let vi = extract_vi_curve(traces, MEMRISTOR_NAME)?;
        let tail = ((r.len() as f64 * STEADY_FRACTION).ceil() as usize).clamp(1, r.len());
        let steady_slope = vi
            .steady_slope
            .unwrap_or_else(|| r[r.len() - tail..].iter().sum::<f64>() / tail as f64);
        let v1 = traces.probe("v(v1)").map_err(|_| missing("v(v1)"))?;
        let tail5 = ((v1.len() as f64 * 0.05).ceil() as usize).clamp(1, v1.len());
        let mean_abs_v1_tail = v1[v1.len() - tail5..].iter().map(|v| v.abs()).sum::<f64>() / tail5 as f64;
        Ok(ExperimentMetrics {
            experiment: spec.name(),
            kind: spec.kind,
            r_ref: spec.r_ref,
            final_r,
            settling_time_2pct: settling_time(time, &r, spec.r_ref, 0.02),
            settling_time_5pct: settling_time(time, &r, spec.r_ref, 0.05),
            converged: ((final_r - spec.r_ref) / spec.r_ref).abs() <= CONVERGED_BAND,
            steady_slope,
            mean_abs_v1_tail,
            steps: traces.len().saturating_sub(1),
            vi_curve: vi.points,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub spec: ExperimentSpec,
    pub circuit: Circuit,
    pub traces: TraceSet,
    pub metrics: ExperimentMetrics,
}

impl ExperimentRun {
    pub fn warnings(&self) -> &[String] {
        &self.circuit.warnings
    }

    /// Writes `time,v1,v2,v3,i_mem,v_mem,x,r_mem`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<(), ExperimentError> {
        let m = MEMRISTOR_NAME;
        let sels = [
            "v(v1)".to_string(),
            "v(v2)".into(),
            "v(v3)".into(),
            format!("i({m})"),
            format!("vd({m})"),
            format!("x({m})"),
            format!("r({m})"),
        ];
        let mut cols = Vec::with_capacity(sels.len());
        for s in &sels {
            cols.push(
                self.traces
                    .probe(s)
                    .map_err(|_| ExperimentError::MissingSignal(s.clone()))?,
            );
        }
        writeln!(w, "time,v1,v2,v3,i_mem,v_mem,x,r_mem")?;
        for (k, t) in self.traces.time().iter().enumerate() {
            write!(w, "{t:.8e}")?;
            for c in &cols {
                write!(w, ",{:.8e}", c[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentRun, ExperimentError> {
    let circuit = build_circuit(spec)?;
    let sim_err = |source| ExperimentError::Sim {
        experiment: spec.name(),
        source,
    };
    let sim = Simulator::new(&circuit).map_err(sim_err)?;
    let traces = sim
        .transient(&spec.transient, &spec.bias_hints())
        .map_err(sim_err)?;
    let metrics = ExperimentMetrics::from_traces(spec, &traces)?;
    Ok(ExperimentRun {
        spec: spec.clone(),
        circuit,
        traces,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_examples() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(settling_time(&t, &[100.0; 5], 100.0, 0.05), Some(0.0));
        // Enters at t=1, leaves at t=2, re-enters at t=3.
        let r = [50.0, 99.0, 120.0, 101.0, 100.0];
        assert_eq!(settling_time(&t, &r, 100.0, 0.05), Some(3.0));
        assert_eq!(settling_time(&t, &[0.0, 0.0, 0.0, 0.0, 90.0], 100.0, 0.05), None);
        assert_eq!(settling_time(&[], &[], 100.0, 0.05), None);
    }

    #[test]
    fn slope_of_a_resistor() {
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|k| {
                let i = (k as f64 * 0.37).sin() * 1e-3;
                (i, 1000.0 * i)
            })
            .collect();
        assert!((least_squares_slope(&pts).unwrap() - 1000.0).abs() < 1e-9);
        assert_eq!(least_squares_slope(&[(1.0, 2.0); 4]), None);
        assert_eq!(least_squares_slope(&[(1.0, 2.0)]), None);
    }

    #[test]
    fn kind_preconditions() {
        let mut s = ExperimentSpec::increase(500.0);
        assert!(matches!(s.validate(), Err(ExperimentError::Config(_))));
        s.kind = ExperimentKind::Decrease;
        assert!(s.validate().unwrap().is_empty());
        assert!(matches!(build_increase_circuit(&s), Err(ExperimentError::Config(_))));
        let mut s = ExperimentSpec::increase(2e3);
        s.r1 = 2e3;
        assert_eq!(s.validate().unwrap().len(), 1);
        s.r_ref = 20e3;
        assert!(s.validate().is_err());
    }
}
