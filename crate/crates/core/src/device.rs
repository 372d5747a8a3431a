//! Closed-form device mathematics.
//!
//! The memristor follows the linear dopant-drift model with a Joglekar-style
//! window. Sign convention: a positive current is conventional current
//! entering the `plus` terminal. It drives the state `x` up and the
//! resistance down.

use crate::error::DeviceError;

/// Slack allowed on `x` before [`memristance`] reports a domain error.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

/// Constants of one memristive device.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemristorParams {
    /// Fully doped resistance (Ω).
    pub r_on: f64,
    /// Undoped resistance (Ω).
    pub r_off: f64,
    /// Film thickness (m).
    pub d: f64,
    /// Dopant mobility (m²·s⁻¹·V⁻¹).
    pub mu_v: f64,
    /// Window sharpness. The window uses exponent `2 * p`.
    pub p: u32,
    /// Resistance at t = 0 (Ω).
    pub r_init: f64,
}

impl Default for MemristorParams {
    fn default() -> Self {
        Self {
            r_on: 100.0,
            r_off: 16e3,
            d: 10e-9,
            mu_v: 10e-15,
            p: 10,
            r_init: 1e3,
        }
    }
}

impl MemristorParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let finite = [self.r_on, self.r_off, self.d, self.mu_v, self.r_init]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(DeviceError::InvalidParams("non-finite parameter".into()));
        }
        if !(self.r_on > 0.0 && self.r_on < self.r_off) {
            return Err(DeviceError::InvalidParams(format!(
                "need 0 < r_on < r_off, got r_on={} r_off={}",
                self.r_on, self.r_off
            )));
        }
        if !(self.r_on <= self.r_init && self.r_init <= self.r_off) {
            return Err(DeviceError::InvalidParams(format!(
                "r_init={} outside [{}, {}]",
                self.r_init, self.r_on, self.r_off
            )));
        }
        if !(self.d > 0.0 && self.mu_v > 0.0) {
            return Err(DeviceError::InvalidParams("d and mu_v must be positive".into()));
        }
        if self.p == 0 {
            return Err(DeviceError::InvalidParams("p must be at least 1".into()));
        }
        Ok(())
    }

    /// Drift coefficient `mu_v * r_on / d²` in A⁻¹·s⁻¹.
    pub fn drift_coefficient(&self) -> f64 {
        self.mu_v * self.r_on / (self.d * self.d)
    }

    /// Initial state corresponding to `r_init`.
    pub fn initial_state(&self) -> Result<MemristorState, DeviceError> {
        x_from_resistance(self.r_init, self).map(MemristorState::new)
    }
}

/// Normalized position of the doped/undoped boundary.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct MemristorState {
    x: f64,
}

impl MemristorState {
    /// Builds a state, clamping into `[0, 1]`.
    pub fn new(x: f64) -> Self {
        Self { x: x.clamp(0.0, 1.0) }
    }

    pub fn x(self) -> f64 {
        self.x
    }
}

/// Resistance for state `x`: `r_off - (r_off - r_on) * x`.
pub fn memristance(x: f64, params: &MemristorParams) -> Result<f64, DeviceError> {
    if !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&x) {
        return Err(DeviceError::StateOutOfRange(x));
    }
    Ok(memristance_unchecked(x.clamp(0.0, 1.0), params))
}

#[inline]
pub(crate) fn memristance_unchecked(x: f64, params: &MemristorParams) -> f64 {
    params.r_off - (params.r_off - params.r_on) * x
}

/// Inverse of [`memristance`].
pub fn x_from_resistance(r: f64, params: &MemristorParams) -> Result<f64, DeviceError> {
    if !(params.r_on <= r && r <= params.r_off) {
        return Err(DeviceError::ResistanceOutOfRange {
            r,
            r_on: params.r_on,
            r_off: params.r_off,
        });
    }
    Ok((params.r_off - r) / (params.r_off - params.r_on))
}

/// Window `1 - (2x - 1)^(2p)`.
pub fn window(x: f64, p: u32) -> f64 {
    1.0 - (2.0 * x - 1.0).powi(2 * p as i32)
}

/// d(window)/dx.
pub fn window_slope(x: f64, p: u32) -> f64 {
    let n = 2 * p as i32;
    -2.0 * n as f64 * (2.0 * x - 1.0).powi(n - 1)
}

/// State rate `k * i * window(x)`.
pub fn state_derivative(x: f64, current: f64, params: &MemristorParams) -> f64 {
    params.drift_coefficient() * current * window(x, params.p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMethod {
    ExplicitEuler,
    /// Backward Euler solved by scalar Newton.
    Implicit,
}

const SCALAR_NEWTON_MAX_ITERS: usize = 50;

/// Advances `x` by one step under a constant current. The result is clamped
/// to `[0, 1]`.
pub fn integrate_state_step(
    x: f64,
    current: f64,
    dt: f64,
    params: &MemristorParams,
    method: StepMethod,
) -> Result<f64, DeviceError> {
    if !(dt > 0.0) {
        return Err(DeviceError::InvalidStep(dt));
    }
    let next = match method {
        StepMethod::ExplicitEuler => x + dt * state_derivative(x, current, params),
        StepMethod::Implicit => {
            let gain = dt * params.drift_coefficient() * current;
            let mut y = x;
            let mut converged = false;
            for _ in 0..SCALAR_NEWTON_MAX_ITERS {
                let f = y - x - gain * window(y, params.p);
                let df = 1.0 - gain * window_slope(y, params.p);
                if df == 0.0 || !df.is_finite() {
                    break;
                }
                let step = f / df;
                y -= step;
                if !y.is_finite() {
                    break;
                }
                if step.abs() <= 1e-15 * (1.0 + y.abs()) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(DeviceError::ScalarNewtonDiverged { x, current, dt });
            }
            y
        }
    };
    Ok(next.clamp(0.0, 1.0))
}

/// Behavioral op-amp: finite gain, hard output limit, optional single pole.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpAmpModel {
    pub open_loop_gain: f64,
    /// Output rail magnitude (V), equal to the supply.
    pub v_sat: f64,
    /// Dominant pole (Hz). `None` makes the output algebraic.
    pub pole_freq: Option<f64>,
}

impl Default for OpAmpModel {
    fn default() -> Self {
        Self {
            open_loop_gain: 2e5,
            v_sat: 5.0,
            pole_freq: Some(20.0),
        }
    }
}

impl OpAmpModel {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.open_loop_gain > 0.0 && self.open_loop_gain.is_finite()) {
            return Err(DeviceError::InvalidParams("op-amp gain must be positive".into()));
        }
        if !(self.v_sat > 0.0 && self.v_sat.is_finite()) {
            return Err(DeviceError::InvalidParams("op-amp v_sat must be positive".into()));
        }
        if let Some(f) = self.pole_freq {
            if !(f > 0.0 && f.is_finite()) {
                return Err(DeviceError::InvalidParams("op-amp pole must be positive".into()));
            }
        }
        Ok(())
    }

    /// Pole angular frequency (rad/s).
    pub fn pole_omega(&self) -> Option<f64> {
        self.pole_freq.map(|f| 2.0 * std::f64::consts::PI * f)
    }
}

/// Static transfer `clamp(gain * (v_plus - v_minus), -v_sat, v_sat)`.
pub fn opamp_output(v_plus: f64, v_minus: f64, model: &OpAmpModel) -> f64 {
    (model.open_loop_gain * (v_plus - v_minus)).clamp(-model.v_sat, model.v_sat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> MemristorParams {
        MemristorParams::default()
    }

    #[test]
    fn memristance_endpoints() {
        let p = table();
        assert_eq!(memristance(0.0, &p).unwrap(), 16000.0);
        assert_eq!(memristance(1.0, &p).unwrap(), 100.0);
        let x = 15000.0 / 15900.0;
        assert!((memristance(x, &p).unwrap() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn memristance_rejects_out_of_range() {
        let p = table();
        assert!(matches!(memristance(1.1, &p), Err(DeviceError::StateOutOfRange(_))));
        assert!(memristance(f64::NAN, &p).is_err());
        // within clamp tolerance
        assert_eq!(memristance(1.0 + 1e-12, &p).unwrap(), 100.0);
    }

    #[test]
    fn window_values() {
        assert_eq!(window(0.5, 10), 1.0);
        assert_eq!(window(0.0, 10), 0.0);
        assert_eq!(window(1.0, 10), 0.0);
        let expected = 1.0 - 0.5f64.powi(20);
        assert!((window(0.25, 10) - expected).abs() < 1e-15);
        assert!((window(0.25, 10) - 0.99999904633).abs() < 1e-11);
    }

    #[test]
    fn window_slope_matches_finite_difference() {
        for &x in &[0.1, 0.3, 0.5, 0.77, 0.95] {
            let h = 1e-6;
            let fd = (window(x + h, 10) - window(x - h, 10)) / (2.0 * h);
            assert!((fd - window_slope(x, 10)).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn drift_coefficient_from_defaults() {
        let k = table().drift_coefficient();
        assert!((k - 1.0e4).abs() < 1e-8);
        assert!((state_derivative(0.5, 1e-3, &table()) - 10.0).abs() < 1e-12);
        assert_eq!(state_derivative(1.0, 0.3, &table()), 0.0);
    }

    #[test]
    fn x_from_resistance_values() {
        let p = table();
        assert!((x_from_resistance(1000.0, &p).unwrap() - 0.943_396_226_4).abs() < 1e-9);
        assert_eq!(x_from_resistance(16000.0, &p).unwrap(), 0.0);
        assert_eq!(x_from_resistance(100.0, &p).unwrap(), 1.0);
        assert!(x_from_resistance(50.0, &p).is_err());
        assert!(x_from_resistance(17e3, &p).is_err());
    }

    #[test]
    fn opamp_static_transfer() {
        let m = OpAmpModel::default();
        assert_eq!(opamp_output(1.0, 0.0, &m), 5.0);
        assert_eq!(opamp_output(0.3, 0.3, &m), 0.0);
        assert!((opamp_output(1e-6, 0.0, &m) - 0.2).abs() < 1e-12);
        assert_eq!(opamp_output(-1.0, 0.0, &m), -5.0);
    }

    #[test]
    fn state_step_cases() {
        let p = table();
        for method in [StepMethod::ExplicitEuler, StepMethod::Implicit] {
            assert_eq!(integrate_state_step(0.3, 0.0, 1e-3, &p, method).unwrap(), 0.3);
        }
        assert_eq!(
            integrate_state_step(0.999999, 1.0, 1.0, &p, StepMethod::ExplicitEuler).unwrap(),
            1.0
        );
        // the implicit fixed point approaches the boundary without crossing it
        let y = integrate_state_step(0.999999, 1.0, 1.0, &p, StepMethod::Implicit).unwrap();
        assert!(y > 0.999999 && y <= 1.0);
        let next = integrate_state_step(0.5, 1e-3, 1e-6, &p, StepMethod::ExplicitEuler).unwrap();
        assert!((next - 0.50001).abs() < 1e-15);
        assert!(integrate_state_step(0.5, 1e-3, 0.0, &p, StepMethod::Implicit).is_err());
    }

    #[test]
    fn implicit_step_converges_to_explicit() {
        // Richardson-style: the gap should shrink ~4x per halving (both are
        // first order, so their difference is O(dt^2) per step).
        let p = table();
        let (x, i) = (0.9, 2e-3);
        let gap = |dt: f64| {
            let e = integrate_state_step(x, i, dt, &p, StepMethod::ExplicitEuler).unwrap();
            let m = integrate_state_step(x, i, dt, &p, StepMethod::Implicit).unwrap();
            (e - m).abs()
        };
        let (g1, g2, g4) = (gap(1e-4), gap(5e-5), gap(2.5e-5));
        assert!(g2 < g1 && g4 < g2);
        assert!((g1 / g2 - 4.0).abs() < 0.1, "{}", g1 / g2);
        assert!((g2 / g4 - 4.0).abs() < 0.1, "{}", g2 / g4);
    }

    #[test]
    fn param_validation() {
        assert!(table().validate().is_ok());
        let mut bad = table();
        bad.r_on = 20e3;
        assert!(bad.validate().is_err());
        let mut bad = table();
        bad.r_init = 50.0;
        assert!(bad.validate().is_err());
        let mut bad = table();
        bad.p = 0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn window_is_symmetric(x in 0.0f64..=1.0, p in 1u32..16) {
            prop_assert!((window(x, p) - window(1.0 - x, p)).abs() < 1e-12);
        }

        #[test]
        fn resistance_round_trip(r in 100.0f64..=16000.0) {
            let p = MemristorParams::default();
            let x = x_from_resistance(r, &p).unwrap();
            let back = memristance(x, &p).unwrap();
            prop_assert!((back - r).abs() <= 4.0 * f64::EPSILON * p.r_off);
        }

        #[test]
        fn memristance_is_bounded(x in 0.0f64..=1.0) {
            let p = MemristorParams::default();
            let r = memristance(x, &p).unwrap();
            prop_assert!(r >= p.r_on && r <= p.r_off);
        }

        #[test]
        fn opamp_is_odd_and_monotone(a in -1e-3f64..1e-3, b in -1e-3f64..1e-3) {
            let m = OpAmpModel::default();
            prop_assert_eq!(opamp_output(a, 0.0, &m), -opamp_output(-a, 0.0, &m));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(opamp_output(lo, 0.0, &m) <= opamp_output(hi, 0.0, &m));
        }
    }
}
