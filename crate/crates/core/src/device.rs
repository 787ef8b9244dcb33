//! Single charge-trap transistor: threshold-voltage programming by counted
//! pulse trains and triode-region drain current.
//!
//! Programming follows a saturating exponential in the pulse count. Trapping
//! pulses push `vt` toward `vt_max`, de-trapping pulses pull it toward
//! `vt_min`, and each pulse moves the device by a fraction of the remaining
//! distance so efficiency drops as traps fill.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid device physics: {0}")]
    InvalidPhysics(String),
    #[error("target threshold {target} V outside programmable window [{min}, {max}] V")]
    TargetOutOfWindow { target: f64, min: f64, max: f64 },
    #[error("threshold {vt} V outside programmable window [{min}, {max}] V")]
    StateOutOfWindow { vt: f64, min: f64, max: f64 },
    #[error("drain bias {vds} V is negative")]
    NegativeDrainBias { vds: f64 },
    #[error("device leaves triode: vds {vds} V >= overdrive {overdrive} V")]
    NotTriode { vds: f64, overdrive: f64 },
}

/// Pulse polarity on the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Positive gate pulses; raise `vt`.
    Trap,
    /// Negative gate pulses; lower `vt`.
    Detrap,
}

/// Which form of the triode current law to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurrentModel {
    /// `g0 * vds * (v_gs - vt)`
    #[default]
    Linear,
    /// `g0/2 * (2 * vds * (v_gs - vt) - vds^2)`
    Quadratic,
}

/// Electrical programming conditions. Carried as metadata; the behavioral
/// model does not consume them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConditions {
    pub trap_gate_v: f64,
    pub trap_drain_v: f64,
    pub detrap_gate_v: f64,
    pub detrap_drain_v: f64,
}

impl Default for PulseConditions {
    fn default() -> Self {
        Self {
            trap_gate_v: 2.0,
            trap_drain_v: 1.3,
            detrap_gate_v: -1.3,
            detrap_drain_v: 0.0,
        }
    }
}

/// Physical constants shared by every device in an array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevicePhysics {
    /// Transconductance factor `k_n * W / L` (A/V^2).
    pub g0: f64,
    /// Gate-source voltage held during compute (V).
    pub v_gs: f64,
    pub vt_min: f64,
    pub vt_max: f64,
    /// Trapping time constant, in pulses.
    pub tau_trap: f64,
    /// De-trapping time constant, in pulses.
    pub tau_detrap: f64,
    pub pulses: PulseConditions,
}

impl Default for DevicePhysics {
    fn default() -> Self {
        Self {
            g0: 1.0,
            v_gs: 1.0,
            vt_min: 0.3,
            vt_max: 0.7,
            tau_trap: 256.0,
            tau_detrap: 256.0,
            pulses: PulseConditions::default(),
        }
    }
}

impl DevicePhysics {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let all_finite = [
            self.g0,
            self.v_gs,
            self.vt_min,
            self.vt_max,
            self.tau_trap,
            self.tau_detrap,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(DeviceError::InvalidPhysics("non-finite constant".into()));
        }
        if !(0.0 < self.vt_min && self.vt_min < self.vt_max && self.vt_max < self.v_gs) {
            return Err(DeviceError::InvalidPhysics(format!(
                "need 0 < vt_min < vt_max < v_gs, got vt_min={} vt_max={} v_gs={}",
                self.vt_min, self.vt_max, self.v_gs
            )));
        }
        if self.g0 <= 0.0 {
            return Err(DeviceError::InvalidPhysics(format!("g0 must be > 0, got {}", self.g0)));
        }
        if self.tau_trap <= 0.0 || self.tau_detrap <= 0.0 {
            return Err(DeviceError::InvalidPhysics(format!(
                "time constants must be > 0, got tau_trap={} tau_detrap={}",
                self.tau_trap, self.tau_detrap
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> f64 {
        self.vt_max - self.vt_min
    }

    /// Smallest overdrive any programmed device can have.
    pub fn min_overdrive(&self) -> f64 {
        self.v_gs - self.vt_max
    }

    pub fn max_overdrive(&self) -> f64 {
        self.v_gs - self.vt_min
    }

    fn tau(&self, polarity: Polarity) -> f64 {
        match polarity {
            Polarity::Trap => self.tau_trap,
            Polarity::Detrap => self.tau_detrap,
        }
    }

    fn asymptote(&self, polarity: Polarity) -> f64 {
        match polarity {
            Polarity::Trap => self.vt_max,
            Polarity::Detrap => self.vt_min,
        }
    }

    /// Threshold change produced by one more pulse from `vt`.
    pub fn single_pulse_step(&self, vt: f64, polarity: Polarity) -> f64 {
        (self.asymptote(polarity) - vt).abs() * (-(-1.0 / self.tau(polarity)).exp_m1())
    }
}

/// One device's programmed threshold voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub vt: f64,
}

impl DeviceState {
    pub fn new(vt: f64, physics: &DevicePhysics) -> Result<Self, DeviceError> {
        if !(physics.vt_min..=physics.vt_max).contains(&vt) {
            return Err(DeviceError::StateOutOfWindow {
                vt,
                min: physics.vt_min,
                max: physics.vt_max,
            });
        }
        Ok(Self { vt })
    }

    pub fn overdrive(&self, physics: &DevicePhysics) -> f64 {
        physics.v_gs - self.vt
    }
}

/// Applies `n` pulses of the given polarity and returns the new state.
pub fn apply_pulses(
    state: DeviceState,
    physics: &DevicePhysics,
    n: u32,
    polarity: Polarity,
) -> DeviceState {
    if n == 0 {
        return state;
    }
    let target = physics.asymptote(polarity);
    let decay = (-(n as f64) / physics.tau(polarity)).exp();
    let vt = target - (target - state.vt) * decay;
    DeviceState {
        vt: vt.clamp(physics.vt_min, physics.vt_max),
    }
}

/// Pulse count and polarity that take `state` closest to `target_vt`.
///
/// For reachable targets the count is the integer nearest to the analytic
/// inverse, checked against its neighbours, so the landing error is at most
/// half of the local single-pulse step. A target sitting exactly on the
/// asymptote of the chosen polarity can only be approached; there the count is
/// the smallest `n` whose residual is no larger than the first pulse's step.
pub fn pulses_for_target(
    state: DeviceState,
    physics: &DevicePhysics,
    target_vt: f64,
) -> Result<(u32, Polarity), DeviceError> {
    if !(physics.vt_min..=physics.vt_max).contains(&target_vt) || !target_vt.is_finite() {
        return Err(DeviceError::TargetOutOfWindow {
            target: target_vt,
            min: physics.vt_min,
            max: physics.vt_max,
        });
    }
    if target_vt == state.vt {
        return Ok((0, Polarity::Trap));
    }
    let polarity = if target_vt > state.vt {
        Polarity::Trap
    } else {
        Polarity::Detrap
    };
    let asymptote = physics.asymptote(polarity);
    let tau = physics.tau(polarity);
    let start_gap = (asymptote - state.vt).abs();
    let end_gap = (asymptote - target_vt).abs();

    if end_gap == 0.0 {
        // residual after n pulses is start_gap * exp(-n / tau)
        let first_step = physics.single_pulse_step(state.vt, polarity);
        let n = (tau * (start_gap / first_step).ln()).ceil().max(1.0);
        let mut n = n as u32;
        while start_gap * (-(n as f64) / tau).exp() > first_step {
            n += 1;
        }
        while n > 1 && start_gap * (-((n - 1) as f64) / tau).exp() <= first_step {
            n -= 1;
        }
        return Ok((n, polarity));
    }

    let exact = tau * (start_gap / end_gap).ln();
    let guess = exact.round().max(0.0) as u32;
    let error_at = |k: u32| (apply_pulses(state, physics, k, polarity).vt - target_vt).abs();
    let mut best = guess;
    let mut best_err = error_at(guess);
    for k in [guess.saturating_sub(1), guess + 1] {
        let err = error_at(k);
        if err < best_err || (err == best_err && k < best) {
            best = k;
            best_err = err;
        }
    }
    Ok((best, polarity))
}

/// Triode drain current of a device with threshold `vt` at drain bias `vds`.
pub fn drain_current(
    physics: &DevicePhysics,
    vt: f64,
    vds: f64,
    model: CurrentModel,
) -> Result<f64, DeviceError> {
    if vds < 0.0 {
        return Err(DeviceError::NegativeDrainBias { vds });
    }
    let overdrive = physics.v_gs - vt;
    if vds >= overdrive {
        return Err(DeviceError::NotTriode { vds, overdrive });
    }
    Ok(match model {
        CurrentModel::Linear => physics.g0 * vds * overdrive,
        CurrentModel::Quadratic => 0.5 * physics.g0 * (2.0 * vds * overdrive - vds * vds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn physics_tau(tau: f64) -> DevicePhysics {
        DevicePhysics {
            tau_trap: tau,
            tau_detrap: tau,
            ..DevicePhysics::default()
        }
    }

    #[test]
    fn zero_pulses_is_identity() {
        let p = DevicePhysics::default();
        let s = DeviceState { vt: p.vt_min };
        assert_eq!(apply_pulses(s, &p, 0, Polarity::Trap), s);
    }

    #[test]
    fn long_trains_saturate_at_window_edge() {
        let p = DevicePhysics::default();
        let s = DeviceState { vt: p.vt_min };
        let n = (50.0 * p.tau_trap) as u32;
        let out = apply_pulses(s, &p, n, Polarity::Trap);
        assert!((out.vt - p.vt_max).abs() < 1e-9 * p.window());
    }

    #[test]
    fn one_time_constant_of_trapping() {
        let p = physics_tau(100.0);
        let out = apply_pulses(DeviceState { vt: 0.3 }, &p, 100, Polarity::Trap);
        // 0.7 - 0.4 / e
        assert!((out.vt - 0.552_848_223_531_423).abs() < 1e-12);
    }

    #[test]
    fn target_equal_to_state_needs_nothing() {
        let p = DevicePhysics::default();
        let s = DeviceState { vt: 0.45 };
        assert_eq!(pulses_for_target(s, &p, 0.45).unwrap(), (0, Polarity::Trap));
    }

    #[test]
    fn inverse_of_one_time_constant() {
        let p = physics_tau(100.0);
        let s = DeviceState { vt: 0.3 };
        assert_eq!(pulses_for_target(s, &p, 0.5529).unwrap(), (100, Polarity::Trap));
    }

    #[test]
    fn asymptotic_target_uses_first_step_tolerance() {
        // brute-force scan of 0.4 * exp(-n/256) <= 0.4 * (1 - exp(-1/256))
        let p = DevicePhysics::default();
        let s = DeviceState { vt: 0.7 };
        assert_eq!(pulses_for_target(s, &p, 0.3).unwrap(), (1421, Polarity::Detrap));
        let p = physics_tau(100.0);
        assert_eq!(pulses_for_target(s, &p, 0.3).unwrap(), (462, Polarity::Detrap));
    }

    #[test]
    fn target_outside_window_is_rejected() {
        let p = DevicePhysics::default();
        let s = DeviceState { vt: 0.5 };
        assert!(matches!(
            pulses_for_target(s, &p, 0.71),
            Err(DeviceError::TargetOutOfWindow { .. })
        ));
        assert!(pulses_for_target(s, &p, 0.29).is_err());
    }

    #[test]
    fn drain_current_hand_values() {
        let p = DevicePhysics::default();
        let lin = drain_current(&p, 0.4, 0.1, CurrentModel::Linear).unwrap();
        let quad = drain_current(&p, 0.4, 0.1, CurrentModel::Quadratic).unwrap();
        assert!((lin - 0.06).abs() < 1e-15);
        assert!((quad - 0.055).abs() < 1e-15);
        assert_eq!(drain_current(&p, 0.4, 0.0, CurrentModel::Linear).unwrap(), 0.0);
        assert_eq!(drain_current(&p, 0.4, 0.0, CurrentModel::Quadratic).unwrap(), 0.0);
        let doubled = drain_current(&p, 0.4, 0.2, CurrentModel::Linear).unwrap();
        assert_eq!(doubled, 2.0 * lin);
    }

    #[test]
    fn saturation_region_is_an_error() {
        let p = DevicePhysics::default();
        assert!(matches!(
            drain_current(&p, 0.4, 0.6, CurrentModel::Linear),
            Err(DeviceError::NotTriode { .. })
        ));
        assert!(drain_current(&p, 0.4, -0.01, CurrentModel::Quadratic).is_err());
    }

    #[test]
    fn physics_validation() {
        assert!(DevicePhysics::default().validate().is_ok());
        let bad = DevicePhysics {
            vt_max: 1.1,
            ..DevicePhysics::default()
        };
        assert!(bad.validate().is_err());
        let bad = DevicePhysics {
            tau_detrap: 0.0,
            ..DevicePhysics::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn pulses_are_monotone_and_bounded(
            vt in 0.3f64..=0.7,
            n in 0u32..4000,
            trap in any::<bool>(),
        ) {
            let p = DevicePhysics::default();
            let pol = if trap { Polarity::Trap } else { Polarity::Detrap };
            let s = DeviceState { vt };
            let a = apply_pulses(s, &p, n, pol).vt;
            let b = apply_pulses(s, &p, n + 1, pol).vt;
            prop_assert!((p.vt_min..=p.vt_max).contains(&a));
            prop_assert!((p.vt_min..=p.vt_max).contains(&b));
            match pol {
                Polarity::Trap => prop_assert!(b >= a),
                Polarity::Detrap => prop_assert!(b <= a),
            }
        }

        #[test]
        fn arbitrary_pulse_sequences_stay_in_window(
            seq in proptest::collection::vec((0u32..600, any::<bool>()), 0..20)
        ) {
            let p = DevicePhysics { tau_trap: 40.0, tau_detrap: 90.0, ..DevicePhysics::default() };
            let mut s = DeviceState { vt: 0.5 };
            for (n, trap) in seq {
                let pol = if trap { Polarity::Trap } else { Polarity::Detrap };
                s = apply_pulses(s, &p, n, pol);
                prop_assert!((p.vt_min..=p.vt_max).contains(&s.vt));
            }
        }

        #[test]
        fn linearization_error_is_exact(
            vt in 0.3f64..0.7,
            frac in 0.001f64..0.999,
        ) {
            let p = DevicePhysics::default();
            let od = p.v_gs - vt;
            let vds = frac * od;
            let lin = drain_current(&p, vt, vds, CurrentModel::Linear).unwrap();
            let quad = drain_current(&p, vt, vds, CurrentModel::Quadratic).unwrap();
            let rel = (lin - quad) / lin;
            let expected = vds / (2.0 * od);
            prop_assert!((rel - expected).abs() <= 1e-12 * expected.max(1.0));
        }

        #[test]
        fn current_decreases_with_threshold(
            vt in 0.3f64..0.69,
            dvt in 1e-6f64..0.01,
            vds in 0.001f64..0.25,
        ) {
            let p = DevicePhysics::default();
            for model in [CurrentModel::Linear, CurrentModel::Quadratic] {
                let a = drain_current(&p, vt, vds, model).unwrap();
                let b = drain_current(&p, (vt + dvt).min(0.7), vds, model).unwrap();
                prop_assert!(b < a);
            }
        }
    }
}
