//! Current-controlled actuator with Coulomb friction.
//!
//! A drive delivering current `c` produces torque `c / r`; a constant current
//! `l` is lost to friction opposing the motion. The same relation read
//! backwards gives the current a real drive draws for a delivered torque.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActuatorError {
    #[error("current {0} is not finite")]
    NonFiniteCurrent(f64),
    #[error("joint velocity {dq} rad/s is inside the static band {band} rad/s; the current is ambiguous")]
    Stiction { dq: f64, band: f64 },
    #[error("invalid actuator parameters: {0}")]
    InvalidParams(&'static str),
}

/// `sign` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorParams {
    /// Current per unit torque, A/(N·m).
    pub ratio: f64,
    /// Current lost to Coulomb friction, A.
    pub friction_loss: f64,
    /// Velocity above which friction compensation is purely velocity based, rad/s.
    pub vel_threshold: f64,
    /// Velocity below which the joint is treated as stuck, rad/s.
    pub static_band: f64,
}

impl ActuatorParams {
    pub const DEFAULT_VEL_THRESHOLD: f64 = 0.05;
    pub const DEFAULT_STATIC_BAND: f64 = 1e-3;

    pub fn new(ratio: f64, friction_loss: f64) -> Result<Self, ActuatorError> {
        let p = Self {
            ratio,
            friction_loss,
            vel_threshold: Self::DEFAULT_VEL_THRESHOLD,
            static_band: Self::DEFAULT_STATIC_BAND,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_thresholds(mut self, vel_threshold: f64, static_band: f64) -> Result<Self, ActuatorError> {
        self.vel_threshold = vel_threshold;
        self.static_band = static_band;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ActuatorError> {
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(ActuatorError::InvalidParams("ratio must be positive"));
        }
        if !(self.friction_loss >= 0.0) || !self.friction_loss.is_finite() {
            return Err(ActuatorError::InvalidParams("friction loss must be non-negative"));
        }
        if !(self.vel_threshold > 0.0) {
            return Err(ActuatorError::InvalidParams("velocity threshold must be positive"));
        }
        if !(self.static_band > 0.0 && self.static_band < self.vel_threshold) {
            return Err(ActuatorError::InvalidParams("static band must lie in (0, vel_threshold)"));
        }
        Ok(())
    }

    /// Largest friction torque the joint can exert, N·m.
    pub fn friction_torque_limit(&self) -> f64 {
        self.friction_loss / self.ratio
    }

    pub fn is_moving(&self, dq: f64) -> bool {
        dq.abs() >= self.static_band
    }
}

/// Net joint torque delivered for current `current` at velocity `dq`.
///
/// While moving, friction removes `sign(dq)·l` from the current. Inside the
/// static band friction opposes the motor torque and saturates at `l / r`, so
/// sub-threshold currents deliver nothing.
pub fn delivered_torque(params: &ActuatorParams, current: f64, dq: f64) -> Result<f64, ActuatorError> {
    if !current.is_finite() {
        return Err(ActuatorError::NonFiniteCurrent(current));
    }
    if params.is_moving(dq) {
        Ok((current - sign(dq) * params.friction_loss) / params.ratio)
    } else {
        let net = (current.abs() - params.friction_loss).max(0.0);
        Ok(sign(current) * net / params.ratio)
    }
}

/// Current drawn to deliver `delivered` N·m while moving at `dq`.
pub fn measured_current(params: &ActuatorParams, delivered: f64, dq: f64) -> Result<f64, ActuatorError> {
    if !params.is_moving(dq) {
        return Err(ActuatorError::Stiction { dq, band: params.static_band });
    }
    Ok(params.ratio * delivered + sign(dq) * params.friction_loss)
}

/// Per-joint current command, amperes.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentCommand {
    pub current: alloc::vec::Vec<f64>,
}

impl CurrentCommand {
    pub fn zeros(n: usize) -> Self {
        Self { current: alloc::vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.current.iter().all(|c| c.is_finite())
    }

    /// Clamp every joint to `±limit` where a limit is given.
    pub fn saturate(&mut self, limits: &[Option<f64>]) {
        for (c, lim) in self.current.iter_mut().zip(limits) {
            if let Some(l) = lim {
                *c = c.clamp(-l, *l);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(r: f64, l: f64) -> ActuatorParams {
        ActuatorParams::new(r, l).unwrap()
    }

    #[test]
    fn friction_shift_cancels_along_sweep() {
        // c = -sin θ + 0.5 while moving up delivers exactly -sin θ.
        let p = params(1.0, 0.5);
        for i in 0..=180 {
            let theta = (i as f64 - 90.0).to_radians();
            let c = -theta.sin() + 0.5;
            let tau = delivered_torque(&p, c, 0.17).unwrap();
            assert_relative_eq!(tau, -theta.sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn ratio_two_frictionless() {
        let p = params(2.0, 0.0);
        let theta = 0.7f64;
        let tau = delivered_torque(&p, -2.0 * theta.sin(), 0.1).unwrap();
        assert_relative_eq!(tau, -theta.sin(), epsilon = 1e-12);
        assert_relative_eq!(measured_current(&p, tau, 0.1).unwrap(), -2.0 * theta.sin(), epsilon = 1e-12);
    }

    #[test]
    fn frictionless_is_linear_at_any_velocity() {
        let p = params(1.7, 0.0);
        for dq in [-1.0, -1e-4, 0.0, 1e-4, 2.0] {
            assert_relative_eq!(delivered_torque(&p, 3.4, dq).unwrap(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_friction_draw() {
        let p = params(1.0, 0.5);
        assert_eq!(measured_current(&p, 0.0, 0.2).unwrap(), 0.5);
    }

    #[test]
    fn inverse_undefined_in_stiction() {
        let p = params(1.0, 0.5);
        assert!(matches!(measured_current(&p, 1.0, 0.0), Err(ActuatorError::Stiction { .. })));
    }

    #[test]
    fn stiction_holds_below_band() {
        let p = params(2.0, 0.6);
        assert_eq!(delivered_torque(&p, 0.59, 0.0).unwrap(), 0.0);
        assert_eq!(delivered_torque(&p, -0.6, 0.0).unwrap(), 0.0);
        assert_relative_eq!(delivered_torque(&p, 1.0, 0.0).unwrap(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_current_rejected() {
        assert!(delivered_torque(&params(1.0, 0.0), f64::NAN, 0.0).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(ActuatorParams::new(0.0, 0.1).is_err());
        assert!(ActuatorParams::new(1.0, -0.1).is_err());
        assert!(params(1.0, 0.1).with_thresholds(0.05, 0.05).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_in_moving_regime(
            r in 0.2f64..5.0, l in 0.0f64..2.0, c in -20.0f64..20.0,
            speed in 1e-3f64..5.0, up in any::<bool>()
        ) {
            let p = params(r, l);
            let dq = if up { speed } else { -speed };
            let tau = delivered_torque(&p, c, dq).unwrap();
            let back = measured_current(&p, tau, dq).unwrap();
            prop_assert!((back - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }

        #[test]
        fn monotone_in_current(
            r in 0.2f64..5.0, l in 0.0f64..2.0, c in -20.0f64..20.0,
            dc in 0.0f64..5.0, dq in -1.0f64..1.0
        ) {
            let p = params(r, l);
            prop_assert!(delivered_torque(&p, c + dc, dq).unwrap() >= delivered_torque(&p, c, dq).unwrap());
        }
    }
}
