use serde::{Deserialize, Serialize};

/// Piecewise-linear lookup of a torque bound against joint angle, clamped to the end
/// values outside the breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TorqueCurve {
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

impl TorqueCurve {
    pub fn eval(&self, angle: f64) -> f64 {
        match self {
            TorqueCurve::Constant(v) => *v,
            TorqueCurve::Table(points) => {
                let first = points[0];
                let last = points[points.len() - 1];
                if angle <= first.0 {
                    return first.1;
                }
                if angle >= last.0 {
                    return last.1;
                }
                // strictly increasing angles, so exactly one segment brackets `angle`
                let hi = points.partition_point(|p| p.0 <= angle);
                let (a0, t0) = points[hi - 1];
                let (a1, t1) = points[hi];
                t0 + (t1 - t0) * (angle - a0) / (a1 - a0)
            }
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            TorqueCurve::Constant(v) if v.is_finite() => Ok(()),
            TorqueCurve::Constant(v) => Err(format!("torque limit {v} is not finite")),
            TorqueCurve::Table(points) => {
                if points.len() < 2 {
                    return Err("torque curve needs at least 2 breakpoints".into());
                }
                if points.iter().any(|(a, t)| !a.is_finite() || !t.is_finite()) {
                    return Err("torque curve breakpoints must be finite".into());
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err("torque curve angles must be strictly increasing".into());
                }
                Ok(())
            }
        }
    }
}

/// Configuration-dependent torque bounds of one joint: `min(q) <= tau <= max(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueLimitCurve {
    pub joint: usize,
    pub max: TorqueCurve,
    pub min: Option<TorqueCurve>,
}

/// Upper torque bound of `curve` at `angle`.
pub fn max_torque(curve: &TorqueLimitCurve, angle: f64) -> f64 {
    curve.max.eval(angle)
}

pub fn min_torque(curve: &TorqueLimitCurve, angle: f64) -> Option<f64> {
    curve.min.as_ref().map(|c| c.eval(angle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knee() -> TorqueLimitCurve {
        TorqueLimitCurve {
            joint: 0,
            max: TorqueCurve::Table(vec![(0.0, 100.0), (1.0, 200.0)]),
            min: None,
        }
    }

    #[test]
    fn constant_curve() {
        let c = TorqueLimitCurve {
            joint: 0,
            max: TorqueCurve::Constant(150.0),
            min: None,
        };
        for a in [-3.0, 0.0, 2.2] {
            assert_eq!(max_torque(&c, a), 150.0);
        }
    }

    #[test]
    fn interpolates_and_clamps() {
        let c = knee();
        assert_eq!(max_torque(&c, 0.5), 150.0);
        assert_eq!(max_torque(&c, -1.0), 100.0);
        assert_eq!(max_torque(&c, 4.0), 200.0);
        assert_eq!(max_torque(&c, 1.0), 200.0);
    }

    #[test]
    fn breakpoint_validation() {
        assert!(TorqueCurve::Table(vec![(0.0, 1.0)]).validate().is_err());
        assert!(TorqueCurve::Table(vec![(0.0, 1.0), (0.0, 2.0)]).validate().is_err());
        assert!(TorqueCurve::Constant(f64::INFINITY).validate().is_err());
        assert!(knee().max.validate().is_ok());
    }
}
