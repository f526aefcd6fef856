use crate::error::{Error, Result};

/// Step size sequence `εₜ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant { epsilon: f64 },
    /// `εₜ = (a (1 + t/b))^(−c)`.
    Polynomial { a: f64, b: f64, c: f64 },
}

impl StepSchedule {
    pub fn constant(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {epsilon}")));
        }
        Ok(StepSchedule::Constant { epsilon })
    }

    pub fn polynomial(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c >= 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Config(format!(
                "polynomial schedule needs a > 0, b > 0, c >= 0 (got a={a}, b={b}, c={c})"
            )));
        }
        Ok(StepSchedule::Polynomial { a, b, c })
    }

    pub fn epsilon(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { epsilon } => epsilon,
            StepSchedule::Polynomial { a, b, c } => (a * (1.0 + t as f64 / b)).powf(-c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(StepSchedule::constant(0.0).is_err());
        assert!(StepSchedule::constant(f64::NAN).is_err());
        assert!(StepSchedule::polynomial(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn polynomial_at_zero() {
        let s = StepSchedule::polynomial(4.0, 10.0, 0.5).unwrap();
        assert_eq!(s.epsilon(0), 0.5);
        assert!((s.epsilon(30) - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn positive_and_non_increasing(a in 0.01f64..100.0, b in 0.1f64..1e4, c in 0.0f64..2.0, t in 0usize..1_000_000) {
            let s = StepSchedule::polynomial(a, b, c).unwrap();
            prop_assert!(s.epsilon(t) > 0.0);
            prop_assert!(s.epsilon(t + 1) <= s.epsilon(t));
        }
    }
}
