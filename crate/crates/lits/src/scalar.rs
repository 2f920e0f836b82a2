//! Floating-point abstraction for the numeric kernels.
//!
//! Link-budget helpers, the antenna mask, the load split and the power-control
//! solvers are written against [`Scalar`] so they run in `f32` or `f64`. The
//! simulation state (scenarios, matchings, results) is concrete `f64`.

use num_traits::{Float, FromPrimitive, NumCast};
use std::fmt::Debug;

pub trait Scalar:
    Float + FromPrimitive + NumCast + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        NumCast::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub fn db_to_linear<T: Scalar>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

pub fn linear_to_db<T: Scalar>(x: T) -> T {
    T::lit(10.0) * x.log10()
}

pub fn dbm_to_watts<T: Scalar>(dbm: T) -> T {
    db_to_linear(dbm - T::lit(30.0))
}

/// `log2(1 + snr)` computed without cancellation for small `snr`.
pub fn shannon<T: Scalar>(snr: T) -> T {
    snr.ln_1p() / T::lit(std::f64::consts::LN_2)
}

pub fn deg_to_rad<T: Scalar>(deg: T) -> T {
    deg * T::lit(std::f64::consts::PI / 180.0)
}

pub fn rad_to_deg<T: Scalar>(rad: T) -> T {
    rad * T::lit(180.0 / std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_round_trip_both_precisions() {
        assert!((linear_to_db(db_to_linear(43.3_f64)) - 43.3).abs() < 1e-12);
        assert!((linear_to_db(db_to_linear(43.3_f32)) - 43.3).abs() < 1e-4);
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(30.0_f64) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(23.0_f64) - 0.199_526_231_496_888).abs() < 1e-12);
    }

    #[test]
    fn shannon_matches_log2() {
        assert_eq!(shannon(1.0_f64), 1.0);
        assert!((shannon(3.0_f64) - 2.0).abs() < 1e-15);
        assert!((shannon(3.0_f32) - 2.0).abs() < 1e-6);
        assert!(shannon(1e-20_f64) > 0.0);
    }
}
