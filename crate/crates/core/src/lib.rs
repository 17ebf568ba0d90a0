//! Collision avoidance for car-like robots with a heading-aware safety margin.
//!
//! The crate is layered bottom-up:
//!
//! * [`geometry`]: rectangle footprints, the MTV-based margin and the
//!   center-to-center baseline.
//! * [`vehicle`]: the kinematic bicycle model and its pose derivatives.
//! * [`relative`]: the relative pose in the ego frame and its derivatives.
//! * [`margin_net`]: a small tanh network that learns the MTV margin, with
//!   analytic gradient and Hessian.
//! * [`hocbf`]: the relative-degree-two barrier and its affine input
//!   constraint.
//! * [`qp`] and [`filter`]: the minimally invasive safety filter.
//! * [`scenarios`]: closed-loop overtaking and bypassing simulations.

pub mod error;
pub mod filter;
pub mod geometry;
pub mod hocbf;
pub mod margin_net;
pub mod qp;
pub mod relative;
pub mod scenarios;
pub mod vehicle;

pub use error::{Error, Result};

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(0.25), 0.25);
        assert_eq!(wrap_angle(-0.25), -0.25);
    }
}
