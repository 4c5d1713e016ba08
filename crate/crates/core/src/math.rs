//! libm wrappers so results do not depend on the platform's libm.

pub(crate) use libm::{cos, erfc, exp, fabs as abs, floor, lgamma as ln_gamma, log as ln, log1p, pow, sin, sqrt, tan};

pub(crate) const PI: f64 = core::f64::consts::PI;

pub(crate) fn deg_to_rad(deg: f64) -> f64 {
    deg * PI / 180.0
}

/// Round half away from zero for non-negative inputs ("round half up").
pub(crate) fn round_half_up(x: f64) -> f64 {
    floor(x + 0.5)
}
