//! Conversions between ordinary frequencies and the internal angular units.
//!
//! Internally every frequency is angular, in rad/ns. One GHz of ordinary
//! frequency is `2π` rad/ns and one MHz is `2π·1e-3` rad/ns.

use std::f64::consts::TAU;

pub fn ghz(f: f64) -> f64 {
    TAU * f
}

pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e-3
}

pub fn to_ghz(w: f64) -> f64 {
    w / TAU
}

pub fn to_mhz(w: f64) -> f64 {
    w / TAU * 1e3
}

/// Rate in 1/ns to 1/μs.
pub fn per_us(rate: f64) -> f64 {
    rate * 1e3
}
