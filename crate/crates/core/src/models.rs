//! Built-in case-study systems and their certificates.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{AffineMode, SwitchedSystem};
use crate::lyapunov::QuadraticCertificateSet;

/// Per-unit circuit parameters of the boost DC-DC converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParameters {
    pub x_c: f64,
    pub x_l: f64,
    pub r_c: f64,
    pub r_l: f64,
    pub r_0: f64,
    pub v_s: f64,
    /// Scale applied to the capacitor voltage coordinate (state is `[i_l, scale·v_c]`).
    pub voltage_scale: f64,
}

impl Default for BoostParameters {
    fn default() -> Self {
        Self {
            x_c: 70.0,
            x_l: 3.0,
            r_c: 0.005,
            r_l: 0.05,
            r_0: 1.0,
            v_s: 1.0,
            voltage_scale: 5.0,
        }
    }
}

impl BoostParameters {
    pub fn system(&self) -> SwitchedSystem {
        let Self {
            x_c,
            x_l,
            r_c,
            r_l,
            r_0,
            v_s,
            voltage_scale: s,
        } = *self;
        let a1 = DMatrix::from_row_slice(2, 2, &[-r_l / x_l, 0.0, 0.0, -1.0 / (x_c * (r_0 + r_c))]);
        let a2 = DMatrix::from_row_slice(
            2,
            2,
            &[
                -(r_l + r_0 * r_c / (r_0 + r_c)) / x_l,
                -(r_0 / (r_0 + r_c)) / x_l / s,
                s * (r_0 / (r_0 + r_c)) / x_c,
                -1.0 / (x_c * (r_0 + r_c)),
            ],
        );
        let b = DVector::from_column_slice(&[v_s / x_l, 0.0]);
        SwitchedSystem::new(vec![
            AffineMode::new(a1, b.clone()).expect("valid boost mode"),
            AffineMode::new(a2, b).expect("valid boost mode"),
        ])
        .expect("valid boost system")
    }
}

/// Boost converter in the rescaled coordinates `[i_l, 5 v_c]`.
pub fn boost_converter() -> SwitchedSystem {
    BoostParameters::default().system()
}

pub fn boost_certificate() -> QuadraticCertificateSet {
    QuadraticCertificateSet::new(
        vec![DMatrix::from_row_slice(2, 2, &[1.0224, 0.0084, 0.0084, 1.0031])],
        0.014,
    )
    .expect("valid boost certificate")
}

/// Two stable affine modes that are destabilized by fast switching.
pub fn dwell_example() -> SwitchedSystem {
    let m1 = AffineMode::from_rows(&[vec![-0.25, 1.0], vec![-2.0, -0.25]], &[-0.25, -2.0]).expect("valid");
    let m2 = AffineMode::from_rows(&[vec![-0.25, 2.0], vec![-1.0, -0.25]], &[0.25, 1.0]).expect("valid");
    SwitchedSystem::new(vec![m1, m2]).expect("valid dwell example")
}

pub fn dwell_certificate() -> QuadraticCertificateSet {
    QuadraticCertificateSet::new(
        vec![
            DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0])),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0])),
        ],
        0.25,
    )
    .expect("valid dwell certificate")
}
