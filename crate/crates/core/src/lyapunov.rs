//! Quadratic incremental Lyapunov certificates `V_p(x,y) = √((x−y)ᵀ M_p (x−y))`.
//!
//! For affine modes the dissipation inequality `V̇ ≤ −κ V` holds iff
//! `AᵀM + MA + 2κM ⪯ 0`, which is checked through the congruence
//! `L⁻¹(AᵀM + MA + 2κM)L⁻ᵀ` with `M = LLᵀ`. All comparison functions of this
//! family are linear, so they are carried as plain coefficients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dynamics::{ModeId, SwitchedSystem};
use crate::error::{Error, Result};

/// Tolerance on the largest eigenvalue of the dissipation congruence.
pub const CERT_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;

/// Per-mode certificate matrices with the shared rate `κ` and interchange factor `μ`.
///
/// A single matrix stands for a common certificate shared by every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCertificateSet {
    matrices: Vec<DMatrix<f64>>,
    kappa: f64,
    mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertCharacteristics {
    pub a_lower: f64,
    pub a_upper: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCheck {
    pub passed: bool,
    pub margin: f64,
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues
}

fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).min()
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).max()
}

fn validate_spd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::CertificateInvalid("certificate matrix must be square and nonempty".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::CertificateInvalid("certificate matrix must be finite".into()));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::CertificateInvalid("certificate matrix is not symmetric".into()));
    }
    let lmin = lambda_min(m);
    if lmin <= 0.0 {
        return Err(Error::CertificateInvalid(format!(
            "certificate matrix is not positive definite (min eigenvalue {lmin})"
        )));
    }
    Ok(())
}

/// `L⁻¹ S L⁻ᵀ` for `M = LLᵀ`.
fn congruence(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::CertificateInvalid("certificate matrix is not positive definite".into()))?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(s)
        .ok_or_else(|| Error::CertificateInvalid("singular Cholesky factor".into()))?;
    let both = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::CertificateInvalid("singular Cholesky factor".into()))?;
    Ok(both)
}

/// Checks `AᵀM + MA + 2κM ⪯ 0` for one mode.
pub fn verify_mode_certificate(a: &DMatrix<f64>, m: &DMatrix<f64>, kappa: f64) -> Result<ModeCheck> {
    validate_spd(m)?;
    if a.shape() != m.shape() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: a.nrows(),
        });
    }
    let s = a.transpose() * m + m * a + m * (2.0 * kappa);
    let margin = lambda_max(&congruence(m, &s)?);
    Ok(ModeCheck {
        passed: margin <= CERT_TOL,
        margin,
    })
}

/// Smallest `μ` with `M_p ⪯ μ² M_q` for all ordered pairs.
pub fn compute_mu(matrices: &[DMatrix<f64>]) -> Result<f64> {
    let mut mu: f64 = 1.0;
    for q in matrices {
        for p in matrices {
            let ratio = lambda_max(&congruence(q, p)?);
            mu = mu.max(ratio.sqrt());
        }
    }
    Ok(mu)
}

/// Dwell-time lower bound `log μ / κ`.
pub fn min_dwell_time(mu: f64, kappa: f64) -> f64 {
    debug_assert!(mu >= 1.0 && kappa > 0.0);
    mu.ln() / kappa
}

/// `V(x,y) = √((x−y)ᵀ M (x−y))`.
pub fn v_eval(m: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let n = m.nrows();
    debug_assert!(x.len() == n && y.len() == n);
    let mut acc = 0.0;
    for i in 0..n {
        let di = x[i] - y[i];
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * (x[j] - y[j]);
        }
        acc += di * row;
    }
    acc.max(0.0).sqrt()
}

impl QuadraticCertificateSet {
    pub fn new(matrices: Vec<DMatrix<f64>>, kappa: f64) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::CertificateInvalid("no certificate matrices".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::CertificateInvalid(format!("kappa must be > 0, got {kappa}")));
        }
        let n = matrices[0].nrows();
        for m in &matrices {
            validate_spd(m)?;
            if m.nrows() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        let mu = compute_mu(&matrices)?;
        Ok(Self { matrices, kappa, mu })
    }

    /// Accepts a user-declared `μ`, which must not undercut the computed one.
    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        if !(mu >= 1.0) {
            return Err(Error::CertificateInvalid(format!("mu must be >= 1, got {mu}")));
        }
        if mu < self.mu * (1.0 - 1e-12) {
            return Err(Error::CertificateInvalid(format!(
                "declared mu = {mu} is below the smallest valid interchange factor {}",
                self.mu
            )));
        }
        self.mu = mu;
        Ok(self)
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn is_common(&self) -> bool {
        self.matrices.len() == 1
    }

    /// Certificate matrix used for the given zero-based mode index.
    pub fn matrix_for(&self, mode: usize) -> &DMatrix<f64> {
        if self.is_common() {
            &self.matrices[0]
        } else {
            &self.matrices[mode]
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn characteristics(&self) -> CertCharacteristics {
        characteristics(self)
    }

    pub fn v(&self, mode: usize, x: &[f64], y: &[f64]) -> f64 {
        v_eval(self.matrix_for(mode), x, y)
    }

    /// Dissipation check of every mode of `system` against its matrix.
    pub fn verify(&self, system: &SwitchedSystem) -> Result<Vec<ModeCheck>> {
        if !self.is_common() && self.matrices.len() != system.mode_count() {
            return Err(Error::CertificateInvalid(format!(
                "{} certificate matrices for {} modes",
                self.matrices.len(),
                system.mode_count()
            )));
        }
        if self.dim() != system.dim() {
            return Err(Error::Dimension {
                expected: system.dim(),
                got: self.dim(),
            });
        }
        system
            .mode_ids()
            .map(|p: ModeId| {
                let mode = system.mode(p)?;
                verify_mode_certificate(mode.a(), self.matrix_for(p.zero_based()), self.kappa)
            })
            .collect()
    }
}

pub fn characteristics(cert: &QuadraticCertificateSet) -> CertCharacteristics {
    let lo = cert.matrices.iter().map(lambda_min).fold(f64::INFINITY, f64::min);
    let hi = cert.matrices.iter().map(lambda_max).fold(0.0, f64::max);
    let a_upper = hi.sqrt();
    CertCharacteristics {
        a_lower: lo.sqrt(),
        a_upper,
        g: a_upper,
    }
}

/// `(1/μ − e^{−κτ_d}) / (1 − e^{−κτ_d})`, equal to 1 when `μ = 1`.
fn dwell_factor(tau_d: f64, mu: f64, kappa: f64) -> f64 {
    let decay = (-kappa * tau_d).exp();
    (1.0 / mu - decay) / (1.0 - decay)
}

/// Number of sampling periods in the dwell time; `τ_d` must be an integer multiple of `τ_s`.
pub fn dwell_steps(tau_d: f64, tau_s: f64) -> Result<usize> {
    if !(tau_s > 0.0 && tau_d > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dwell time and sampling period must be positive (tau_d = {tau_d}, tau_s = {tau_s})"
        )));
    }
    let ratio = tau_d / tau_s;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "dwell time {tau_d} is not an integer multiple of the sampling period {tau_s}"
        )));
    }
    Ok(n as usize)
}

fn check_dwell(tau_d: f64, mu: f64, kappa: f64) -> Result<()> {
    let bound = min_dwell_time(mu, kappa);
    if tau_d <= bound {
        return Err(Error::DwellTooSmall { tau_d, bound });
    }
    Ok(())
}

fn budget(epsilon: f64, tau_s: f64, chars: &CertCharacteristics, kappa: f64, factor: f64) -> f64 {
    let contraction = 1.0 - (-kappa * tau_s).exp();
    let per_step = factor * contraction * chars.a_lower * epsilon / chars.g;
    let initial = chars.a_lower * epsilon / chars.a_upper;
    per_step.min(initial)
}

fn inverse_budget(eta: f64, tau_s: f64, chars: &CertCharacteristics, kappa: f64, factor: f64) -> f64 {
    let contraction = 1.0 - (-kappa * tau_s).exp();
    let per_step = eta * chars.g / (factor * contraction * chars.a_lower);
    let initial = eta * chars.a_upper / chars.a_lower;
    per_step.max(initial)
}

/// Largest lattice radius `η` guaranteeing precision `ε` with a common certificate.
pub fn eta_budget_common(epsilon: f64, tau_s: f64, chars: &CertCharacteristics, kappa: f64) -> f64 {
    budget(epsilon, tau_s, chars, kappa, 1.0)
}

/// Largest `η` guaranteeing precision `ε` under dwell time `τ_d` with multiple certificates.
pub fn eta_budget_dwell(
    epsilon: f64,
    tau_s: f64,
    tau_d: f64,
    mu: f64,
    chars: &CertCharacteristics,
    kappa: f64,
) -> Result<f64> {
    check_dwell(tau_d, mu, kappa)?;
    dwell_steps(tau_d, tau_s)?;
    Ok(budget(epsilon, tau_s, chars, kappa, dwell_factor(tau_d, mu, kappa)))
}

/// Smallest precision achievable with lattice radius `η` (common certificate).
pub fn epsilon_for_eta_common(eta: f64, tau_s: f64, chars: &CertCharacteristics, kappa: f64) -> f64 {
    inverse_budget(eta, tau_s, chars, kappa, 1.0)
}

pub fn epsilon_for_eta_dwell(
    eta: f64,
    tau_s: f64,
    tau_d: f64,
    mu: f64,
    chars: &CertCharacteristics,
    kappa: f64,
) -> Result<f64> {
    check_dwell(tau_d, mu, kappa)?;
    dwell_steps(tau_d, tau_s)?;
    Ok(inverse_budget(eta, tau_s, chars, kappa, dwell_factor(tau_d, mu, kappa)))
}

/// Class-KL bound on the distance between two trajectories driven by the same signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KLBound {
    Common {
        a_lower: f64,
        a_upper: f64,
        kappa: f64,
    },
    Dwell {
        a_lower: f64,
        a_upper: f64,
        kappa: f64,
        mu: f64,
        tau_d: f64,
    },
}

impl KLBound {
    pub fn common(chars: &CertCharacteristics, kappa: f64) -> Self {
        Self::Common {
            a_lower: chars.a_lower,
            a_upper: chars.a_upper,
            kappa,
        }
    }

    pub fn dwell(chars: &CertCharacteristics, kappa: f64, mu: f64, tau_d: f64) -> Result<Self> {
        check_dwell(tau_d, mu, kappa)?;
        Ok(Self::Dwell {
            a_lower: chars.a_lower,
            a_upper: chars.a_upper,
            kappa,
            mu,
            tau_d,
        })
    }

    /// Exponential rate of the bound; negative for every valid bound.
    pub fn rate(&self) -> f64 {
        match *self {
            Self::Common { kappa, .. } => -kappa,
            Self::Dwell { kappa, mu, tau_d, .. } => mu.ln() / tau_d - kappa,
        }
    }

    pub fn eval(&self, r: f64, s: f64) -> f64 {
        let (Self::Common { a_lower, a_upper, .. } | Self::Dwell { a_lower, a_upper, .. }) = *self;
        (a_upper / a_lower) * r * (self.rate() * s).exp()
    }
}

pub fn kl_bound(bound: &KLBound, r: f64, s: f64) -> f64 {
    bound.eval(r, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(d))
    }

    /// Closed-form eigenvalues of a symmetric 2x2 matrix.
    fn eig2(m: &DMatrix<f64>) -> (f64, f64) {
        let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mid - rad, mid + rad)
    }

    #[test]
    fn boost_certificate_holds_for_both_modes() {
        let sys = models::boost_converter();
        let cert = models::boost_certificate();
        for check in cert.verify(&sys).unwrap() {
            assert!(check.passed, "margin {}", check.margin);
        }
    }

    #[test]
    fn trivial_certificates() {
        let i = DMatrix::identity(2, 2);
        let c = verify_mode_certificate(&-i.clone(), &i, 1.0).unwrap();
        assert!(c.passed);
        assert_abs_diff_eq!(c.margin, 0.0, epsilon = 1e-15);
        assert!(!verify_mode_certificate(&i, &i, 0.1).unwrap().passed);
    }

    #[test]
    fn non_pd_certificate_is_rejected() {
        let bad = diag(&[1.0, -1.0]);
        assert!(matches!(
            verify_mode_certificate(&DMatrix::identity(2, 2), &bad, 0.1),
            Err(Error::CertificateInvalid(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(QuadraticCertificateSet::new(vec![asym], 0.1).is_err());
        assert!(QuadraticCertificateSet::new(vec![DMatrix::identity(2, 2)], 0.0).is_err());
    }

    #[test]
    fn boost_characteristics_match_eigensolve() {
        let cert = models::boost_certificate();
        let ch = cert.characteristics();
        let (lo, hi) = eig2(&cert.matrices()[0]);
        assert_abs_diff_eq!(ch.a_lower, lo.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(ch.a_upper, hi.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(ch.a_upper, 1.0127, epsilon = 5e-4);
        // reported as α̲(s) = s after rounding
        assert_abs_diff_eq!(ch.a_lower, 1.0, epsilon = 5e-4);
        assert_eq!(ch.g, ch.a_upper);
    }

    #[test]
    fn dwell_characteristics_and_mu() {
        let cert = models::dwell_certificate();
        let ch = cert.characteristics();
        assert_abs_diff_eq!(ch.a_lower, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ch.a_upper, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(ch.g, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(cert.mu(), 2f64.sqrt(), epsilon = 1e-12);
        let sys = models::dwell_example();
        assert!(cert.verify(&sys).unwrap().iter().all(|c| c.passed));
    }

    #[test]
    fn mu_examples() {
        let i = DMatrix::identity(2, 2);
        assert_abs_diff_eq!(compute_mu(&[i.clone(), i.clone()]).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(compute_mu(&[i.clone(), &i * 4.0]).unwrap(), 2.0, epsilon = 1e-12);
        let single = QuadraticCertificateSet::new(vec![i.clone()], 1.0).unwrap();
        assert_eq!(single.characteristics(), CertCharacteristics { a_lower: 1.0, a_upper: 1.0, g: 1.0 });
        assert!(single.clone().with_mu(0.5).is_err());
        let two = QuadraticCertificateSet::new(vec![i.clone(), &i * 4.0], 1.0).unwrap();
        assert!(two.clone().with_mu(1.5).is_err());
        assert_eq!(two.with_mu(3.0).unwrap().mu(), 3.0);
    }

    #[test]
    fn dwell_bounds() {
        assert_abs_diff_eq!(min_dwell_time(2f64.sqrt(), 0.25), 1.3863, epsilon = 1e-4);
        assert_eq!(min_dwell_time(1.0, 0.3), 0.0);
        assert_abs_diff_eq!(min_dwell_time(std::f64::consts::E, 1.0), 1.0, epsilon = 1e-15);
        assert_eq!(dwell_steps(2.0, 0.5).unwrap(), 4);
        assert!(dwell_steps(1.9, 0.5).is_err());
    }

    #[test]
    fn common_budget_on_boost() {
        let ch = CertCharacteristics { a_lower: 1.0, a_upper: 1.0127, g: 1.0127 };
        let div = 1.0 / eta_budget_common(1.0, 0.5, &ch, 0.014);
        assert!((div - 145.2).abs() <= 0.5, "divisor {div}");
        let real = models::boost_certificate().characteristics();
        assert!(eta_budget_common(2.6, 0.5, &real, 0.014) >= 1.0 / (40.0 * 2f64.sqrt()));
        assert!(eta_budget_common(0.026, 0.5, &real, 0.014) >= 1.0 / (4000.0 * 2f64.sqrt()));
        // large κτ_s: only the initial-state term binds
        let lim = eta_budget_common(1.0, 1e6, &ch, 1.0);
        assert_abs_diff_eq!(lim, ch.a_lower / ch.a_upper, epsilon = 1e-15);
    }

    #[test]
    fn dwell_budget_on_example() {
        let cert = models::dwell_certificate();
        let ch = cert.characteristics();
        let eta = eta_budget_dwell(1.0, 0.5, 2.0, cert.mu(), &ch, 0.25).unwrap();
        let div = 1.0 / eta;
        assert!((47.0..=48.0).contains(&div), "divisor {div}");
        let eta34 = eta_budget_dwell(0.34, 0.5, 2.0, cert.mu(), &ch, 0.25).unwrap();
        assert!(eta34 >= 1.0 / (100.0 * 2f64.sqrt()));
        assert!(matches!(
            eta_budget_dwell(1.0, 0.5, 1.0, cert.mu(), &ch, 0.25),
            Err(Error::DwellTooSmall { .. })
        ));
        let common = eta_budget_common(0.3, 0.5, &ch, 0.25);
        assert_eq!(eta_budget_dwell(0.3, 0.5, 2.0, 1.0, &ch, 0.25).unwrap(), common);
    }

    #[test]
    fn inverse_budget_examples() {
        let ch = models::boost_certificate().characteristics();
        let eps = epsilon_for_eta_common(1.0 / (4000.0 * 2f64.sqrt()), 0.5, &ch, 0.014);
        assert!(eps <= 0.026 && (eps - 0.0257).abs() < 5e-4, "eps {eps}");
        let dc = models::dwell_certificate();
        let dch = dc.characteristics();
        let eps = epsilon_for_eta_dwell(1.0 / (100.0 * 2f64.sqrt()), 0.5, 2.0, dc.mu(), &dch, 0.25).unwrap();
        assert!(eps <= 0.34 && (eps - 0.333).abs() < 1e-3, "eps {eps}");
    }

    #[test]
    fn kl_shape() {
        let ch = models::boost_certificate().characteristics();
        let b = KLBound::common(&ch, 0.014);
        assert_abs_diff_eq!(b.eval(2.0, 0.0), 2.0 * ch.a_upper / ch.a_lower, epsilon = 1e-15);
        assert!(b.eval(1.0, 0.0) >= 1.0);
        let mut prev = f64::INFINITY;
        for s in [0.0, 1.0, 10.0, 100.0, 1000.0] {
            let v = b.eval(1.0, s);
            assert!(v < prev);
            prev = v;
        }
        assert!(b.eval(1.0, 1e5) < 1e-100);
        let dc = models::dwell_certificate();
        let d = KLBound::dwell(&dc.characteristics(), 0.25, dc.mu(), 2.0).unwrap();
        assert!(d.rate() < 0.0);
        assert!(KLBound::dwell(&dc.characteristics(), 0.25, dc.mu(), 1.0).is_err());
    }

    #[test]
    fn v_eval_examples() {
        let m = models::boost_certificate().matrices()[0].clone();
        assert_eq!(v_eval(&m, &[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_abs_diff_eq!(v_eval(&DMatrix::identity(2, 2), &[3.0, 4.0], &[0.0, 0.0]), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v_eval(&m, &[1.0, 0.0], &[0.0, 0.0]), 1.0224f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(1.0224f64.sqrt(), 1.01114, epsilon = 1e-5);
    }

    fn certs() -> Vec<(crate::dynamics::SwitchedSystem, QuadraticCertificateSet)> {
        vec![
            (models::boost_converter(), models::boost_certificate()),
            (models::dwell_example(), models::dwell_certificate()),
        ]
    }

    proptest! {
        #[test]
        fn sandwich_and_lipschitz(x in prop::array::uniform2(-10.0f64..10.0),
                                  y in prop::array::uniform2(-10.0f64..10.0),
                                  z in prop::array::uniform2(-10.0f64..10.0)) {
            for (_, cert) in certs() {
                let ch = cert.characteristics();
                for m in cert.matrices() {
                    let d = ((x[0]-y[0]).powi(2) + (x[1]-y[1]).powi(2)).sqrt();
                    let v = v_eval(m, &x, &y);
                    prop_assert!(ch.a_lower * d <= v * (1.0 + 1e-12) + 1e-15);
                    prop_assert!(v <= ch.a_upper * d * (1.0 + 1e-12) + 1e-15);
                    let dyz = ((y[0]-z[0]).powi(2) + (y[1]-z[1]).powi(2)).sqrt();
                    prop_assert!((v - v_eval(m, &x, &z)).abs() <= ch.g * dyz * (1.0 + 1e-12) + 1e-12);
                }
            }
        }

        #[test]
        fn contraction_and_interchange(x in prop::array::uniform2(-10.0f64..10.0),
                                       y in prop::array::uniform2(-10.0f64..10.0)) {
            for (sys, cert) in certs() {
                let maps = sys.step_maps(0.5).unwrap();
                let decay = (-cert.kappa() * 0.5).exp();
                for (p, map) in maps.iter().enumerate() {
                    let (mut fx, mut fy) = ([0.0; 2], [0.0; 2]);
                    map.apply_into(&x, &mut fx);
                    map.apply_into(&y, &mut fy);
                    let before = cert.v(p, &x, &y);
                    prop_assert!(cert.v(p, &fx, &fy) <= decay * before * (1.0 + 1e-9) + 1e-15);
                    for q in 0..sys.mode_count() {
                        prop_assert!(before <= cert.mu() * cert.v(q, &x, &y) * (1.0 + 1e-12) + 1e-15);
                    }
                }
            }
        }

        #[test]
        fn budgets_positive_and_invertible(eps in 1e-4f64..10.0, tau_s in 0.01f64..2.0, kappa in 0.01f64..2.0,
                                          lo in 0.5f64..1.0, ratio in 1.0f64..3.0, mu in 1.0f64..2.0) {
            let ch = CertCharacteristics { a_lower: lo, a_upper: lo * ratio, g: lo * ratio };
            let eta = eta_budget_common(eps, tau_s, &ch, kappa);
            prop_assert!(eta > 0.0);
            let back = epsilon_for_eta_common(eta, tau_s, &ch, kappa);
            prop_assert!((back - eps).abs() <= 1e-12 * eps);
            let tau_d = tau_s * ((mu.ln() / kappa / tau_s).floor() + 1.0);
            let eta = eta_budget_dwell(eps, tau_s, tau_d, mu, &ch, kappa).unwrap();
            prop_assert!(eta > 0.0);
            let back = epsilon_for_eta_dwell(eta, tau_s, tau_d, mu, &ch, kappa).unwrap();
            prop_assert!((back - eps).abs() <= 1e-12 * eps);
        }
    }
}
