//! JSON problem description.
//!
//! Matrices are row-major nested arrays. All quantities are in the state
//! units of the system; times in the system's time unit.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::abstraction::{build_common_abstraction, build_dwell_abstraction, ExitPolicy, SymbolicModel};
use crate::dynamics::{AffineMode, ModeId, SwitchedSystem};
use crate::error::{Error, Result};
use crate::lattice::Region;
use crate::lyapunov::{
    dwell_steps, epsilon_for_eta_common, epsilon_for_eta_dwell, eta_budget_common, eta_budget_dwell,
    QuadraticCertificateSet,
};
use crate::synthesis::SafetySpec;
use crate::transys::RelationCertificate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemConfig,
    pub certificate: CertificateConfig,
    pub sampling: SamplingConfig,
    pub abstraction: AbstractionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell: Option<DwellConfig>,
    pub spec: SpecConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub modes: Vec<ModeConfig>,
}

/// `ẋ = a·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// One matrix for a common certificate, else one per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub tau_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub region: BoxConfig,
    #[serde(default, skip_serializing_if = "is_default_policy")]
    pub exit_policy: ExitPolicy,
}

fn is_default_policy(p: &ExitPolicy) -> bool {
    *p == ExitPolicy::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxConfig {
    pub fn region(&self) -> Result<Region> {
        Region::new(self.lo.clone(), self.hi.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellConfig {
    pub tau_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub keep: BoxConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avoid: Option<BoxConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub x0: Vec<f64>,
    pub horizon: usize,
    /// One-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_mode: Option<usize>,
}

/// Resolved discretization: `η`, the precision `ε` it guarantees, and the
/// largest admissible `η` for that `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub eta: f64,
    pub epsilon: f64,
    pub eta_max: f64,
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config("matrices must be square and nonempty".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn system(&self) -> Result<SwitchedSystem> {
        let modes = self
            .system
            .modes
            .iter()
            .map(|m| AffineMode::from_rows(&m.a, &m.b))
            .collect::<Result<Vec<_>>>()?;
        SwitchedSystem::new(modes)
    }

    pub fn certificate(&self) -> Result<QuadraticCertificateSet> {
        let mats = self
            .certificate
            .matrices
            .iter()
            .map(|m| matrix(m))
            .collect::<Result<Vec<_>>>()?;
        let cert = QuadraticCertificateSet::new(mats, self.certificate.kappa)?;
        match self.certificate.mu {
            Some(mu) => cert.with_mu(mu),
            None => Ok(cert),
        }
    }

    pub fn region(&self) -> Result<Region> {
        self.abstraction.region.region()
    }

    pub fn safety_spec(&self) -> Result<SafetySpec> {
        SafetySpec::new(self.spec.keep.region()?, self.spec.avoid.as_ref().map(BoxConfig::region).transpose()?)
    }

    pub fn tau_s(&self) -> f64 {
        self.sampling.tau_s
    }

    /// `N = τ_d/τ_s` when a dwell time is configured.
    pub fn dwell_steps(&self) -> Result<Option<usize>> {
        self.dwell.as_ref().map(|d| dwell_steps(d.tau_d, self.tau_s())).transpose()
    }

    pub fn initial_mode(&self) -> Result<Option<ModeId>> {
        match self.simulation.as_ref().and_then(|s| s.initial_mode) {
            None => Ok(None),
            Some(m) => ModeId::new(m)
                .filter(|id| id.zero_based() < self.system.modes.len())
                .map(Some)
                .ok_or(Error::UnknownMode(m)),
        }
    }

    /// Largest admissible `η` for precision `epsilon`.
    pub fn eta_budget(&self, epsilon: f64) -> Result<f64> {
        let cert = self.certificate()?;
        let chars = cert.characteristics();
        match &self.dwell {
            None => Ok(eta_budget_common(epsilon, self.tau_s(), &chars, cert.kappa())),
            Some(d) => eta_budget_dwell(epsilon, self.tau_s(), d.tau_d, cert.mu(), &chars, cert.kappa()),
        }
    }

    /// Smallest precision guaranteed by `eta`.
    pub fn epsilon_for(&self, eta: f64) -> Result<f64> {
        let cert = self.certificate()?;
        let chars = cert.characteristics();
        match &self.dwell {
            None => Ok(epsilon_for_eta_common(eta, self.tau_s(), &chars, cert.kappa())),
            Some(d) => epsilon_for_eta_dwell(eta, self.tau_s(), d.tau_d, cert.mu(), &chars, cert.kappa()),
        }
    }

    /// Fills in whichever of `η`, `ε` is missing; when both are given `η`
    /// must respect the budget. Overrides take precedence over the file.
    pub fn resolve_precision(&self, eta: Option<f64>, epsilon: Option<f64>) -> Result<Precision> {
        let eta = eta.or(self.abstraction.eta);
        let epsilon = epsilon.or(self.abstraction.epsilon);
        for v in [eta, epsilon].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("eta and epsilon must be positive, got {v}")));
            }
        }
        match (eta, epsilon) {
            (None, None) => Err(Error::Config("abstraction needs eta or epsilon".into())),
            (Some(eta), None) => {
                let epsilon = self.epsilon_for(eta)?;
                Ok(Precision {
                    eta,
                    epsilon,
                    eta_max: self.eta_budget(epsilon)?.max(eta),
                })
            }
            (None, Some(epsilon)) => {
                let eta_max = self.eta_budget(epsilon)?;
                Ok(Precision {
                    eta: eta_max,
                    epsilon,
                    eta_max,
                })
            }
            (Some(eta), Some(epsilon)) => {
                let eta_max = self.eta_budget(epsilon)?;
                if eta > eta_max * (1.0 + 1e-12) {
                    let cert = self.certificate()?;
                    let ch = cert.characteristics();
                    let covering = ch.a_lower * epsilon / ch.a_upper;
                    let bound = if eta > covering * (1.0 + 1e-12) {
                        "covering bound eta <= a_lower(eps)/a_upper"
                    } else if self.dwell.is_some() {
                        "dwell contraction bound gamma(eta) <= F(1-exp(-kappa tau_s)) a_lower(eps)"
                    } else {
                        "contraction bound gamma(eta) <= (1-exp(-kappa tau_s)) a_lower(eps)"
                    };
                    return Err(Error::Budget { eta, eta_max, bound });
                }
                Ok(Precision { eta, epsilon, eta_max })
            }
        }
    }

    pub fn build_model(&self, eta: f64) -> Result<SymbolicModel> {
        let system = self.system()?;
        let region = self.region()?;
        let model = match self.dwell_steps()? {
            None => build_common_abstraction(&system, self.tau_s(), eta, &region)?,
            Some(n) => build_dwell_abstraction(&system, self.tau_s(), n, eta, &region)?,
        };
        Ok(model.with_exit_policy(self.abstraction.exit_policy))
    }

    pub fn relation_certificate(&self, model: &SymbolicModel, precision: &Precision) -> Result<RelationCertificate> {
        Ok(RelationCertificate::for_model(self.certificate()?, model, precision.epsilon))
    }
}
