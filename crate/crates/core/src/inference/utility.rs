//! Expected utility of each arm by one-dimensional quadrature against the
//! marginal posterior of its patient-level rate.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use super::mode::{sigmoid, ModeResult};
use super::model::{BetaShape, ReducedModel};
use super::quadrature::GaussLegendre;
use super::InferenceError;
use crate::diagram::NodeId;

/// Differences smaller than this are reported as a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UtilitySpec {
    /// `u(θ) = lifespan * (1 - θ)`.
    LinearLifeExpectancy { lifespan: f64 },
    /// Values at `k / (len - 1)` for `k = 0..len`, linearly interpolated.
    Custom { values: Vec<f64> },
}

impl Default for UtilitySpec {
    fn default() -> Self {
        UtilitySpec::LinearLifeExpectancy { lifespan: 1.0 }
    }
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<(), InferenceError> {
        match self {
            UtilitySpec::LinearLifeExpectancy { lifespan } if !lifespan.is_finite() => {
                Err(InferenceError::InvalidUtility(format!("lifespan {lifespan} is not finite")))
            }
            UtilitySpec::Custom { values } if values.len() < 2 => {
                Err(InferenceError::InvalidUtility("a utility table needs at least two values".into()))
            }
            UtilitySpec::Custom { values } if values.iter().any(|v| !v.is_finite()) => {
                Err(InferenceError::InvalidUtility("utility table values must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            UtilitySpec::LinearLifeExpectancy { lifespan } => lifespan * (1.0 - theta),
            UtilitySpec::Custom { values } => {
                let last = values.len() - 1;
                let x = theta.clamp(0.0, 1.0) * last as f64;
                let k = (x.floor() as usize).min(last - 1);
                let w = x - k as f64;
                values[k] * (1.0 - w) + values[k + 1] * w
            }
        }
    }

    /// Same utility multiplied by `c`.
    pub fn scaled(&self, c: f64) -> UtilitySpec {
        match self {
            UtilitySpec::LinearLifeExpectancy { lifespan } => {
                UtilitySpec::LinearLifeExpectancy { lifespan: lifespan * c }
            }
            UtilitySpec::Custom { values } => {
                UtilitySpec::Custom { values: values.iter().map(|v| v * c).collect() }
            }
        }
    }
}

/// Marginal posterior of one rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Marginal {
    Beta { a: f64, b: f64 },
    /// `sigmoid(Z)` with `Z ~ N(mu, sigma^2)`.
    LogitNormal { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Integral {
    /// Renormalized expectation.
    pub value: f64,
    /// Quadrature mass of the density before renormalization.
    pub mass: f64,
}

impl Marginal {
    /// `E[u(θ)]` with 64-node Gauss–Legendre over the bulk of the density.
    pub fn expect(&self, u: impl Fn(f64) -> f64) -> Result<Integral, InferenceError> {
        let rule = GaussLegendre::standard();
        let (num, mass) = match *self {
            Marginal::Beta { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(InferenceError::DegenerateMarginal(format!("Beta({a}, {b})")));
                }
                let (lo, hi) = beta_window(a, b);
                let lnb = ln_beta(a, b);
                let pdf = |t: f64| {
                    if t <= 0.0 || t >= 1.0 {
                        0.0
                    } else {
                        ((a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() - lnb).exp()
                    }
                };
                (rule.integrate(lo, hi, |t| u(t) * pdf(t)), rule.integrate(lo, hi, pdf))
            }
            Marginal::LogitNormal { mu, sigma } => {
                if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
                    return Err(InferenceError::DegenerateMarginal(format!("logit-normal({mu}, {sigma})")));
                }
                let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                let pdf = |z: f64| {
                    let r = (z - mu) / sigma;
                    norm * (-0.5 * r * r).exp()
                };
                let (lo, hi) = (mu - 10.0 * sigma, mu + 10.0 * sigma);
                (rule.integrate(lo, hi, |z| u(sigmoid(z)) * pdf(z)), rule.integrate(lo, hi, pdf))
            }
        };
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(InferenceError::DegenerateMarginal(format!("quadrature mass {mass}")));
        }
        Ok(Integral { value: num / mass, mass })
    }
}

/// Mean plus or minus twelve standard deviations, clipped to the unit
/// interval; the whole interval when a shape is below 1.
fn beta_window(a: f64, b: f64) -> (f64, f64) {
    if a < 1.0 || b < 1.0 {
        return (0.0, 1.0);
    }
    let s = a + b;
    let mean = a / s;
    let sd = (a * b / (s * s * (s + 1.0))).sqrt();
    ((mean - 12.0 * sd).max(0.0), (mean + 12.0 * sd).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Recommendation {
    Experimental,
    Control,
    Indifferent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmUtility {
    pub node: NodeId,
    pub expected_utility: f64,
    pub marginal: Marginal,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedUtility {
    pub experimental: ArmUtility,
    pub control: ArmUtility,
    pub difference: f64,
    pub recommended: Recommendation,
}

pub fn recommend(eu_experimental: f64, eu_control: f64) -> Recommendation {
    let d = eu_experimental - eu_control;
    if d.abs() < TIE_TOLERANCE {
        Recommendation::Indifferent
    } else if d > 0.0 {
        Recommendation::Experimental
    } else {
        Recommendation::Control
    }
}

fn arm(
    model: &ReducedModel,
    mode: &ModeResult,
    utility: &UtilitySpec,
    experimental: bool,
) -> Result<ArmUtility, InferenceError> {
    let label = if experimental { "experimental" } else { "control" };
    let slot = model.patient_slot(experimental).ok_or(InferenceError::MissingPatientParameter(label))?;
    let i = model.resolve_free(slot).ok_or(InferenceError::PatientNotFree(label))?;
    let s = &mode.summaries[i];
    let marginal = match s.exact_posterior {
        Some(BetaShape { a, b }) => Marginal::Beta { a, b },
        None => Marginal::LogitNormal { mu: s.z_mode, sigma: s.se_z },
    };
    let integral = marginal.expect(|t| utility.eval(t))?;
    Ok(ArmUtility { node: s.node, expected_utility: integral.value, marginal, mass: integral.mass })
}

pub fn expected_utility(
    model: &ReducedModel,
    mode: &ModeResult,
    utility: &UtilitySpec,
) -> Result<ExpectedUtility, InferenceError> {
    if !mode.converged {
        return Err(InferenceError::NotConverged);
    }
    utility.validate()?;
    let experimental = arm(model, mode, utility, true)?;
    let control = arm(model, mode, utility, false)?;
    let difference = experimental.expected_utility - control.expected_utility;
    let recommended = recommend(experimental.expected_utility, control.expected_utility);
    Ok(ExpectedUtility { experimental, control, difference, recommended })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_expectation_of_survival() {
        let r = Marginal::Beta { a: 9.0, b: 5.0 }.expect(|t| 1.0 - t).unwrap();
        assert!((r.value - 5.0 / 14.0).abs() < 1e-12);
        assert!((r.mass - 1.0).abs() < 1e-9);
        let r = Marginal::Beta { a: 9.0, b: 5.0 }.expect(|t| 10.0 * (1.0 - t)).unwrap();
        assert!((r.value - 50.0 / 14.0).abs() < 1e-10);
    }

    #[test]
    fn concentrated_beta_matches_utility_at_mean() {
        let r = Marginal::Beta { a: 9000.0, b: 5000.0 }.expect(|t| 1.0 - t).unwrap();
        assert!((r.value - (1.0 - 9000.0 / 14000.0)).abs() < 1e-3);
        assert!((r.mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logit_normal_mass() {
        let r = Marginal::LogitNormal { mu: 0.3, sigma: 0.7 }.expect(|_| 1.0).unwrap();
        assert!((r.mass - 1.0).abs() < 1e-9);
        assert!((r.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn custom_table_interpolates() {
        let u = UtilitySpec::Custom { values: vec![10.0, 0.0] };
        assert_eq!(u.eval(0.25), 7.5);
        assert_eq!(u.eval(1.0), 0.0);
        assert!(UtilitySpec::Custom { values: vec![1.0] }.validate().is_err());
    }

    #[test]
    fn ties_are_indifferent() {
        assert_eq!(recommend(0.5, 0.5 + 1e-10), Recommendation::Indifferent);
        assert_eq!(recommend(0.6, 0.5), Recommendation::Experimental);
        assert_eq!(recommend(0.4, 0.5), Recommendation::Control);
    }

    #[test]
    fn utility_spec_json() {
        let u: UtilitySpec = serde_json::from_str(r#"{"kind":"linear-life-expectancy","lifespan":10}"#).unwrap();
        assert_eq!(u, UtilitySpec::LinearLifeExpectancy { lifespan: 10.0 });
    }
}
