//! The nine parametric hazard families.
//!
//! Each family has a natural parameterization (the `alpha`, `beta`, `gamma`,
//! `delta` of its formula) and an unconstrained optimizer parameterization in
//! which positive parameters are log-transformed. Conditional death
//! probabilities over `[z, z + 1)` are evaluated from closed-form cumulative
//! hazards; adaptive quadrature of the hazard is available as a fallback and
//! as a cross-check.
//!
//! Ages are model indices `z = age - 79`, so age 80 is `z = 1`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{central_death_rates, CohortDataset};
use crate::error::{Error, EvalError};
use crate::rng;
use crate::special::{self, dawson, erf, erfcx, sigmoid};

/// Relative tolerance used whenever a death probability is computed by
/// quadrature.
pub const QUADRATURE_REL_TOL: f64 = 1e-10;
const QUADRATURE_MAX_INTERVALS: usize = 200;

/// Below this magnitude the Gompertz-type factor `(e^b - 1) / b` switches to
/// its series.
const SMALL_BETA: f64 = 1e-8;
/// The log-quadratic erf closed form is used only for `gamma` below this.
const LOGQUAD_GAMMA_CUTOFF: f64 = 1e-8;
/// Negative cumulative hazards smaller than this are treated as round-off.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardModel {
    Gompertz,
    Kannisto,
    Weibull,
    Makeham,
    Beard,
    #[serde(rename = "logquad")]
    LogQuadratic,
    Logistic,
    Perks,
    #[serde(rename = "lynchbrown")]
    LynchBrown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transform {
    Identity,
    Exp,
}

use Transform::{Exp, Identity};

/// Natural-scale parameters, in the order given by [`HazardModel::param_names`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams(pub Vec<f64>);

/// Unconstrained optimizer-scale parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptParams(pub Vec<f64>);

impl NaturalParams {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl OptParams {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl HazardModel {
    pub const ALL: [HazardModel; 9] = [
        HazardModel::Gompertz,
        HazardModel::Kannisto,
        HazardModel::Weibull,
        HazardModel::Makeham,
        HazardModel::Beard,
        HazardModel::LogQuadratic,
        HazardModel::Logistic,
        HazardModel::Perks,
        HazardModel::LynchBrown,
    ];

    /// Lowercase token used on the command line and in serialized output.
    pub fn token(self) -> &'static str {
        match self {
            HazardModel::Gompertz => "gompertz",
            HazardModel::Kannisto => "kannisto",
            HazardModel::Weibull => "weibull",
            HazardModel::Makeham => "makeham",
            HazardModel::Beard => "beard",
            HazardModel::LogQuadratic => "logquad",
            HazardModel::Logistic => "logistic",
            HazardModel::Perks => "perks",
            HazardModel::LynchBrown => "lynchbrown",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HazardModel::Gompertz => "Gompertz",
            HazardModel::Kannisto => "Kannisto",
            HazardModel::Weibull => "Weibull",
            HazardModel::Makeham => "Makeham",
            HazardModel::Beard => "Beard",
            HazardModel::LogQuadratic => "Log-Quadratic",
            HazardModel::Logistic => "Logistic",
            HazardModel::Perks => "Perks",
            HazardModel::LynchBrown => "Lynch-Brown",
        }
    }

    pub fn valid_tokens() -> String {
        HazardModel::ALL.iter().map(|m| m.token()).collect::<Vec<_>>().join(", ")
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            HazardModel::Gompertz | HazardModel::Kannisto | HazardModel::Weibull => &["alpha", "beta"],
            HazardModel::Makeham | HazardModel::LogQuadratic => &["alpha", "beta", "gamma"],
            HazardModel::Beard => &["alpha", "beta", "delta"],
            HazardModel::Logistic | HazardModel::Perks | HazardModel::LynchBrown => {
                &["alpha", "beta", "gamma", "delta"]
            }
        }
    }

    /// Number of free parameters.
    pub fn k(self) -> usize {
        self.param_names().len()
    }

    fn transforms(self) -> &'static [Transform] {
        match self {
            HazardModel::Gompertz => &[Exp, Identity],
            HazardModel::Kannisto | HazardModel::Weibull => &[Exp, Exp],
            HazardModel::Makeham => &[Exp, Identity, Exp],
            HazardModel::Beard => &[Exp, Exp, Exp],
            HazardModel::LogQuadratic => &[Identity, Identity, Identity],
            HazardModel::Logistic | HazardModel::Perks => &[Exp, Exp, Exp, Exp],
            HazardModel::LynchBrown => &[Identity, Exp, Exp, Identity],
        }
    }

    fn check_arity(self, len: usize) -> Result<(), EvalError> {
        if len != self.k() {
            return Err(EvalError::Arity { model: self.label(), expected: self.k(), got: len });
        }
        Ok(())
    }

    /// Check that natural parameters are finite and positive where required.
    pub fn check_domain(self, theta: &NaturalParams) -> Result<(), EvalError> {
        self.check_arity(theta.0.len())?;
        for ((&value, &name), t) in theta.0.iter().zip(self.param_names()).zip(self.transforms()) {
            let ok = value.is_finite() && (*t == Identity || value > 0.0);
            if !ok {
                return Err(EvalError::Domain { model: self.label(), name, value });
            }
        }
        Ok(())
    }

    pub fn to_natural(self, theta: &OptParams) -> NaturalParams {
        NaturalParams(
            theta
                .0
                .iter()
                .zip(self.transforms())
                .map(|(&x, t)| match t {
                    Identity => x,
                    Exp => x.exp(),
                })
                .collect(),
        )
    }

    pub fn from_natural(self, theta: &NaturalParams) -> Result<OptParams, EvalError> {
        self.check_domain(theta)?;
        Ok(OptParams(
            theta
                .0
                .iter()
                .zip(self.transforms())
                .map(|(&x, t)| match t {
                    Identity => x,
                    Exp => x.ln(),
                })
                .collect(),
        ))
    }

    /// Natural parameters keyed by name.
    pub fn params_to_map(self, theta: &NaturalParams) -> BTreeMap<String, f64> {
        self.param_names().iter().map(|s| s.to_string()).zip(theta.0.iter().copied()).collect()
    }

    /// Build natural parameters from a name-keyed map (e.g. parsed JSON).
    pub fn params_from_map(self, map: &BTreeMap<String, f64>) -> Result<NaturalParams, Error> {
        for key in map.keys() {
            if !self.param_names().contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}: unknown parameter `{key}` (expected {})",
                    self.label(),
                    self.param_names().join(", ")
                )));
            }
        }
        let values = self
            .param_names()
            .iter()
            .map(|&n| {
                map.get(n).copied().ok_or_else(|| Error::Config(format!("{}: missing parameter `{n}`", self.label())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let theta = NaturalParams(values);
        self.check_domain(&theta)?;
        Ok(theta)
    }

    /// Parse a JSON object such as `{"alpha": 0.05, "beta": 0.11}`.
    pub fn params_from_json(self, text: &str) -> Result<NaturalParams, Error> {
        let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
        self.params_from_map(&map)
    }

    /// Hazard at age index `z`, without domain checks.
    pub(crate) fn raw_hazard(self, p: &[f64], z: f64) -> f64 {
        match self {
            HazardModel::Gompertz => p[0] * (p[1] * z).exp(),
            HazardModel::Makeham => p[2] + p[0] * (p[1] * z).exp(),
            HazardModel::Kannisto => sigmoid(p[0].ln() + p[1] * z),
            HazardModel::Weibull => p[0] * z.powf(p[1] - 1.0),
            HazardModel::Beard => logistic_term(p[0], p[1], p[2], z),
            HazardModel::Logistic => p[2] + logistic_term(p[0], p[1], p[3], z),
            HazardModel::Perks => {
                let (alpha, beta, gamma, delta) = (p[0], p[1], p[2], p[3]);
                // (gamma + alpha e^{bz}) / (1 + delta e^{bz})
                let s = sigmoid(delta.ln() + beta * z);
                gamma * (1.0 - s) + alpha / delta * s
            }
            HazardModel::LogQuadratic => (p[0] + p[1] * z + p[2] * z * z).exp(),
            HazardModel::LynchBrown => p[0] + p[1] * (p[2] * (z - p[3])).atan(),
        }
    }

    /// Closed-form cumulative hazard over `[z, z + 1)`, without domain checks.
    pub(crate) fn raw_cumulative_hazard(self, p: &[f64], z: f64) -> f64 {
        match self {
            HazardModel::Gompertz => gompertz_integral(p[0], p[1], z),
            HazardModel::Makeham => p[2] + gompertz_integral(p[0], p[1], z),
            HazardModel::Kannisto => {
                let (alpha, beta) = (p[0], p[1]);
                log_ratio(alpha.ln(), beta, z) / beta
            }
            HazardModel::Beard => {
                let (alpha, beta, delta) = (p[0], p[1], p[2]);
                alpha / (beta * delta) * log_ratio(delta.ln(), beta, z)
            }
            HazardModel::Logistic => {
                let (alpha, beta, gamma, delta) = (p[0], p[1], p[2], p[3]);
                gamma + alpha / (beta * delta) * log_ratio(delta.ln(), beta, z)
            }
            HazardModel::Perks => {
                let (alpha, beta, gamma, delta) = (p[0], p[1], p[2], p[3]);
                gamma + (alpha / delta - gamma) / beta * log_ratio(delta.ln(), beta, z)
            }
            HazardModel::Weibull => {
                let (alpha, beta) = (p[0], p[1]);
                // alpha/beta * ((z+1)^beta - z^beta)
                alpha * z.powf(beta) * (beta * (1.0 / z).ln_1p()).exp_m1() / beta
            }
            HazardModel::LogQuadratic => {
                if p[2].abs() > LOGQUAD_GAMMA_CUTOFF {
                    log_quadratic_integral(p[0], p[1], p[2], z)
                } else {
                    self.quadrature_cumulative_hazard(p, z)
                }
            }
            HazardModel::LynchBrown => {
                let (alpha, beta, gamma, delta) = (p[0], p[1], p[2], p[3]);
                let k0 = gamma * (z - delta);
                let k1 = gamma * (z - delta + 1.0);
                let bracket = 2.0 * k1 * k1.atan() - 2.0 * k0 * k0.atan() + (k0 * k0).ln_1p() - (k1 * k1).ln_1p();
                alpha + beta / (2.0 * gamma) * bracket
            }
        }
    }

    fn quadrature_cumulative_hazard(self, p: &[f64], z: f64) -> f64 {
        special::integrate(|x| self.raw_hazard(p, x), z, z + 1.0, QUADRATURE_REL_TOL, QUADRATURE_MAX_INTERVALS).value
    }

    fn check_z(self, z: f64) -> Result<(), EvalError> {
        if !z.is_finite() || (self == HazardModel::Weibull && z <= 0.0) {
            return Err(EvalError::NonFinite { model: self.label(), z });
        }
        Ok(())
    }

    /// Population hazard `mu(z)`.
    pub fn hazard(self, theta: &NaturalParams, z: f64) -> Result<f64, EvalError> {
        self.check_domain(theta)?;
        self.check_z(z)?;
        let mu = self.raw_hazard(&theta.0, z);
        if mu.is_nan() {
            return Err(EvalError::NonFinite { model: self.label(), z });
        }
        if mu < 0.0 {
            return Err(EvalError::NegativeHazard { model: self.label(), z });
        }
        Ok(mu)
    }

    /// Cumulative hazard over `[z, z + 1)` from the closed form.
    pub fn cumulative_hazard(self, theta: &NaturalParams, z: f64) -> Result<f64, EvalError> {
        self.check_domain(theta)?;
        self.check_z(z)?;
        self.validated_cumhaz(self.raw_cumulative_hazard(&theta.0, z), z)
    }

    /// Cumulative hazard over `[z, z + 1)` by adaptive quadrature of the
    /// hazard (relative tolerance [`QUADRATURE_REL_TOL`]).
    pub fn cumulative_hazard_quadrature(self, theta: &NaturalParams, z: f64) -> Result<f64, EvalError> {
        self.check_domain(theta)?;
        self.check_z(z)?;
        self.validated_cumhaz(self.quadrature_cumulative_hazard(&theta.0, z), z)
    }

    pub(crate) fn validated_cumhaz(self, h: f64, z: f64) -> Result<f64, EvalError> {
        if h.is_nan() {
            Err(EvalError::NonFinite { model: self.label(), z })
        } else if h < -ROUNDOFF {
            Err(EvalError::NegativeHazard { model: self.label(), z })
        } else {
            Ok(h.max(0.0))
        }
    }

    /// Conditional probability of death between `z` and `z + 1`.
    pub fn death_prob(self, theta: &NaturalParams, z: f64) -> Result<f64, EvalError> {
        self.cumulative_hazard(theta, z).map(prob_from_cumhaz)
    }

    pub fn death_prob_quadrature(self, theta: &NaturalParams, z: f64) -> Result<f64, EvalError> {
        self.cumulative_hazard_quadrature(theta, z).map(prob_from_cumhaz)
    }

    /// Survival from the first index: `S[0] = 1`, `S[i+1] = S[i] (1 - q(z_i))`.
    /// The result has one more entry than `zs`.
    pub fn survival_curve(self, theta: &NaturalParams, zs: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = Vec::with_capacity(zs.len() + 1);
        let mut s = 1.0;
        out.push(s);
        for &z in zs {
            // exp(-H) keeps the product exact when q rounds to 1
            s *= (-self.cumulative_hazard(theta, z)?).exp();
            out.push(s);
        }
        Ok(out)
    }

    /// Crude starting values derived from the observed central death rates.
    pub fn heuristic_start(self, d: &CohortDataset) -> OptParams {
        let start = heuristics::start(self, d).filter(|t| t.0.iter().all(|x| x.is_finite()) && t.0.len() == self.k());
        start.unwrap_or_else(|| self.default_start())
    }

    /// Fallback start used when the data carry too little information for
    /// the heuristic (for example, no deaths at all).
    pub fn default_start(self) -> OptParams {
        let natural = match self {
            HazardModel::Gompertz | HazardModel::Kannisto => vec![0.05, 0.1],
            HazardModel::Weibull => vec![0.05, 1.5],
            HazardModel::Makeham => vec![0.05, 0.1, 1e-4],
            HazardModel::Beard => vec![0.05, 0.12, 0.05],
            HazardModel::LogQuadratic => vec![0.05f64.ln(), 0.1, -1e-3],
            HazardModel::Logistic | HazardModel::Perks => vec![0.05, 0.12, 1e-4, 0.05],
            HazardModel::LynchBrown => vec![0.3, 0.2, 0.1, 15.0],
        };
        self.from_natural(&NaturalParams(natural)).expect("defaults are in domain")
    }

    /// Smallest half-width of the random-start box per optimizer coordinate.
    /// The log-quadratic curvature multiplies `z^2`, so a unit perturbation
    /// would put hazards near `e^600` at the oldest ages.
    fn start_floor(self, i: usize) -> f64 {
        match (self, i) {
            (HazardModel::LogQuadratic, 2) => 0.01,
            _ => 1.0,
        }
    }

    /// `n` points drawn uniformly from the box `start ± max(floor_i, |start_i|)`,
    /// with `floor_i = 1` except for the log-quadratic curvature (0.01).
    pub fn random_starts(self, start: &OptParams, n: usize, seed: u64) -> Vec<OptParams> {
        (0..n)
            .map(|i| {
                let mut stream = rng::stream(seed, &[rng::label_id(self.token()), i as u64]);
                OptParams(
                    start
                        .0
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| {
                            let w = c.abs().max(self.start_floor(j));
                            stream.gen_range(c - w..=c + w)
                        })
                        .collect(),
                )
            })
            .collect()
    }
}

impl fmt::Display for HazardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for HazardModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let wanted = s.trim().to_ascii_lowercase();
        HazardModel::ALL
            .into_iter()
            .find(|m| m.token() == wanted)
            .ok_or_else(|| Error::UnknownModel { name: s.to_string(), valid: HazardModel::valid_tokens() })
    }
}

/// `q = 1 - exp(-H)`, accurate for small `H`.
pub fn prob_from_cumhaz(h: f64) -> f64 {
    (-(-h).exp_m1()).clamp(0.0, 1.0)
}

/// `alpha e^{bz} / (1 + delta e^{bz})`
fn logistic_term(alpha: f64, beta: f64, delta: f64, z: f64) -> f64 {
    alpha / delta * sigmoid(delta.ln() + beta * z)
}

/// `ln((1 + c e^{b(z+1)}) / (1 + c e^{bz}))` with `ln_c = ln c`, written as
/// `ln(1 + s (e^b - 1))` where `s = c e^{bz} / (1 + c e^{bz})`.
fn log_ratio(ln_c: f64, beta: f64, z: f64) -> f64 {
    let s = sigmoid(ln_c + beta * z);
    (s * beta.exp_m1()).ln_1p()
}

/// `alpha (e^{b(z+1)} - e^{bz}) / b`, continuous through `b = 0`.
fn gompertz_integral(alpha: f64, beta: f64, z: f64) -> f64 {
    let factor = if beta.abs() < SMALL_BETA { 1.0 + beta / 2.0 + beta * beta / 6.0 } else { beta.exp_m1() / beta };
    alpha * (beta * z).exp() * factor
}

/// Integral of `exp(a + b x + c x^2)` over `[z, z + 1)` for `c != 0`.
///
/// For `c < 0`, with `u(x) = (b + 2 c x) / (2 sqrt(-c))` the integral is
/// `sqrt(pi) e^{a - b^2/(4c)} / (2 sqrt(-c)) * (erf(u(z)) - erf(u(z+1)))`.
/// Where both arguments share a sign the erf difference is rewritten with the
/// scaled complementary function, using `e^{a - b^2/(4c) - u^2} = mu(x)`.
///
/// For `c > 0`, with `u(x) = (b + 2 c x) / (2 sqrt(c))` and Dawson's integral
/// `F`, the integral is `(mu(z+1) F(u(z+1)) - mu(z) F(u(z))) / sqrt(c)`.
fn log_quadratic_integral(a: f64, b: f64, c: f64, z: f64) -> f64 {
    let mu = |x: f64| (a + b * x + c * x * x).exp();
    if c > 0.0 {
        let root = c.sqrt();
        let u = |x: f64| (b + 2.0 * c * x) / (2.0 * root);
        return (mu(z + 1.0) * dawson(u(z + 1.0)) - mu(z) * dawson(u(z))) / root;
    }
    let root = (-c).sqrt();
    let scale = PI.sqrt() / (2.0 * root);
    let u0 = (b + 2.0 * c * z) / (2.0 * root);
    let u1 = (b + 2.0 * c * (z + 1.0)) / (2.0 * root);
    // c < 0, so u1 < u0
    if u1 >= 0.0 {
        scale * (mu(z + 1.0) * erfcx(u1) - mu(z) * erfcx(u0))
    } else if u0 <= 0.0 {
        scale * (mu(z) * erfcx(-u0) - mu(z + 1.0) * erfcx(-u1))
    } else {
        scale * (a - b * b / (4.0 * c)).exp() * (erf(u0) - erf(u1))
    }
}

mod heuristics {
    //! Starting values from regressions on central death rates.

    use super::*;

    struct Rates {
        z: Vec<f64>,
        m: Vec<f64>,
        exposure: Vec<f64>,
    }

    fn usable_rates(d: &CohortDataset) -> Rates {
        let mut r = Rates { z: vec![], m: vec![], exposure: vec![] };
        for c in central_death_rates(d) {
            if let Some(m) = c.rate {
                if m > 0.0 && m.is_finite() {
                    r.z.push(c.z);
                    r.m.push(m);
                    r.exposure.push(c.exposure);
                }
            }
        }
        r
    }

    pub(super) fn start(model: HazardModel, d: &CohortDataset) -> Option<OptParams> {
        let r = usable_rates(d);
        if r.m.len() < model.k().max(2) {
            return None;
        }
        let log_m: Vec<f64> = r.m.iter().map(|m| m.ln()).collect();
        match model {
            HazardModel::Gompertz => {
                let c = ols(&[&r.z], &log_m)?;
                Some(OptParams(vec![c[0], c[1]]))
            }
            HazardModel::Makeham => {
                let m_min = r.m.iter().copied().fold(f64::INFINITY, f64::min);
                let gamma = (0.01 * m_min).min(1e-4);
                let y: Vec<f64> = r.m.iter().map(|m| (m - gamma).ln()).collect();
                let c = ols(&[&r.z], &y)?;
                Some(OptParams(vec![c[0], c[1], gamma.ln()]))
            }
            HazardModel::Weibull => {
                let lz: Vec<f64> = r.z.iter().map(|z| z.ln()).collect();
                let c = ols(&[&lz], &log_m)?;
                Some(OptParams(vec![c[0], (c[1] + 1.0).max(1e-3).ln()]))
            }
            HazardModel::LogQuadratic => {
                let z2: Vec<f64> = r.z.iter().map(|z| z * z).collect();
                let c = ols(&[&r.z, &z2], &log_m)?;
                Some(OptParams(c))
            }
            HazardModel::Kannisto => {
                let (a, b) = logistic_regression(&r)?;
                Some(OptParams(vec![a, b.max(1e-3).ln()]))
            }
            HazardModel::Beard | HazardModel::Logistic | HazardModel::Perks => {
                let s = LogisticShape::estimate(&r)?;
                let beta = (4.0 * s.slope / s.m_max).max(1e-3);
                let delta = (-beta * s.z_inflection).exp();
                let alpha = delta * s.m_max;
                let gamma = (s.m_young - alpha / (1.0 + delta)).max(1e-3 * s.m_young).max(1e-8);
                let natural = match model {
                    HazardModel::Beard => vec![alpha, beta, delta],
                    _ => vec![alpha, beta, gamma, delta],
                };
                model.from_natural(&NaturalParams(natural)).ok()
            }
            HazardModel::LynchBrown => {
                let s = LogisticShape::estimate(&r)?;
                let beta = s.m_max / PI;
                // inflection at the observed age where the fitted curve is
                // closest to the mid-range rate
                let delta =
                    r.z.iter()
                        .copied()
                        .min_by(|x, y| (s.fitted(*x) - s.mid).abs().total_cmp(&(s.fitted(*y) - s.mid).abs()))?;
                let f = s.fitted(delta);
                let slope = s.b * f * (1.0 - f);
                let gamma = (slope / beta).max(1e-3);
                // alpha = beta * pi/2 keeps the hazard positive at every age
                let alpha = beta * FRAC_PI_2;
                model.from_natural(&NaturalParams(vec![alpha, beta, gamma, delta])).ok()
            }
        }
    }

    struct LogisticShape {
        a: f64,
        b: f64,
        m_max: f64,
        m_young: f64,
        mid: f64,
        z_inflection: f64,
        /// slope of the fitted curve at the inflection estimate
        slope: f64,
    }

    impl LogisticShape {
        fn estimate(r: &Rates) -> Option<Self> {
            let (a, b) = logistic_regression(r)?;
            if b <= 0.0 {
                return None;
            }
            let m_max = r.m.iter().copied().fold(0.0, f64::max);
            let m_min = r.m.iter().copied().fold(f64::INFINITY, f64::min);
            let m_young = r.m.iter().take(5).copied().fold(f64::INFINITY, f64::min);
            let mid = (0.5 * (m_min + m_max)).clamp(1e-6, 1.0 - 1e-6);
            let z_inflection = ((mid / (1.0 - mid)).ln() - a) / b;
            let slope = b * mid * (1.0 - mid);
            Some(LogisticShape { a, b, m_max, m_young, mid, z_inflection, slope })
        }

        fn fitted(&self, z: f64) -> f64 {
            sigmoid(self.a + self.b * z)
        }
    }

    /// Ordinary least squares with an intercept; returns
    /// `[intercept, coef_1, ...]`.
    pub(super) fn ols(columns: &[&[f64]], y: &[f64]) -> Option<Vec<f64>> {
        let weights = vec![1.0; y.len()];
        weighted_ls(columns, y, &weights)
    }

    fn weighted_ls(columns: &[&[f64]], y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
        let p = columns.len() + 1;
        let row = |i: usize| std::iter::once(1.0).chain(columns.iter().map(move |c| c[i]));
        let mut xtx = vec![vec![0.0; p]; p];
        let mut xty = vec![0.0; p];
        for i in 0..y.len() {
            let xi: Vec<f64> = row(i).collect();
            for r in 0..p {
                xty[r] += w[i] * xi[r] * y[i];
                for c in 0..p {
                    xtx[r][c] += w[i] * xi[r] * xi[c];
                }
            }
        }
        solve(xtx, xty)
    }

    /// Gaussian elimination with partial pivoting.
    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[pivot][col].abs() < 1e-300 {
                return None;
            }
            a.swap(col, pivot);
            b.swap(col, pivot);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    /// Exposure-weighted logistic regression of the central death rates
    /// (capped at 1) on age, fitted by iteratively reweighted least squares.
    fn logistic_regression(r: &Rates) -> Option<(f64, f64)> {
        let y: Vec<f64> = r.m.iter().map(|m| m.min(1.0)).collect();
        let total: f64 = r.exposure.iter().sum();
        let mean = y.iter().zip(&r.exposure).map(|(y, w)| y * w).sum::<f64>() / total;
        let mean = mean.clamp(1e-6, 1.0 - 1e-6);
        let (mut a, mut b) = ((mean / (1.0 - mean)).ln(), 0.0);
        for _ in 0..100 {
            let mut work = Vec::with_capacity(y.len());
            let mut weights = Vec::with_capacity(y.len());
            for i in 0..y.len() {
                let eta = a + b * r.z[i];
                let p = sigmoid(eta).clamp(1e-12, 1.0 - 1e-12);
                let v = p * (1.0 - p);
                work.push(eta + (y[i] - p) / v);
                weights.push(r.exposure[i] * v);
            }
            let c = weighted_ls(&[&r.z], &work, &weights)?;
            let step = (c[0] - a).abs().max((c[1] - b).abs());
            a = c[0];
            b = c[1];
            if step < 1e-12 {
                break;
            }
        }
        (a.is_finite() && b.is_finite()).then_some((a, b))
    }
}
