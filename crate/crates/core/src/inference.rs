//! Binomial likelihood for cohort deaths and the multi-start fitting driver.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortDataset;
use crate::error::{Error, EvalError, Result};
use crate::models::{prob_from_cumhaz, HazardModel, NaturalParams, OptParams};
use crate::optimize::{self, BfgsConfig, Objective, Termination};
use crate::rng;
use crate::selection;
use crate::special::ln_choose;

/// Smallest death probability allowed inside a logarithm.
const Q_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub total: f64,
    /// Whether `total` includes `sum ln C(N_z, D_z)`.
    pub includes_binomial_constant: bool,
}

/// `sum_z ln C(N_z, D_z)`; identical for every model fitted to `d`.
pub fn binomial_constant(d: &CohortDataset) -> f64 {
    d.rows().iter().map(|r| ln_choose(r.survivors, r.deaths)).sum()
}

/// Kernel `sum_z [D ln q + (N - D) ln(1 - q)]` from per-age cumulative
/// hazards, using `ln(1 - q) = -H`.
fn kernel(d: &CohortDataset, cumhaz: &[f64]) -> Result<f64, EvalError> {
    let mut total = 0.0;
    for (r, &h) in d.rows().iter().zip(cumhaz) {
        let (n, dz) = (r.survivors, r.deaths);
        if dz > 0 {
            if h <= 0.0 {
                return Err(EvalError::ZeroProbability { age: r.age, deaths: dz });
            }
            total += dz as f64 * prob_from_cumhaz(h).max(Q_FLOOR).ln();
        }
        if n > dz {
            if h == f64::INFINITY {
                return Err(EvalError::UnitProbability { age: r.age, survivors: n - dz });
            }
            total -= (n - dz) as f64 * h;
        }
    }
    Ok(total)
}

fn cumulative_hazards(m: HazardModel, theta: &NaturalParams, d: &CohortDataset) -> Result<Vec<f64>, EvalError> {
    d.zs().map(|z| m.cumulative_hazard(theta, z)).collect()
}

/// Binomial log-likelihood of the observed deaths.
pub fn log_likelihood(
    m: HazardModel,
    theta: &NaturalParams,
    d: &CohortDataset,
    include_constant: bool,
) -> Result<LogLikelihood, EvalError> {
    let h = cumulative_hazards(m, theta, d)?;
    let mut total = kernel(d, &h)?;
    if include_constant {
        total += binomial_constant(d);
    }
    Ok(LogLikelihood { total, includes_binomial_constant: include_constant })
}

/// Log-likelihood at optimizer-scale parameters.
pub fn log_likelihood_opt(
    m: HazardModel,
    theta: &OptParams,
    d: &CohortDataset,
    include_constant: bool,
) -> Result<LogLikelihood, EvalError> {
    log_likelihood(m, &m.to_natural(theta), d, include_constant)
}

/// Expected deaths `N_z q_z` with the observed survivors held fixed.
pub fn predicted_deaths(m: HazardModel, theta: &NaturalParams, d: &CohortDataset) -> Result<Vec<f64>, EvalError> {
    d.rows().iter().map(|r| Ok(r.survivors as f64 * m.death_prob(theta, d.z(r.age))?)).collect()
}

/// Sum of squared errors between predicted and observed deaths.
pub fn sse(predicted: &[f64], d: &CohortDataset) -> f64 {
    predicted.iter().zip(d.rows()).map(|(p, r)| (p - r.deaths as f64).powi(2)).sum()
}

fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Central finite-difference gradient of the negative log-likelihood with
/// respect to optimizer-scale parameters, step `eps^(1/3) max(1, |x_i|)`.
pub fn neg_ll_gradient(m: HazardModel, theta: &OptParams, d: &CohortDataset) -> Result<Vec<f64>, EvalError> {
    let f =
        |x: &[f64]| -> Result<f64, EvalError> { Ok(-log_likelihood_opt(m, &OptParams(x.to_vec()), d, true)?.total) };
    let mut x = theta.0.clone();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            Ok((up? - down?) / (2.0 * h))
        })
        .collect()
}

/// Negative log-likelihood on the optimizer scale.
///
/// The gradient applies the chain rule through the per-age cumulative
/// hazards, `d ll / d H_z = D_z / expm1(H_z) - (N_z - D_z)`, and takes
/// central differences of each `H_z` only. Differencing the small per-age
/// hazards rather than the whole likelihood keeps the gradient accurate to
/// well below the convergence tolerance.
pub struct NegLogLikelihood<'a> {
    pub model: HazardModel,
    pub data: &'a CohortDataset,
    constant: f64,
    zs: Vec<f64>,
}

impl<'a> NegLogLikelihood<'a> {
    pub fn new(model: HazardModel, data: &'a CohortDataset) -> Self {
        NegLogLikelihood { model, data, constant: binomial_constant(data), zs: data.zs().collect() }
    }

    fn cumhaz(&self, x: &[f64]) -> Option<Vec<f64>> {
        let theta = self.model.to_natural(&OptParams(x.to_vec()));
        self.model.check_domain(&theta).ok()?;
        self.zs
            .iter()
            .map(|&z| self.model.validated_cumhaz(self.model.raw_cumulative_hazard(&theta.0, z), z).ok())
            .collect()
    }

    fn raw_cumhaz(&self, x: &[f64]) -> Option<Vec<f64>> {
        let theta = self.model.to_natural(&OptParams(x.to_vec()));
        let h: Vec<f64> = self.zs.iter().map(|&z| self.model.raw_cumulative_hazard(&theta.0, z)).collect();
        h.iter().all(|v| v.is_finite()).then_some(h)
    }
}

impl Objective for NegLogLikelihood<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        match self.cumhaz(x).map(|h| kernel(self.data, &h)) {
            Some(Ok(ll)) => -(ll + self.constant),
            _ => f64::INFINITY,
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let h = self.cumhaz(x)?;
        let weights: Vec<f64> = self
            .data
            .rows()
            .iter()
            .zip(&h)
            .map(|(r, &hz)| {
                let died = if r.deaths > 0 { r.deaths as f64 / hz.exp_m1() } else { 0.0 };
                died - (r.survivors - r.deaths) as f64
            })
            .collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return None;
        }
        let mut point = x.to_vec();
        let mut grad = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let step = fd_step(x[i]);
            point[i] = x[i] + step;
            let up = self.raw_cumhaz(&point)?;
            point[i] = x[i] - step;
            let down = self.raw_cumhaz(&point)?;
            point[i] = x[i];
            let dll: f64 = weights.iter().zip(up.iter().zip(&down)).map(|(w, (u, d))| w * (u - d) / (2.0 * step)).sum();
            grad.push(-dll);
        }
        grad.iter().all(|g| g.is_finite()).then_some(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Random starts in addition to the heuristic start.
    pub n_random_starts: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub rel_ll_tol: f64,
    pub seed: u64,
    pub include_binomial_constant: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_random_starts: 10,
            max_iterations: 500,
            grad_tol: 1e-6,
            rel_ll_tol: 1e-10,
            seed: 0,
            include_binomial_constant: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.grad_tol > 0.0) || !(self.rel_ll_tol > 0.0) {
            return Err(Error::Config("max_iterations and tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        FitConfig { seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Heuristic,
    Random,
}

/// Diagnostics for one optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub kind: StartKind,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Final log-likelihood, `None` when the start could not be evaluated.
    pub loglik: Option<f64>,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: HazardModel,
    pub cohort: String,
    /// Natural-scale estimates.
    pub params: NaturalParams,
    pub params_opt: OptParams,
    pub log_likelihood: LogLikelihood,
    pub aic: f64,
    pub bic: f64,
    pub sse: f64,
    /// Cohort size used for BIC.
    pub n: u64,
    pub k: usize,
    pub ages: Vec<i64>,
    pub predicted_deaths: Vec<f64>,
    pub starts: Vec<StartRecord>,
    pub best_start: usize,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        self.log_likelihood.total
    }

    pub fn converged(&self) -> bool {
        self.starts[self.best_start].converged
    }

    /// Re-evaluate the summary statistics with or without the binomial
    /// constant. Parameters and predictions are unchanged.
    pub fn with_binomial_constant(&self, d: &CohortDataset, include: bool) -> FitResult {
        if include == self.log_likelihood.includes_binomial_constant {
            return self.clone();
        }
        let k = binomial_constant(d);
        let shift = if include { k } else { -k };
        let total = self.log_likelihood.total + shift;
        let mut out = self.clone();
        out.log_likelihood = LogLikelihood { total, includes_binomial_constant: include };
        out.aic = selection::aic(total, self.k);
        out.bic = selection::bic(total, self.k, self.n).expect("n validated at fit time");
        for s in &mut out.starts {
            s.loglik = s.loglik.map(|l| l + shift);
        }
        out
    }
}

/// Serialized form of a fit with parameters keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: HazardModel,
    pub cohort: String,
    pub params: BTreeMap<String, f64>,
    pub params_opt: Vec<f64>,
    pub loglik: f64,
    pub includes_binomial_constant: bool,
    pub aic: f64,
    pub bic: f64,
    pub sse: f64,
    pub n: u64,
    pub k: usize,
    pub converged: bool,
    pub ages: Vec<i64>,
    pub predicted_deaths: Vec<f64>,
    pub best_start: usize,
    pub starts: Vec<StartRecord>,
}

impl From<&FitResult> for FitReport {
    fn from(f: &FitResult) -> Self {
        FitReport {
            model: f.model,
            cohort: f.cohort.clone(),
            params: f.model.params_to_map(&f.params),
            params_opt: f.params_opt.0.clone(),
            loglik: f.loglik(),
            includes_binomial_constant: f.log_likelihood.includes_binomial_constant,
            aic: f.aic,
            bic: f.bic,
            sse: f.sse,
            n: f.n,
            k: f.k,
            converged: f.converged(),
            ages: f.ages.clone(),
            predicted_deaths: f.predicted_deaths.clone(),
            best_start: f.best_start,
            starts: f.starts.clone(),
        }
    }
}

/// Maximize the likelihood from the heuristic start and
/// `config.n_random_starts` random starts; keep the best.
pub fn fit(m: HazardModel, d: &CohortDataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if d.len() < m.k() {
        return Err(Error::Config(format!("{}: need at least {} ages, dataset has {}", m.label(), m.k(), d.len())));
    }
    if d.initial_size() == 0 {
        return Err(Error::Config(format!("{}: cohort is empty at the first age", d.meta.id())));
    }
    let heuristic = m.heuristic_start(d);
    let randoms =
        m.random_starts(&heuristic, config.n_random_starts, rng::derive(config.seed, &[rng::label_id("starts")]));
    let starts: Vec<(StartKind, OptParams)> = std::iter::once((StartKind::Heuristic, heuristic))
        .chain(randoms.into_iter().map(|s| (StartKind::Random, s)))
        .collect();

    let objective = NegLogLikelihood::new(m, d);
    let bfgs =
        BfgsConfig { max_iterations: config.max_iterations, grad_tol: config.grad_tol, rel_f_tol: config.rel_ll_tol };
    let records: Vec<StartRecord> = starts
        .par_iter()
        .map(|(kind, x0)| {
            let out = optimize::minimize(&objective, &x0.0, &bfgs);
            let loglik = (-out.value).is_finite().then_some(-out.value);
            StartRecord {
                kind: *kind,
                start: x0.0.clone(),
                end: out.x,
                loglik,
                converged: out.termination.converged(),
                termination: out.termination,
                iterations: out.iterations,
            }
        })
        .collect();

    let best = records.iter().enumerate().filter_map(|(i, r)| r.loglik.map(|l| (i, l))).fold(
        None,
        |acc: Option<(usize, f64)>, (i, l)| match acc {
            Some((_, bl)) if bl >= l => acc,
            _ => Some((i, l)),
        },
    );
    let Some((best_start, _)) = best else {
        return Err(Error::FitFailed { model: m.label(), starts: records.len() });
    };

    let params_opt = OptParams(records[best_start].end.clone());
    let params = m.to_natural(&params_opt);
    let log_likelihood = log_likelihood(m, &params, d, true)?;
    let predicted = predicted_deaths(m, &params, d)?;
    let n = d.initial_size();
    let result = FitResult {
        model: m,
        cohort: d.meta.id(),
        aic: selection::aic(log_likelihood.total, m.k()),
        bic: selection::bic(log_likelihood.total, m.k(), n)?,
        sse: sse(&predicted, d),
        n,
        k: m.k(),
        ages: d.rows().iter().map(|r| r.age).collect(),
        predicted_deaths: predicted,
        starts: records,
        best_start,
        params,
        params_opt,
        log_likelihood,
    };
    Ok(result.with_binomial_constant(d, config.include_binomial_constant))
}

/// Log-likelihood along one natural-scale coordinate with the others held
/// at `theta` (a slice, not a re-optimized profile).
pub fn likelihood_profile(
    m: HazardModel,
    d: &CohortDataset,
    theta: &NaturalParams,
    coordinate: usize,
    grid: &[f64],
    include_constant: bool,
) -> Result<Vec<f64>> {
    if coordinate >= m.k() {
        return Err(Error::Config(format!("{}: coordinate {coordinate} out of range", m.label())));
    }
    grid.iter()
        .map(|&v| {
            let mut p = theta.clone();
            p.0[coordinate] = v;
            Ok(log_likelihood(m, &p, d, include_constant)?.total)
        })
        .collect()
}
