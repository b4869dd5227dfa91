//! Information criteria and per-cohort model comparison.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::float;
use crate::inference::FitResult;
use crate::models::HazardModel;

pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

/// BIC with `n` the cohort size at the first modeled age.
pub fn bic(loglik: f64, k: usize, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("BIC needs a positive cohort size".into()));
    }
    Ok(-2.0 * loglik + (n as f64).ln() * k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// `delta <= 2`
    Substantial,
    /// `2 < delta <= 10`
    Intermediate,
    /// `delta > 10`
    None,
}

impl Support {
    pub fn as_str(self) -> &'static str {
        match self {
            Support::Substantial => "substantial",
            Support::Intermediate => "intermediate",
            Support::None => "none",
        }
    }
}

pub fn support_category(delta: f64) -> Result<Support> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::Config(format!("criterion difference must be non-negative, got {delta}")));
    }
    Ok(if delta <= 2.0 {
        Support::Substantial
    } else if delta <= 10.0 {
        Support::Intermediate
    } else {
        Support::None
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: HazardModel,
    pub k: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub sse: f64,
    pub delta_aic: f64,
    pub delta_bic: f64,
    pub aic_rank: usize,
    pub bic_rank: usize,
    pub sse_rank: usize,
    pub support: Support,
    /// The AIC equals another model's; the rank was decided by model order.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub cohort: String,
    pub n: u64,
    pub includes_binomial_constant: bool,
    /// Rows in model order.
    pub rows: Vec<ComparisonRow>,
}

/// AICs closer than this (relative) are treated as tied.
const TIE_TOL: f64 = 1e-12;

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Ranks 1.. by ascending value, equal values ordered by model.
fn ranks(rows: &[(HazardModel, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| rows[i].1.total_cmp(&rows[j].1).then(rows[i].0.cmp(&rows[j].0)));
    let mut out = vec![0; rows.len()];
    for (rank, i) in order.into_iter().enumerate() {
        out[i] = rank + 1;
    }
    out
}

pub fn compare(fits: &[FitResult]) -> Result<ModelComparison> {
    if fits.len() < 2 {
        return Err(Error::Config("comparison needs at least two fitted models".into()));
    }
    let first = &fits[0];
    for f in fits {
        if f.cohort != first.cohort || f.n != first.n {
            return Err(Error::Config(format!("cannot compare fits of {} and {}", first.cohort, f.cohort)));
        }
        if f.log_likelihood.includes_binomial_constant != first.log_likelihood.includes_binomial_constant {
            return Err(Error::Config("fits disagree on the binomial constant".into()));
        }
        if !f.aic.is_finite() || !f.bic.is_finite() {
            return Err(Error::Config(format!("{}: non-finite criterion", f.model)));
        }
    }
    let mut fits: Vec<&FitResult> = fits.iter().collect();
    fits.sort_by_key(|f| f.model);
    if fits.windows(2).any(|w| w[0].model == w[1].model) {
        return Err(Error::Config("each model may appear once per comparison".into()));
    }

    let min_aic = fits.iter().map(|f| f.aic).fold(f64::INFINITY, f64::min);
    let min_bic = fits.iter().map(|f| f.bic).fold(f64::INFINITY, f64::min);
    let aic_ranks = ranks(&fits.iter().map(|f| (f.model, f.aic)).collect::<Vec<_>>());
    let bic_ranks = ranks(&fits.iter().map(|f| (f.model, f.bic)).collect::<Vec<_>>());
    let sse_ranks = ranks(&fits.iter().map(|f| (f.model, f.sse)).collect::<Vec<_>>());

    let rows = fits
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let delta_aic = f.aic - min_aic;
            Ok(ComparisonRow {
                model: f.model,
                k: f.k,
                loglik: f.loglik(),
                aic: f.aic,
                bic: f.bic,
                sse: f.sse,
                delta_aic,
                delta_bic: f.bic - min_bic,
                aic_rank: aic_ranks[i],
                bic_rank: bic_ranks[i],
                sse_rank: sse_ranks[i],
                support: support_category(delta_aic)?,
                tied: fits.iter().enumerate().any(|(j, g)| j != i && ties(f.aic, g.aic)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelComparison {
        cohort: first.cohort.clone(),
        n: first.n,
        includes_binomial_constant: first.log_likelihood.includes_binomial_constant,
        rows,
    })
}

pub const COMPARISON_HEADER: [&str; 15] = [
    "cohort",
    "model",
    "k",
    "loglik",
    "sse",
    "sse_rank",
    "aic",
    "aic_rank",
    "delta_aic",
    "bic",
    "bic_rank",
    "delta_bic",
    "support",
    "tied",
    "n",
];

impl ModelComparison {
    pub fn best(&self) -> &ComparisonRow {
        self.rows.iter().find(|r| r.aic_rank == 1).expect("ranks start at 1")
    }

    pub fn row(&self, m: HazardModel) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == m)
    }

    pub fn any_ties(&self) -> bool {
        self.rows.iter().any(|r| r.tied)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COMPARISON_HEADER)?;
        self.write_records(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Data rows only, for tables spanning several cohorts.
    pub fn write_records<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.rows {
            w.write_record([
                self.cohort.clone(),
                r.model.token().to_string(),
                r.k.to_string(),
                float(r.loglik),
                float(r.sse),
                r.sse_rank.to_string(),
                float(r.aic),
                r.aic_rank.to_string(),
                float(r.delta_aic),
                float(r.bic),
                r.bic_rank.to_string(),
                float(r.delta_bic),
                r.support.as_str().to_string(),
                r.tied.to_string(),
                self.n.to_string(),
            ])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::LogLikelihood;
    use crate::models::{NaturalParams, OptParams};

    fn fake(model: HazardModel, loglik: f64, sse: f64) -> FitResult {
        let k = model.k();
        FitResult {
            model,
            cohort: "x_m_1900".into(),
            params: NaturalParams(vec![0.0; k]),
            params_opt: OptParams(vec![0.0; k]),
            log_likelihood: LogLikelihood { total: loglik, includes_binomial_constant: false },
            aic: aic(loglik, k),
            bic: bic(loglik, k, 8192).unwrap(),
            sse,
            n: 8192,
            k,
            ages: vec![],
            predicted_deaths: vec![],
            starts: vec![],
            best_start: 0,
        }
    }

    #[test]
    fn criteria_arithmetic() {
        assert!((aic(-29092.2, 2) - 58188.4).abs() < 1e-9);
        assert!((bic(-29092.2, 2, 8192).unwrap() - (58184.4 + 2.0 * 8192f64.ln())).abs() < 1e-9);
        assert!((bic(-29092.2, 2, 8192).unwrap() - 58202.42).abs() < 0.01);
        assert_eq!(aic(-10.0, 0), 20.0);
        assert!(bic(-1.0, 1, 0).is_err());
    }

    #[test]
    fn support_boundaries() {
        assert_eq!(support_category(0.0).unwrap(), Support::Substantial);
        assert_eq!(support_category(2.0).unwrap(), Support::Substantial);
        assert_eq!(support_category(3.7).unwrap(), Support::Intermediate);
        assert_eq!(support_category(10.0).unwrap(), Support::Intermediate);
        assert_eq!(support_category(125.0).unwrap(), Support::None);
        assert!(support_category(-0.1).is_err());
        assert!(support_category(f64::NAN).is_err());
    }

    #[test]
    fn deltas_and_ranks() {
        // AIC 58188.43 and 58190.12
        let a = fake(HazardModel::Kannisto, -29092.215, 7645.48);
        let b = fake(HazardModel::Beard, -29092.06, 7600.0);
        let c = compare(&[a, b]).unwrap();
        let k = c.row(HazardModel::Kannisto).unwrap();
        let bd = c.row(HazardModel::Beard).unwrap();
        assert_eq!(k.delta_aic, 0.0);
        assert!((bd.delta_aic - 1.69).abs() < 1e-9);
        assert_eq!((k.aic_rank, bd.aic_rank), (1, 2));
        assert_eq!((k.sse_rank, bd.sse_rank), (2, 1));
        assert_eq!(c.best().model, HazardModel::Kannisto);
        assert!(!c.any_ties());
    }

    #[test]
    fn ties_follow_model_order_and_are_flagged() {
        let a = fake(HazardModel::Gompertz, -100.0, 1.0);
        let b = fake(HazardModel::Kannisto, -100.0, 1.0);
        for input in [vec![a.clone(), b.clone()], vec![b, a]] {
            let c = compare(&input).unwrap();
            assert_eq!(c.best().model, HazardModel::Gompertz);
            assert!(c.rows.iter().all(|r| r.tied));
            assert_eq!(c.rows.iter().filter(|r| r.delta_aic == 0.0).count(), 2);
        }
    }

    #[test]
    fn rejects_mixed_or_duplicate_inputs() {
        let a = fake(HazardModel::Gompertz, -100.0, 1.0);
        let mut b = fake(HazardModel::Makeham, -99.0, 1.0);
        b.cohort = "y_f_1900".into();
        assert!(compare(&[a.clone(), b]).is_err());
        assert!(compare(&[a.clone(), a.clone()]).is_err());
        assert!(compare(&[a]).is_err());
    }

    #[test]
    fn csv_has_table_columns() {
        let c = compare(&[fake(HazardModel::Gompertz, -100.0, 1.0), fake(HazardModel::Weibull, -150.0, 2.0)]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "cohort,model,k,loglik,sse,sse_rank,aic,aic_rank,delta_aic,bic,bic_rank,delta_bic,support,tied,n"
        );
        assert_eq!(lines.count(), 2);
    }
}
