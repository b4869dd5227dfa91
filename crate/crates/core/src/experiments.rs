//! Multi-cohort studies: batch fitting, cross-validation, downsampling,
//! support summaries, ΔAIC clustering, and synthetic cohorts.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::RangeInclusive;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{reconstruct_lifelines, split_folds, thin, AgeRow, CohortDataset, CohortMeta};
use crate::error::{DataError, Error, Result};
use crate::format::float;
use crate::inference::{fit, log_likelihood, FitConfig, FitResult};
use crate::models::{HazardModel, NaturalParams};
use crate::rng;
use crate::selection::{compare, ModelComparison};

/// Draw `D_z ~ Binomial(N_z, q_z)` age by age, with `N_{z+1} = N_z - D_z`.
pub fn simulate_cohort(
    m: HazardModel,
    theta: &NaturalParams,
    n0: u64,
    ages: RangeInclusive<i64>,
    meta: CohortMeta,
    seed: u64,
) -> Result<CohortDataset> {
    if n0 == 0 {
        return Err(Error::Config("initial cohort size must be positive".into()));
    }
    if ages.is_empty() {
        return Err(Error::Config("age range is empty".into()));
    }
    m.check_domain(theta)?;
    let mut stream = rng::stream(seed, &[rng::label_id("simulate")]);
    let mut survivors = n0;
    let mut rows = Vec::new();
    for age in ages {
        let q = m.death_prob(theta, (age - meta.age_offset) as f64)?;
        let deaths = Binomial::new(survivors, q)
            .map_err(|e| Error::Config(format!("binomial draw at age {age}: {e}")))?
            .sample(&mut stream);
        rows.push(AgeRow { age, survivors, deaths });
        survivors -= deaths;
    }
    Ok(CohortDataset::new(meta, rows)?)
}

/// Seed for fitting `m` to the cohort `cohort_id`, so a cohort's fits do not
/// depend on which other cohorts or models share the run.
pub fn fit_seed(master: u64, cohort_id: &str, m: HazardModel) -> u64 {
    rng::derive(master, &[rng::label_id(cohort_id), rng::label_id(m.token())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub cohort: String,
    pub model: Option<HazardModel>,
    pub message: String,
}

/// One long-format record. `fraction` and `replicate` are set only by
/// downsampling studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub cohort: String,
    pub fraction: Option<f64>,
    pub replicate: Option<usize>,
    pub model: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub records: Vec<StudyRecord>,
}

impl StudyTable {
    pub const HEADER: [&'static str; 6] = ["cohort", "fraction", "replicate", "model", "metric", "value"];

    fn push(&mut self, cohort: &str, model: &str, metric: &str, value: f64) {
        self.records.push(StudyRecord {
            cohort: cohort.into(),
            fraction: None,
            replicate: None,
            model: model.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn values(&self, model: &str, metric: &str) -> impl Iterator<Item = &StudyRecord> {
        let (model, metric) = (model.to_string(), metric.to_string());
        self.records.iter().filter(move |r| r.model == model && r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for r in &self.records {
            w.write_record([
                r.cohort.clone(),
                r.fraction.map(float).unwrap_or_default(),
                r.replicate.map(|v| v.to_string()).unwrap_or_default(),
                r.model.clone(),
                r.metric.clone(),
                float(r.value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(source: R) -> Result<StudyTable> {
        let mut r = csv::Reader::from_reader(source);
        let headers = r.headers()?.clone();
        if headers.iter().ne(Self::HEADER) {
            return Err(Error::Config(format!("study table header must be {}", Self::HEADER.join(","))));
        }
        let mut records = Vec::new();
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let bad = |what: &str| Error::Data(DataError::Malformed { line, msg: format!("bad {what}") });
            let opt_f =
                |s: &str| if s.is_empty() { Ok(None) } else { s.parse().map(Some).map_err(|_| bad("fraction")) };
            records.push(StudyRecord {
                cohort: row[0].to_string(),
                fraction: opt_f(&row[1])?,
                replicate: if row[2].is_empty() { None } else { Some(row[2].parse().map_err(|_| bad("replicate"))?) },
                model: row[3].to_string(),
                metric: row[4].to_string(),
                value: row[5].parse().map_err(|_| bad("value"))?,
            });
        }
        Ok(StudyTable { records })
    }
}

/// Fit every model to one cohort. Each model's fit seed comes from
/// [`fit_seed`]; failures are returned per model.
pub fn fit_models(d: &CohortDataset, models: &[HazardModel], config: &FitConfig) -> Vec<Result<FitResult>> {
    let id = d.meta.id();
    models.par_iter().map(|&m| fit(m, d, &config.with_seed(fit_seed(config.seed, &id, m)))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub meta: CohortMeta,
    pub fits: Vec<FitResult>,
    pub comparison: Option<ModelComparison>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub cohorts: Vec<CohortOutcome>,
    pub failures: Vec<FitFailure>,
    pub table: StudyTable,
}

impl BatchOutcome {
    pub fn comparisons(&self) -> Vec<(CohortMeta, ModelComparison)> {
        self.cohorts.iter().filter_map(|c| c.comparison.clone().map(|cmp| (c.meta.clone(), cmp))).collect()
    }
}

fn record_fit(table: &mut StudyTable, f: &FitResult, comparison: Option<&ModelComparison>) {
    let (cohort, model) = (f.cohort.as_str(), f.model.token());
    table.push(cohort, model, "loglik", f.loglik());
    table.push(cohort, model, "aic", f.aic);
    table.push(cohort, model, "bic", f.bic);
    table.push(cohort, model, "sse", f.sse);
    table.push(cohort, model, "converged", if f.converged() { 1.0 } else { 0.0 });
    if let Some(row) = comparison.and_then(|c| c.row(f.model)) {
        table.push(cohort, model, "delta_aic", row.delta_aic);
        table.push(cohort, model, "delta_bic", row.delta_bic);
        table.push(cohort, model, "aic_rank", row.aic_rank as f64);
    }
    for (name, value) in f.model.param_names().iter().zip(&f.params.0) {
        table.push(cohort, model, &format!("param_{name}"), *value);
    }
}

/// Fit every model to every cohort. Failed fits are recorded and skipped; a
/// cohort is compared when at least two of its fits succeed.
pub fn batch_fit(datasets: &[CohortDataset], models: &[HazardModel], config: &FitConfig) -> Result<BatchOutcome> {
    if datasets.is_empty() || models.is_empty() {
        return Err(Error::Config("batch needs at least one cohort and one model".into()));
    }
    config.validate()?;
    let per_cohort: Vec<Vec<Result<FitResult>>> = datasets.par_iter().map(|d| fit_models(d, models, config)).collect();
    let mut out = BatchOutcome::default();
    for (d, results) in datasets.iter().zip(per_cohort) {
        let id = d.meta.id();
        let mut fits = Vec::new();
        for (m, r) in models.iter().zip(results) {
            match r {
                Ok(f) => fits.push(f),
                Err(e) => out.failures.push(FitFailure { cohort: id.clone(), model: Some(*m), message: e.to_string() }),
            }
        }
        let comparison = if fits.len() >= 2 {
            match compare(&fits) {
                Ok(c) => Some(c),
                Err(e) => {
                    out.failures.push(FitFailure { cohort: id.clone(), model: None, message: e.to_string() });
                    None
                }
            }
        } else {
            None
        };
        for f in &fits {
            record_fit(&mut out.table, f, comparison.as_ref());
        }
        out.cohorts.push(CohortOutcome { meta: d.meta.clone(), fits, comparison });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub model: HazardModel,
    pub k: usize,
    /// Held-out mean negative log-likelihood per individual, by fold.
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
    /// Rank among the models cross-validated together (1 = lowest error).
    pub rank: Option<usize>,
}

fn add_rows(total: &mut [AgeRow], fold: &CohortDataset) {
    for (t, r) in total.iter_mut().zip(fold.rows()) {
        t.survivors += r.survivors;
        t.deaths += r.deaths;
    }
}

struct Folds {
    held_out: Vec<CohortDataset>,
    training: Vec<CohortDataset>,
}

fn make_folds(d: &CohortDataset, k: usize, seed: u64) -> Result<Folds> {
    let lifelines = reconstruct_lifelines(d)?;
    let held_out = split_folds(&lifelines, k, seed)?;
    let training = (0..k)
        .map(|f| {
            let mut rows: Vec<AgeRow> = d.rows().iter().map(|r| AgeRow { survivors: 0, deaths: 0, ..*r }).collect();
            for (g, fold) in held_out.iter().enumerate() {
                if g != f {
                    add_rows(&mut rows, fold);
                }
            }
            Ok(CohortDataset::new(d.meta.clone(), rows)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Folds { held_out, training })
}

fn fold_error(m: HazardModel, f: usize, folds: &Folds, config: &FitConfig) -> Result<f64> {
    let wrap = |e: Error| Error::Fold { fold: f, source: Box::new(e) };
    let train = &folds.training[f];
    let seed = rng::derive(config.seed, &[rng::label_id("cv"), f as u64, rng::label_id(m.token())]);
    let fitted = fit(m, train, &config.with_seed(seed)).map_err(wrap)?;
    let test = &folds.held_out[f];
    let ll = log_likelihood(m, &fitted.params, test, true).map_err(|e| wrap(e.into()))?;
    Ok(-ll.total / test.initial_size() as f64)
}

fn cv_one(m: HazardModel, k: usize, folds: &Folds, config: &FitConfig) -> Result<CvResult> {
    let fold_errors = (0..k).into_par_iter().map(|f| fold_error(m, f, folds, config)).collect::<Result<Vec<_>>>()?;
    let mean_error = fold_errors.iter().sum::<f64>() / k as f64;
    Ok(CvResult { model: m, k, fold_errors, mean_error, rank: None })
}

/// K-fold cross-validation of one model. Folds are drawn from `seed`; each
/// fold's fit seed is derived from `config.seed`, the fold, and the model.
pub fn cross_validate(m: HazardModel, d: &CohortDataset, k: usize, seed: u64, config: &FitConfig) -> Result<CvResult> {
    let folds = make_folds(d, k, seed)?;
    cv_one(m, k, &folds, config)
}

/// Cross-validate several models on shared folds and rank them by mean error
/// (ties by model order).
pub fn cross_validate_models(
    models: &[HazardModel],
    d: &CohortDataset,
    k: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<Vec<CvResult>> {
    if models.is_empty() {
        return Err(Error::Config("no models to cross-validate".into()));
    }
    let folds = make_folds(d, k, seed)?;
    let mut results = models.par_iter().map(|&m| cv_one(m, k, &folds, config)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&i, &j| {
        results[i].mean_error.total_cmp(&results[j].mean_error).then(results[i].model.cmp(&results[j].model))
    });
    for (rank, i) in order.into_iter().enumerate() {
        results[i].rank = Some(rank + 1);
    }
    Ok(results)
}

/// Per model and group, the fraction of cohorts with ΔAIC ≤ 2 (`good`) and
/// with ΔAIC > 10 (`bad`). Groups are `all`, `sex=<sex>`, and
/// `country=<country>`; the record's `cohort` column holds the group.
pub fn good_bad_summary(comparisons: &[(CohortMeta, ModelComparison)]) -> Result<StudyTable> {
    let cells = comparisons
        .iter()
        .flat_map(|(meta, cmp)| cmp.rows.iter().map(move |r| (Some(meta), r.model.token(), r.delta_aic)));
    summarize(cells)
}

/// [`good_bad_summary`] from a batch table's `delta_aic` records. Sex and
/// country groups are formed only for cohort ids that follow the
/// `{country}_{sex}_{cohort}` convention.
pub fn good_bad_from_table(table: &StudyTable) -> Result<StudyTable> {
    let metas: BTreeMap<&str, Option<CohortMeta>> = table
        .records
        .iter()
        .map(|r| (r.cohort.as_str(), CohortMeta::from_file_name(std::path::Path::new(&r.cohort)).ok()))
        .collect();
    let cells = table
        .records
        .iter()
        .filter(|r| r.metric == "delta_aic" && r.fraction.is_none())
        .map(|r| (metas[r.cohort.as_str()].as_ref(), r.model.as_str(), r.value));
    summarize(cells)
}

fn summarize<'a>(cells: impl Iterator<Item = (Option<&'a CohortMeta>, &'a str, f64)>) -> Result<StudyTable> {
    // group -> model -> (cohorts, good, bad)
    let mut tally: BTreeMap<String, BTreeMap<String, (usize, usize, usize)>> = BTreeMap::new();
    for (meta, model, delta) in cells {
        let mut groups = vec!["all".to_string()];
        if let Some(meta) = meta {
            groups.push(format!("sex={}", meta.sex.as_str()));
            groups.push(format!("country={}", meta.country));
        }
        for g in groups {
            let t = tally.entry(g).or_default().entry(model.to_string()).or_default();
            t.0 += 1;
            t.1 += usize::from(delta <= 2.0);
            t.2 += usize::from(delta > 10.0);
        }
    }
    if tally.is_empty() {
        return Err(Error::Config("no comparisons to summarize".into()));
    }
    let mut table = StudyTable::default();
    for (group, by_model) in &tally {
        for (m, &(n, good, bad)) in by_model {
            table.push(group, m, "cohorts", n as f64);
            table.push(group, m, "good_fraction", good as f64 / n as f64);
            table.push(group, m, "bad_fraction", bad as f64 / n as f64);
        }
    }
    Ok(table)
}

/// ΔAIC per model (rows) and cohort (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    pub models: Vec<String>,
    pub cohorts: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DeltaMatrix {
    /// Build from comparisons. Every comparison must cover the same models.
    pub fn from_comparisons(comparisons: &[ModelComparison]) -> Result<DeltaMatrix> {
        let first = comparisons.first().ok_or_else(|| Error::Config("no comparisons to cluster".into()))?;
        let models: Vec<HazardModel> = first.rows.iter().map(|r| r.model).collect();
        let mut values = vec![Vec::with_capacity(comparisons.len()); models.len()];
        for c in comparisons {
            if c.rows.len() != models.len() {
                return Err(Error::Config(format!("{}: ΔAIC matrix has missing entries", c.cohort)));
            }
            for (i, &m) in models.iter().enumerate() {
                let row = c.row(m).ok_or_else(|| Error::Config(format!("{}: no ΔAIC for {m}", c.cohort)))?;
                values[i].push(row.delta_aic);
            }
        }
        Ok(DeltaMatrix {
            models: models.iter().map(|m| m.token().to_string()).collect(),
            cohorts: comparisons.iter().map(|c| c.cohort.clone()).collect(),
            values,
        })
    }

    /// Build from a batch study table's `delta_aic` records.
    pub fn from_table(table: &StudyTable) -> Result<DeltaMatrix> {
        let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
        for r in table.records.iter().filter(|r| r.metric == "delta_aic" && r.fraction.is_none()) {
            if cells.insert((r.model.clone(), r.cohort.clone()), r.value).is_some() {
                return Err(Error::Config(format!("duplicate ΔAIC for {} in {}", r.model, r.cohort)));
            }
        }
        let mut models: Vec<String> = cells.keys().map(|k| k.0.clone()).collect();
        models.dedup();
        let mut cohorts: Vec<String> = cells.keys().map(|k| k.1.clone()).collect();
        cohorts.sort();
        cohorts.dedup();
        let values = models
            .iter()
            .map(|m| {
                cohorts
                    .iter()
                    .map(|c| {
                        cells
                            .get(&(m.clone(), c.clone()))
                            .copied()
                            .ok_or_else(|| Error::Config(format!("ΔAIC matrix is missing {m} in {c}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DeltaMatrix { models, cohorts, values })
    }
}

/// One agglomeration step. Ids below the leaf count are leaves; merge `i`
/// creates node `leaves + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

fn centroid(rows: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; rows[0].len()];
    for &m in members {
        for (ci, v) in c.iter_mut().zip(&rows[m]) {
            *ci += v;
        }
    }
    let n = members.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Agglomerative clustering of the rows of `values`, merging at each step the
/// pair of clusters whose mean vectors are closest in Euclidean distance.
/// Equal distances go to the pair with the smallest ids. This linkage can
/// produce a merge lower than an earlier one; heights are reported as
/// computed.
pub fn cluster_models(labels: &[String], values: &[Vec<f64>]) -> Result<Dendrogram> {
    if labels.len() < 2 || labels.len() != values.len() {
        return Err(Error::Config("clustering needs at least two labelled rows".into()));
    }
    let width = values[0].len();
    if width == 0 || values.iter().any(|r| r.len() != width || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Config("ΔAIC matrix has missing or non-finite entries".into()));
    }
    let n = labels.len();
    // (node id, members, centroid)
    let mut active: Vec<(usize, Vec<usize>, Vec<f64>)> = (0..n).map(|i| (i, vec![i], values[i].clone())).collect();
    let mut merges = Vec::with_capacity(n - 1);
    while active.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let d = euclidean(&active[i].2, &active[j].2);
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        let (i, j, height) = best;
        let right = active.remove(j);
        let left = active.remove(i);
        let mut members = left.1;
        members.extend(right.1);
        members.sort_unstable();
        let node = n + merges.len();
        merges.push(Merge { left: left.0, right: right.0, height, size: members.len() });
        let c = centroid(values, &members);
        active.push((node, members, c));
        active.sort_by_key(|a| a.0);
    }
    Ok(Dendrogram { leaves: labels.to_vec(), merges })
}

fn newick_label(s: &str) -> String {
    if s.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

impl Dendrogram {
    /// Heights made monotone by taking, at each node, the maximum over its
    /// subtree, so every branch length is non-negative.
    pub fn monotone_heights(&self) -> Vec<f64> {
        let n = self.leaves.len();
        let mut h = vec![0.0; n + self.merges.len()];
        for (i, m) in self.merges.iter().enumerate() {
            h[n + i] = m.height.max(h[m.left]).max(h[m.right]);
        }
        h
    }

    pub fn has_inversions(&self) -> bool {
        let h = self.monotone_heights();
        let n = self.leaves.len();
        self.merges.iter().enumerate().any(|(i, m)| h[n + i] != m.height)
    }

    /// Newick text with branch lengths from [`Dendrogram::monotone_heights`].
    pub fn to_newick(&self) -> String {
        let n = self.leaves.len();
        let h = self.monotone_heights();
        fn node(d: &Dendrogram, h: &[f64], id: usize, parent: f64, out: &mut String) {
            let n = d.leaves.len();
            if id < n {
                out.push_str(&newick_label(&d.leaves[id]));
            } else {
                let m = &d.merges[id - n];
                out.push('(');
                node(d, h, m.left, h[id], out);
                out.push(',');
                node(d, h, m.right, h[id], out);
                out.push(')');
            }
            out.push(':');
            out.push_str(&float(parent - h[id]));
        }
        let root = n + self.merges.len() - 1;
        let m = &self.merges[root - n];
        let mut out = String::from("(");
        node(self, &h, m.left, h[root], &mut out);
        out.push(',');
        node(self, &h, m.right, h[root], &mut out);
        out.push_str(");");
        out
    }

    /// Leaf labels under node `id`.
    pub fn members(&self, id: usize) -> Vec<&str> {
        let n = self.leaves.len();
        if id < n {
            return vec![&self.leaves[id]];
        }
        let m = &self.merges[id - n];
        let mut out = self.members(m.left);
        out.extend(self.members(m.right));
        out
    }
}

/// Thin the cohort to each fraction `replicates` times and re-fit. Records
/// ΔAIC per model (NaN where the fit or comparison failed) plus the retained
/// cohort size under the pseudo-model `cohort`. Thinning draws depend on
/// `seed`, fraction, and replicate; fits use `config.seed` as in
/// [`batch_fit`], so fraction 1 reproduces the un-thinned comparison.
pub fn downsample_study(
    d: &CohortDataset,
    fractions: &[f64],
    models: &[HazardModel],
    seed: u64,
    replicates: usize,
    config: &FitConfig,
) -> Result<StudyTable> {
    if replicates == 0 || fractions.is_empty() || models.is_empty() {
        return Err(Error::Config("downsampling needs fractions, models, and at least one replicate".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("fraction {f} is outside (0, 1]")));
    }
    config.validate()?;
    let lifelines = reconstruct_lifelines(d)?;
    let id = d.meta.id();
    let tasks: Vec<(f64, usize)> = fractions.iter().flat_map(|&f| (0..replicates).map(move |r| (f, r))).collect();
    let results = tasks
        .par_iter()
        .map(|&(f, r)| {
            let s = rng::derive(seed, &[rng::label_id("downsample"), f.to_bits(), r as u64]);
            let thinned = thin(&lifelines, f, s)?;
            let fits: Vec<FitResult> =
                fit_models(&thinned, models, config).into_iter().filter_map(|r| r.ok()).collect();
            let cmp = if fits.len() >= 2 { compare(&fits).ok() } else { None };
            Ok((thinned.initial_size(), cmp))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = StudyTable::default();
    for (&(f, r), (size, cmp)) in tasks.iter().zip(results) {
        let mut push = |model: &str, metric: &str, value: f64| {
            table.records.push(StudyRecord {
                cohort: id.clone(),
                fraction: Some(f),
                replicate: Some(r),
                model: model.into(),
                metric: metric.into(),
                value,
            })
        };
        push("cohort", "initial_size", size as f64);
        for m in models {
            let delta = cmp.as_ref().and_then(|c| c.row(*m)).map_or(f64::NAN, |row| row.delta_aic);
            push(m.token(), "delta_aic", delta);
        }
    }
    Ok(table)
}

/// Mean ΔAIC per fraction and model over replicates, ignoring failed
/// replicates (`mean_delta_aic`, plus `replicates_ok`).
pub fn downsample_means(table: &StudyTable) -> StudyTable {
    let mut acc: BTreeMap<(String, u64, String), (f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in table.records.iter().filter(|r| r.metric == "delta_aic") {
        let Some(f) = r.fraction else { continue };
        let key = (r.cohort.clone(), f.to_bits(), r.model.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0)
        });
        if r.value.is_finite() {
            e.0 += r.value;
            e.1 += 1;
        }
    }
    let mut out = StudyTable::default();
    for key in order {
        let (sum, ok) = acc[&key];
        for (metric, value) in
            [("mean_delta_aic", if ok > 0 { sum / ok as f64 } else { f64::NAN }), ("replicates_ok", ok as f64)]
        {
            out.records.push(StudyRecord {
                cohort: key.0.clone(),
                fraction: Some(f64::from_bits(key.1)),
                replicate: None,
                model: key.2.clone(),
                metric: metric.into(),
                value,
            });
        }
    }
    out
}
