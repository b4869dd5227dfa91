use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use hazardfit::cohort::{central_death_rates, read_cohort_dir, read_cohort_file};
use hazardfit::experiments::{
    batch_fit, cluster_models, cross_validate_models, downsample_means, downsample_study, fit_models,
    good_bad_from_table, good_bad_summary, simulate_cohort, BatchOutcome, CvResult, DeltaMatrix, FitFailure,
    StudyTable,
};
use hazardfit::format::float;
use hazardfit::selection::COMPARISON_HEADER;
use hazardfit::{compare, CohortDataset, CohortMeta, Error, FitConfig, FitReport, FitResult, HazardModel};
use serde::Serialize;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{
    BatchArgs, Cli, ClusterArgs, CohortArgs, Command, CvArgs, DownsampleArgs, FitArgs, FitOpts, ModelArgs, ReplayArgs,
    SimulateArgs, StudyCommand, SummaryArgs,
};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn is_numerical(e: &Error) -> bool {
    match e {
        Error::FitFailed { .. } | Error::Eval(_) => true,
        Error::Fold { source, .. } => is_numerical(source),
        _ => false,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if is_numerical(&e) { 3 } else { 2 }, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        usage(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        usage(e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

pub fn run(cli: Cli, args: &[String]) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(e.to_string()))?;
    }
    dispatch(cli.command, args)
}

fn dispatch(command: Command, args: &[String]) -> CmdResult {
    match command {
        Command::Fit(a) => cmd_fit(a, args),
        Command::Cv(a) => cmd_cv(a, args),
        Command::Study(StudyCommand::Batch(a)) => cmd_batch(a, args),
        Command::Study(StudyCommand::Downsample(a)) => cmd_downsample(a, args),
        Command::Study(StudyCommand::Cluster(a)) => cmd_cluster(a, args),
        Command::Study(StudyCommand::Summary(a)) => cmd_summary(a, args),
        Command::Simulate(a) => cmd_simulate(a, args),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn parse_models(a: &ModelArgs) -> Result<Vec<HazardModel>, Failure> {
    let mut names: Vec<String> = a.model.clone();
    let mut all = a.all_models;
    if let Some(list) = &a.models {
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if name.eq_ignore_ascii_case("all") {
                all = true;
            } else {
                names.push(name.to_string());
            }
        }
    }
    let mut models: Vec<HazardModel> = if all || names.is_empty() {
        HazardModel::ALL.to_vec()
    } else {
        names.iter().map(|n| n.parse()).collect::<Result<_, Error>>()?
    };
    let excluded: Vec<HazardModel> = a.exclude.iter().map(|n| n.parse()).collect::<Result<_, Error>>()?;
    models.retain(|m| !excluded.contains(m));
    models.sort();
    models.dedup();
    if models.is_empty() {
        return Err(usage("no models left to fit"));
    }
    Ok(models)
}

fn tokens(models: &[HazardModel]) -> Vec<String> {
    models.iter().map(|m| m.token().to_string()).collect()
}

fn fit_config(o: &FitOpts) -> Result<FitConfig, Failure> {
    let config = FitConfig {
        n_random_starts: o.starts,
        max_iterations: o.max_iterations,
        seed: o.seed,
        include_binomial_constant: !o.no_binomial_constant,
        ..FitConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn load_cohort(a: &CohortArgs) -> Result<CohortDataset, Failure> {
    let mut meta = CohortMeta::from_file_name(&a.data).unwrap_or_else(|_| {
        let stem = a.data.file_stem().and_then(|s| s.to_str()).unwrap_or("unknown");
        CohortMeta { country: stem.to_string(), ..CohortMeta::default() }
    });
    if let Some(c) = &a.country {
        meta.country = c.clone();
    }
    if let Some(s) = &a.sex {
        meta.sex = s.parse().map_err(Error::from)?;
    }
    if let Some(y) = a.cohort {
        meta.cohort_year = y;
    }
    read_cohort_file(&a.data, meta).map_err(|e| usage(format!("{}: {e}", a.data.display())))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| usage(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_table(path: &Path, table: &StudyTable) -> Result<(), Failure> {
    table.write_csv(create(path)?)?;
    Ok(())
}

fn config_json(config: &FitConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// Observed rates next to fitted hazards and predictions, one row per age.
fn write_curves(path: &Path, d: &CohortDataset, fits: &[FitResult]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "cohort",
        "model",
        "age",
        "z",
        "survivors",
        "deaths",
        "central_rate",
        "hazard_mid",
        "death_prob",
        "predicted_deaths",
    ])?;
    let rates = central_death_rates(d);
    for f in fits {
        for ((row, rate), predicted) in d.rows().iter().zip(&rates).zip(&f.predicted_deaths) {
            let z = d.z(row.age);
            let hazard = f.model.hazard(&f.params, z + 0.5).map_err(Error::from)?;
            let q = f.model.death_prob(&f.params, z).map_err(Error::from)?;
            w.write_record([
                f.cohort.clone(),
                f.model.token().to_string(),
                row.age.to_string(),
                float(z),
                row.survivors.to_string(),
                row.deaths.to_string(),
                rate.rate.map(float).unwrap_or_default(),
                float(hazard),
                float(q),
                float(*predicted),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_failures(path: &Path, failures: &[FitFailure]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["cohort", "model", "message"])?;
    for f in failures {
        w.write_record([f.cohort.as_str(), f.model.map(|m| m.token()).unwrap_or(""), f.message.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(a: FitArgs, args: &[String]) -> CmdResult {
    let models = parse_models(&a.models)?;
    let config = fit_config(&a.fit)?;
    let d = load_cohort(&a.cohort)?;
    prepare_out(&a.out)?;

    let mut fits = Vec::new();
    let mut failed = Vec::new();
    for (m, r) in models.iter().zip(fit_models(&d, &models, &config)) {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => failed.push((*m, e)),
        }
    }
    for f in &fits {
        write_json(&a.out.join(format!("fit_{}.json", f.model.token())), &FitReport::from(f))?;
    }
    write_curves(&a.out.join("curves.csv"), &d, &fits)?;
    let comparison = if fits.len() >= 2 { Some(compare(&fits)?) } else { None };
    if let Some(c) = &comparison {
        c.write_csv(create(&a.out.join("comparison.csv"))?)?;
        write_json(&a.out.join("comparison.json"), c)?;
    }
    RunManifest::new("fit", args, vec![path_string(&a.cohort.data)], tokens(&models), config_json(&config))
        .write(&a.out.join("manifest.json"))?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "{}: {} ages, N = {}", d.meta.id(), d.len(), d.initial_size())?;
    for f in &fits {
        let delta = comparison.as_ref().and_then(|c| c.row(f.model)).map(|r| r.delta_aic);
        let delta = delta.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        writeln!(out, "  {:<11} loglik {:>16.4}  aic {:>14.4}  daic {:>9}", f.model.token(), f.loglik(), f.aic, delta)?;
    }
    drop(out);
    for (m, e) in &failed {
        eprintln!("error: {m}: {e}");
    }
    Ok(match failed.iter().find(|(_, e)| !is_numerical(e)) {
        Some(_) => 2,
        None if failed.is_empty() => 0,
        None => 3,
    })
}

fn write_cv(path: &Path, results: &[CvResult]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["model", "fold", "error", "rank"])?;
    for r in results {
        for (i, e) in r.fold_errors.iter().enumerate() {
            w.write_record([r.model.token().to_string(), (i + 1).to_string(), float(*e), String::new()])?;
        }
        let rank = r.rank.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.model.token().to_string(), "mean".into(), float(r.mean_error), rank])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_cv(a: CvArgs, args: &[String]) -> CmdResult {
    if a.folds < 2 {
        return Err(usage("K must be ≥ 2"));
    }
    let models = parse_models(&a.models)?;
    let config = fit_config(&a.fit)?;
    let d = load_cohort(&a.cohort)?;
    prepare_out(&a.out)?;
    let results = cross_validate_models(&models, &d, a.folds, a.fit.seed, &config)?;
    write_cv(&a.out.join("cv.csv"), &results)?;
    write_json(&a.out.join("cv.json"), &results)?;
    let mut cfg = config_json(&config);
    cfg["folds"] = json!(a.folds);
    RunManifest::new("cv", args, vec![path_string(&a.cohort.data)], tokens(&models), cfg)
        .write(&a.out.join("manifest.json"))?;

    let mut ranked: Vec<&CvResult> = results.iter().collect();
    ranked.sort_by_key(|r| r.rank);
    let mut out = std::io::stdout().lock();
    for r in ranked {
        writeln!(out, "{:>2}  {:<11} {:.8}", r.rank.unwrap_or(0), r.model.token(), r.mean_error)?;
    }
    Ok(0)
}

/// Load every cohort in `dir`. Unreadable files become failures.
fn load_dir(dir: &Path) -> Result<(Vec<CohortDataset>, Vec<FitFailure>), Failure> {
    let loaded = read_cohort_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut datasets = Vec::new();
    let mut failures = Vec::new();
    for (path, r) in loaded {
        match r {
            Ok(d) => datasets.push(d),
            Err(e) => failures.push(FitFailure { cohort: path_string(&path), model: None, message: e.to_string() }),
        }
    }
    if datasets.is_empty() {
        return Err(usage(format!("{}: no readable cohort files", dir.display())));
    }
    Ok((datasets, failures))
}

fn run_batch(dir: &Path, models: &[HazardModel], config: &FitConfig) -> Result<BatchOutcome, Failure> {
    let (datasets, load_failures) = load_dir(dir)?;
    let mut outcome = batch_fit(&datasets, models, config)?;
    let fit_failures = std::mem::take(&mut outcome.failures);
    outcome.failures = load_failures.into_iter().chain(fit_failures).collect();
    Ok(outcome)
}

fn report_failures(failures: &[FitFailure]) {
    for f in failures {
        match f.model {
            Some(m) => eprintln!("warning: {} {m}: {}", f.cohort, f.message),
            None => eprintln!("warning: {}: {}", f.cohort, f.message),
        }
    }
}

fn cmd_batch(a: BatchArgs, args: &[String]) -> CmdResult {
    let models = parse_models(&a.models)?;
    let config = fit_config(&a.fit)?;
    let outcome = run_batch(&a.dir, &models, &config)?;
    prepare_out(&a.out)?;
    write_table(&a.out.join("batch.csv"), &outcome.table)?;

    let comparisons = outcome.comparisons();
    let mut w = csv::Writer::from_writer(create(&a.out.join("comparisons.csv"))?);
    w.write_record(COMPARISON_HEADER)?;
    for (_, c) in &comparisons {
        c.write_records(&mut w)?;
    }
    w.flush()?;
    if !comparisons.is_empty() {
        write_table(&a.out.join("summary.csv"), &good_bad_summary(&comparisons)?)?;
    }
    write_failures(&a.out.join("failures.csv"), &outcome.failures)?;
    RunManifest::new("study batch", args, vec![path_string(&a.dir)], tokens(&models), config_json(&config))
        .write(&a.out.join("manifest.json"))?;

    report_failures(&outcome.failures);
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{} cohorts, {} compared, {} failures",
        outcome.cohorts.len(),
        comparisons.len(),
        outcome.failures.len()
    )?;
    for (meta, c) in &comparisons {
        writeln!(out, "  {:<24} best {}", meta.id(), c.best().model.token())?;
    }
    Ok(0)
}

fn cmd_downsample(a: DownsampleArgs, args: &[String]) -> CmdResult {
    let models = parse_models(&a.models)?;
    let config = fit_config(&a.fit)?;
    let d = load_cohort(&a.cohort)?;
    prepare_out(&a.out)?;
    let table = downsample_study(&d, &a.fractions, &models, a.fit.seed, a.replicates, &config)?;
    let means = downsample_means(&table);
    write_table(&a.out.join("downsample.csv"), &table)?;
    write_table(&a.out.join("downsample_means.csv"), &means)?;
    let mut cfg = config_json(&config);
    cfg["fractions"] = json!(a.fractions);
    cfg["replicates"] = json!(a.replicates);
    RunManifest::new("study downsample", args, vec![path_string(&a.cohort.data)], tokens(&models), cfg)
        .write(&a.out.join("manifest.json"))?;

    let failed = table.records.iter().filter(|r| r.metric == "delta_aic" && r.value.is_nan()).count();
    if failed > 0 {
        eprintln!("warning: {failed} thinned fits failed; recorded as NaN");
    }
    let mut out = std::io::stdout().lock();
    for r in means.records.iter().filter(|r| r.metric == "mean_delta_aic") {
        writeln!(out, "  f = {:<6} {:<11} mean daic {:.3}", r.fraction.unwrap_or(f64::NAN), r.model, r.value)?;
    }
    Ok(0)
}

fn cmd_cluster(a: ClusterArgs, args: &[String]) -> CmdResult {
    let (matrix, inputs, models, cfg) = match (&a.source.table, &a.source.dir) {
        (Some(table), _) => {
            let t = StudyTable::read_csv(File::open(table).map_err(|e| usage(format!("{}: {e}", table.display())))?)?;
            let m = DeltaMatrix::from_table(&t)?;
            let models = m.models.clone();
            (m, vec![path_string(table)], models, json!({}))
        }
        (None, Some(dir)) => {
            let models = parse_models(&a.models)?;
            let config = fit_config(&a.fit)?;
            let outcome = run_batch(dir, &models, &config)?;
            report_failures(&outcome.failures);
            let comparisons: Vec<_> = outcome.comparisons().into_iter().map(|(_, c)| c).collect();
            (
                DeltaMatrix::from_comparisons(&comparisons)?,
                vec![path_string(dir)],
                tokens(&models),
                config_json(&config),
            )
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let tree = cluster_models(&matrix.models, &matrix.values)?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("dendrogram.json"), &json!({ "matrix": matrix, "dendrogram": tree }))?;
    fs::write(a.out.join("dendrogram.nwk"), format!("{}\n", tree.to_newick()))?;
    RunManifest::new("study cluster", args, inputs, models, cfg).write(&a.out.join("manifest.json"))?;
    if tree.has_inversions() {
        eprintln!("warning: centroid linkage produced inversions; Newick heights are made monotone");
    }
    writeln!(std::io::stdout().lock(), "{}", tree.to_newick())?;
    Ok(0)
}

fn cmd_summary(a: SummaryArgs, args: &[String]) -> CmdResult {
    let t = StudyTable::read_csv(File::open(&a.table).map_err(|e| usage(format!("{}: {e}", a.table.display())))?)?;
    let summary = good_bad_from_table(&t)?;
    prepare_out(&a.out)?;
    write_table(&a.out.join("summary.csv"), &summary)?;
    RunManifest::new("study summary", args, vec![path_string(&a.table)], Vec::new(), json!({}))
        .write(&a.out.join("manifest.json"))?;
    let mut out = std::io::stdout().lock();
    for r in summary.records.iter().filter(|r| r.cohort == "all" && r.metric == "good_fraction") {
        writeln!(out, "  {:<11} good {:.3}", r.model, r.value)?;
    }
    Ok(0)
}

fn cmd_simulate(a: SimulateArgs, args: &[String]) -> CmdResult {
    if a.n0 == 0 {
        return Err(usage("--n0 must be positive"));
    }
    if a.first_age > a.last_age {
        return Err(usage("--first-age must not exceed --last-age"));
    }
    let model: HazardModel = a.model.parse()?;
    let theta = model.params_from_json(&a.params).map_err(|e| usage(e.to_string()))?;
    let sex = a.sex.parse().map_err(Error::from)?;
    let meta = CohortMeta::new(a.country.clone(), sex, a.cohort);
    let d = simulate_cohort(model, &theta, a.n0, a.first_age..=a.last_age, meta, a.seed)?;
    match &a.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                prepare_out(parent)?;
            }
            d.write_csv(create(path)?)?;
            let cfg = json!({ "seed": a.seed, "n0": a.n0, "first_age": a.first_age, "last_age": a.last_age,
                "params": model.params_to_map(&theta) });
            RunManifest::new("simulate", args, Vec::new(), vec![model.token().to_string()], cfg)
                .write(&manifest_beside(path))?;
        }
        None => d.write_csv(std::io::stdout().lock())?,
    }
    Ok(0)
}

fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn cmd_replay(a: ReplayArgs) -> CmdResult {
    let m = RunManifest::read(&a.manifest).map_err(usage)?;
    let argv = std::iter::once("hazardfit".to_string()).chain(m.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| usage(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(usage("a manifest cannot replay another replay"));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by version {}, running {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    dispatch(cli.command, &m.args)
}
