//! Cohort death-count datasets: ingestion, validation, central death rates,
//! and the individual-level view (lifelines) used for fold splitting and
//! thinning.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::rng;

/// Model age index `z = age - DEFAULT_AGE_OFFSET`, so age 80 is `z = 1`.
pub const DEFAULT_AGE_OFFSET: i64 = 79;
pub const DEFAULT_FIRST_AGE: i64 = 80;
pub const DEFAULT_LAST_AGE: i64 = 104;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Total,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Total => "total",
        }
    }

    /// Single-letter token used in batch file names.
    pub fn code(self) -> &'static str {
        match self {
            Sex::Female => "f",
            Sex::Male => "m",
            Sex::Total => "t",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" | "females" => Ok(Sex::Female),
            "m" | "male" | "males" => Ok(Sex::Male),
            "t" | "total" | "both" | "b" => Ok(Sex::Total),
            other => Err(DataError::Invalid(format!("unknown sex `{other}`"))),
        }
    }
}

/// Labels that identify a cohort; carried alongside the counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CohortMeta {
    pub country: String,
    pub sex: Sex,
    pub cohort_year: i32,
    #[serde(default = "default_offset")]
    pub age_offset: i64,
}

fn default_offset() -> i64 {
    DEFAULT_AGE_OFFSET
}

impl CohortMeta {
    pub fn new(country: impl Into<String>, sex: Sex, cohort_year: i32) -> Self {
        CohortMeta { country: country.into(), sex, cohort_year, age_offset: DEFAULT_AGE_OFFSET }
    }

    /// `{country}_{sex}_{cohort}`, the batch file-name stem.
    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.country, self.sex.code(), self.cohort_year)
    }

    /// Parse a batch file name of the form `{country}_{sex}_{cohort}.csv`.
    /// The country may itself contain underscores.
    pub fn from_file_name(path: &Path) -> Result<Self, DataError> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| DataError::Invalid(format!("bad file name {}", path.display())))?;
        let mut parts = stem.rsplitn(3, '_');
        let (cohort, sex, country) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(s), Some(k)) if !k.is_empty() => (c, s, k),
            _ => {
                return Err(DataError::Invalid(format!(
                    "file name `{stem}` does not follow {{country}}_{{sex}}_{{cohort}}"
                )))
            }
        };
        let cohort_year = cohort
            .parse()
            .map_err(|_| DataError::Invalid(format!("file name `{stem}`: cohort `{cohort}` is not a year")))?;
        Ok(CohortMeta::new(country, sex.parse()?, cohort_year))
    }
}

impl Default for CohortMeta {
    fn default() -> Self {
        CohortMeta::new("unknown", Sex::Total, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeRow {
    pub age: i64,
    pub survivors: u64,
    pub deaths: u64,
}

/// Survivors to exact age and deaths before the next birthday, by single
/// year of age, for one country/sex/birth cohort.
///
/// Construction validates that ages are consecutive and that no age has more
/// deaths than survivors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    pub meta: CohortMeta,
    rows: Vec<AgeRow>,
}

impl CohortDataset {
    pub fn new(meta: CohortMeta, mut rows: Vec<AgeRow>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        rows.sort_by_key(|r| r.age);
        for (i, r) in rows.iter().enumerate() {
            if r.deaths > r.survivors {
                return Err(DataError::DeathsExceedSurvivors { line: i + 1, age: r.age });
            }
        }
        for w in rows.windows(2) {
            if w[1].age == w[0].age {
                return Err(DataError::DuplicateAge { line: 0, age: w[0].age });
            }
            if w[1].age != w[0].age + 1 {
                return Err(DataError::AgeGap { from: w[0].age, to: w[1].age });
            }
        }
        Ok(CohortDataset { meta, rows })
    }

    pub fn rows(&self) -> &[AgeRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first_age(&self) -> i64 {
        self.rows[0].age
    }

    pub fn last_age(&self) -> i64 {
        self.rows[self.rows.len() - 1].age
    }

    /// Model age index for `age`.
    pub fn z(&self, age: i64) -> f64 {
        (age - self.meta.age_offset) as f64
    }

    /// Model age index of each row.
    pub fn zs(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| self.z(r.age))
    }

    /// Survivors at the first age: the cohort size used as `n` for BIC and
    /// for per-individual normalization.
    pub fn initial_size(&self) -> u64 {
        self.rows[0].survivors
    }

    pub fn total_deaths(&self) -> u64 {
        self.rows.iter().map(|r| r.deaths).sum()
    }

    /// Write the ingestion schema (`age,survivors,deaths`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["age", "survivors", "deaths"])?;
        for r in &self.rows {
            w.write_record([r.age.to_string(), r.survivors.to_string(), r.deaths.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Parse `age,survivors,deaths` CSV. Line numbers in errors count the header
/// as line 1.
pub fn parse_cohort_csv<R: Read>(source: R, meta: CohortMeta) -> Result<CohortDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(source);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(DataError::Empty),
        Some(rec) => rec.map_err(|e| DataError::Malformed { line: 1, msg: e.to_string() })?,
    };
    let names: Vec<String> = header.iter().map(|s| s.trim_start_matches('\u{feff}').to_ascii_lowercase()).collect();
    if names != ["age", "survivors", "deaths"] {
        return Err(DataError::Malformed {
            line: 1,
            msg: format!("expected header `age,survivors,deaths`, found `{}`", names.join(",")),
        });
    }

    let mut rows: Vec<(usize, AgeRow)> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 3 {
            return Err(DataError::Malformed { line, msg: format!("expected 3 fields, found {}", rec.len()) });
        }
        let field = |i: usize, what: &str| -> Result<i64, DataError> {
            rec[i]
                .parse::<i64>()
                .map_err(|_| DataError::Malformed { line, msg: format!("{what} `{}` is not an integer", &rec[i]) })
        };
        let age = field(0, "age")?;
        let survivors = field(1, "survivors")?;
        let deaths = field(2, "deaths")?;
        if survivors < 0 || deaths < 0 {
            return Err(DataError::NegativeCount { line });
        }
        let row = AgeRow { age, survivors: survivors as u64, deaths: deaths as u64 };
        if row.deaths > row.survivors {
            return Err(DataError::DeathsExceedSurvivors { line, age });
        }
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    rows.sort_by_key(|(_, r)| r.age);
    for w in rows.windows(2) {
        let ((_, a), (line, b)) = (&w[0], &w[1]);
        if a.age == b.age {
            return Err(DataError::DuplicateAge { line: *line, age: b.age });
        }
        if b.age != a.age + 1 {
            return Err(DataError::AgeGap { from: a.age, to: b.age });
        }
    }
    CohortDataset::new(meta, rows.into_iter().map(|(_, r)| r).collect())
}

pub fn read_cohort_file(path: &Path, meta: CohortMeta) -> Result<CohortDataset> {
    let file = std::fs::File::open(path)?;
    parse_cohort_csv(std::io::BufReader::new(file), meta).map_err(Error::from)
}

/// Load every `{country}_{sex}_{cohort}.csv` in `dir`, ordered by file name.
pub fn read_cohort_dir(dir: &Path) -> Result<Vec<(std::path::PathBuf, Result<CohortDataset>)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let loaded = CohortMeta::from_file_name(&p).map_err(Error::from).and_then(|m| read_cohort_file(&p, m));
            (p, loaded)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CentralRate {
    pub age: i64,
    pub z: f64,
    /// `D / (N - D/2)`; `None` when the denominator is not positive.
    pub rate: Option<f64>,
    /// Person-years approximation `N - D/2`.
    pub exposure: f64,
    /// Set when every survivor died (`D = N > 0`), giving a rate of 2.
    pub extreme: bool,
}

/// Central death rates `M = D / (N - D/2)` for each age. Rows with no
/// exposure are kept and flagged with `rate: None`.
pub fn central_death_rates(d: &CohortDataset) -> Vec<CentralRate> {
    d.rows()
        .iter()
        .map(|r| {
            let exposure = r.survivors as f64 - 0.5 * r.deaths as f64;
            let rate = (exposure > 0.0).then(|| r.deaths as f64 / exposure);
            CentralRate { age: r.age, z: d.z(r.age), rate, exposure, extreme: r.deaths == r.survivors && r.deaths > 0 }
        })
        .collect()
}

/// One reconstructed individual: at risk from the first age until `exit_age`
/// (exclusive), dying at `exit_age` if `died`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lifeline {
    /// Age at death, or the first age at which the individual is no longer
    /// observed (censoring).
    pub exit_age: i64,
    pub died: bool,
}

impl Lifeline {
    fn at_risk(&self, age: i64) -> bool {
        if self.died {
            age <= self.exit_age
        } else {
            age < self.exit_age
        }
    }
}

/// Individual-level view of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifelines {
    pub meta: CohortMeta,
    pub first_age: i64,
    pub last_age: i64,
    pub individuals: Vec<Lifeline>,
}

impl Lifelines {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn censored(&self) -> usize {
        self.individuals.iter().filter(|l| !l.died).count()
    }

    /// Re-aggregate a subset of individuals into `(N, D)` over this age span.
    pub fn aggregate<'a, I>(&self, subset: I) -> CohortDataset
    where
        I: IntoIterator<Item = &'a Lifeline>,
    {
        let span = (self.last_age - self.first_age + 1) as usize;
        let mut survivors = vec![0u64; span];
        let mut deaths = vec![0u64; span];
        for l in subset {
            for (i, age) in (self.first_age..=self.last_age).enumerate() {
                if !l.at_risk(age) {
                    break;
                }
                survivors[i] += 1;
                if l.died && l.exit_age == age {
                    deaths[i] += 1;
                }
            }
        }
        let rows = (self.first_age..=self.last_age)
            .zip(survivors.into_iter().zip(deaths))
            .map(|(age, (survivors, deaths))| AgeRow { age, survivors, deaths })
            .collect();
        CohortDataset::new(self.meta.clone(), rows).expect("aggregated lifelines are consistent")
    }

    pub fn to_dataset(&self) -> CohortDataset {
        self.aggregate(&self.individuals)
    }
}

/// Expand aggregate counts into individuals. Survivor deficits beyond the
/// recorded deaths become right-censored exits; survivors past the last age
/// are censored at `last_age + 1`.
pub fn reconstruct_lifelines(d: &CohortDataset) -> Result<Lifelines, DataError> {
    let rows = d.rows();
    let mut individuals = Vec::with_capacity(d.initial_size() as usize);
    for (i, r) in rows.iter().enumerate() {
        let next = rows.get(i + 1).map_or(0, |n| n.survivors);
        let remaining = r.survivors - r.deaths;
        if next > remaining {
            return Err(DataError::CohortGains { age: r.age, next: r.age + 1 });
        }
        individuals.extend(std::iter::repeat_n(Lifeline { exit_age: r.age, died: true }, r.deaths as usize));
        individuals
            .extend(std::iter::repeat_n(Lifeline { exit_age: r.age + 1, died: false }, (remaining - next) as usize));
    }
    Ok(Lifelines { meta: d.meta.clone(), first_age: d.first_age(), last_age: d.last_age(), individuals })
}

/// Shuffle individuals with a seeded stream and deal them round-robin into
/// `k` folds, re-aggregating each. Fold sizes differ by at most one.
pub fn split_folds(l: &Lifelines, k: usize, seed: u64) -> Result<Vec<CohortDataset>, DataError> {
    if k < 2 {
        return Err(DataError::Invalid("K must be ≥ 2".into()));
    }
    if k > l.len() {
        return Err(DataError::Invalid(format!("K = {k} exceeds the {} individuals", l.len())));
    }
    let mut order: Vec<usize> = (0..l.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::label_id("folds"), k as u64]));
    Ok((0..k).map(|f| l.aggregate(order.iter().skip(f).step_by(k).map(|&i| &l.individuals[i]))).collect())
}

/// Keep each individual independently with probability `fraction`.
pub fn thin(l: &Lifelines, fraction: f64, seed: u64) -> Result<CohortDataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Invalid(format!("fraction {fraction} is outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(l.to_dataset());
    }
    let mut stream = rng::stream(seed, &[rng::label_id("thin")]);
    let kept: Vec<&Lifeline> = l.individuals.iter().filter(|_| stream.gen_bool(fraction)).collect();
    Ok(l.aggregate(kept))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CohortMeta {
        CohortMeta::new("testland", Sex::Female, 1900)
    }

    fn ds(first: i64, n: &[u64], d: &[u64]) -> CohortDataset {
        let rows = n
            .iter()
            .zip(d)
            .enumerate()
            .map(|(i, (&survivors, &deaths))| AgeRow { age: first + i as i64, survivors, deaths })
            .collect();
        CohortDataset::new(meta(), rows).unwrap()
    }

    #[test]
    fn parses_full_age_span() {
        let mut text = String::from("age,survivors,deaths\n");
        let mut n = 10_000u64;
        for age in 80..=104 {
            let d = n / 5;
            text.push_str(&format!("{age},{n},{d}\n"));
            n -= d;
        }
        let d = parse_cohort_csv(text.as_bytes(), meta()).unwrap();
        assert_eq!(d.len(), 25);
        assert_eq!(d.z(d.first_age()), 1.0);
        assert_eq!(d.z(d.last_age()), 25.0);
        assert_eq!(d.meta.country, "testland");
    }

    #[test]
    fn sorts_unordered_rows() {
        let d = parse_cohort_csv("age,survivors,deaths\n81,5,1\n80,10,5\n".as_bytes(), meta()).unwrap();
        assert_eq!(d.first_age(), 80);
        assert_eq!(d.rows()[1].survivors, 5);
    }

    #[test]
    fn rejects_deaths_above_survivors() {
        let err =
            parse_cohort_csv("age,survivors,deaths\n80,200,5\n81,150,3\n82,100,101\n".as_bytes(), meta()).unwrap_err();
        assert_eq!(err, DataError::DeathsExceedSurvivors { line: 4, age: 82 });
        assert!(err.to_string().contains("deaths exceed survivors at age 82"));
    }

    #[test]
    fn rejects_age_gap() {
        let err = parse_cohort_csv("age,survivors,deaths\n80,10,1\n81,9,1\n83,8,1\n".as_bytes(), meta()).unwrap_err();
        assert_eq!(err.to_string(), "age gap between 81 and 83");
    }

    #[test]
    fn rejects_bad_rows() {
        let cases = [
            ("age,survivors,deaths\n80,10\n", "expected 3 fields"),
            ("age,survivors,deaths\n80,ten,1\n", "not an integer"),
            ("age,survivors,deaths\n80,-1,0\n", "negative count"),
            ("age,survivors,deaths\n80,10,1\n80,9,1\n", "duplicate age 80"),
            ("age,deaths,survivors\n80,1,10\n", "expected header"),
            ("age,survivors,deaths\n", "no rows"),
            ("", "no rows"),
        ];
        for (text, needle) in cases {
            let err = parse_cohort_csv(text.as_bytes(), meta()).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} -> {err}");
        }
    }

    #[test]
    fn central_rates() {
        let d = ds(80, &[100, 90, 1, 0], &[10, 0, 1, 0]);
        let m = central_death_rates(&d);
        assert!((m[0].rate.unwrap() - 10.0 / 95.0).abs() < 1e-15);
        assert_eq!(m[1].rate, Some(0.0));
        assert_eq!(m[2].rate, Some(2.0));
        assert!(m[2].extreme);
        assert_eq!(m[3].rate, None);
    }

    #[test]
    fn lifelines_closed_cohort() {
        let l = reconstruct_lifelines(&ds(80, &[10, 6], &[4, 6])).unwrap();
        assert_eq!(l.len(), 10);
        assert_eq!(l.censored(), 0);
        assert_eq!(l.individuals.iter().filter(|x| x.exit_age == 80).count(), 4);
        assert_eq!(l.individuals.iter().filter(|x| x.exit_age == 81).count(), 6);
    }

    #[test]
    fn lifelines_with_deficit() {
        let src = ds(80, &[10, 5], &[4, 5]);
        let l = reconstruct_lifelines(&src).unwrap();
        assert_eq!(l.censored(), 1);
        assert!(l.individuals.contains(&Lifeline { exit_age: 81, died: false }));
        assert_eq!(l.to_dataset(), src);
    }

    #[test]
    fn lifelines_reject_gains() {
        let err = reconstruct_lifelines(&ds(80, &[10, 8], &[4, 8])).unwrap_err();
        assert!(err.to_string().contains("cohort gains unsupported"));
    }

    #[test]
    fn survivors_past_last_age_are_censored() {
        let src = ds(80, &[10, 7], &[3, 2]);
        let l = reconstruct_lifelines(&src).unwrap();
        assert_eq!(l.individuals.iter().filter(|x| !x.died && x.exit_age == 82).count(), 5);
        assert_eq!(l.to_dataset(), src);
    }

    #[test]
    fn balanced_folds() {
        let src = ds(80, &[103, 60, 20], &[43, 40, 20]);
        let l = reconstruct_lifelines(&src).unwrap();
        let folds = split_folds(&l, 5, 11).unwrap();
        let sizes: Vec<u64> = folds.iter().map(|f| f.initial_size()).collect();
        assert_eq!(sizes, vec![21, 21, 21, 20, 20]);
        for (i, row) in src.rows().iter().enumerate() {
            assert_eq!(folds.iter().map(|f| f.rows()[i].survivors).sum::<u64>(), row.survivors);
            assert_eq!(folds.iter().map(|f| f.rows()[i].deaths).sum::<u64>(), row.deaths);
        }
        assert_eq!(folds, split_folds(&l, 5, 11).unwrap());
        assert_ne!(folds, split_folds(&l, 5, 12).unwrap());
    }

    #[test]
    fn fold_count_validation() {
        let l = reconstruct_lifelines(&ds(80, &[3], &[1])).unwrap();
        assert!(split_folds(&l, 1, 0).unwrap_err().to_string().contains("K must be ≥ 2"));
        assert!(split_folds(&l, 4, 0).is_err());
        assert!(split_folds(&l, 3, 0).is_ok());
    }

    #[test]
    fn thin_identity_and_range() {
        let src = ds(80, &[50, 30], &[20, 30]);
        let l = reconstruct_lifelines(&src).unwrap();
        assert_eq!(thin(&l, 1.0, 99).unwrap(), src);
        assert!(thin(&l, 0.0, 1).is_err());
        assert!(thin(&l, 1.5, 1).is_err());
        assert!(thin(&l, f64::NAN, 1).is_err());
        assert_eq!(thin(&l, 0.4, 5).unwrap(), thin(&l, 0.4, 5).unwrap());
    }

    #[test]
    fn thinning_two_individuals_reaches_every_subset() {
        // one dies at 80, one at 81: each subset gives a distinct aggregate
        let l = reconstruct_lifelines(&ds(80, &[2, 1], &[1, 1])).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            let t = thin(&l, 0.5, seed).unwrap();
            seen.insert((t.rows()[0].survivors, t.rows()[0].deaths, t.rows()[1].deaths));
        }
        let all: std::collections::BTreeSet<_> = [(0, 0, 0), (1, 1, 0), (1, 0, 1), (2, 1, 1)].into_iter().collect();
        assert_eq!(seen, all);
    }

    #[test]
    fn file_name_convention() {
        let m = CohortMeta::from_file_name(Path::new("data/denmark_m_1895.csv")).unwrap();
        assert_eq!(m, CohortMeta::new("denmark", Sex::Male, 1895));
        assert_eq!(m.id(), "denmark_m_1895");
        let m = CohortMeta::from_file_name(Path::new("new_zealand_f_1901.csv")).unwrap();
        assert_eq!(m.country, "new_zealand");
        assert!(CohortMeta::from_file_name(Path::new("denmark_1895.csv")).is_err());
        assert!(CohortMeta::from_file_name(Path::new("denmark_x_1895.csv")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let src = ds(80, &[100, 90, 50], &[10, 40, 50]);
        let back = parse_cohort_csv(src.to_csv_string().as_bytes(), meta()).unwrap();
        assert_eq!(back, src);
    }
}
