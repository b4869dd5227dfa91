use hazardfit::cohort::{parse_cohort_csv, reconstruct_lifelines, split_folds, thin};
use hazardfit::experiments::cluster_models;
use hazardfit::inference::{log_likelihood, LogLikelihood};
use hazardfit::selection::{aic, bic, compare, Support};
use hazardfit::{AgeRow, CohortDataset, CohortMeta, FitResult, HazardModel, NaturalParams, OptParams, Sex};
use proptest::prelude::*;

/// A cohort built from survival and censoring fractions, so it never gains
/// members.
fn cohort() -> impl Strategy<Value = CohortDataset> {
    (70i64..100, 0u64..80, prop::collection::vec((0.0f64..1.0, 0.0f64..0.3), 1..9)).prop_map(|(first, n0, steps)| {
        let mut n = n0;
        let mut rows = Vec::new();
        for (i, (dp, cp)) in steps.into_iter().enumerate() {
            let deaths = (n as f64 * dp).floor() as u64;
            let censored = ((n - deaths) as f64 * cp).floor() as u64;
            rows.push(AgeRow { age: first + i as i64, survivors: n, deaths });
            n -= deaths + censored;
        }
        CohortDataset::new(CohortMeta::new("prop", Sex::Female, 1900), rows).unwrap()
    })
}

fn model() -> impl Strategy<Value = HazardModel> {
    (0usize..9).prop_map(|i| HazardModel::ALL[i])
}

/// In-domain natural parameters near the model's default start.
fn model_and_params() -> impl Strategy<Value = (HazardModel, NaturalParams)> {
    model().prop_flat_map(|m| (Just(m), prop::collection::vec(-1.0f64..1.0, m.k()))).prop_filter_map(
        "out of domain",
        |(m, jitter)| {
            let start = m.default_start();
            let x: Vec<f64> = start.0.iter().zip(&jitter).map(|(s, j)| s + j).collect();
            let theta = m.to_natural(&OptParams(x));
            m.check_domain(&theta).ok().map(|_| (m, theta))
        },
    )
}

fn fake_fit(model: HazardModel, loglik: f64) -> FitResult {
    let k = model.k();
    FitResult {
        model,
        cohort: "p_m_1".into(),
        params: NaturalParams(vec![0.0; k]),
        params_opt: OptParams(vec![0.0; k]),
        log_likelihood: LogLikelihood { total: loglik, includes_binomial_constant: true },
        aic: aic(loglik, k),
        bic: bic(loglik, k, 1000).unwrap(),
        sse: 0.0,
        n: 1000,
        k,
        ages: vec![],
        predicted_deaths: vec![],
        starts: vec![],
        best_start: 0,
    }
}

proptest! {
    #[test]
    fn csv_round_trip(d in cohort()) {
        let again = parse_cohort_csv(d.to_csv_string().as_bytes(), d.meta.clone()).unwrap();
        prop_assert_eq!(again, d);
    }

    #[test]
    fn lifelines_reaggregate_to_source(d in cohort()) {
        let l = reconstruct_lifelines(&d).unwrap();
        prop_assert_eq!(l.len() as u64, d.initial_size());
        prop_assert_eq!(l.to_dataset(), d);
    }

    #[test]
    fn folds_partition_the_cohort(d in cohort(), k in 2usize..6, seed in any::<u64>()) {
        let l = reconstruct_lifelines(&d).unwrap();
        prop_assume!(k <= l.len());
        let folds = split_folds(&l, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        for (i, row) in d.rows().iter().enumerate() {
            prop_assert_eq!(folds.iter().map(|f| f.rows()[i].survivors).sum::<u64>(), row.survivors);
            prop_assert_eq!(folds.iter().map(|f| f.rows()[i].deaths).sum::<u64>(), row.deaths);
        }
        let sizes: Vec<u64> = folds.iter().map(|f| f.initial_size()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(split_folds(&l, k, seed).unwrap(), folds);
    }

    #[test]
    fn thinning_keeps_a_subset(d in cohort(), f in 0.01f64..1.0, seed in any::<u64>()) {
        let l = reconstruct_lifelines(&d).unwrap();
        prop_assert_eq!(thin(&l, 1.0, seed).unwrap(), d.clone());
        let t = thin(&l, f, seed).unwrap();
        for (a, b) in t.rows().iter().zip(d.rows()) {
            prop_assert!(a.survivors <= b.survivors && a.deaths <= b.deaths);
        }
        prop_assert!(reconstruct_lifelines(&t).is_ok());
        prop_assert_eq!(thin(&l, f, seed).unwrap(), t);
    }

    #[test]
    fn death_probabilities_are_probabilities((m, theta) in model_and_params(), z0 in -5.0f64..40.0) {
        let mut previous = 1.0;
        let zs: Vec<f64> = (0..6).map(|i| z0 + i as f64).collect();
        if let Ok(s) = m.survival_curve(&theta, &zs) {
            for v in s {
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v <= previous);
                previous = v;
            }
        }
        if let Ok(q) = m.death_prob(&theta, z0) {
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }

    #[test]
    fn transforms_round_trip((m, theta) in model_and_params()) {
        let back = m.to_natural(&m.from_natural(&theta).unwrap());
        for (a, b) in back.0.iter().zip(&theta.0) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    /// With the constant, the log-likelihood is a sum of log binomial pmfs.
    #[test]
    fn log_likelihood_is_at_most_zero((m, theta) in model_and_params(), d in cohort()) {
        if let Ok(ll) = log_likelihood(m, &theta, &d, true) {
            prop_assert!(ll.total <= 1e-9 * d.initial_size().max(1) as f64, "{}", ll.total);
            let kernel = log_likelihood(m, &theta, &d, false).unwrap();
            prop_assert!(kernel.total <= ll.total + 1e-9);
        }
    }

    #[test]
    fn comparison_invariants(
        lls in prop::collection::vec(-1e4f64..0.0, 9),
        pick in prop::collection::vec(any::<bool>(), 9),
        shift in -1e3f64..1e3,
        rotate in 0usize..9,
    ) {
        let mut fits: Vec<FitResult> = HazardModel::ALL
            .iter()
            .zip(&lls)
            .zip(&pick)
            .filter(|(_, &p)| p)
            .map(|((&m, &ll), _)| fake_fit(m, ll))
            .collect();
        prop_assume!(fits.len() >= 2);
        let c = compare(&fits).unwrap();
        let best: Vec<_> = c.rows.iter().filter(|r| r.aic_rank == 1).collect();
        prop_assert_eq!(best.len(), 1);
        prop_assert_eq!(best[0].delta_aic, 0.0);
        let mut ranks: Vec<usize> = c.rows.iter().map(|r| r.aic_rank).collect();
        ranks.sort();
        prop_assert_eq!(ranks, (1..=fits.len()).collect::<Vec<_>>());
        for r in &c.rows {
            prop_assert!(r.delta_aic >= 0.0 && r.delta_bic >= 0.0);
            prop_assert_eq!(r.delta_aic == 0.0 && !r.tied, r.aic_rank == 1 && !r.tied);
            let want = if r.delta_aic <= 2.0 { Support::Substantial } else if r.delta_aic <= 10.0 { Support::Intermediate } else { Support::None };
            prop_assert_eq!(r.support, want);
        }

        let len = fits.len();
        fits.rotate_left(rotate % len);
        prop_assert_eq!(&compare(&fits).unwrap(), &c);

        let shifted: Vec<FitResult> = fits.iter().map(|f| fake_fit(f.model, f.loglik() + shift)).collect();
        let s = compare(&shifted).unwrap();
        for (a, b) in s.rows.iter().zip(&c.rows) {
            prop_assert_eq!(a.aic_rank, b.aic_rank);
            prop_assert!((a.delta_aic - b.delta_aic).abs() <= 1e-9 * (1.0 + b.delta_aic));
        }
    }

    #[test]
    fn dendrogram_shape(rows in prop::collection::vec(prop::collection::vec(0.0f64..50.0, 3), 2..8)) {
        let labels: Vec<String> = (0..rows.len()).map(|i| format!("m{i}")).collect();
        let t = cluster_models(&labels, &rows).unwrap();
        prop_assert_eq!(t.merges.len(), rows.len() - 1);
        prop_assert_eq!(t.merges.last().unwrap().size, rows.len());
        prop_assert!(t.merges.iter().all(|m| m.height.is_finite() && m.height >= 0.0));
        let mut members: Vec<&str> = t.members(2 * rows.len() - 2);
        members.sort();
        let mut want: Vec<&str> = labels.iter().map(String::as_str).collect();
        want.sort();
        prop_assert_eq!(members, want);
        let h = t.monotone_heights();
        prop_assert!(h.windows(2).all(|w| w[1] >= w[0]));
    }
}
