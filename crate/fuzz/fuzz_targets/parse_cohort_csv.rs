#![no_main]

use hazardfit::cohort::{central_death_rates, parse_cohort_csv, reconstruct_lifelines};
use hazardfit::CohortMeta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(d) = parse_cohort_csv(data, CohortMeta::default()) else { return };
    assert!(!d.is_empty());
    assert!(d.rows().windows(2).all(|w| w[1].age == w[0].age + 1));
    assert!(d.rows().iter().all(|r| r.deaths <= r.survivors));
    let _ = central_death_rates(&d);
    let again = parse_cohort_csv(d.to_csv_string().as_bytes(), CohortMeta::default()).expect("own output parses");
    assert_eq!(again.rows(), d.rows());
    if d.initial_size() <= 10_000 {
        let _ = reconstruct_lifelines(&d);
    }
});
