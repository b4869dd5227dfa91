#![no_main]

use hazardfit::HazardModel;
use libfuzzer_sys::fuzz_target;

// First byte picks the model; the rest is the JSON object.
fuzz_target!(|data: &[u8]| {
    let Some((&pick, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let m = HazardModel::ALL[pick as usize % HazardModel::ALL.len()];
    if let Ok(theta) = m.params_from_json(text) {
        assert!(m.check_domain(&theta).is_ok());
        let back = m.params_from_map(&m.params_to_map(&theta)).expect("map round trip");
        assert_eq!(back, theta);
        let _ = m.death_prob(&theta, 10.0);
    }
});
