#![no_main]

use hazardfit::HazardModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = text.parse::<HazardModel>() {
        assert_eq!(m.token(), text.trim().to_ascii_lowercase());
    }
});
