#![no_main]

use std::path::Path;

use hazardfit::CohortMeta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = CohortMeta::from_file_name(Path::new(text)) {
        let again = CohortMeta::from_file_name(Path::new(&format!("{}.csv", meta.id()))).expect("id parses");
        assert_eq!(again, meta);
    }
});
