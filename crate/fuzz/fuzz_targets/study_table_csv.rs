#![no_main]

use hazardfit::experiments::{DeltaMatrix, StudyTable};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = StudyTable::read_csv(data) else { return };
    let mut buf = Vec::new();
    table.write_csv(&mut buf).expect("write to memory");
    let again = StudyTable::read_csv(buf.as_slice()).expect("own output parses");
    assert_eq!(again.len(), table.len());
    let _ = DeltaMatrix::from_table(&table);
});
