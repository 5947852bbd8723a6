#![no_main]

use libfuzzer_sys::fuzz_target;
use meor_core::io::read_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = read_csv(text) {
        for row in &table.rows {
            assert_eq!(row.len(), table.header.len());
        }
    }
});
