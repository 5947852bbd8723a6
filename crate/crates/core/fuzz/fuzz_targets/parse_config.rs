#![no_main]

use libfuzzer_sys::fuzz_target;
use meor_core::io::{export_config, parse_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(parsed) = parse_config(text) else { return };
    // Whatever parses must survive an export and a second parse unchanged.
    let again = parse_config(&export_config(&parsed.config)).expect("exported config parses");
    assert_eq!(again.config, parsed.config);
});
