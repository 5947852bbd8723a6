#![no_main]

use libfuzzer_sys::fuzz_target;
use meor_core::io::units::{parse_quantity, ALL_DIMENSIONS};

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let dim = ALL_DIMENSIONS[selector as usize % ALL_DIMENSIONS.len()];
    if let Ok(v) = parse_quantity(text, dim) {
        assert!(v.is_finite());
    }
});
