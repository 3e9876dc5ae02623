#![no_main]

use libfuzzer_sys::fuzz_target;
use ssdr::io::RowFilter;

fuzz_target!(|s: &str| {
    let Ok(filter) = s.parse::<RowFilter>() else {
        return;
    };
    let again: RowFilter = filter.to_string().parse().expect("roundtrip");
    assert_eq!(again, filter);
});
