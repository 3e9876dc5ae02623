#![no_main]

use libfuzzer_sys::fuzz_target;
use ssdr::io::{parse_table, write_table};

fuzz_target!(|data: &[u8]| {
    let Ok(table) = parse_table(data) else {
        return;
    };
    let mut buf = Vec::new();
    write_table(&mut buf, &table.names, &table.values).expect("write");
    let again = parse_table(buf.as_slice()).expect("reparse");
    assert_eq!(again.values, table.values);
});
