#![no_main]

use libfuzzer_sys::fuzz_target;
use ssdr::record::ResultRecord;

fuzz_target!(|s: &str| {
    let Ok(record) = ResultRecord::from_json(s) else {
        return;
    };
    let line = record.to_json_line().expect("serialize");
    let again = ResultRecord::from_json(&line).expect("reparse");
    assert_eq!(again.to_json_line().unwrap(), line);
});
