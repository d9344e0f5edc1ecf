#![no_main]

use libfuzzer_sys::fuzz_target;
use mdfa::simulation::{parse_records_csv, records_to_csv, summarize};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_records_csv(data) {
        let _ = summarize(&records);
        let text = records_to_csv(&records);
        let again = parse_records_csv(text.as_bytes()).expect("written records parse");
        assert_eq!(records_to_csv(&again), text);
    }
});
