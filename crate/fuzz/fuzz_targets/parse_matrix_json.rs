#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = mdfa::io::parse_matrix_json(data) {
        assert!(m.iter().all(|v| v.is_finite()));
        let text = mdfa::io::matrix_to_json_value(&m).to_string();
        assert_eq!(mdfa::io::parse_matrix_json(text.as_bytes()).expect("written matrix parses"), m);
    }
});
