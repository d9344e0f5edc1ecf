#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // first byte picks header mode so both paths get exercised
    let Some((&flag, body)) = data.split_first() else { return };
    if let Ok(m) = mdfa::io::parse_matrix_csv(body, flag & 1 == 1) {
        assert!(m.nrows() > 0 && m.ncols() > 0);
        assert!(m.iter().all(|v| v.is_finite()));
        let again = mdfa::io::parse_matrix_csv(mdfa::io::matrix_to_csv(&m).as_bytes(), false)
            .expect("written matrix parses");
        assert_eq!(again, m);
    }
});
