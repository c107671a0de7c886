#![no_main]

use eiv_tls::io::parse_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&flag, rest)) = data.split_first() else { return };
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Ok(m) = parse_csv(text, flag & 1 == 1) {
            assert!(m.nrows() > 0 && m.ncols() > 0);
            assert!(m.iter().all(|v| v.is_finite()));
        }
    }
});
