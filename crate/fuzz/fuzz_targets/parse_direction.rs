#![no_main]

use eiv_tls::io::parse_direction;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(u) = parse_direction(data) {
        assert_eq!(u.len(), data.split(',').count());
    }
});
