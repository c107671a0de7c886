//! Arbitrary text through the study-spec loader. Accepted specs must pass
//! validation and survive a serialize/parse cycle unchanged.

#![no_main]

use eiv_tls::io::parse_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if data.len() > 1 << 16 {
        return;
    }
    if let Ok(spec) = parse_spec(data) {
        spec.validate().expect("accepted specs are valid");
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(parse_spec(&text).unwrap(), spec);
    }
});
