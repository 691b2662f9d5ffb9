#![no_main]
use libfuzzer_sys::fuzz_target;
use snngbp_core::coding::{decode, RateCode};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(code) = RateCode::from_csv(text, 100.0, 1.0) {
        // Decoding may reject silent or single-location codes, but must not panic.
        let _ = decode(&code);
        let again = RateCode::from_csv(&code.to_csv(), 100.0, 1.0).expect("written code reparses");
        assert_eq!(code, again);
    }
});
