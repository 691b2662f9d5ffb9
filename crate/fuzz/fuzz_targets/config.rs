//! key=value parameter files: no panics, and the canonical text of any
//! accepted config parses back to the same parameters.

#![no_main]
use libfuzzer_sys::fuzz_target;
use snngbp_core::config::Params;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(params) = Params::parse(text) {
        let again = Params::parse(&params.to_text()).expect("canonical text reparses");
        assert_eq!(params.to_text(), again.to_text());
    }
});
