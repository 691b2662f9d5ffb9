//! Weight files must parse or fail cleanly; accepted files survive a
//! write/read round trip unchanged.
//!
//! Run with: `cargo +nightly fuzz run weight_file`

#![no_main]
use libfuzzer_sys::fuzz_target;
use snngbp_core::plasticity::WeightStore;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = WeightStore::parse(text, None) {
        let again = WeightStore::parse(&store.to_text(), Some(store.neurons())).expect("canonical text reparses");
        assert_eq!(store, again);
    }
    let _ = WeightStore::parse(text, Some(100));
});
