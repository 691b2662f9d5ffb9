#![no_main]
use libfuzzer_sys::fuzz_target;
use snngbp_core::coding::{spikes_to_rates, SpikeTrain};

fuzz_target!(|data: &[u8]| {
    // First byte picks the population size, the rest is the CSV.
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if let Ok(train) = SpikeTrain::from_csv(text, n as usize, 1.0) {
        assert_eq!(spikes_to_rates(&train).len(), n as usize);
        let again = SpikeTrain::from_csv(&train.to_csv(), n as usize, 1.0).expect("written train reparses");
        assert_eq!(train, again);
    }
});
