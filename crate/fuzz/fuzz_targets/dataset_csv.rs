//! `Dataset::read_csv` on arbitrary bytes, with a round trip for accepted input.

#![no_main]

use adp_core::sampling::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(d) = Dataset::read_csv(data) else {
        return;
    };
    assert!(!d.is_empty());
    let mut buf = Vec::new();
    d.write_csv(&mut buf).expect("writing to memory");
    let back = Dataset::read_csv(buf.as_slice()).expect("own output parses");
    assert_eq!(back, d);
});
