//! `LpProblem::parse_text` on arbitrary bytes; accepted input must survive
//! a write/parse round trip unchanged.

#![no_main]

use adp_core::lp_builder::LpProblem;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(p) = LpProblem::parse_text(data) else {
        return;
    };
    let mut buf = Vec::new();
    p.write_text(&mut buf).expect("writing to memory");
    let back = LpProblem::parse_text(buf.as_slice()).expect("own output parses");
    assert_eq!(back, p);
});
