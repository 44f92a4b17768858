#![no_main]

use adp_core::qbasis::{read_q_csv, write_q_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = read_q_csv(data) else {
        return;
    };
    let mut buf = Vec::new();
    if write_q_csv(&mut buf, &rows).is_err() {
        // rows of differing dimensions are readable but not writable together
        return;
    }
    if rows.is_empty() {
        return;
    }
    assert_eq!(read_q_csv(buf.as_slice()).expect("own output parses"), rows);
    for (_, q) in &rows {
        let _ = q.extract_policy();
    }
});
