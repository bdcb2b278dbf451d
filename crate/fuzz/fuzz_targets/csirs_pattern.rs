#![no_main]
use libfuzzer_sys::fuzz_target;

// First two bytes pick the band width, the rest is the pattern file text.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n_subcarriers = u16::from_le_bytes([data[0], data[1]]) as usize;
    if let Ok(text) = std::str::from_utf8(&data[2..]) {
        if let Ok(pattern) = cqifb::sr::CsirsPattern::parse(text, n_subcarriers) {
            assert!(pattern.n_cg() >= 1);
            assert!(pattern.positions().windows(2).all(|w| w[0] < w[1]));
        }
    }
});
