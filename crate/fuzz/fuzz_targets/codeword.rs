#![no_main]
use libfuzzer_sys::fuzz_target;

// Leading bytes pick the field count and width, the rest is the packed form.
fuzz_target!(|data: &[u8]| {
    if data.len() < 3 {
        return;
    }
    let d3 = u16::from_le_bytes([data[0], data[1]]) as usize % 2048;
    let bits = (data[2] % 20) as u32;
    let payload = &data[3..];
    if let Ok(cw) = cqifb::cqinet::Codeword::unpack(payload, d3, bits) {
        assert_eq!(cw.pack(), payload);
    }
});
