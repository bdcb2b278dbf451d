#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = cqifb::dataio::dataset_from_bytes(data) {
        // Anything that parses must re-serialize to the same bytes.
        assert_eq!(cqifb::dataio::dataset_to_bytes(&ds), data);
    }
});
