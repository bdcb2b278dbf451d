#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = cqifb::nn::model_from_bytes(data) {
        let bytes = cqifb::nn::model_to_bytes(&model);
        let again = cqifb::nn::model_from_bytes(&bytes).expect("round trip stays valid");
        assert_eq!(model, again);
    }
});
