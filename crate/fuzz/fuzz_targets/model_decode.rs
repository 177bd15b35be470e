#![no_main]

use absdl_core::learner::{model_to_text, parse_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = parse_model(text) {
        assert_eq!(parse_model(&model_to_text(&model)).expect("stored models re-load"), model);
        let out = model.predict(&[0.0; 11]);
        assert!(out.iter().all(|v| v.is_finite() || v.is_nan()));
    }
});
