#![no_main]

use absdl_core::dataset::{parse, to_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = parse(text) {
        assert_eq!(parse(&to_text(&set)).expect("stored sets re-load"), set);
    }
});
