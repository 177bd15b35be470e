#![no_main]

use absdl_core::evaluator::{parse_trajectory, trajectory_to_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tr) = parse_trajectory(text) {
        let again = parse_trajectory(&trajectory_to_text(&tr)).expect("stored archives re-load");
        assert_eq!(again.records.len(), tr.records.len());
        assert_eq!(trajectory_to_text(&again), trajectory_to_text(&tr));
    }
});
