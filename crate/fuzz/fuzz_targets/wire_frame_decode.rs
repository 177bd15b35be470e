#![no_main]

use absdl_harness::wire::{decode_frame, encode_frame, MAX_FRAME};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut rest = data;
    // Walk the buffer frame by frame, skipping malformed bodies like the
    // service does.
    while let Ok(Some((frame, used))) = decode_frame(rest) {
        assert!(used >= 4 && used <= 4 + MAX_FRAME && used <= rest.len());
        if let Ok(env) = frame {
            let bytes = encode_frame(&env);
            let (back, n) = decode_frame(&bytes).unwrap().unwrap();
            assert_eq!(n, bytes.len());
            assert_eq!(back.unwrap(), env);
        }
        rest = &rest[used..];
    }
});
