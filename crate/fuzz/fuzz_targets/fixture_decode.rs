#![no_main]

use libfuzzer_sys::fuzz_target;
use podscale::tensor::{decode_fixture, encode_fixture};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_fixture(data) {
        let bytes = encode_fixture(&t);
        assert_eq!(bytes.as_slice(), data);
        assert!(decode_fixture(&bytes).unwrap().bitwise_eq(&t));
    }
});
