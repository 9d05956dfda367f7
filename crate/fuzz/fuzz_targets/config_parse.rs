#![no_main]

use libfuzzer_sys::fuzz_target;
use podscale_cli::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        let again = parse_config(&cfg.to_json()).expect("serialized config parses");
        assert_eq!(again.to_json(), cfg.to_json());
    }
});
