#![no_main]

use encsched::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        // Anything accepted must survive a serialize/parse round trip.
        let again = RunConfig::from_json_str(&cfg.to_json_string()).expect("re-serialized config parses");
        assert_eq!(cfg, again);
    }
});
