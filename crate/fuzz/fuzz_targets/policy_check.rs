#![no_main]

use encsched_cli::{cmd_check, Mode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&mode, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let mode = if mode & 1 == 0 { Mode::Known } else { Mode::Unknown };
    let _ = cmd_check(text, mode);
});
