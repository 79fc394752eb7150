#![no_main]

use levymut::scenario::from_toml_str;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(scenario) = from_toml_str(text) else { return };
    let written = scenario.to_toml_string();
    let again = from_toml_str(&written).expect("written scenario parses");
    assert_eq!(scenario, again);
});
