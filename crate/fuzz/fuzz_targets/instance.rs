#![no_main]
use libfuzzer_sys::fuzz_target;
use wsntopo::model::{parse_instance, write_instance};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = parse_instance(text) {
        let written = write_instance(&spec);
        let again = parse_instance(&written).expect("written instance parses");
        assert_eq!(written, write_instance(&again));
    }
});
