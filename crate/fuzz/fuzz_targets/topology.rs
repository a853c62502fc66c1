#![no_main]
use libfuzzer_sys::fuzz_target;
use wsntopo::model::{parse_topology_file, write_topology_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((spec, topology)) = parse_topology_file(text) {
        let written = write_topology_file(&spec, &topology);
        let (spec2, topology2) = parse_topology_file(&written).expect("written topology parses");
        assert_eq!(topology, topology2);
        assert_eq!(written, write_topology_file(&spec2, &topology2));
    }
});
