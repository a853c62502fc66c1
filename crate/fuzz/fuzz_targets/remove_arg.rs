#![no_main]
use libfuzzer_sys::fuzz_target;
use wsntopo::harness::parse_remove_arg;
use wsntopo::trainer::NetworkChange;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entry) = parse_remove_arg(text) {
        let NetworkChange::Remove(ids) = &entry.change else { panic!("not a removal: {entry:?}") };
        assert!(entry.at >= 1 && !ids.is_empty());
        let canonical = format!("{}:{}", entry.at, ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","));
        assert_eq!(parse_remove_arg(&canonical).unwrap(), entry);
    }
});
