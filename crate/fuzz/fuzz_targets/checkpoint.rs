#![no_main]
use libfuzzer_sys::fuzz_target;
use wsntopo::nn::PolicyValueNet;

fuzz_target!(|data: &[u8]| {
    if let Ok((net, provenance)) = PolicyValueNet::from_bytes(data) {
        let bytes = net.to_bytes(&provenance);
        let (again, _) = PolicyValueNet::from_bytes(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(bytes, again.to_bytes(&provenance));
    }
});
