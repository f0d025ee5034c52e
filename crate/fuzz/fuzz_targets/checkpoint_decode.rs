#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = rotator::checkpoint::decode(data) {
        let refs: Vec<(String, &rotator::Tensor)> =
            tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bytes = rotator::checkpoint::encode(&refs);
        let again = rotator::checkpoint::decode(&bytes).expect("re-decode of encoded checkpoint");
        assert_eq!(tensors, again);
    }
});
