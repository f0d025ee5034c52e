#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = rotator::pnm::decode(data) {
        // anything we accept must survive a lossless round trip
        let bytes = rotator::pnm::encode(&img);
        let again = rotator::pnm::decode(&bytes).expect("re-decode of encoded image");
        assert_eq!(img, again);
        // and the tensor path must stay in [0, 1]
        let t = img.to_tensor();
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
