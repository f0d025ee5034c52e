#![no_main]

use libfuzzer_sys::fuzz_target;
use rotator::data::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = serde_json::from_str::<Manifest>(text) {
        // validation must never panic, whatever the field values are
        let _ = manifest.validate();
    }
});
