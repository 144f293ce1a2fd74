#![no_main]

use hedgelab::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(doc) = Checkpoint::parse(text) else {
        return;
    };
    // anything that parses must write back and parse to the same document
    if let Ok(written) = doc.to_text() {
        let again = Checkpoint::parse(&written).expect("written checkpoint parses");
        assert_eq!(again, doc);
    }
    let _ = doc.to_agent();
});
