#![no_main]

use blockgraph_sim::Trace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = Trace::from_jsonl(text) {
        let _ = t.integrity_ok();
        let _ = t.graphs(t.events.len());
        assert_eq!(Trace::from_jsonl(&t.to_jsonl()).expect("printed traces parse"), t);
    }
});
