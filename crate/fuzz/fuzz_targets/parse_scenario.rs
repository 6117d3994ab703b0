#![no_main]

use blockgraph_sim::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sc) = Scenario::parse(text) {
        let again = Scenario::parse(&sc.to_toml()).expect("printed scenarios parse");
        assert_eq!(again, sc);
    }
});
