#![no_main]

use blockgraph::codec::{decode_transaction, encode_transaction};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_transaction(data) {
        assert_eq!(encode_transaction(&t), data, "decoding accepted a non-canonical encoding");
        let _ = t.key();
    }
});
