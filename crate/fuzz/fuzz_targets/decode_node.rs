#![no_main]

use blockgraph::codec::{decode_node, encode_node};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(n) = decode_node(data) {
        let bytes = encode_node(&n);
        assert_eq!(bytes, data, "decoding accepted a non-canonical encoding");
        assert_eq!(decode_node(&bytes).unwrap(), n);
    }
});
