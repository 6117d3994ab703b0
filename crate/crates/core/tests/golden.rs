//! Frozen encodings. Set `BLOCKGRAPH_BLESS=1` to rewrite the files after an
//! intentional format change.

use std::path::PathBuf;

use blockgraph::codec::{decode_node, decode_transaction, encode_node, encode_transaction};
use blockgraph::testkit::{Builder, World};
use blockgraph::{total_balance, Node, Scheme};

fn golden(name: &str, bytes: &[u8]) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.hex"));
    let hex = format!("{}\n", hex::encode(bytes));
    if std::env::var_os("BLOCKGRAPH_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &hex).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(hex, want, "{name} changed");
}

fn builder(scheme: Scheme) -> Builder {
    Builder::new(World::with_scheme(scheme, &[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)]), ("B3", &[])]))
}

#[test]
fn encodings_are_frozen() {
    for (scheme, tag) in [(Scheme::Test, "test"), (Scheme::Ed25519, "ed25519")] {
        let mut b = builder(scheme);
        let t = b.w.tx("u1@B1", "u2@B2", 30, 1);
        golden(&format!("{tag}_transaction"), &encode_transaction(&t));
        assert_eq!(decode_transaction(&encode_transaction(&t)).unwrap(), t);

        let init = Node::Init(b.w.init.clone());
        golden(&format!("{tag}_init"), &encode_node(&init));

        let (s, c, a) = b.solo_block("B3", vec![t]);
        let u = b.update("B1", &[a]);
        for (name, d) in [("start", s), ("close", c), ("accept", a), ("update", u)] {
            let n = b.g.get(&d).unwrap();
            golden(&format!("{tag}_{name}"), &encode_node(n));
            assert_eq!(&decode_node(&encode_node(n)).unwrap(), n.as_ref());
        }
        golden(&format!("{tag}_fingerprint"), &b.g.fingerprint().0);
    }
}

#[test]
fn digests_are_frozen() {
    let mut b = builder(Scheme::Test);
    let t = b.w.tx("u1@B1", "u2@B2", 30, 1);
    golden("tx_key_id", &t.key().id().0);
    golden("tx_digest", &t.digest().0);
    golden("init_digest", &b.g.init_digest().0);
    let (_, _, a) = b.solo_block("B1", vec![t]);
    golden("accept_digest", &a.0);
    let sheet = total_balance(&b.g);
    assert_eq!(sheet.balance(&b.w.account("u1@B1")), 30);
    assert_eq!(sheet.balance(&b.w.account("u2@B2")), 70);
}
