//! Canonical binary encoding.
//!
//! Every record is a one-byte kind tag followed by its fields in declared
//! order. Integers are 8-byte big-endian, byte strings carry a 4-byte
//! big-endian length, lists carry a 4-byte big-endian count. Decoding is
//! strict: any input that decodes re-encodes to the same bytes.

use crate::crypto::Digest;
use crate::error::DecodeError;
use crate::types::{
    AccountId, BankId, ChainNode, InitNode, Money, Node, NodeRef, Parent, Payload, Signature,
    Transaction, TxKey, UserId,
};

pub const TAG_INIT: u8 = 0x01;
pub const TAG_START: u8 = 0x02;
pub const TAG_UPDATE: u8 = 0x03;
pub const TAG_CLOSE: u8 = 0x04;
pub const TAG_ACCEPT: u8 = 0x05;
pub const TAG_TX: u8 = 0x10;
pub const TAG_ACCOUNT: u8 = 0x11;
pub const TAG_NODE_REF: u8 = 0x12;
pub const TAG_INIT_ENTRY: u8 = 0x13;
pub const TAG_PARENT_INIT: u8 = 0x14;

/// Upper bound on list counts accepted by the decoder.
const MAX_LIST: u32 = 1 << 20;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn tag(&mut self, t: u8) {
        self.buf.push(t);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn len(&mut self, n: usize) {
        let n = u32::try_from(n).expect("record too large to encode");
        self.buf.extend_from_slice(&n.to_be_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.buf.extend_from_slice(b);
    }

    fn account(&mut self, a: &AccountId) {
        self.tag(TAG_ACCOUNT);
        self.bytes(&a.bank.0);
        self.bytes(&a.user.0);
    }

    fn node_ref(&mut self, r: &NodeRef) {
        self.tag(TAG_NODE_REF);
        self.bytes(&r.bank.0);
        self.u64(r.seq);
        self.bytes(&r.hash.0);
    }

    fn tx_body(&mut self, tx: &Transaction) {
        self.key(&tx.key());
    }

    fn key(&mut self, k: &TxKey) {
        self.tag(TAG_TX);
        self.account(&k.source);
        self.account(&k.dest);
        self.u64(k.amount.0);
        self.u64(k.seq);
    }

    fn tx(&mut self, tx: &Transaction) {
        self.tx_body(tx);
        self.bytes(&tx.sig.0);
    }

    fn chain_body(&mut self, n: &ChainNode) {
        self.tag(match n.payload {
            Payload::Start(_) => TAG_START,
            Payload::Update(_) => TAG_UPDATE,
            Payload::Close => TAG_CLOSE,
            Payload::Accept => TAG_ACCEPT,
        });
        self.bytes(&n.bank.0);
        self.u64(n.seq);
        match &n.parent {
            Parent::Init(h) => {
                self.tag(TAG_PARENT_INIT);
                self.bytes(&h.0);
            }
            Parent::Node(r) => self.node_ref(r),
        }
        match &n.payload {
            Payload::Start(txs) => {
                self.len(txs.len());
                for tx in txs {
                    self.tx(tx);
                }
            }
            Payload::Update(refs) => {
                self.len(refs.len());
                for r in refs {
                    self.node_ref(r);
                }
            }
            Payload::Close | Payload::Accept => {}
        }
    }
}

pub fn encode_transaction(tx: &Transaction) -> Vec<u8> {
    let mut w = Writer::default();
    w.tx(tx);
    w.buf
}

/// Bytes covered by a transaction signature: the record without `sig`.
pub fn tx_signing_bytes(tx: &Transaction) -> Vec<u8> {
    let mut w = Writer::default();
    w.tx_body(tx);
    w.buf
}

/// Same bytes as [`tx_signing_bytes`], computed from the key alone.
pub fn tx_key_bytes(k: &TxKey) -> Vec<u8> {
    let mut w = Writer::default();
    w.key(k);
    w.buf
}

/// Bytes covered by a node signature: the record without `sig`.
pub fn node_signing_bytes(n: &ChainNode) -> Vec<u8> {
    let mut w = Writer::default();
    w.chain_body(n);
    w.buf
}

pub fn encode_node(node: &Node) -> Vec<u8> {
    let mut w = Writer::default();
    match node {
        Node::Init(init) => {
            w.tag(TAG_INIT);
            w.len(init.entries().len());
            for (acct, m) in init.entries() {
                w.tag(TAG_INIT_ENTRY);
                w.account(acct);
                w.u64(m.0);
            }
        }
        Node::Chain(c) => {
            w.chain_body(c);
            w.bytes(&c.sig.0);
        }
    }
    w.buf
}

pub fn node_hash(node: &Node) -> Digest {
    Digest::of(&encode_node(node))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn tag(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn expect_tag(&mut self, want: u8) -> Result<(), DecodeError> {
        let got = self.tag()?;
        if got != want {
            return Err(DecodeError::UnexpectedTag { want, got });
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let n = u32::from_be_bytes(self.take(4)?.try_into().unwrap());
        Ok(n as usize)
    }

    fn count(&mut self) -> Result<usize, DecodeError> {
        let n = self.len()?;
        if n as u32 > MAX_LIST {
            return Err(DecodeError::ListTooLong(n));
        }
        Ok(n)
    }

    fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.len()?;
        self.take(n)
    }

    fn key32(&mut self) -> Result<[u8; 32], DecodeError> {
        let b = self.bytes()?;
        b.try_into().map_err(|_| DecodeError::BadKeyLength(b.len()))
    }

    fn account(&mut self) -> Result<AccountId, DecodeError> {
        self.expect_tag(TAG_ACCOUNT)?;
        Ok(AccountId {
            bank: BankId(self.key32()?),
            user: UserId(self.key32()?),
        })
    }

    fn node_ref(&mut self) -> Result<NodeRef, DecodeError> {
        self.expect_tag(TAG_NODE_REF)?;
        let bank = BankId(self.key32()?);
        let seq = self.u64()?;
        let hash = Digest(self.key32()?);
        if seq == 0 {
            return Err(DecodeError::ZeroSeq);
        }
        Ok(NodeRef { bank, seq, hash })
    }

    fn tx(&mut self) -> Result<Transaction, DecodeError> {
        self.expect_tag(TAG_TX)?;
        let source = self.account()?;
        let dest = self.account()?;
        let amount = Money(self.u64()?);
        let seq = self.u64()?;
        let sig = Signature(self.bytes()?.to_vec());
        if amount.0 == 0 {
            return Err(DecodeError::ZeroAmount);
        }
        if seq == 0 {
            return Err(DecodeError::ZeroSeq);
        }
        Ok(Transaction {
            source,
            dest,
            amount,
            seq,
            sig,
        })
    }

    fn node(&mut self) -> Result<Node, DecodeError> {
        let tag = self.tag()?;
        if tag == TAG_INIT {
            let n = self.count()?;
            let mut entries = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                self.expect_tag(TAG_INIT_ENTRY)?;
                let acct = self.account()?;
                entries.push((acct, Money(self.u64()?)));
            }
            let init = InitNode::from_sorted(entries).map_err(|_| DecodeError::BadInit)?;
            return Ok(Node::Init(init));
        }
        if !(TAG_START..=TAG_ACCEPT).contains(&tag) {
            return Err(DecodeError::UnknownTag(tag));
        }
        let bank = BankId(self.key32()?);
        let seq = self.u64()?;
        if seq == 0 {
            return Err(DecodeError::ZeroSeq);
        }
        let parent = match self.tag()? {
            TAG_PARENT_INIT => Parent::Init(Digest(self.key32()?)),
            TAG_NODE_REF => {
                self.pos -= 1;
                Parent::Node(self.node_ref()?)
            }
            got => {
                return Err(DecodeError::UnexpectedTag {
                    want: TAG_NODE_REF,
                    got,
                })
            }
        };
        let payload = match tag {
            TAG_START => {
                let n = self.count()?;
                let mut txs = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    txs.push(self.tx()?);
                }
                Payload::Start(txs)
            }
            TAG_UPDATE => {
                let n = self.count()?;
                let mut refs = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    refs.push(self.node_ref()?);
                }
                Payload::Update(refs)
            }
            TAG_CLOSE => Payload::Close,
            _ => Payload::Accept,
        };
        let sig = Signature(self.bytes()?.to_vec());
        Ok(Node::Chain(ChainNode {
            bank,
            seq,
            parent,
            payload,
            sig,
        }))
    }

    fn finish(&self) -> Result<(), DecodeError> {
        if self.pos != self.buf.len() {
            return Err(DecodeError::TrailingBytes(self.buf.len() - self.pos));
        }
        Ok(())
    }
}

pub fn decode_node(bytes: &[u8]) -> Result<Node, DecodeError> {
    let mut r = Reader::new(bytes);
    let node = r.node()?;
    r.finish()?;
    Ok(node)
}

pub fn decode_transaction(bytes: &[u8]) -> Result<Transaction, DecodeError> {
    let mut r = Reader::new(bytes);
    let tx = r.tx()?;
    r.finish()?;
    Ok(tx)
}
