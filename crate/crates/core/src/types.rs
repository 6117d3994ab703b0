//! Ledger vocabulary: money, identities, transactions and nodes.

use std::fmt;

use crate::crypto::{Digest, Keypair, Scheme};
use crate::error::TxError;

/// An amount of money in minor currency units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(pub u64);

impl Money {
    pub const fn new(units: u64) -> Self {
        Self(units)
    }

    pub const fn units(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Signed balance used by balance sheets and power distributions.
///
/// Balances on valid and proper graphs are never negative; the signed type
/// lets improper graphs be inspected without wrapping.
pub type Balance = i128;

macro_rules! key_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0
            }

            /// Short hex prefix, handy in logs.
            pub fn short(&self) -> String {
                hex::encode(&self.0[..4])
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.short())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", hex::encode(self.0))
            }
        }
    };
}

key_newtype!(
    /// Public key of a bank.
    BankId
);
key_newtype!(
    /// Public key of a user.
    UserId
);

/// An account is a user's key under a specific bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId {
    pub bank: BankId,
    pub user: UserId,
}

impl AccountId {
    pub const fn new(bank: BankId, user: UserId) -> Self {
        Self { bank, user }
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.user.short(), self.bank.short())
    }
}

/// Opaque signature bytes; the width depends on the scheme.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(f, "Signature({}..)", hex::encode(&self.0[..n]))
    }
}

/// A signed money transfer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transaction {
    pub source: AccountId,
    pub dest: AccountId,
    pub amount: Money,
    pub seq: u64,
    pub sig: Signature,
}

/// The signed content of a transaction. Two transactions with the same key
/// describe the same transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxKey {
    pub source: AccountId,
    pub seq: u64,
    pub dest: AccountId,
    pub amount: Money,
}

/// How two transactions relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxRelation {
    Identical,
    Conflicting,
    Unrelated,
}

impl Transaction {
    /// Builds and signs a transaction with the source user's key.
    pub fn new(
        source: AccountId,
        dest: AccountId,
        amount: Money,
        seq: u64,
        key: &Keypair,
    ) -> Result<Self, TxError> {
        if amount.0 == 0 {
            return Err(TxError::ZeroAmount);
        }
        if seq == 0 {
            return Err(TxError::ZeroSeq);
        }
        if key.public() != source.user.0 {
            return Err(TxError::KeyMismatch);
        }
        let mut tx = Transaction {
            source,
            dest,
            amount,
            seq,
            sig: Signature::default(),
        };
        tx.sig = key.sign(&crate::codec::tx_signing_bytes(&tx));
        Ok(tx)
    }

    pub fn key(&self) -> TxKey {
        TxKey {
            source: self.source,
            seq: self.seq,
            dest: self.dest,
            amount: self.amount,
        }
    }

    pub fn verify(&self, scheme: Scheme) -> bool {
        scheme.verify(
            &self.source.user.0,
            &crate::codec::tx_signing_bytes(self),
            &self.sig,
        )
    }

    /// Digest of the canonical encoding.
    pub fn digest(&self) -> Digest {
        Digest::of(&crate::codec::encode_transaction(self))
    }

    pub fn relation(&self, other: &Transaction) -> TxRelation {
        classify_pair(self, other)
    }
}

impl TxKey {
    /// Hash of the signed content. Stable across signatures.
    pub fn id(&self) -> Digest {
        Digest::of(&crate::codec::tx_key_bytes(self))
    }

    pub fn conflicts_with(&self, other: &TxKey) -> bool {
        self.source == other.source
            && self.seq == other.seq
            && (self.dest != other.dest || self.amount != other.amount)
    }
}

/// Classifies a pair of transactions.
///
/// Identity is decided on the signed content so that two valid signatures over
/// the same transfer can never be applied twice.
pub fn classify_pair(a: &Transaction, b: &Transaction) -> TxRelation {
    let (ka, kb) = (a.key(), b.key());
    if ka == kb {
        TxRelation::Identical
    } else if ka.conflicts_with(&kb) {
        TxRelation::Conflicting
    } else {
        TxRelation::Unrelated
    }
}

/// A reference to a node: its owner, chain position and hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub bank: BankId,
    pub seq: u64,
    pub hash: Digest,
}

/// Parent pointer of a chain node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Parent {
    Init(Digest),
    Node(NodeRef),
}

impl Parent {
    pub fn hash(&self) -> Digest {
        match self {
            Parent::Init(h) => *h,
            Parent::Node(r) => r.hash,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Init,
    Start,
    Update,
    Close,
    Accept,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Init => "init",
            NodeKind::Start => "start",
            NodeKind::Update => "update",
            NodeKind::Close => "close",
            NodeKind::Accept => "accept",
        }
    }
}

/// Genesis distribution. Accounts are strictly ascending, amounts positive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InitNode {
    entries: Vec<(AccountId, Money)>,
}

impl InitNode {
    /// Builds the unique Init node for a distribution; entries may come in
    /// any order but accounts must be distinct and amounts positive.
    pub fn new(mut entries: Vec<(AccountId, Money)>) -> Result<Self, TxError> {
        entries.sort_by_key(|a| a.0);
        Self::from_sorted(entries)
    }

    pub(crate) fn from_sorted(entries: Vec<(AccountId, Money)>) -> Result<Self, TxError> {
        if entries.iter().any(|(_, m)| m.0 == 0) {
            return Err(TxError::ZeroAmount);
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(TxError::UnsortedInit);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(AccountId, Money)] {
        &self.entries
    }

    pub fn total(&self) -> Balance {
        self.entries.iter().map(|(_, m)| m.0 as Balance).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Start(Vec<Transaction>),
    Update(Vec<NodeRef>),
    Close,
    Accept,
}

/// A signed node in some bank's chain.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChainNode {
    pub bank: BankId,
    pub seq: u64,
    pub parent: Parent,
    pub payload: Payload,
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Init(InitNode),
    Chain(ChainNode),
}

impl Node {
    /// Builds and signs a chain node.
    pub fn signed(
        key: &Keypair,
        seq: u64,
        parent: Parent,
        payload: Payload,
    ) -> Node {
        let mut node = ChainNode {
            bank: BankId(key.public()),
            seq,
            parent,
            payload,
            sig: Signature::default(),
        };
        node.sig = key.sign(&crate::codec::node_signing_bytes(&node));
        Node::Chain(node)
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            Node::Init(_) => NodeKind::Init,
            Node::Chain(c) => match c.payload {
                Payload::Start(_) => NodeKind::Start,
                Payload::Update(_) => NodeKind::Update,
                Payload::Close => NodeKind::Close,
                Payload::Accept => NodeKind::Accept,
            },
        }
    }

    pub fn chain(&self) -> Option<&ChainNode> {
        match self {
            Node::Chain(c) => Some(c),
            Node::Init(_) => None,
        }
    }

    pub fn bank(&self) -> Option<BankId> {
        self.chain().map(|c| c.bank)
    }

    pub fn seq(&self) -> Option<u64> {
        self.chain().map(|c| c.seq)
    }

    pub fn transactions(&self) -> &[Transaction] {
        match self {
            Node::Chain(ChainNode {
                payload: Payload::Start(txs),
                ..
            }) => txs,
            _ => &[],
        }
    }

    /// All hashes this node points at: parent first, then update references.
    pub fn references(&self) -> Vec<Digest> {
        match self {
            Node::Init(_) => Vec::new(),
            Node::Chain(c) => {
                let mut out = vec![c.parent.hash()];
                if let Payload::Update(refs) = &c.payload {
                    out.extend(refs.iter().map(|r| r.hash));
                }
                out
            }
        }
    }

    pub fn digest(&self) -> Digest {
        crate::codec::node_hash(self)
    }

    /// A reference to this node. `None` for Init.
    pub fn reference(&self) -> Option<NodeRef> {
        self.chain().map(|c| NodeRef {
            bank: c.bank,
            seq: c.seq,
            hash: self.digest(),
        })
    }

    pub fn verify(&self, scheme: Scheme) -> bool {
        match self {
            Node::Init(_) => true,
            Node::Chain(c) => {
                scheme.verify(&c.bank.0, &crate::codec::node_signing_bytes(c), &c.sig)
            }
        }
    }
}
