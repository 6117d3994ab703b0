use thiserror::Error;

use crate::crypto::Digest;
use crate::types::NodeRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("sequence numbers start at 1")]
    ZeroSeq,
    #[error("signing key does not belong to the source user")]
    KeyMismatch,
    #[error("init accounts must be distinct and sorted")]
    UnsortedInit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input ended early")]
    Truncated,
    #[error("{0} trailing bytes after record")]
    TrailingBytes(usize),
    #[error("expected tag {want:#04x}, found {got:#04x}")]
    UnexpectedTag { want: u8, got: u8 },
    #[error("unknown record tag {0:#04x}")]
    UnknownTag(u8),
    #[error("key or digest must be 32 bytes, got {0}")]
    BadKeyLength(usize),
    #[error("list of {0} elements exceeds the decoder limit")]
    ListTooLong(usize),
    #[error("zero amount")]
    ZeroAmount,
    #[error("zero sequence number")]
    ZeroSeq,
    #[error("init entries must be strictly ascending with positive amounts")]
    BadInit,
}

/// Structural problems found while placing a node in a chain.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("start issued while the previous block is still open")]
    StartInsideBlock,
    #[error("close without an open start")]
    CloseWithoutStart,
    #[error("accept without a matching close")]
    AcceptWithoutClose,
    #[error("parent belongs to another bank or sits at the wrong position")]
    BadParent,
    #[error("update references a node of its own bank")]
    SelfReference,
    #[error("reference {0:?} does not match the node it resolves to")]
    RefMismatch(NodeRef),
    #[error("graph already has an init node")]
    SecondInit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InsertError {
    #[error("missing {} referenced node(s)", .0.len())]
    MissingAncestors(Vec<NodeRef>),
    #[error("bad signature")]
    BadSignature,
    #[error("grammar violation: {0}")]
    Grammar(#[from] GrammarError),
    #[error("node {0:?} is already present")]
    Duplicate(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown node {0:?}")]
    Unresolved(Digest),
    #[error("node {0:?} has the wrong kind for this query")]
    WrongKind(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VotingError {
    #[error("uncertain transactions of one user carry different sequence numbers")]
    MixedUncertainSeq,
}
