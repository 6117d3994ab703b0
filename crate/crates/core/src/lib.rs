//! A ledger where every bank keeps its own hash-linked chain inside one shared
//! DAG, and blocks are finalized by coin-weighted votes of the banks.
//!
//! The crate is deterministic end to end: no clocks, no randomness, and
//! every computation is a pure function of the graph it is given.

mod bitset;
pub mod balance;
pub mod bank;
pub mod codec;
pub mod crypto;
pub mod error;
pub mod graph;
#[doc(hidden)]
pub mod testkit;
pub mod types;
pub mod validity;
pub mod view;
pub mod voting;

pub use balance::{applied_transactions, total_balance, BalanceSheet};
pub use crypto::{deterministic_keygen, Digest, Keypair, Scheme};
pub use error::{DecodeError, GraphError, GrammarError, InsertError, TxError, VotingError};
pub use graph::{Block, Blockgraph, LoadError, Phase, Prepared};
pub use types::{
    classify_pair, AccountId, Balance, BankId, ChainNode, InitNode, Money, Node, NodeKind, NodeRef,
    Parent, Payload, Signature, Transaction, TxKey, TxRelation, UserId,
};
pub use validity::{is_proper, validate_start_tx, Reason, Validator, Verdict};
pub use view::View;
pub use voting::{
    support_set, threshold_met, uncertain_transactions, voting_power, Coalition, PowerDistribution,
    SharedPower,
};
