//! Property oracles for blockgraph traces.
//!
//! Nothing here reuses the engine's validity or balance code: graphs are
//! rebuilt on a plain DAG with an explicit reachability matrix and every
//! property is evaluated from its definition.

mod checks;
pub mod dag;
mod explore;
pub mod ledger;

pub use checks::{
    check_agreement, check_all, check_positive_balance, check_proper_always, check_rejection_restriction,
    check_termination, license, rejection_license, CheckReport, Counterexample, License, OracleConfig, AGREEMENT,
    EVENTUAL_DELIVERY, ORACLE_EQUIVALENCE, POSITIVE_BALANCE, PROPER_ALWAYS, REJECTION_RESTRICTION, TERMINATION,
    TRACE_INTEGRITY,
};
pub use dag::{reachability_matrix, Dag};
pub use ledger::{naive_total_balance, DEFAULT_MAX_NODES};
pub use explore::PropertyVisitor;
