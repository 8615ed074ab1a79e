pub mod channel;
pub mod codec;
pub mod crypto;
pub mod engine;
pub mod harness;
pub mod ids;
pub mod ledger;
pub mod protocol;
pub mod settlement;
pub mod tokenbank;
pub mod workload;
