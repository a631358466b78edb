//! Deterministic discrete-event wireless network simulator.

mod channel;
mod event;
mod sim;

pub use channel::{db_to_lin, dbm_add, lin_to_db, ChannelModel, DeliveryOutcome};
pub use event::{parse_tsv_log, EventKind, LogParseError, SimEvent};
pub use sim::{
    dist, AttackSpec, AttackTruth, Delivery, NetSimError, Node, NodeRole, Simulator, Stepped,
    SubscriberAction, SubscriberRecord, SubscriberState, TransmitSpec,
};
