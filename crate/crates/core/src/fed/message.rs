//! Typed client/server payloads and the append-only audit ledger.
//!
//! The payload enum below is the entire vocabulary of the client/server
//! boundary. Raw features and labels have no variant, so a transfer of either
//! is unrepresentable: the privacy policy is enforced by construction.
//!
//! ```compile_fail
//! use fedalign::fed::{Ledger, Payload};
//! let mut ledger = Ledger::new();
//! // There is no such payload kind; raw features cannot cross the boundary.
//! ledger.client_to_server(0, Payload::RawFeatures(vec![vec![1.0_f64]]));
//! ```

use crate::numcore::{Matrix, ParamVector};

/// Everything that is allowed to cross the client/server boundary.
#[derive(Debug, Clone)]
pub enum Payload {
    ParamVector(ParamVector),
    GradVector(ParamVector),
    EnergyScalars(Vec<f64>),
    LatentVectors(Matrix),
    ClassPredictions(Vec<usize>),
    SampleIndices(Vec<usize>),
    DatasetSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    ParamVector,
    GradVector,
    EnergyScalars,
    LatentVectors,
    ClassPredictions,
    SampleIndices,
    DatasetSize,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::ParamVector,
        MessageKind::GradVector,
        MessageKind::EnergyScalars,
        MessageKind::LatentVectors,
        MessageKind::ClassPredictions,
        MessageKind::SampleIndices,
        MessageKind::DatasetSize,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::ParamVector => "param_vector",
            MessageKind::GradVector => "grad_vector",
            MessageKind::EnergyScalars => "energy_scalars",
            MessageKind::LatentVectors => "latent_vectors",
            MessageKind::ClassPredictions => "class_predictions",
            MessageKind::SampleIndices => "sample_indices",
            MessageKind::DatasetSize => "dataset_size",
        }
    }
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::ParamVector(_) => MessageKind::ParamVector,
            Payload::GradVector(_) => MessageKind::GradVector,
            Payload::EnergyScalars(_) => MessageKind::EnergyScalars,
            Payload::LatentVectors(_) => MessageKind::LatentVectors,
            Payload::ClassPredictions(_) => MessageKind::ClassPredictions,
            Payload::SampleIndices(_) => MessageKind::SampleIndices,
            Payload::DatasetSize(_) => MessageKind::DatasetSize,
        }
    }

    /// Number of scalar elements carried.
    pub fn len(&self) -> usize {
        match self {
            Payload::ParamVector(p) | Payload::GradVector(p) => p.len(),
            Payload::EnergyScalars(v) => v.len(),
            Payload::LatentVectors(m) => m.rows() * m.cols(),
            Payload::ClassPredictions(v) => v.len(),
            Payload::SampleIndices(v) => v.len(),
            Payload::DatasetSize(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::ClientToServer => "client_to_server",
            Direction::ServerToClient => "server_to_client",
        }
    }
}

/// One audited transfer. The record keeps metadata only; the payload itself
/// moves to the recipient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageRecord {
    pub seq: usize,
    pub direction: Direction,
    pub client: usize,
    pub kind: MessageKind,
    pub payload_len: usize,
}

/// Append-only audit log of every cross-boundary transfer in a run.
#[derive(Debug, Default, Clone)]
pub struct Ledger {
    records: Vec<MessageRecord>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    /// Route a client upload through the ledger.
    pub fn client_to_server(&mut self, client: usize, payload: Payload) -> Payload {
        self.records.push(MessageRecord {
            seq: self.records.len(),
            direction: Direction::ClientToServer,
            client,
            kind: payload.kind(),
            payload_len: payload.len(),
        });
        payload
    }

    /// Route a server broadcast/download through the ledger.
    pub fn server_to_client(&mut self, client: usize, payload: Payload) -> Payload {
        self.records.push(MessageRecord {
            seq: self.records.len(),
            direction: Direction::ServerToClient,
            client,
            kind: payload.kind(),
            payload_len: payload.len(),
        });
        payload
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    pub fn server_bound_kinds(&self) -> Vec<MessageKind> {
        self.records
            .iter()
            .filter(|r| r.direction == Direction::ClientToServer)
            .map(|r| r.kind)
            .collect()
    }

    /// True when every server-bound message kind is in the allowed set.
    /// The payload type makes this true by construction; the audit keeps it
    /// checkable at run level anyway.
    pub fn server_bound_kinds_allowed(&self) -> bool {
        self.server_bound_kinds()
            .iter()
            .all(|k| MessageKind::ALL.contains(k))
    }

    pub fn extend(&mut self, other: Ledger) {
        for mut r in other.records {
            r.seq = self.records.len();
            self.records.push(r);
        }
    }
}
