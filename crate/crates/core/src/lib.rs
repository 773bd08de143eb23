//! Compact session features for encrypted traffic and a small
//! gradient-boosted tree classifier to go with them.
//!
//! The pipeline runs [`capture`] → [`sessionizer`] → [`netmatrix`]: decode
//! IPv4/TCP packets from a pcap file, group them into bidirectional
//! sessions, pick the first five segments that start a TLS application_data
//! record and keep only IP total length, TTL and inter-arrival time for
//! each. The resulting 15 integers (30 bytes on disk) feed [`gbt`].

pub mod capture;
pub mod dataset;
pub mod extract;
pub mod gbt;
pub mod metrics;
pub mod netmatrix;
pub mod sessionizer;
pub mod synth;

pub use capture::{read_capture, Capture, CaptureError, PacketRecord};
pub use gbt::{fit, GbtHyperparams, GbtModel};
pub use metrics::{evaluate, stratified_split, EvalReport, ResourceReport};
pub use netmatrix::{build_row, FeatureVector, LabeledExample, NetMatrixRow};
pub use sessionizer::{is_encrypted_payload, select_netmatrix_packets, sessionize, FlowKey, Session};
