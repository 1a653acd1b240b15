//! Unified learning-content gateway.
//!
//! One canonical content store served to heterogeneous clients (desktop and
//! mobile) through a device-detecting adapter. Every call travels as an XML
//! message envelope; services are published in an in-process registry and
//! dispatched by the gateway broker.
//!
//! Module map:
//! - [`envelope`] — build, serialize, and parse the XML RPC envelopes.
//! - [`registry`] — publish/find/describe service descriptors.
//! - [`content_store`] — file-backed store of content items and forum rosters.
//! - [`auth`] — the login service: credentials, sessions, token verification.
//! - [`adapter`] — device detection, budgeted block selection, rendering.
//! - [`gateway`] — the HTTP broker tying everything together.
//! - [`client`] — the request engine behind the `unilearn` CLI.

pub mod adapter;
pub mod auth;
pub mod client;
pub mod content_store;
pub mod envelope;
pub mod gateway;
pub mod registry;

mod xml;
