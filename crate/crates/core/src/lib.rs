//! Hybrid post-quantum key establishment for a fronthaul tunnel, plus the
//! measurement harness around it.
//!
//! The crate is layered bottom-up:
//!
//! - [`kem`]: key-encapsulation providers (finite-field DH, a toy LWE KEM and
//!   size/cost-emulating mock KEMs) behind one registry.
//! - [`ike`]: an IKEv2-style handshake with one intermediate exchange per
//!   additional key exchange, chained through the negotiated PRF.
//! - [`esp`]: encrypt-then-MAC packet protection with an anti-replay window.
//! - [`ofh`]: DU and RU endpoints exchanging synthetic fronthaul traffic over
//!   an emulated channel or UDP loopback.
//! - [`bench`]: metric estimators, the experiment matrix and CSV/plot output.

pub mod bench;
pub mod clock;
pub mod conf;
pub mod esp;
pub mod ike;
pub mod kem;
pub mod ofh;
pub mod suite;

pub use suite::{Encr, Integ};
