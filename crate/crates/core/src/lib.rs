//! Deterministic discrete-event simulator of a virtualized multi-RAT air
//! interface protocol stack.
//!
//! Layers, top to bottom: [`rrm`] (coordination and QoS), [`forwarding`]
//! (multipath dispatch), [`rrc`] (control plane), [`pdcp`], [`rlc`], [`mac`]
//! and an abstract [`phy`]. [`engine`] drives them from a single event queue.
//!
//! ```
//! use airstack::domain::{freq_band_class, BandClass};
//! assert_eq!(freq_band_class(2600.0), BandClass::Mid);
//! ```

pub mod domain;
pub mod phy;
pub mod mac;
pub mod rlc;
pub mod pdcp;
pub mod forwarding;
pub mod rrc;
pub mod rrm;
pub mod engine;

// The book's chapters run as doctests so their snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/data-path.md")]
    mod data_path {}
    #[doc = include_str!("../../../book/src/radio.md")]
    mod radio {}
    #[doc = include_str!("../../../book/src/multi-connectivity.md")]
    mod multi_connectivity {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
