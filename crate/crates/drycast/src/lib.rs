//! Desk-side companion to `drycast-core`: corpus generation and loading,
//! a frame-access-counted dataset wrapper, the cross-validation and sweep
//! drivers, and CSV reporting. Everything OS-facing lives here so the core
//! crate stays freestanding.

pub mod cache;
pub mod cli;
pub mod corpus;
pub mod experiments;
pub mod report;
