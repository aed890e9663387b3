//! HTTP session service for evolving turbine designs with fitness values
//! measured by an operator.
//!
//! [`store`] keeps each run as an append-only event log plus rendered
//! artifacts, [`service`] applies the operations, and [`api`] exposes them
//! under `/api/v1`.

pub mod api;
pub mod service;
pub mod store;

pub use api::{router, serve};
pub use service::{ApiError, Session};
pub use store::{RunMode, RunStore, StoreError};
