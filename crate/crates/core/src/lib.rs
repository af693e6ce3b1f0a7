//! Hybrid AC/DC optimal power flow for multi-terminal HVDC grids built from
//! modular multilevel converters, and an OPF-based droop control strategy.
//!
//! - [`case`]: network model, text formats and outage scenarios
//! - [`equations`]: power-flow residuals, converter losses and objectives
//! - [`nlp`]: interior-point solver
//! - [`strategy`]: staged droop-coefficient selection
//! - [`validation`]: independent Newton power flow

pub mod case;
pub mod equations;
pub mod nlp;
pub mod sparse;
pub mod strategy;
pub mod validation;
