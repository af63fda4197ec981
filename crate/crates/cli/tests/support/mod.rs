//! Reference calculations shared by the integration tests.

#![allow(dead_code)]

pub mod decoy_oracle;
pub mod instances;
