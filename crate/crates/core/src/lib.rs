pub mod domain;
pub mod harness;
pub mod pack;
pub mod rubric;
pub mod store;
pub mod taskflow;
pub mod dataset;
