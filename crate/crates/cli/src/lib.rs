//! Experiment front-end: config schema, corpus preparation, the end-to-end
//! experiment driver, and static SVG rendering of results.

pub mod config;
pub mod corpus;
pub mod demo;
pub mod runner;
pub mod svg;
