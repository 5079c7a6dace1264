pub mod adapters;
pub mod annotation;
pub mod cli;
pub mod dataset;
mod http;
pub mod kg;
pub mod metrics;
mod parallel;
pub mod split;
pub mod transforms;
pub mod verbalize;
