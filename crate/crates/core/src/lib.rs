pub mod certificates;
pub mod cli;
pub mod numfmt;
pub mod optim;
pub mod plantmodel;
pub mod riskmeasures;
pub mod sempc;
pub mod support;
