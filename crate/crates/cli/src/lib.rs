//! Configuration, sweep execution, oracle self-checks and figure presets for
//! the `irsma` binary.

pub mod config;
pub mod oracle;
pub mod presets;
pub mod run;
