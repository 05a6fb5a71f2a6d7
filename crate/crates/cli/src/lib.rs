//! File formats of the `pdglasso` command-line tool.

pub mod io;
pub mod report;
