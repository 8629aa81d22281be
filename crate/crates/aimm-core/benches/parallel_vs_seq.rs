//! Placeholder bench; filled in once generation and evaluation exist.

fn main() {}
