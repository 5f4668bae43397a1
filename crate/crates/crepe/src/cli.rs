//! Command-line front end.

pub fn main() {}
