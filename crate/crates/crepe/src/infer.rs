//! Greedy decoding and coordinate assembly.
