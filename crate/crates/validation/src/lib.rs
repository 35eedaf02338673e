//! Test-only package. `tests/acceptance.rs` trains and scores the models
//! behind each acceptance criterion and prints one PASS/FAIL line per
//! criterion.
