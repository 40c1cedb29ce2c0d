//! Benchmarks for the schedtwin engine live under `benches/`.
