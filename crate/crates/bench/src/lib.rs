//! Criterion benchmarks for nlscore; see `benches/`.
