//! Criterion benchmarks for symscale; the benchmark bodies are in `benches/`.
