// Benchmarks live in benches/; see condiff-core for the library.
