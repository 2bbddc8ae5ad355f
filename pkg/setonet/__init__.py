# Set-based neural operators: branch encoders, trunk, benchmarks and harness
__version__ = "1.0.0"
