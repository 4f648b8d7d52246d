"""Benchmark process simulators and synthetic toy problems."""
