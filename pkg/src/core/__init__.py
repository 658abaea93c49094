"""Numerical core: mesh, finite elements, assembly, time stepping and diagnostics."""
