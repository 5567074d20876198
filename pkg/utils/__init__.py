"""Rotor physics, detection, fitting and run plumbing for rotorsuite."""
