"""Numerical engine: networks, flows, potentials, dynamics and the adaptive loop"""
