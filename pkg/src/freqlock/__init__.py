"""Simulation of a photon-rate frequency lock for quantum-dot emitters behind
atomic-vapor filters, with two-photon interference analysis."""

__version__ = "0.1.0"
