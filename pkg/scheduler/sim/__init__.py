"""Discrete-event CPU-scheduler simulator and workload generators."""

from scheduler.sim.engine import SimResult, Simulator, simulate

__all__ = ["SimResult", "Simulator", "simulate"]
