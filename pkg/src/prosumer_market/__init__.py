"""Peer-to-peer energy exchange market: game solvers and simulator."""

__version__ = "0.1.0"
