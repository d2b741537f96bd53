"""Delay analysis and simulation of two-layer coded caching networks."""

from .model import Demand, NetworkConfig, UserId, worst_case_demand

__version__ = "0.1.0"

__all__ = ["Demand", "NetworkConfig", "UserId", "worst_case_demand", "__version__"]
