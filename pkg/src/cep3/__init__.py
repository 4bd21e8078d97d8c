"""Community event forecasting on continuous-time dynamic graphs."""
from .ctdg import CommunityAssignment, DataError, EventStream, TemporalGraph
from .model import CEP3, CEP3Config

__version__ = "0.1.0"

__all__ = ["CEP3", "CEP3Config", "CommunityAssignment", "DataError", "EventStream", "TemporalGraph"]
