"""Slotted-channel simulator for contention resolution with costly collisions."""

from .baselines import beb_execute, folklore_estimate, stb_execute
from .cab import CabParams, cab_execute
from .channel import ChannelParams, EngineMode, make_rng
from .results import TrialResult

__all__ = ["CabParams", "ChannelParams", "EngineMode", "TrialResult", "beb_execute",
           "cab_execute", "folklore_estimate", "make_rng", "stb_execute"]
