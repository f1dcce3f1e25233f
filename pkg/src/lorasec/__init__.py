"""Discrete-event LoRaWAN simulator for studying attacks on a smart-lighting network."""

from .core import TxParams, airtime, default_plan

__version__ = "0.1.0"

__all__ = ["TxParams", "airtime", "default_plan", "__version__"]
