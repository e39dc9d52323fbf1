"""Fault-injection drivers: the contract plus the sim and proxy backends."""

from .base import DriverCapabilities, DriverContract, InjectionHandle

__all__ = ["DriverCapabilities", "DriverContract", "InjectionHandle"]
