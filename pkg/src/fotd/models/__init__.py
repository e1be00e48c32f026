"""Demonstration systems implementing the model interface."""

from .rossler import RosslerModel, RosslerParams
from .ks import KsConfig, KsModel
from .reactive import ReactiveConfig, ReactiveModel

__all__ = [
    "RosslerModel",
    "RosslerParams",
    "KsConfig",
    "KsModel",
    "ReactiveConfig",
    "ReactiveModel",
]
