"""Exploratory item factor analysis by amortized importance-weighted variational inference."""

from vifa.data import Dataset, GeneratingParams, load_csv, one_hot, simulate, template
from vifa.grm import ItemBank
from vifa.trainer import FitConfig, FittedModel, fit

__all__ = [
    "Dataset", "GeneratingParams", "ItemBank", "FitConfig", "FittedModel",
    "fit", "load_csv", "one_hot", "simulate", "template",
]
__version__ = "0.1.0"
