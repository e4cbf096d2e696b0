"""Prediction uncertainty for binary neural-network classifiers whose inputs
carry discrete, known measurement errors."""

from .errormodel import ErrorModel, FeatureErrorSpec, degenerate, from_sensitivity_specificity
from .errors import (ConfigError, DataError, EivuqError, NumericalError, SupportOverflowError,
                     TrainingDivergedError)
from .nncore import Network, NetworkSpec, TrainConfig
from .uq import UncertaintyReport, taylor_expected_prob, u_eiv, u_noneiv, uq_report, uq_reports

__version__ = "0.1.0"
