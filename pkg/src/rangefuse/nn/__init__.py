"""Minimal reverse-mode autodiff over numpy, plus the layers the estimators use."""

from .tensor import Tensor, no_grad, grad_check  # noqa: F401
