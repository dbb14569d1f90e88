"""Marks arrays produced by attacks so attack-free code paths can refuse them."""

from __future__ import annotations

import numpy as np


class AdversarialArray(np.ndarray):
    """ndarray subclass; results of arithmetic on it stay tainted."""


def taint(x: np.ndarray) -> AdversarialArray:
    return np.asarray(x).view(AdversarialArray)


def is_tainted(x) -> bool:
    return isinstance(x, AdversarialArray)


def untainted(x: np.ndarray) -> np.ndarray:
    """Plain ndarray view (for serialization, not for laundering inputs)."""
    return np.asarray(x).view(np.ndarray)
