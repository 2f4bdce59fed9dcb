"""Detector estimators and the name registry used by the CLI and harness."""

from __future__ import annotations

from ..errors import ConfigurationError
from .amp import AmpDetector, OampDetector
from .base import DetectorOutput, MimoDetector, TraceEntry
from .linear import LmmseDetector
from .sic import LmmseSicDetector, MfSicDetector
from .vb import (ConvVbDetector, LmmseVbDetector, MfVbDetector, MfVbMDetector,
                 expected_residual_sq)

#: registry, in the canonical listing order
DETECTORS: dict[str, type[MimoDetector]] = {
    "lmmse": LmmseDetector,
    "amp": AmpDetector,
    "oamp-vamp": OampDetector,
    "mf-sic": MfSicDetector,
    "lmmse-sic": LmmseSicDetector,
    "conv-vb": ConvVbDetector,
    "mf-vb": MfVbDetector,
    "lmmse-vb": LmmseVbDetector,
    "mf-vb-m": MfVbMDetector,
}

DETECTOR_NAMES = tuple(DETECTORS)


def make_detector(name: str, **params) -> MimoDetector:
    """Instantiate a detector by registry name."""
    try:
        cls = DETECTORS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown detector '{name}'; known: {', '.join(DETECTOR_NAMES)}"
        ) from None
    return cls(**params)


__all__ = [
    "AmpDetector", "ConvVbDetector", "DETECTORS", "DETECTOR_NAMES",
    "DetectorOutput", "LmmseDetector", "LmmseSicDetector", "LmmseVbDetector",
    "MfSicDetector", "MfVbDetector", "MfVbMDetector", "MimoDetector",
    "OampDetector", "TraceEntry", "expected_residual_sq", "make_detector",
]
