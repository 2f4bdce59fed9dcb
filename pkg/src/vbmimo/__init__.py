"""Multiuser MIMO detection library with a Monte-Carlo SER benchmark CLI."""

from .channels import (ChannelEstimate, ChannelScenario, covariance_factor,
                       exp_corr_covariance, gen_correlated_channel,
                       gen_iid_channel, make_orthogonal_pilots,
                       mmse_channel_estimate, noise_var_for_snr,
                       simulate_pilot_phase)
from .constellation import (Constellation, DenoiserResult,
                            constellation_from_label, denoise, denoise_array,
                            make_constellation, map_slice, map_slice_array)
from .detectors import (DETECTOR_NAMES, DETECTORS, AmpDetector,
                        ConvVbDetector, DetectorOutput, LmmseDetector,
                        LmmseSicDetector, LmmseVbDetector, MfSicDetector,
                        MfVbDetector, MfVbMDetector, MimoDetector,
                        OampDetector, expected_residual_sq, make_detector)
from .errors import ConfigurationError

__version__ = "0.1.0"

__all__ = [
    "AmpDetector", "ChannelEstimate", "ChannelScenario", "ConfigurationError",
    "Constellation", "ConvVbDetector", "DETECTOR_NAMES", "DETECTORS",
    "DenoiserResult", "DetectorOutput", "LmmseDetector", "LmmseSicDetector",
    "LmmseVbDetector", "MfSicDetector", "MfVbDetector", "MfVbMDetector",
    "MimoDetector", "OampDetector", "constellation_from_label",
    "covariance_factor", "denoise", "denoise_array", "exp_corr_covariance",
    "expected_residual_sq", "gen_correlated_channel", "gen_iid_channel",
    "make_constellation", "make_detector", "make_orthogonal_pilots",
    "map_slice", "map_slice_array", "mmse_channel_estimate",
    "noise_var_for_snr", "simulate_pilot_phase",
]
