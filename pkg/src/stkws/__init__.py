"""Keyword spotting with separable temporal convolutions and temporally pooled attention."""

__version__ = "0.1.0"

from .audio import AudioClip, FeatureMap, band_limit, extract_features, mfcc
from .autograd import Parameter, Tensor, no_grad
from .estimator import MFCCTransformer, STAttNetClassifier
from .models import VARIANTS, KWSNet, ModelSpec, build, footprint, get_spec

__all__ = [
    "AudioClip", "FeatureMap", "band_limit", "extract_features", "mfcc",
    "Parameter", "Tensor", "no_grad",
    "MFCCTransformer", "STAttNetClassifier",
    "VARIANTS", "KWSNet", "ModelSpec", "build", "footprint", "get_spec",
]
