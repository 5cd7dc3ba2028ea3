"""Egocentric hand-gesture recognition and fingertip localization with one network.

A VGG-style backbone feeds two heads: per-finger visibility probabilities
(binarized into a gesture code) and a fully convolutional ensemble of
fingertip coordinates that is averaged column-wise.
"""
from .codec import DEFAULT_THRESHOLD, UNKNOWN, GestureRegistry, binarize, classify, encode_visibility
from .core import (AnnotatedSample, BoundingBox, ConfigError, DataError, DetectionResult, EgoGestureError,
                   FingerId, FingerProbabilities, FingertipSet, Frame, GestureCode, InputError, TrainingError,
                   validate_sample)
from .model import (NetworkConfig, UnifiedNet, build, load_checkpoint, parameter_count, predict,
                    save_checkpoint)
from .pipeline import crop_and_resize, decode, detect, detect_batch, ensemble_average, final_coordinates

__version__ = "0.1.0"
