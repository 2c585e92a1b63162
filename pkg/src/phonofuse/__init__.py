"""Training and evaluation harness for multimodal (acoustic + text) phoneme classifiers."""

__version__ = "0.1.0"

from . import audio, data, experiment, metrics, models, nn, training  # noqa: F401
