"""Encoder-decoder video transformer parts built on the autodiff tape."""

from medvt.core.model.medvt import ForwardOutput, MedVT

__all__ = ["ForwardOutput", "MedVT"]
