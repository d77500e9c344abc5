"""Symmetry-aware generative modeling.

Learns a per-prototype distribution over symmetry transformations (affine and
color) from data: a self-supervised transformation-inference network maps each
observation to a canonical prototype, and a conditional spline flow models the
density of transformation parameters given that prototype. The two combine
into a generative model usable for probing natural transformation
distributions, resampling "naturally" augmented data, and building
data-efficient VAE hybrids.
"""

from .transforms import (
    AFFINE_DIMS,
    COLOR_DIMS,
    TransformRep,
    TransformSpec,
    affine_apply,
    affine_matrix,
    apply_transform,
    bound_eta,
    color_apply,
    compose,
    gaussian_blur,
    hsv_to_rgb,
    inverse,
    passthrough_clip,
    rgb_to_hsv,
    to_rep,
    unbound_eta,
)

__version__ = "0.1.0"
