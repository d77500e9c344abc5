import math

import numpy as np
import pytest
import torch

from symgen.transforms import TransformSpec


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)


@pytest.fixture
def affine_spec():
    """Five-dim affine spec with the rotated-digits bounds."""
    return TransformSpec(
        schema=("shift_x", "shift_y", "rotation", "scale_x", "scale_y"),
        eta_max=(0.25, 0.25, math.pi, 0.25, 0.25),
    )


@pytest.fixture
def color_spec():
    """Color spec with the colorized-digits bounds (hue offset 0.5)."""
    return TransformSpec(
        schema=("hue", "log_sat", "log_val"),
        eta_max=(0.5, 2.301, 0.51),
        offset=(0.5, 0.0, 0.0),
    )


@pytest.fixture
def full_spec():
    """Eight-dim affine+color spec (galaxy-style bounds)."""
    return TransformSpec(
        schema=(
            "shift_x", "shift_y", "rotation", "scale_x", "scale_y",
            "hue", "log_sat", "log_val",
        ),
        eta_max=(0.75, 0.75, math.pi, 0.75, 0.75, 0.5, 2.31, 0.51),
        offset=(0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0),
    )


def gaussian_blob(
    size: int = 32,
    center=(0.0, 0.0),
    sigma: float = 0.25,
    channels: int = 1,
    batch: int = 1,
) -> torch.Tensor:
    """Analytic Gaussian blob on the normalized [-1, 1]^2 grid.

    The continuous image is exp(-|p - c|^2 / (2 sigma^2)); this is the exact
    pointwise evaluation on pixel centers, so affine-transformed versions can
    be computed analytically (sample the same function at transformed
    coordinates) to serve as an interpolation-free oracle.
    """
    coords = torch.linspace(-1.0, 1.0, size)
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    img = torch.exp(-((xx - center[0]) ** 2 + (yy - center[1]) ** 2) / (2 * sigma**2))
    return img.expand(batch, channels, size, size).clone()


def blob_under_grid_transform(
    matrix: torch.Tensor,
    size: int = 32,
    center=(0.0, 0.0),
    sigma: float = 0.25,
) -> torch.Tensor:
    """Exact image of a Gaussian blob after a grid transform.

    Output pixel at normalized coordinate p takes the continuous blob value
    at A @ p; no interpolation is involved, so this is the ground truth that
    resampling-based application should approach.
    """
    coords = torch.linspace(-1.0, 1.0, size, dtype=torch.float64)
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    ones = torch.ones_like(xx)
    pts = torch.stack([xx, yy, ones], dim=-1).reshape(-1, 3)
    mapped = pts @ matrix.to(torch.float64).T
    mx = mapped[:, 0].reshape(size, size)
    my = mapped[:, 1].reshape(size, size)
    img = torch.exp(
        -((mx - center[0]) ** 2 + (my - center[1]) ** 2) / (2 * sigma**2)
    )
    inside = (mx.abs() <= 1) & (my.abs() <= 1)
    return (img * inside).float().unsqueeze(0).unsqueeze(0)


def rand_eta(spec: TransformSpec, n: int, generator=None, margin: float = 1.0):
    """Uniform eta batch inside the spec bounds (scaled by margin)."""
    lo, hi = spec.bounds()
    u = torch.rand(n, spec.dim, generator=generator)
    center = (lo + hi) / 2
    return center + (u - 0.5) * (hi - lo) * margin
