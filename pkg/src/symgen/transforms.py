"""Differentiable group actions on image batches.

Two transformation families are supported, addressed by named dimensions of a
parameter vector eta:

* affine: ``shift_x, shift_y, rotation, scale_x, scale_y`` represented as a
  3x3 matrix ``exp(sum_i eta_i G_i)`` over fixed Lie generators, applied by
  resampling the image on a transformed pixel grid;
* color: ``hue, log_sat, log_val`` applied pointwise in HSV space and composed
  additively in eta space.

Conventions (used consistently by every consumer of this module):

* Pixel coordinates are normalized to [-1, 1]^2 with the origin at the image
  center and pixel centers spanning the full square (``align_corners=True``).
* eta parameterizes the transform of the *pixel grid* (the reference frame):
  the output image at normalized coordinate p takes the input value at
  ``A @ p``. Image content therefore moves by the inverse map; e.g. a positive
  ``shift_x`` moves content left. Consequently "apply T_a then T_b" composes
  as the matrix product ``M(a) @ M(b)`` (right multiplication).
* Out-of-bounds samples are filled with 0 (black).
* The hue channel of HSV images lives in [0, 2*pi); ``hue`` eta units are
  fractions of a full turn, so compositions are additive with period 1.
* Within a single application the affine block acts before the color block.

All operations are pure functions of their inputs and safe to call
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F

AFFINE_DIMS = ("shift_x", "shift_y", "rotation", "scale_x", "scale_y")
COLOR_DIMS = ("hue", "log_sat", "log_val")
KNOWN_DIMS = AFFINE_DIMS + COLOR_DIMS

TWO_PI = 2.0 * math.pi

# Lie generators for the five affine dimensions, in AFFINE_DIMS order.
_GENERATORS = torch.zeros(5, 3, 3, dtype=torch.float64)
_GENERATORS[0, 0, 2] = 1.0  # shift_x
_GENERATORS[1, 1, 2] = 1.0  # shift_y
_GENERATORS[2, 0, 1] = -1.0  # rotation (counter-clockwise in (x, y))
_GENERATORS[2, 1, 0] = 1.0
_GENERATORS[3, 0, 0] = 1.0  # scale_x (log-factor)
_GENERATORS[4, 1, 1] = 1.0  # scale_y (log-factor)


@dataclass(frozen=True)
class TransformSpec:
    """Declares the active eta dimensions, their bounds, and interpolation.

    Bounds are stored relative to ``offset``: the representable range of
    dimension i is ``[offset[i] + eta_min[i], offset[i] + eta_max[i]]``.
    ``eta_min`` defaults to ``-eta_max``.
    """

    schema: tuple[str, ...]
    eta_max: tuple[float, ...]
    offset: tuple[float, ...] = ()
    eta_min: tuple[float, ...] = ()
    interpolation: str = "bicubic"

    def __post_init__(self):
        schema = tuple(self.schema)
        object.__setattr__(self, "schema", schema)
        d = len(schema)
        unknown = [s for s in schema if s not in KNOWN_DIMS]
        if unknown:
            raise ValueError(f"unknown eta dimensions: {unknown}")
        if len(set(schema)) != d:
            raise ValueError("schema contains duplicate dimensions")
        eta_max = tuple(float(v) for v in self.eta_max)
        if len(eta_max) != d:
            raise ValueError("eta_max length does not match schema")
        offset = tuple(float(v) for v in self.offset) if self.offset else (0.0,) * d
        if len(offset) != d:
            raise ValueError("offset length does not match schema")
        eta_min = (
            tuple(float(v) for v in self.eta_min)
            if self.eta_min
            else tuple(-v for v in eta_max)
        )
        if len(eta_min) != d:
            raise ValueError("eta_min length does not match schema")
        if any(lo >= hi for lo, hi in zip(eta_min, eta_max)):
            raise ValueError("eta_min must be elementwise < eta_max")
        if self.interpolation not in ("bicubic", "bilinear"):
            raise ValueError(f"unsupported interpolation {self.interpolation!r}")
        object.__setattr__(self, "eta_max", eta_max)
        object.__setattr__(self, "eta_min", eta_min)
        object.__setattr__(self, "offset", offset)

    # -- schema slicing -------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.schema)

    @property
    def affine_idx(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.schema) if s in AFFINE_DIMS)

    @property
    def color_idx(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.schema) if s in COLOR_DIMS)

    @property
    def has_affine(self) -> bool:
        return len(self.affine_idx) > 0

    @property
    def has_color(self) -> bool:
        return len(self.color_idx) > 0

    # -- bounds as tensors ----------------------------------------------
    def bounds(self, dtype=torch.float32, device=None):
        """(lower, upper) absolute bound tensors, shape (dim,)."""
        off = torch.tensor(self.offset, dtype=dtype, device=device)
        lo = off + torch.tensor(self.eta_min, dtype=dtype, device=device)
        hi = off + torch.tensor(self.eta_max, dtype=dtype, device=device)
        return lo, hi

    def center(self, dtype=torch.float32, device=None):
        lo, hi = self.bounds(dtype, device)
        return (lo + hi) / 2

    def half_width(self, dtype=torch.float32, device=None):
        lo, hi = self.bounds(dtype, device)
        return (hi - lo) / 2

    def validate_eta(self, eta: torch.Tensor, strict: bool = False) -> None:
        """Check shape/finiteness (and, if strict, bounds) of an eta batch."""
        if eta.shape[-1] != self.dim:
            raise ValueError(
                f"eta has {eta.shape[-1]} dims, schema expects {self.dim}"
            )
        if not torch.isfinite(eta).all():
            raise ValueError("eta contains non-finite values")
        if strict:
            lo, hi = self.bounds(eta.dtype, eta.device)
            if (eta < lo).any() or (eta > hi).any():
                raise ValueError("eta outside the spec bounds")

    def as_dict(self) -> dict:
        return {
            "schema": list(self.schema),
            "eta_max": list(self.eta_max),
            "eta_min": list(self.eta_min),
            "offset": list(self.offset),
            "interpolation": self.interpolation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        return cls(
            schema=tuple(d["schema"]),
            eta_max=tuple(d["eta_max"]),
            eta_min=tuple(d.get("eta_min") or ()),
            offset=tuple(d.get("offset") or ()),
            interpolation=d.get("interpolation", "bicubic"),
        )


@dataclass
class TransformRep:
    """Composable representation of a transformation.

    ``matrix`` is a (..., 3, 3) float64 grid-transform matrix (or None when
    the schema has no affine block); ``color`` is a (..., n_color) additive
    eta block (or None).
    """

    matrix: Optional[torch.Tensor] = None
    color: Optional[torch.Tensor] = None


def matrix_exp(mats: torch.Tensor, order: int = 10) -> torch.Tensor:
    """Matrix exponential by scaling and squaring with a fixed-order series.

    The number of squarings is chosen so the scaled matrix has max-norm below
    0.5; the series is an order-``order`` truncated Taylor expansion evaluated
    by Horner's rule. Differentiable in the input.
    """
    if not torch.isfinite(mats).all():
        raise ValueError("matrix_exp input contains non-finite values")
    n = mats.shape[-1]
    norm = mats.detach().abs().sum(dim=-1).max(dim=-1).values  # induced inf-norm
    max_norm = float(norm.max()) if norm.numel() else 0.0
    squarings = max(0, math.ceil(math.log2(max(max_norm, 1e-30) / 0.5)))
    scaled = mats / (2.0**squarings)
    eye = torch.eye(n, dtype=mats.dtype, device=mats.device).expand_as(mats)
    result = eye + scaled / order
    for k in range(order - 1, 0, -1):
        result = eye + scaled @ result / k
    for _ in range(squarings):
        result = result @ result
    return result


def affine_matrix(eta_affine: torch.Tensor) -> torch.Tensor:
    """Grid-transform matrix exp(sum_i eta_i G_i) for a 5-dim affine block.

    Accepts (..., 5); returns (..., 3, 3) in float64. Differentiable.
    """
    if eta_affine.shape[-1] != len(AFFINE_DIMS):
        raise ValueError(
            f"expected {len(AFFINE_DIMS)} affine dims, got {eta_affine.shape[-1]}"
        )
    if not torch.isfinite(eta_affine).all():
        raise ValueError("eta contains non-finite values")
    gens = _GENERATORS.to(eta_affine.device)
    summed = torch.einsum("...i,ijk->...jk", eta_affine.to(torch.float64), gens)
    return matrix_exp(summed)


def _expand_affine(eta: torch.Tensor, spec: TransformSpec) -> torch.Tensor:
    """Embed the schema's affine dims into the canonical 5-vector."""
    batch = eta.shape[:-1]
    full = eta.new_zeros(*batch, len(AFFINE_DIMS), dtype=torch.float64)
    for j, idx in enumerate(spec.affine_idx):
        full[..., AFFINE_DIMS.index(spec.schema[idx])] = eta[..., idx].to(
            torch.float64
        )
    return full


def to_rep(eta: torch.Tensor, spec: TransformSpec) -> TransformRep:
    """Convert an eta batch (..., dim) into a composable representation."""
    spec.validate_eta(eta)
    matrix = affine_matrix(_expand_affine(eta, spec)) if spec.has_affine else None
    color = eta[..., list(spec.color_idx)] if spec.has_color else None
    return TransformRep(matrix=matrix, color=color)


def _as_rep(t: Union[torch.Tensor, TransformRep], spec: TransformSpec) -> TransformRep:
    return t if isinstance(t, TransformRep) else to_rep(t, spec)


def compose(
    a: Union[torch.Tensor, TransformRep],
    b: Union[torch.Tensor, TransformRep],
    spec: TransformSpec,
) -> TransformRep:
    """Representation of "apply T_a, then T_b".

    Affine blocks compose as the matrix product M(a) @ M(b) (grid-frame
    right multiplication); color blocks add.
    """
    ra, rb = _as_rep(a, spec), _as_rep(b, spec)
    matrix = ra.matrix @ rb.matrix if ra.matrix is not None else None
    color = ra.color + rb.color if ra.color is not None else None
    return TransformRep(matrix=matrix, color=color)


def inverse(
    a: Union[torch.Tensor, TransformRep], spec: TransformSpec
) -> TransformRep:
    """Inverse representation: exp(-sum eta_i G_i) for affine, -eta for color."""
    if isinstance(a, TransformRep):
        matrix = torch.linalg.inv(a.matrix) if a.matrix is not None else None
        color = -a.color if a.color is not None else None
        return TransformRep(matrix=matrix, color=color)
    spec.validate_eta(a)
    matrix = (
        affine_matrix(-_expand_affine(a, spec)) if spec.has_affine else None
    )
    color = -a[..., list(spec.color_idx)] if spec.has_color else None
    return TransformRep(matrix=matrix, color=color)


def identity_rep(spec: TransformSpec, batch: int = 1) -> TransformRep:
    matrix = None
    if spec.has_affine:
        matrix = torch.eye(3, dtype=torch.float64).expand(batch, 3, 3).clone()
    color = torch.zeros(batch, len(spec.color_idx)) if spec.has_color else None
    return TransformRep(matrix=matrix, color=color)


# ---------------------------------------------------------------------------
# image-space application
# ---------------------------------------------------------------------------


def _check_images(x: torch.Tensor) -> None:
    if x.dim() != 4:
        raise ValueError(f"expected images of shape (B, C, H, W), got {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError("image batch contains non-finite values")


def affine_apply(
    x: torch.Tensor,
    transform: Union[torch.Tensor, TransformRep],
    spec: Optional[TransformSpec] = None,
    interpolation: Optional[str] = None,
) -> torch.Tensor:
    """Resample ``x`` on the grid transformed by the affine matrix.

    ``transform`` may be an eta batch (requires ``spec``), a TransformRep, or
    a raw (B, 3, 3) matrix batch. Out-of-bounds pixels are filled with 0.
    """
    _check_images(x)
    if isinstance(transform, TransformRep):
        matrix = transform.matrix
    elif spec is not None and transform.dim() <= 2 and transform.shape[-1] == spec.dim:
        matrix = to_rep(transform, spec).matrix
    elif transform.shape[-2:] == (3, 3):
        matrix = transform.to(torch.float64)
    else:
        raise ValueError(
            "transform must be a TransformRep, an eta batch (with spec), or "
            "a (..., 3, 3) matrix batch"
        )
    if matrix is None:
        return x
    if matrix.dim() == 2:
        matrix = matrix.unsqueeze(0)
    if matrix.shape[0] == 1 and x.shape[0] > 1:
        matrix = matrix.expand(x.shape[0], 3, 3)
    if matrix.shape[0] != x.shape[0]:
        raise ValueError("batch size mismatch between images and transforms")
    det = torch.linalg.det(matrix)
    if (det.abs() < 1e-12).any():
        raise ValueError("degenerate (non-invertible) affine matrix")

    eye = torch.eye(3, dtype=matrix.dtype, device=matrix.device)
    if not matrix.requires_grad and torch.equal(
        matrix, eye.expand_as(matrix)
    ):
        return x

    mode = interpolation or (spec.interpolation if spec is not None else "bicubic")
    theta = matrix[:, :2, :].to(x.dtype)
    grid = F.affine_grid(theta, list(x.shape), align_corners=True)
    return F.grid_sample(
        x, grid, mode=mode, padding_mode="zeros", align_corners=True
    )


def rgb_to_hsv(x: torch.Tensor) -> torch.Tensor:
    """RGB in [0,1] -> HSV with hue in [0, 2*pi), s and v in [0,1]."""
    _check_images(x)
    if x.shape[1] != 3:
        raise ValueError("rgb_to_hsv expects 3-channel images")
    r, g, b = x[:, 0], x[:, 1], x[:, 2]
    maxc = x.max(dim=1).values
    minc = x.min(dim=1).values
    diff = maxc - minc
    safe = torch.where(diff > 0, diff, torch.ones_like(diff))
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = torch.where(
        maxc == r,
        bc - gc,
        torch.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc),
    )
    h = torch.where(diff > 0, h, torch.zeros_like(h))
    h = (h / 6.0) % 1.0 * TWO_PI
    s = torch.where(maxc > 0, diff / maxc.clamp_min(1e-12), torch.zeros_like(maxc))
    return torch.stack([h, s, maxc], dim=1)


def hsv_to_rgb(x: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`rgb_to_hsv` (hue in [0, 2*pi))."""
    _check_images(x)
    if x.shape[1] != 3:
        raise ValueError("hsv_to_rgb expects 3-channel images")
    h = (x[:, 0] / TWO_PI) % 1.0
    s, v = x[:, 1], x[:, 2]
    h6 = h * 6.0
    i = torch.floor(h6)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.long() % 6
    r = torch.where(
        i == 0, v, torch.where(
            i == 1, q, torch.where(
                i == 2, p, torch.where(
                    i == 3, p, torch.where(i == 4, t, v)))))
    g = torch.where(
        i == 0, t, torch.where(
            i == 1, v, torch.where(
                i == 2, v, torch.where(
                    i == 3, q, torch.where(i == 4, p, p)))))
    b = torch.where(
        i == 0, p, torch.where(
            i == 1, p, torch.where(
                i == 2, t, torch.where(
                    i == 3, v, torch.where(i == 4, v, q)))))
    return torch.stack([r, g, b], dim=1)


class _PassthroughClip(torch.autograd.Function):
    @staticmethod
    def forward(ctx, v, lo, hi):
        return v.clamp(lo, hi)

    @staticmethod
    def backward(ctx, grad):
        return grad, None, None


def passthrough_clip(v: torch.Tensor, lo: float, hi: float) -> torch.Tensor:
    """Clamp to [lo, hi] in the forward pass; identity gradient everywhere."""
    if lo > hi:
        raise ValueError(f"lo ({lo}) must not exceed hi ({hi})")
    return _PassthroughClip.apply(v, lo, hi)


def color_apply(
    x: torch.Tensor,
    eta_color: torch.Tensor,
    passthrough: bool = True,
) -> torch.Tensor:
    """Apply an (hue, log_sat, log_val) color block to RGB images in [0,1].

    In HSV space: h' = (h + 2*pi*eta_h) mod 2*pi, s' = clip(s*exp(eta_s)),
    v' = clip(v*exp(eta_v)). With ``passthrough=True`` (training paths) the
    clip has identity gradients; otherwise it is a hard clamp.
    """
    _check_images(x)
    if x.shape[1] != 3:
        raise ValueError("color_apply expects RGB images")
    if eta_color.shape[-1] != 3:
        raise ValueError("color block must have (hue, log_sat, log_val)")
    if not torch.isfinite(eta_color).all():
        raise ValueError("eta contains non-finite values")
    if eta_color.dim() == 1:
        eta_color = eta_color.unsqueeze(0)
    if eta_color.shape[0] == 1 and x.shape[0] > 1:
        eta_color = eta_color.expand(x.shape[0], 3)
    if not eta_color.requires_grad and not eta_color.any():
        return x
    clip = passthrough_clip if passthrough else (lambda v, lo, hi: v.clamp(lo, hi))
    hsv = rgb_to_hsv(x.clamp(0.0, 1.0))
    eta_color = eta_color.to(x.dtype)
    # reduce the hue fraction mod 1 before scaling: mathematically a no-op
    # (hue period is one full turn) but avoids precision loss for large eta_h
    hue_frac = eta_color[:, 0] - torch.floor(eta_color[:, 0].detach())
    h = (hsv[:, 0] + TWO_PI * hue_frac[:, None, None]) % TWO_PI
    s = clip(hsv[:, 1] * torch.exp(eta_color[:, 1, None, None]), 0.0, 1.0)
    v = clip(hsv[:, 2] * torch.exp(eta_color[:, 2, None, None]), 0.0, 1.0)
    return hsv_to_rgb(torch.stack([h, s, v], dim=1))


def apply_transform(
    x: torch.Tensor,
    transform: Union[torch.Tensor, TransformRep],
    spec: TransformSpec,
    passthrough: bool = True,
    interpolation: Optional[str] = None,
) -> torch.Tensor:
    """Apply a full transformation (affine block, then color block) to images."""
    rep = _as_rep(transform, spec)
    out = x
    if rep.matrix is not None:
        out = affine_apply(out, rep, spec, interpolation=interpolation)
    if rep.color is not None:
        full = out.new_zeros(rep.color.shape[:-1] + (3,))
        for j, idx in enumerate(spec.color_idx):
            full[..., COLOR_DIMS.index(spec.schema[idx])] = rep.color[..., j].to(
                out.dtype
            )
        out = color_apply(out, full, passthrough=passthrough)
    return out


def bound_eta(raw: torch.Tensor, spec: TransformSpec) -> torch.Tensor:
    """Squash an unconstrained vector into the spec bounds.

    eta = center + half_width * tanh(raw); strictly inside
    [offset + eta_min, offset + eta_max] for all finite raw.
    """
    if raw.shape[-1] != spec.dim:
        raise ValueError(f"raw has {raw.shape[-1]} dims, expected {spec.dim}")
    center = spec.center(raw.dtype, raw.device)
    half = spec.half_width(raw.dtype, raw.device)
    return center + half * torch.tanh(raw)


def unbound_eta(
    eta: torch.Tensor, spec: TransformSpec, eps: float = 1e-7
) -> torch.Tensor:
    """Inverse of :func:`bound_eta`: atanh((eta - center)/half_width)."""
    center = spec.center(eta.dtype, eta.device)
    half = spec.half_width(eta.dtype, eta.device)
    u = ((eta - center) / half).clamp(-1 + eps, 1 - eps)
    return torch.atanh(u)


def gaussian_blur(
    x: torch.Tensor, sigma: float, kernel_size: int = 5
) -> torch.Tensor:
    """Separable Gaussian blur with reflection padding; sigma=0 is identity."""
    _check_images(x)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x
    if kernel_size % 2 != 1:
        raise ValueError("kernel_size must be odd")
    half = kernel_size // 2
    coords = torch.arange(kernel_size, dtype=x.dtype, device=x.device) - half
    kernel = torch.exp(-0.5 * (coords / sigma) ** 2)
    kernel = kernel / kernel.sum()
    c = x.shape[1]
    kx = kernel.view(1, 1, 1, -1).expand(c, 1, 1, kernel_size)
    ky = kernel.view(1, 1, -1, 1).expand(c, 1, kernel_size, 1)
    out = F.pad(x, (half, half, 0, 0), mode="reflect")
    out = F.conv2d(out, kx, groups=c)
    out = F.pad(out, (0, 0, half, half), mode="reflect")
    out = F.conv2d(out, ky, groups=c)
    return out


def gaussian_kernel1d(sigma: float, kernel_size: int = 5) -> torch.Tensor:
    """The normalized 1D kernel used by :func:`gaussian_blur`."""
    half = kernel_size // 2
    coords = torch.arange(kernel_size, dtype=torch.float64) - half
    kernel = torch.exp(-0.5 * (coords / sigma) ** 2)
    return kernel / kernel.sum()
