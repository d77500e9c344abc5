"""Deterministic dataset constructions.

Every loader is a pure function of its :class:`DatasetSpec`: reloading with
the same spec yields bit-identical tensors, and each example's injected
transformation is a pure function of (seed, example index). Injected
transformations go through :mod:`symgen.transforms`, so dataset construction
and model transformations share one implementation.

Raw corpora are looked up in a cache directory (``SYMGEN_DATA_DIR``, default
``~/.cache/symgen``). Hosts are only contacted when a corpus is missing and
downloading is enabled; offline environments get a
:class:`DatasetUnavailableError` naming the expected files.

Cache layout::

    $SYMGEN_DATA_DIR/
      mnist/                      # torchvision MNIST layout
      galaxy_mnist/galaxy_mnist.npz   # images (10000,3,64,64) uint8, labels (10000,)
      dsprites/dsprites_ndarray_co1sh3sc6or40x32y32_64x64.npz
      pcam/camelyonpatch_level_2_split_{train,valid,test}_x.h5
      processed/                  # cached constructed splits + manifests
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .transforms import TransformSpec, affine_apply, color_apply, to_rep

DSPRITES_NPZ = "dsprites_ndarray_co1sh3sc6or40x32y32_64x64.npz"

DEFAULT_SIZES = {
    "mnist_affine": (50_000, 10_000, 10_000),
    "mnist_color": (50_000, 10_000, 10_000),
    "digits_affine": (1_200, 200, 397),
    "digits_color": (1_200, 200, 397),
    "dsprites": (8_192, 1_024, 2_048),
    "galaxy_mnist": (7_000, 1_000, 2_000),
    "shift_oracle": (4_096, 512, 1_024),
}

# one epoch of the dSprites resampler, as a fraction of the full latent product
DSPRITES_EPOCH = 737_280 // 10


class DatasetUnavailableError(RuntimeError):
    """Raised when a raw corpus is missing and cannot be downloaded."""


def data_root(root: Optional[str] = None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get("SYMGEN_DATA_DIR", Path.home() / ".cache" / "symgen"))


@dataclass(frozen=True)
class DatasetSpec:
    """Names a dataset construction and pins everything that varies."""

    name: str
    seed: int = 0
    n_train: Optional[int] = None
    n_val: Optional[int] = None
    n_test: Optional[int] = None
    # rotated-digits constructions
    theta_max: float = 0.0  # radians; per-example rotation ~ U(-theta, theta)
    base_rotation: float = 0.0  # extra always-on rotation range, radians
    # colorized-digits constructions
    hue_range: float = 0.3  # upper bound of the hue fraction (0.6*pi turn)
    sat_range: tuple[float, float] = (0.6, 0.9)
    # geometry (defaults resolved per dataset: shift_oracle 32, dsprites 64)
    image_size: Optional[int] = None
    blob_sigma: float = 0.12
    shift_modes: tuple[float, ...] = (-0.35, 0.35)
    shift_mode_sigma: float = 0.06
    shift_weights: tuple[float, ...] = (0.5, 0.5)
    interpolation: str = "bicubic"

    def sizes(self) -> tuple[int, int, int]:
        d_train, d_val, d_test = DEFAULT_SIZES.get(self.name, (1024, 256, 256))
        return (
            self.n_train if self.n_train is not None else d_train,
            self.n_val if self.n_val is not None else d_val,
            self.n_test if self.n_test is not None else d_test,
        )

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DataSplit:
    """One split: images (N,C,H,W) float32 in [0,1] plus optional metadata."""

    images: torch.Tensor
    labels: Optional[torch.Tensor] = None
    eta: Optional[torch.Tensor] = None  # injected transformation parameters

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "DataSplit":
        return DataSplit(
            images=self.images[idx],
            labels=self.labels[idx] if self.labels is not None else None,
            eta=self.eta[idx] if self.eta is not None else None,
        )

    def fraction(self, frac: float) -> "DataSplit":
        n = max(1, int(round(len(self) * frac)))
        return self.subset(slice(0, n))


@dataclass
class Splits:
    train: DataSplit
    val: DataSplit
    test: DataSplit

    def __iter__(self):
        return iter((self.train, self.val, self.test))


# ---------------------------------------------------------------------------
# processed-split cache
# ---------------------------------------------------------------------------


def _cache_paths(spec: DatasetSpec, root: Path):
    base = root / "processed"
    stem = f"{spec.name}-{spec.digest()}"
    return base / f"{stem}.npz", base / f"{stem}.json"


def _save_cache(spec: DatasetSpec, root: Path, splits: Splits) -> None:
    npz_path, manifest_path = _cache_paths(spec, root)
    npz_path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for part, split in zip(("train", "val", "test"), splits):
        arrays[f"{part}_images"] = split.images.numpy()
        if split.labels is not None:
            arrays[f"{part}_labels"] = split.labels.numpy()
        if split.eta is not None:
            arrays[f"{part}_eta"] = split.eta.numpy()
    np.savez_compressed(npz_path, **arrays)
    manifest = {"spec": spec.as_dict(), "seed": spec.seed, "hash": spec.digest()}
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _load_cache(spec: DatasetSpec, root: Path) -> Optional[Splits]:
    npz_path, manifest_path = _cache_paths(spec, root)
    if not (npz_path.exists() and manifest_path.exists()):
        return None
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("hash") != spec.digest():
        return None
    data = np.load(npz_path)
    parts = []
    for part in ("train", "val", "test"):
        parts.append(
            DataSplit(
                images=torch.from_numpy(data[f"{part}_images"]),
                labels=(
                    torch.from_numpy(data[f"{part}_labels"])
                    if f"{part}_labels" in data
                    else None
                ),
                eta=(
                    torch.from_numpy(data[f"{part}_eta"])
                    if f"{part}_eta" in data
                    else None
                ),
            )
        )
    return Splits(*parts)


# ---------------------------------------------------------------------------
# raw digit corpora
# ---------------------------------------------------------------------------


def _raw_mnist(root: Path, download: bool):
    try:
        from torchvision.datasets import MNIST

        train = MNIST(root=str(root / "mnist"), train=True, download=download)
        test = MNIST(root=str(root / "mnist"), train=False, download=download)
    except Exception as exc:  # noqa: BLE001 - surface any fetch failure uniformly
        raise DatasetUnavailableError(
            f"MNIST is not available under {root / 'mnist'} and could not be "
            f"downloaded ({exc}). Place the torchvision MNIST files there."
        ) from exc
    train_x = train.data.numpy().astype(np.float32) / 255.0
    test_x = test.data.numpy().astype(np.float32) / 255.0
    return (
        torch.from_numpy(train_x).unsqueeze(1),
        train.targets.clone(),
        torch.from_numpy(test_x).unsqueeze(1),
        test.targets.clone(),
    )


def _raw_digits(upsample_to: int = 28):
    """Bundled scikit-learn handwritten digits, upsampled to MNIST geometry.

    Offline stand-in corpus: real handwritten digits (8x8), bicubically
    upsampled. Used by the ``digits_*`` constructions only; never presented
    as MNIST.
    """
    from sklearn.datasets import load_digits

    raw = load_digits()
    x = torch.from_numpy(raw.images.astype(np.float32) / 16.0).unsqueeze(1)
    x = torch.nn.functional.interpolate(
        x, size=(upsample_to, upsample_to), mode="bicubic", align_corners=False
    ).clamp(0, 1)
    return x, torch.from_numpy(raw.target.astype(np.int64))


def _rotate_batched(
    images: torch.Tensor, angles: torch.Tensor, interpolation: str, chunk: int = 2048
) -> torch.Tensor:
    spec = TransformSpec(
        schema=("rotation",), eta_max=(math.pi + 1e-9,), interpolation=interpolation
    )
    out = torch.empty_like(images)
    for start in range(0, images.shape[0], chunk):
        sl = slice(start, start + chunk)
        eta = angles[sl].unsqueeze(-1).to(torch.float32)
        out[sl] = affine_apply(images[sl], eta, spec).clamp(0, 1)
    return out


def _split_rotated(
    x_train,
    y_train,
    x_test,
    y_test,
    spec: DatasetSpec,
) -> Splits:
    n_train, n_val, n_test = spec.sizes()
    rng = np.random.default_rng(spec.seed)
    angles_train = rng.uniform(-spec.theta_max, spec.theta_max, len(x_train))
    angles_test = rng.uniform(-spec.theta_max, spec.theta_max, len(x_test))
    if spec.base_rotation > 0:
        angles_train = angles_train + rng.uniform(
            -spec.base_rotation, spec.base_rotation, len(x_train)
        )
        angles_test = angles_test + rng.uniform(
            -spec.base_rotation, spec.base_rotation, len(x_test)
        )
    angles_train_t = torch.from_numpy(angles_train)
    angles_test_t = torch.from_numpy(angles_test)
    rot_train = _rotate_batched(x_train, angles_train_t, spec.interpolation)
    rot_test = _rotate_batched(x_test, angles_test_t, spec.interpolation)

    val_lo = len(x_train) - n_val
    train = DataSplit(
        rot_train[:n_train], y_train[:n_train], angles_train_t[:n_train].float()
    )
    val = DataSplit(
        rot_train[val_lo:], y_train[val_lo:], angles_train_t[val_lo:].float()
    )
    test = DataSplit(rot_test[:n_test], y_test[:n_test], angles_test_t[:n_test].float())
    return Splits(train, val, test)


def load_mnist_affine(
    spec: DatasetSpec, root: Optional[str] = None, download: bool = True
) -> Splits:
    """MNIST with a fixed per-example rotation ~ U(-theta_max, theta_max).

    Train 50k / val 10k (the removed tail of the train set) / standard test.
    The rotation is keyed to (seed, index); this is *not* data augmentation.
    """
    base = data_root(root)
    x_train, y_train, x_test, y_test = _raw_mnist(base, download)
    return _split_rotated(x_train, y_train, x_test, y_test, spec)


def load_digits_affine(spec: DatasetSpec, root: Optional[str] = None) -> Splits:
    """Rotated-digits construction on the bundled offline digits corpus."""
    x, y = _raw_digits()
    n_train, n_val, n_test = spec.sizes()
    cut = len(x) - n_test
    return _split_rotated(x[:cut], y[:cut], x[cut:], y[cut:], spec)


def _colorize(
    x: torch.Tensor, y: torch.Tensor, spec: DatasetSpec, offset: int
) -> DataSplit:
    rgb = torch.cat([x, torch.zeros_like(x), torch.zeros_like(x)], dim=1)
    rng = np.random.default_rng((spec.seed, offset))
    hue = rng.uniform(0.0, spec.hue_range, len(x))
    sat = np.log(rng.uniform(spec.sat_range[0], spec.sat_range[1], len(x)))
    eta = torch.from_numpy(np.stack([hue, sat, np.zeros_like(hue)], axis=1)).float()
    out = torch.empty_like(rgb)
    for start in range(0, len(x), 2048):
        sl = slice(start, start + 2048)
        out[sl] = color_apply(rgb[sl], eta[sl], passthrough=False)
    return DataSplit(out, y, eta)


def _color_splits(x_train, y_train, x_test, y_test, spec: DatasetSpec) -> Splits:
    n_train, n_val, n_test = spec.sizes()
    val_lo = len(x_train) - n_val
    return Splits(
        _colorize(x_train[:n_train], y_train[:n_train], spec, 0),
        _colorize(x_train[val_lo:], y_train[val_lo:], spec, 1),
        _colorize(x_test[:n_test], y_test[:n_test], spec, 2),
    )


def load_mnist_color(
    spec: DatasetSpec, root: Optional[str] = None, download: bool = True
) -> Splits:
    """MNIST mapped to the red channel, then fixed per-example hue/saturation."""
    base = data_root(root)
    x_train, y_train, x_test, y_test = _raw_mnist(base, download)
    return _color_splits(x_train, y_train, x_test, y_test, spec)


def load_digits_color(spec: DatasetSpec, root: Optional[str] = None) -> Splits:
    x, y = _raw_digits()
    n_test = spec.sizes()[2]
    cut = len(x) - n_test
    return _color_splits(x[:cut], y[:cut], x[cut:], y[cut:], spec)


# ---------------------------------------------------------------------------
# dSprites
# ---------------------------------------------------------------------------

_DSPRITES_SCALES = np.linspace(0.5, 1.0, 6)
_DSPRITES_ORIENTS = np.linspace(0.0, 2 * np.pi, 40)
_DSPRITES_POS = np.linspace(0.0, 1.0, 32)


def _cell_masses_uniform(grid: np.ndarray, lo: float, hi: float) -> np.ndarray:
    edges = _cell_edges(grid)
    mass = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0, None)
    total = mass.sum()
    if total <= 0:
        # degenerate support: put everything on the nearest grid value
        mass = np.zeros_like(mass)
        mass[np.argmin(np.abs(grid - (lo + hi) / 2))] = 1.0
        return mass
    return mass / total


def _cell_edges(grid: np.ndarray) -> np.ndarray:
    mid = (grid[1:] + grid[:-1]) / 2
    return np.concatenate([[-np.inf], mid, [np.inf]])


def _cell_masses_truncnorm(
    grid: np.ndarray, mean: float, var: float, lo: float, hi: float
) -> np.ndarray:
    from scipy.stats import truncnorm

    sd = math.sqrt(var)
    dist = truncnorm((lo - mean) / sd, (hi - mean) / sd, loc=mean, scale=sd)
    edges = _cell_edges(grid)
    mass = np.diff(dist.cdf(edges))
    return mass / mass.sum()


def _cell_masses_delta(grid: np.ndarray, value: float) -> np.ndarray:
    mass = np.zeros(len(grid))
    mass[np.argmin(np.abs(grid - value))] = 1.0
    return mass


def dsprites_latent_masses() -> dict:
    """Per-shape categorical masses over the dSprites latent grid bins."""
    return {
        "square": {
            "scale": _cell_masses_truncnorm(_DSPRITES_SCALES, 0.75, 0.2, 0.55, 1.0),
            "orientation": _cell_masses_uniform(_DSPRITES_ORIENTS, 0.0, 2 * np.pi),
            "pos_x": _cell_masses_uniform(_DSPRITES_POS, 0.5, 0.95),
            "pos_y": _cell_masses_uniform(_DSPRITES_POS, 0.5, 0.95),
        },
        "ellipse": {
            "scale": _cell_masses_truncnorm(_DSPRITES_SCALES, 0.65, 0.15, 0.5, 0.85),
            "orientation": _cell_masses_uniform(_DSPRITES_ORIENTS, 0.0, np.pi / 2),
            "pos_x": _cell_masses_truncnorm(_DSPRITES_POS, 0.5, 0.25, 0.1, 0.9),
            "pos_y": _cell_masses_truncnorm(_DSPRITES_POS, 0.5, 0.15, 0.35, 0.65),
        },
        "heart": {
            "scale": _cell_masses_uniform(_DSPRITES_SCALES, 0.9, 1.0),
            "orientation": _cell_masses_delta(_DSPRITES_ORIENTS, 0.0),
            "pos_x": _cell_masses_uniform(_DSPRITES_POS, 0.1, 0.5),
            "pos_y": 0.5 * _cell_masses_uniform(_DSPRITES_POS, 0.1, 0.3)
            + 0.5 * _cell_masses_uniform(_DSPRITES_POS, 0.7, 0.9),
        },
    }


def sample_dsprites_latents(n: int, seed: int) -> dict:
    """Draw (shape, scale, orientation, x, y) bin indices, shapes equiprobable."""
    rng = np.random.default_rng((seed, 17))
    masses = dsprites_latent_masses()
    shapes = rng.integers(0, 3, size=n)
    names = ("square", "ellipse", "heart")
    out = {
        "shape": shapes,
        "scale": np.zeros(n, dtype=np.int64),
        "orientation": np.zeros(n, dtype=np.int64),
        "pos_x": np.zeros(n, dtype=np.int64),
        "pos_y": np.zeros(n, dtype=np.int64),
    }
    for s, name in enumerate(names):
        sel = shapes == s
        cnt = int(sel.sum())
        for key in ("scale", "orientation", "pos_x", "pos_y"):
            out[key][sel] = rng.choice(
                len(masses[name][key]), size=cnt, p=masses[name][key]
            )
    return out


def _heart_inside(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # classic implicit heart, upright, roughly unit-sized
    x = u / 1.2
    y = v / 1.2
    return (x**2 + y**2 - 1.0) ** 3 - (x**2) * (y**3) <= 0


def render_dsprites(latents: dict, size: int = 64, supersample: int = 4) -> torch.Tensor:
    """Rasterize sprites on the dSprites latent grid (white on black).

    Used when the original npz is not cached: same latent semantics, slightly
    different antialiasing. Positions map the sprite center across
    [size/4, 3*size/4] pixels; the canonical heart points down the y axis
    growth direction (rows increase downward).
    """
    n = len(latents["shape"])
    hi = size * supersample
    out = np.zeros((n, size, size), dtype=np.float32)
    scale = _DSPRITES_SCALES[latents["scale"]]
    orient = _DSPRITES_ORIENTS[latents["orientation"]]
    px = _DSPRITES_POS[latents["pos_x"]]
    py = _DSPRITES_POS[latents["pos_y"]]
    cx = (size / 4 + size / 2 * px) * supersample
    cy = (size / 4 + size / 2 * py) * supersample
    coords = np.arange(hi, dtype=np.float32) + 0.5
    chunk = max(1, int(64 * (64 / size) ** 2))
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        m = sl.stop - sl.start
        xx = coords[None, None, :] - cx[sl, None, None]
        yy = coords[None, :, None] - cy[sl, None, None]
        ct = np.cos(orient[sl])[:, None, None]
        st = np.sin(orient[sl])[:, None, None]
        u = (ct * xx + st * yy) / supersample
        v = (-st * xx + ct * yy) / supersample
        half = (8.0 * scale[sl])[:, None, None]
        shape = latents["shape"][sl]
        inside = np.zeros((m, hi, hi), dtype=bool)
        sq = shape == 0
        if sq.any():
            inside[sq] = (np.abs(u[sq]) <= half[sq]) & (np.abs(v[sq]) <= half[sq])
        el = shape == 1
        if el.any():
            inside[el] = (u[el] / (1.15 * half[el])) ** 2 + (
                v[el] / (0.7 * half[el])
            ) ** 2 <= 1.0
        he = shape == 2
        if he.any():
            inside[he] = _heart_inside(
                u[he] / (1.15 * half[he]), -v[he] / (1.15 * half[he])
            )
        img = inside.astype(np.float32)
        img = img.reshape(m, size, supersample, size, supersample).mean(axis=(2, 4))
        out[sl] = img
    return torch.from_numpy(out).unsqueeze(1)


def _dsprites_from_npz(path: Path, latents: dict) -> torch.Tensor:
    with np.load(path, allow_pickle=True) as data:
        imgs = data["imgs"]
    # index layout: color(1) x shape(3) x scale(6) x orient(40) x posx(32) x posy(32)
    strides = np.array([6 * 40 * 32 * 32, 40 * 32 * 32, 32 * 32, 32, 1])
    idx = (
        latents["shape"] * strides[0]
        + latents["scale"] * strides[1]
        + latents["orientation"] * strides[2]
        + latents["pos_x"] * strides[3]
        + latents["pos_y"] * strides[4]
    )
    x = imgs[idx].astype(np.float32)
    return torch.from_numpy(x).unsqueeze(1)


def load_dsprites(
    spec: DatasetSpec, root: Optional[str] = None, use_cache: bool = True
) -> Splits:
    """Sprites resampled from per-shape latent distributions.

    Draws (shape, scale, orientation, x, y) from the documented conditional
    distributions, mapped to the nearest latent grid bins; shapes are
    equiprobable. Uses the original npz from the cache when present, otherwise
    renders procedurally on the same latent grid.
    """
    base = data_root(root)
    if use_cache:
        cached = _load_cache(spec, base)
        if cached is not None:
            return cached
    n_train, n_val, n_test = spec.sizes()
    total = n_train + n_val + n_test
    latents = sample_dsprites_latents(total, spec.seed)
    npz = base / "dsprites" / DSPRITES_NPZ
    if npz.exists():
        images = _dsprites_from_npz(npz, latents)
    else:
        images = render_dsprites(latents, size=spec.image_size or 64)
    lab = torch.from_numpy(latents["shape"].astype(np.int64))
    lat = torch.from_numpy(
        np.stack(
            [
                _DSPRITES_SCALES[latents["scale"]],
                _DSPRITES_ORIENTS[latents["orientation"]],
                _DSPRITES_POS[latents["pos_x"]],
                _DSPRITES_POS[latents["pos_y"]],
            ],
            axis=1,
        ).astype(np.float32)
    )
    a, b = n_train, n_train + n_val
    splits = Splits(
        DataSplit(images[:a], lab[:a], lat[:a]),
        DataSplit(images[a:b], lab[a:b], lat[a:b]),
        DataSplit(images[b:], lab[b:], lat[b:]),
    )
    if use_cache:
        _save_cache(spec, base, splits)
    return splits


# ---------------------------------------------------------------------------
# GalaxyMNIST / PatchCamelyon
# ---------------------------------------------------------------------------


def load_galaxy_mnist(spec: DatasetSpec, root: Optional[str] = None) -> Splits:
    """GalaxyMNIST: 10k RGB 64x64; splits 7k train / 1k val / 2k test."""
    base = data_root(root) / "galaxy_mnist"
    npz = base / "galaxy_mnist.npz"
    if not npz.exists():
        raise DatasetUnavailableError(
            f"GalaxyMNIST not found: expected {npz} with arrays 'images' "
            "(10000,3,64,64) uint8 and 'labels' (10000,)."
        )
    with np.load(npz) as data:
        images = data["images"]
        labels = data["labels"]
    if images.shape[0] != 10_000:
        raise ValueError("galaxy_mnist.npz must contain exactly 10000 examples")
    x = torch.from_numpy(images.astype(np.float32) / 255.0)
    y = torch.from_numpy(labels.astype(np.int64))
    n_train, n_val, n_test = spec.sizes()
    return Splits(
        DataSplit(x[:n_train], y[:n_train]),
        DataSplit(x[n_train : n_train + n_val], y[n_train : n_train + n_val]),
        DataSplit(x[n_train + n_val :], y[n_train + n_val :]),
    )


def load_patch_camelyon(spec: DatasetSpec, root: Optional[str] = None) -> Splits:
    """Optional PatchCamelyon hook: resize 96->64 bilinear, official splits."""
    import h5py

    base = data_root(root) / "pcam"
    parts = []
    for part in ("train", "valid", "test"):
        path = base / f"camelyonpatch_level_2_split_{part}_x.h5"
        if not path.exists():
            raise DatasetUnavailableError(f"PatchCamelyon file missing: {path}")
        with h5py.File(path, "r") as f:
            x = np.asarray(f["x"])
        parts.append(resize_bilinear(x))
    return Splits(*(DataSplit(p) for p in parts))


def resize_bilinear(x: np.ndarray, size: int = 64) -> torch.Tensor:
    """(N,H,W,C) uint8 -> (N,C,size,size) float32 in [0,1], bilinear."""
    t = torch.from_numpy(x.astype(np.float32) / 255.0).permute(0, 3, 1, 2)
    return torch.nn.functional.interpolate(
        t, size=(size, size), mode="bilinear", align_corners=False
    )


# ---------------------------------------------------------------------------
# shift-group oracle
# ---------------------------------------------------------------------------


def shift_oracle_spec(eta_max: float = 0.8) -> TransformSpec:
    return TransformSpec(schema=("shift_x",), eta_max=(eta_max,))


def render_shift_blobs(
    delta: np.ndarray, size: int, blob_sigma: float
) -> torch.Tensor:
    """Analytic Gaussian blobs whose centers sit at normalized x-offset delta."""
    coords = np.linspace(-1.0, 1.0, size, dtype=np.float32)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    d = delta.astype(np.float32)[:, None, None]
    img = np.exp(-((xx[None] - d) ** 2 + yy[None] ** 2) / (2 * blob_sigma**2))
    return torch.from_numpy(img).unsqueeze(1)


def sample_shift_etas(spec: DatasetSpec, n: int, stream: int) -> np.ndarray:
    rng = np.random.default_rng((spec.seed, 23, stream))
    comp = rng.choice(len(spec.shift_modes), size=n, p=np.asarray(spec.shift_weights))
    means = np.asarray(spec.shift_modes)[comp]
    delta = rng.normal(means, spec.shift_mode_sigma)
    limit = 0.8 * 0.9
    return np.clip(delta, -limit, limit)


def make_shift_oracle(spec: DatasetSpec) -> Splits:
    """Single-orbit dataset: one blob, horizontally shifted.

    The content offset delta is drawn from a known (by default bimodal)
    distribution; the stored eta is the grid-frame parameter (eta = -delta)
    such that applying T_eta to the canonical centered blob reproduces the
    example. Ground truth is stored alongside for brute-force verification.
    """
    n_train, n_val, n_test = spec.sizes()
    parts = []
    for stream, n in enumerate((n_train, n_val, n_test)):
        delta = sample_shift_etas(spec, n, stream)
        images = render_shift_blobs(delta, spec.image_size or 32, spec.blob_sigma)
        eta = torch.from_numpy((-delta).astype(np.float32)).unsqueeze(1)
        parts.append(DataSplit(images, None, eta))
    return Splits(*parts)


class CentroidShiftOracle(torch.nn.Module):
    """Exactly equivariant inference function for shift-group blobs.

    Reads the intensity centroid off the image and returns the grid-frame
    shift parameters mapping the example back to the centered prototype.
    Duck-types the trained inference net's ``infer_eta``.
    """

    def __init__(self, spec: TransformSpec):
        super().__init__()
        self.spec = spec
        for dim in spec.schema:
            if dim not in ("shift_x", "shift_y"):
                raise ValueError("centroid oracle only supports shift dimensions")

    def infer_eta(self, x: torch.Tensor, sample: bool = False, generator=None):
        weight = x.sum(dim=1)
        b, h, w = weight.shape
        total = weight.sum(dim=(1, 2)).clamp_min(1e-12)
        xs = torch.linspace(-1, 1, w, dtype=x.dtype)
        ys = torch.linspace(-1, 1, h, dtype=x.dtype)
        cx = (weight * xs[None, None, :]).sum(dim=(1, 2)) / total
        cy = (weight * ys[None, :, None]).sum(dim=(1, 2)) / total
        cols = []
        for dim in self.spec.schema:
            cols.append(-cx if dim == "shift_x" else -cy)
        return torch.stack(cols, dim=1)


# ---------------------------------------------------------------------------
# dispatcher
# ---------------------------------------------------------------------------

_LOADERS = {
    "mnist_affine": load_mnist_affine,
    "mnist_color": load_mnist_color,
    "digits_affine": load_digits_affine,
    "digits_color": load_digits_color,
    "dsprites": load_dsprites,
    "galaxy_mnist": load_galaxy_mnist,
    "patch_camelyon": load_patch_camelyon,
    "shift_oracle": lambda spec, root=None: make_shift_oracle(spec),
}


def load_dataset(spec: DatasetSpec, root: Optional[str] = None) -> Splits:
    if spec.name not in _LOADERS:
        raise ValueError(
            f"unknown dataset {spec.name!r}; known: {sorted(_LOADERS)}"
        )
    return _LOADERS[spec.name](spec, root=root)
