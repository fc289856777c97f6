"""Training tasks: forward operators, observations, sampling vectors,
upper-level losses, PSNR, and image I/O.

A problem instance bundles one supervised task: a diagonal forward
operator (identity for denoising, a binary mask for inpainting), the
noisy observation y, the ground truth x*, and the ridge coefficient xi of
the optional strong-convexity term (xi/2)||x||^2 in the lower-level
objective. Images are channel-first float arrays in [0, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "OpKind",
    "ProblemInstance",
    "SamplingMode",
    "SamplingVector",
    "make_denoising",
    "make_inpainting",
    "sample_v",
    "upper_loss",
    "upper_grad",
    "psnr",
    "save_pgm",
    "load_pgm",
    "PgmError",
    "synth_images",
    "write_manifest",
    "read_manifest",
]


class OpKind(Enum):
    IDENTITY = "identity"
    MASK = "mask"


@dataclass
class ProblemInstance:
    op_kind: OpKind
    y: np.ndarray
    x_star: np.ndarray
    xi: float = 0.0
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float)
        self.x_star = np.asarray(self.x_star, dtype=float)
        if self.y.shape != self.x_star.shape:
            raise ValueError("observation and ground truth shapes differ")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")
        if (self.mask is not None) != (self.op_kind is OpKind.MASK):
            raise ValueError("mask must be present exactly for mask operators")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=float)
            if self.mask.shape != self.y.shape:
                raise ValueError("mask shape differs from image shape")

    # The forward operator is diagonal, so it is self-adjoint.
    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape != self.x_star.shape:
            raise ValueError(f"shape mismatch: {x.shape} vs {self.x_star.shape}")
        if self.op_kind is OpKind.IDENTITY:
            return x
        return self.mask * x

    adjoint = forward

    def fidelity(self, x: np.ndarray) -> float:
        r = self.forward(x) - self.y
        return float(np.vdot(r, r).real)

    def fidelity_grad(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.adjoint(self.forward(x) - self.y)

    def fidelity_hvp(self, v: np.ndarray) -> np.ndarray:
        return 2.0 * self.adjoint(self.forward(v))

    def fidelity_lipschitz(self) -> float:
        """||2 A^T A|| for the diagonal operators used here."""
        if self.op_kind is OpKind.IDENTITY:
            return 2.0
        return 2.0 * float(self.mask.max() ** 2) if self.mask.size else 0.0

    def fidelity_floor(self) -> float:
        """Curvature floor of the fidelity term: 2 for identity, 0 for
        masks (masked-out pixels contribute nothing)."""
        return 2.0 if self.op_kind is OpKind.IDENTITY else 0.0


class SamplingMode(Enum):
    BINOMIAL = "binomial"
    MINIBATCH_SCALED = "minibatch"


@dataclass(frozen=True)
class SamplingVector:
    """Non-negative per-task weights with E[weights_i] = 1."""

    weights: np.ndarray
    mode: SamplingMode


def sample_v(
    m: int, mode: SamplingMode, rng: np.random.Generator, b: int | None = None
) -> SamplingVector:
    """Draw a sampling vector of length m.

    Binomial mode draws independent v_i ~ Binomial(m, 1/m). Minibatch mode
    picks a uniform b-subset without replacement and weights it by m/b, so
    both modes are unbiased.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if mode is SamplingMode.BINOMIAL:
        w = rng.binomial(m, 1.0 / m, size=m).astype(float)
        return SamplingVector(weights=w, mode=mode)
    if b is None or not 1 <= b <= m:
        raise ValueError(f"minibatch size must satisfy 1 <= b <= m, got {b}")
    idx = rng.choice(m, size=b, replace=False)
    w = np.zeros(m)
    w[idx] = m / b
    return SamplingVector(weights=w, mode=mode)


def upper_loss(x: np.ndarray, inst: ProblemInstance) -> float:
    """g_i(x) = ||x - x*||^2."""
    d = x - inst.x_star
    return float(np.vdot(d, d).real)


def upper_grad(x: np.ndarray, inst: ProblemInstance) -> np.ndarray:
    if x.shape != inst.x_star.shape:
        raise ValueError("shape mismatch in upper_grad")
    return 2.0 * (x - inst.x_star)


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0, cap: float = 100.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped when MSE = 0."""
    if x.shape != ref.shape:
        raise ValueError("shape mismatch in psnr")
    if not peak > 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(peak * peak / mse))


def make_denoising(
    images: list[np.ndarray], sigma: float, rng: np.random.Generator
) -> list[ProblemInstance]:
    """One identity-operator instance per image, y = x* + N(0, sigma^2)."""
    if not images:
        raise ValueError("empty image list")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = []
    for img in images:
        noise = rng.normal(scale=sigma, size=img.shape) if sigma > 0 else 0.0
        out.append(ProblemInstance(op_kind=OpKind.IDENTITY, y=img + noise, x_star=img.copy()))
    return out


def make_inpainting(
    images: list[np.ndarray],
    keep_prob: float,
    sigma: float,
    xi: float,
    rng: np.random.Generator,
) -> list[ProblemInstance]:
    """Bernoulli(keep_prob) masks; noise is applied to the kept pixels only
    (masked-out pixels of y carry 0)."""
    if not images:
        raise ValueError("empty image list")
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must lie in (0, 1]")
    out = []
    for img in images:
        mask = (rng.random(size=img.shape) < keep_prob).astype(float)
        noise = rng.normal(scale=sigma, size=img.shape) if sigma > 0 else 0.0
        y = mask * (img + noise)
        out.append(
            ProblemInstance(op_kind=OpKind.MASK, y=y, x_star=img.copy(), xi=xi, mask=mask)
        )
    return out


# -- synthetic images and PGM I/O -------------------------------------------


def synth_images(
    n: int, size: int, rng: np.random.Generator, channels: int = 1
) -> list[np.ndarray]:
    """Seeded piecewise-smooth test images in [0, 1], shape (C, size, size).

    Each image is a random linear gradient plus a few constant rectangles
    and disks, a stand-in for natural-image crops at desk scale.
    """
    if n < 1 or size < 4:
        raise ValueError("need n >= 1 images of size >= 4")
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    images = []
    for _ in range(n):
        gdir = rng.normal(size=2)
        img = 0.4 + 0.25 * (gdir[0] * (yy - 0.5) + gdir[1] * (xx - 0.5))
        for _ in range(rng.integers(2, 6)):
            level = rng.uniform(0.05, 0.95)
            if rng.random() < 0.5:
                y0, x0 = rng.integers(0, size, 2)
                h, w = rng.integers(size // 8, size // 2, 2)
                img[y0 : y0 + h, x0 : x0 + w] = level
            else:
                cy, cx = rng.uniform(0, size, 2)
                r = rng.uniform(size / 10, size / 3)
                img[(yy * (size - 1) - cy) ** 2 + (xx * (size - 1) - cx) ** 2 < r * r] = level
        img = np.clip(img, 0.0, 1.0)
        images.append(np.repeat(img[None], channels, axis=0))
    return images


class PgmError(RuntimeError):
    pass


def save_pgm(path, img: np.ndarray, bits: int = 16) -> None:
    """Write a [0, 1]-scaled single-channel image as binary PGM (P5).

    16-bit samples are big-endian per the PGM convention.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    arr = np.asarray(img, dtype=float)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ValueError("PGM supports single-channel images")
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError("expected a 2-D image")
    maxval = (1 << bits) - 1
    quant = np.round(np.clip(arr, 0.0, 1.0) * maxval)
    dtype = ">u2" if bits == 16 else "u1"
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii"))
        f.write(quant.astype(dtype).tobytes())


def _read_token(f) -> bytes:
    # skip whitespace and '#' comments between header tokens
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise PgmError("unexpected end of PGM header")
        if c == b"#":
            while c and c != b"\n":
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) into a (1, H, W) float array scaled to [0, 1]."""
    with open(path, "rb") as f:
        if f.read(2) != b"P5":
            raise PgmError(f"not a binary PGM (P5) file: {path}")
        width = int(_read_token(f))
        height = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval not in (255, 65535):
            raise PgmError(f"unsupported PGM maxval {maxval}")
        dtype = ">u2" if maxval == 65535 else "u1"
        count = width * height
        data = f.read(count * (2 if maxval == 65535 else 1))
        arr = np.frombuffer(data, dtype=dtype)
        if arr.size != count:
            raise PgmError("truncated PGM payload")
    return (arr.reshape(height, width).astype(float) / maxval)[None]


def write_manifest(path, entries: list[tuple[str, str, int]]) -> None:
    """Dataset manifest: one instance per line, ``<role>,<path>,<seed>``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for role, p, seed in entries:
            w.writerow([role, p, seed])


def read_manifest(path) -> list[tuple[str, str, int]]:
    out = []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"malformed manifest row: {row}")
            out.append((row[0], row[1], int(row[2])))
    return out
