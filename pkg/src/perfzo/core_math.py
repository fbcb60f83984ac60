"""Vector primitives: seeded random streams, sphere sampling and projections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError

__all__ = [
    "SeededRng",
    "ParamSpace",
    "as_vector",
    "sample_unit_sphere",
    "project",
    "project_shrunk",
]

_MASK64 = (1 << 64) - 1


def as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    if v.size == 0:
        raise InvalidDimensionError("vector must have at least one entry")
    if dim is not None and v.size != dim:
        raise InvalidDimensionError(f"expected dimension {dim}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidParameterError(f"vector has non-finite entries: {v}")
    return v


class SeededRng:
    """A reproducible random stream addressed by ``(seed, stream path)``.

    Streams derived with :meth:`child` are statistically independent of their
    parent and of each other, so the draws of one consumer never depend on how
    many values another consumer pulled.
    """

    __slots__ = ("seed", "stream", "generator")

    def __init__(self, seed: int, stream: Union[int, Iterable[int]] = ()):
        self.seed = int(seed) & _MASK64
        if isinstance(stream, (int, np.integer)):
            stream = (int(stream),)
        self.stream = tuple(int(s) for s in stream)
        if any(s < 0 for s in self.stream):
            raise InvalidParameterError("stream ids must be non-negative")
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, *ids: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(ids))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


@dataclass(frozen=True, eq=False)
class ParamSpace:
    """A box or Euclidean ball in R^dim.

    ``extent`` is the per-axis half-width vector for a box and the radius for a
    ball.
    """

    kind: str
    center: np.ndarray
    extent: np.ndarray | float

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise InvalidParameterError(f"unknown space kind {self.kind!r}")
        center = as_vector(self.center)
        object.__setattr__(self, "center", center)
        if self.kind == "box":
            half = as_vector(self.extent, center.size)
            if np.any(half <= 0):
                raise InvalidParameterError("box half-widths must be positive")
            object.__setattr__(self, "extent", half)
        else:
            r = float(self.extent)
            if not np.isfinite(r) or r <= 0:
                raise InvalidParameterError("ball radius must be positive")
            object.__setattr__(self, "extent", r)

    @classmethod
    def box(cls, lower, upper) -> "ParamSpace":
        lo, hi = as_vector(lower), as_vector(upper)
        if lo.size != hi.size:
            raise InvalidDimensionError("box bounds differ in dimension")
        return cls("box", (lo + hi) / 2.0, (hi - lo) / 2.0)

    @classmethod
    def ball(cls, center, radius: float) -> "ParamSpace":
        return cls("ball", center, radius)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def diameter(self) -> float:
        if self.kind == "ball":
            return 2.0 * self.extent
        return 2.0 * float(np.linalg.norm(self.extent))

    @property
    def scale(self) -> float:
        """Radius of the largest ball about the center that fits inside."""
        if self.kind == "ball":
            return self.extent
        return float(np.min(self.extent))

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.extent

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.extent

    def shrunk(self, delta: float) -> "ParamSpace":
        if not 0.0 <= delta < 1.0:
            raise InvalidParameterError(f"delta must lie in [0, 1), got {delta}")
        return ParamSpace(self.kind, self.center, (1.0 - delta) * self.extent)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            return False
        if self.kind == "ball":
            return float(np.linalg.norm(x - self.center)) <= self.extent + tol
        return bool(np.all(np.abs(x - self.center) <= self.extent + tol))

    def to_dict(self) -> dict:
        ext = self.extent if self.kind == "ball" else self.extent.tolist()
        return {"kind": self.kind, "center": self.center.tolist(), "extent": ext}


def sample_unit_sphere(dim: int, rng: SeededRng) -> np.ndarray:
    if dim < 1:
        raise InvalidDimensionError(f"dimension must be positive, got {dim}")
    gen = rng.generator if isinstance(rng, SeededRng) else rng
    while True:
        g = gen.standard_normal(dim)
        norm = np.sqrt(g @ g)
        if norm > 0.0:
            return g / norm


def _project(kind, center, extent, x):
    if kind == "box":
        return np.clip(x, center - extent, center + extent)
    diff = x - center
    norm = np.sqrt(diff @ diff)
    if norm <= extent:
        return x.copy()
    return center + diff * (extent / norm)


def project(space: ParamSpace, x) -> np.ndarray:
    """Euclidean projection onto ``space``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != space.dim:
        raise InvalidDimensionError(f"expected dimension {space.dim}, got {x.size}")
    return _project(space.kind, space.center, space.extent, x)


def project_shrunk(space: ParamSpace, x, delta: float) -> np.ndarray:
    """Projection onto the copy of ``space`` scaled by ``1 - delta`` about its center."""
    if not 0.0 <= delta < 1.0:
        raise InvalidParameterError(f"delta must lie in [0, 1), got {delta}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != space.dim:
        raise InvalidDimensionError(f"expected dimension {space.dim}, got {x.size}")
    return _project(space.kind, space.center, (1.0 - delta) * space.extent, x)
