"""Data sets, synthetic linear-Gaussian generation, normalization and CSV I/O."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import StrEnum, auto
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from perinstance_dp.errors import DataFormatError, DimensionError, PointNotFoundError
from perinstance_dp.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


class Direction(StrEnum):
    ADD = auto()
    REMOVE = auto()


def _frozen_array(values, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=float, ndmin=ndim)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DataPoint:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = _frozen_array(self.x, 1)
        if x.ndim != 1:
            raise DimensionError(f"feature vector must be one-dimensional, got shape {x.shape}")
        if not (np.all(np.isfinite(x)) and math.isfinite(float(self.y))):
            raise ValueError("data point entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def same_as(self, other: "DataPoint") -> bool:
        return self.y == other.y and np.array_equal(self.x, other.x)


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of (x, y) rows; row order is meaningful."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _frozen_array(self.X, 2)
        y = _frozen_array(self.y, 1).reshape(-1)
        y.setflags(write=False)
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"feature matrix has {X.shape[0]} rows but response has {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("data set entries must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.zeros((0, d)), np.zeros(0))

    @classmethod
    def from_points(cls, points: Sequence[DataPoint], d: int | None = None) -> "Dataset":
        if not points:
            if d is None:
                raise DimensionError("dimension is required for an empty data set")
            return cls.empty(d)
        dims = {p.d for p in points}
        if len(dims) != 1:
            raise DimensionError(f"points have inconsistent dimensions {sorted(dims)}")
        return cls(np.vstack([p.x for p in points]), np.array([p.y for p in points]))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def points(self) -> list[DataPoint]:
        return list(self)

    def point(self, index: int) -> DataPoint:
        return DataPoint(self.X[index], self.y[index])

    def __iter__(self) -> Iterator[DataPoint]:
        for i in range(self.n):
            yield self.point(i)

    def __len__(self) -> int:
        return self.n

    def equals(self, other: "Dataset") -> bool:
        return (
                self.X.shape == other.X.shape
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True)
class SyntheticConfig:
    n: int
    d: int
    theta0: np.ndarray
    sigma: float
    seed: int = 0
    clip_response: bool = True

    def __post_init__(self):
        theta0 = _frozen_array(self.theta0, 1)
        if self.n < 0 or self.d < 1:
            raise ValueError(f"invalid synthetic shape n={self.n} d={self.d}")
        if theta0.shape != (self.d,):
            raise DimensionError(f"theta0 has length {theta0.shape[0]}, expected {self.d}")
        # sigma=0 is admitted as the noise-free limit
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.seed < 0:
            raise ValueError(f"seed must be unsigned, got {self.seed}")
        object.__setattr__(self, "theta0", theta0)


def default_theta0(d: int, seed: int) -> np.ndarray:
    """Unit-norm ground-truth coefficients drawn from `seed`."""
    direction = make_rng(derive_seed(seed, 7919)).standard_normal(d)
    return direction / np.linalg.norm(direction)


def generate_linear_gaussian(cfg: SyntheticConfig) -> tuple[Dataset, np.ndarray]:
    """Rows ~ N(0, I_d) scaled to the unit sphere; y = xᵀθ₀ + σξ, clipped to [-1, 1] unless disabled."""
    rng = make_rng(cfg.seed)
    X = _normalize_rows(rng.standard_normal((cfg.n, cfg.d)))
    y = X @ cfg.theta0 + cfg.sigma * rng.standard_normal(cfg.n)
    if cfg.clip_response:
        y = np.clip(y, -1.0, 1.0)

    logger.debug("Generated linear-gaussian data set n=%d d=%d seed=%d", cfg.n, cfg.d, cfg.seed)
    return Dataset(X, y), cfg.theta0


def resample_response(
        ds: Dataset,
        theta0: np.ndarray,
        sigma: float,
        seed: int,
        *,
        clip: bool = False
) -> Dataset:
    """Same design, fresh response y ~ N(X θ₀, σ² I)."""
    y = ds.X @ np.asarray(theta0, dtype=float) + sigma * make_rng(seed).standard_normal(ds.n)
    if clip:
        y = np.clip(y, -1.0, 1.0)
    return Dataset(ds.X, y)


def normalize_clip(ds: Dataset) -> Dataset:
    """Scale every nonzero row to unit norm and clamp y to [-1, 1]; zero rows stay zero."""
    return Dataset(_normalize_rows(ds.X), np.clip(ds.y, -1.0, 1.0))


def _normalize_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, X / safe, 0.0)


def adjacent(ds: Dataset, z: DataPoint, direction: Direction | str) -> Dataset:
    """[Z, z] for ADD (z appended); Z without the last bitwise match of z for REMOVE."""
    direction = Direction(direction)
    if z.d != ds.d:
        raise DimensionError(f"point has dimension {z.d}, data set has {ds.d}")

    if direction == Direction.ADD:
        return Dataset(np.vstack([ds.X, z.x[None, :]]), np.append(ds.y, z.y))

    matches = np.flatnonzero(np.all(ds.X == z.x, axis=1) & (ds.y == z.y))
    if matches.size == 0:
        raise PointNotFoundError("point to remove is not in the data set")
    keep = np.ones(ds.n, dtype=bool)
    keep[matches[-1]] = False
    return Dataset(ds.X[keep], ds.y[keep])


def load_csv(path: Path | str) -> Dataset:
    """Read a data set with header "x1,...,xd,y"; rows keep file order."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path} is empty; expected a header row", line_number=1)
        d = _parse_header(header)

        rows = []
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DimensionError(f"line {line_number}: expected {d + 1} fields, found {len(row)}")
            try:
                values = [float(field) for field in row]
            except ValueError as exc:
                raise DataFormatError(f"non-numeric field in {row}", line_number=line_number) from exc
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError(f"non-finite field in {row}", line_number=line_number)
            rows.append(values)

    if not rows:
        return Dataset.empty(d)
    data = np.array(rows)
    logger.info("Loaded %d rows of dimension %d from %s", data.shape[0], d, path)
    return Dataset(data[:, :d], data[:, d])


def _parse_header(header: list[str]) -> int:
    names = [h.strip() for h in header]
    d = len(names) - 1
    expected = [f"x{i}" for i in range(1, d + 1)] + ["y"]
    if d < 1 or names != expected:
        raise DataFormatError(f"header must be {','.join(expected) if d >= 1 else 'x1,...,xd,y'}", line_number=1)
    return d


def write_csv(ds: Dataset, path: Path | str) -> Path:
    """Write with 17 significant digits so load_csv reproduces the data bit for bit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(1, ds.d + 1)] + ["y"])
        for x_row, y_value in zip(ds.X, ds.y):
            writer.writerow([format(v, ".17g") for v in x_row] + [format(y_value, ".17g")])
    return path
