"""Normalized probability tables over finite discrete domains.

A DensityTable is the exact, enumerable representation of a distribution that
the rest of the library composes, trains against, and measures errors in.
Tables are immutable value objects: operations return new tables and always
renormalize, so a table in the wild is a probability vector by construction.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

_NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class DensityTable:
    """A normalized distribution over a finite grid of states.

    Fields
    ------
    domain_shape : tuple of dimension sizes
    mass         : float64 array of that shape, nonnegative, summing to 1
    support_mask : boolean array, true exactly where mass > 0
    """

    domain_shape: tuple[int, ...]
    mass: np.ndarray
    support_mask: np.ndarray

    def __post_init__(self) -> None:
        mass = np.asarray(self.mass, dtype=np.float64)
        if tuple(mass.shape) != tuple(self.domain_shape):
            raise ShapeMismatch(
                f"mass shape {mass.shape} does not match domain_shape {self.domain_shape}"
            )
        if np.any(mass < 0.0):
            raise ValueError("mass values must be nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > _NORMALIZATION_TOL:
            raise ValueError(f"mass must sum to 1 within {_NORMALIZATION_TOL}, got {total!r}")
        object.__setattr__(self, "domain_shape", tuple(int(d) for d in self.domain_shape))
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "support_mask", mass > 0.0)

    @classmethod
    def from_unnormalized(cls, raw: np.ndarray) -> "DensityTable":
        """Build a table from nonnegative unnormalized mass; renormalizes exactly once."""
        raw = np.asarray(raw, dtype=np.float64)
        total = raw.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise ValueError(f"unnormalized mass must have a positive finite sum, got {total!r}")
        return cls(tuple(raw.shape), raw / total, raw > 0.0)

    @property
    def n_states(self) -> int:
        return int(self.mass.size)

    def flat(self) -> np.ndarray:
        """Row-major view of the mass array."""
        return self.mass.reshape(-1)

    def allclose(self, other: "DensityTable", atol: float = 1e-12) -> bool:
        return self.domain_shape == other.domain_shape and bool(
            np.allclose(self.mass, other.mass, rtol=0.0, atol=atol)
        )


def l1_distance(p: DensityTable, q: DensityTable) -> float:
    """Total absolute difference sum |p(x) - q(x)|; lies in [0, 2] for distributions."""
    if p.domain_shape != q.domain_shape:
        raise ShapeMismatch(f"{p.domain_shape} vs {q.domain_shape}")
    return float(np.abs(p.mass - q.mass).sum())


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_csv(table: DensityTable, path: str) -> None:
    """Write one row per state: index columns i0..ik then the mass."""
    ndim = len(table.domain_shape)
    header = [f"i{d}" for d in range(ndim)] + ["mass"]
    rows = []
    for idx in np.ndindex(*table.domain_shape):
        rows.append(list(idx) + [repr(float(table.mass[idx]))])
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def load_csv(path: str) -> DensityTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ndim = len(header) - 1
        if ndim < 1 or header[-1] != "mass":
            raise ValueError(f"not a density table CSV: header {header}")
        entries = [(tuple(int(v) for v in row[:ndim]), float(row[ndim])) for row in reader]
    shape = tuple(max(idx[d] for idx, _ in entries) + 1 for d in range(ndim))
    mass = np.zeros(shape, dtype=np.float64)
    for idx, value in entries:
        mass[idx] = value
    return DensityTable(shape, mass, mass > 0.0)


def save_binary(table: DensityTable, path: str) -> None:
    """Row-major float64 dump plus a JSON sidecar with the domain shape."""
    _atomic_write_bytes(path, np.ascontiguousarray(table.mass, dtype=np.float64).tobytes())
    sidecar = json.dumps({"domain_shape": list(table.domain_shape), "dtype": "float64"}) + "\n"
    _atomic_write_bytes(path + ".json", sidecar.encode())


def load_binary(path: str) -> DensityTable:
    with open(path + ".json") as fh:
        meta = json.load(fh)
    shape = tuple(int(d) for d in meta["domain_shape"])
    mass = np.fromfile(path, dtype=np.float64).reshape(shape)
    return DensityTable(shape, mass, mass > 0.0)
