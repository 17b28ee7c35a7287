"""On-the-fly database for heterogeneous multiscale computing.

The macro model asks the manager for quantities of interest at points of
a parameter space. The manager reuses a cached result if one lies within
``delta_reuse``, interpolates between cached results when the policy
allows and the query is surrounded by neighbours, and otherwise asks for
a new micro simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class HmcError(ValueError):
    pass


@dataclass(frozen=True)
class Reuse:
    value: tuple


@dataclass(frozen=True)
class Interpolated:
    value: tuple


@dataclass(frozen=True)
class Launch:
    pass


@dataclass(frozen=True)
class HmcPolicy:
    delta_reuse: float = 0.0
    interpolation: str = "linear"  # "none" | "linear"
    max_neighbors: Optional[int] = None  # default 2 in 1-D, 2*dim otherwise

    def __post_init__(self):
        if self.delta_reuse < 0:
            raise HmcError("delta_reuse must be nonnegative")
        if self.interpolation not in ("none", "linear"):
            raise HmcError(f"unknown interpolation {self.interpolation!r}")
        if self.max_neighbors is not None and self.max_neighbors < 1:
            raise HmcError("max_neighbors must be >= 1")

    def neighbours(self, dim: int) -> int:
        if self.max_neighbors is not None:
            return self.max_neighbors
        return 2 if dim == 1 else 2 * dim


@dataclass(frozen=True)
class HmcDatabase:
    points: tuple = ()
    values: tuple = ()
    policy: HmcPolicy = field(default_factory=HmcPolicy)

    @property
    def dim(self) -> Optional[int]:
        return len(self.points[0]) if self.points else None

    def __len__(self):
        return len(self.points)


def _as_point(x) -> tuple:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise HmcError("points must be 1-D vectors")
    return tuple(float(v) for v in arr)


def _check_dim(db: HmcDatabase, point: tuple):
    if db.points and len(point) != db.dim:
        raise HmcError(f"query dimension {len(point)} does not match database dimension {db.dim}")


def hmc_insert(db: HmcDatabase, point, value, replace: bool = False) -> HmcDatabase:
    point = _as_point(point)
    value = _as_point(value)
    _check_dim(db, point)
    if point in db.points:
        if not replace:
            raise HmcError(f"point {point} already cached")
        i = db.points.index(point)
        values = db.values[:i] + (value,) + db.values[i + 1 :]
        return HmcDatabase(db.points, values, db.policy)
    return HmcDatabase(db.points + (point,), db.values + (value,), db.policy)


def _distances(db: HmcDatabase, q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(db.points) - q, axis=1)


def hmc_decide(db: HmcDatabase, query):
    """Reuse, Interpolated or Launch for ``query`` under ``db.policy``."""
    query = _as_point(query)
    _check_dim(db, query)
    if not db.points:
        return Launch()
    q = np.asarray(query)
    d = _distances(db, q)
    nearest = int(np.argmin(d))  # first of equally near entries
    if d[nearest] <= db.policy.delta_reuse:
        return Reuse(db.values[nearest])
    if db.policy.interpolation == "none":
        return Launch()

    k = min(db.policy.neighbours(len(query)), len(db.points))
    idx = np.argsort(d, kind="stable")[:k]
    pts = np.asarray(db.points)[idx]
    vals = np.asarray(db.values)[idx]
    if len(query) == 1:
        x = pts[:, 0]
        left = np.where(x < q[0])[0]
        right = np.where(x > q[0])[0]
        if not len(left) or not len(right):
            return Launch()
        i = left[np.argmax(x[left])]
        j = right[np.argmin(x[right])]
        w = (q[0] - x[i]) / (x[j] - x[i])
        return Interpolated(tuple(float(v) for v in (1 - w) * vals[i] + w * vals[j]))
    if np.all(pts.min(axis=0) <= q) and np.all(q <= pts.max(axis=0)):
        w = 1.0 / d[idx] ** 2
        est = (w[:, None] * vals).sum(axis=0) / w.sum()
        return Interpolated(tuple(float(v) for v in est))
    return Launch()


def hmc_precompute_candidates(db: HmcDatabase, anticipated, budget: int) -> list[tuple]:
    """Up to ``budget`` anticipated points that would trigger a launch.

    Largest gaps first: ordered by distance to the nearest cached entry,
    descending (input order breaks ties).
    """
    if budget < 0:
        raise HmcError("budget must be nonnegative")
    if budget == 0:
        return []
    seen = set()
    cands = []
    for pos, p in enumerate(anticipated):
        p = _as_point(p)
        if p in seen:
            continue
        seen.add(p)
        if isinstance(hmc_decide(db, p), Launch):
            gap = float(_distances(db, np.asarray(p)).min()) if db.points else float("inf")
            cands.append((-gap, pos, p))
    cands.sort()
    return [p for _, _, p in cands[:budget]]
