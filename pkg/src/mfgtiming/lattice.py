"""Finite binomial path space for a common and an idiosyncratic noise.

Both noises are symmetric +/- random walks on a shared time grid
``{0, dt, ..., K*dt}``.  A path is encoded as a ``K``-bit integer whose
j-th bit is 1 when step ``j+1`` moves up, so each of the two marginal
path spaces has exactly ``2**K`` equally likely elements and the joint
space has ``4**K``.

Probabilities obtained by counting paths are dyadic rationals
``j / 2**K``; with ``K`` capped far below 53 these are exact in float64,
so counting-derived CDFs can be compared with ``==`` and no tolerance.
All objects here are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

HARD_STEP_CAP = 14


@dataclass(frozen=True)
class LatticeModel:
    """Geometry of the path lattice.

    Parameters
    ----------
    steps : int
        Number of increments K; the grid has K+1 dates.
    dt : float
        Step length; the horizon is ``T = steps * dt``.
    b0 : float
        Initial value of the common process.
    db : float
        Common-process increment magnitude per step.
    dw : float
        Idiosyncratic-process increment magnitude per step.
    w0 : float
        Initial value of the idiosyncratic process (fixed to 0).
    """

    steps: int
    dt: float
    b0: float
    db: float
    dw: float
    w0: float = 0.0

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    @cached_property
    def grid(self) -> np.ndarray:
        g = np.arange(self.steps + 1, dtype=float) * self.dt
        g.setflags(write=False)
        return g

    @property
    def num_paths(self) -> int:
        return 1 << self.steps

    @cached_property
    def path_ids(self) -> np.ndarray:
        ids = np.arange(self.num_paths, dtype=np.int64)
        ids.setflags(write=False)
        return ids

    def path_values(self, x0: float, dx: float) -> np.ndarray:
        """Values of every path at every grid date, shape (2**K, K+1)."""
        k = self.steps
        bits = (self.path_ids[:, None] >> np.arange(k)[None, :]) & 1
        walk = np.cumsum(2 * bits - 1, axis=1)
        vals = np.empty((self.num_paths, k + 1))
        vals[:, 0] = x0
        vals[:, 1:] = x0 + dx * walk
        vals.setflags(write=False)
        return vals

    @cached_property
    def b_values(self) -> np.ndarray:
        return self.path_values(self.b0, self.db)

    @cached_property
    def w_values(self) -> np.ndarray:
        return self.path_values(self.w0, self.dw)

    def time_index(self, t: float) -> int:
        """Grid index of a date; raises if the date is off the grid."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(t - k * self.dt) > 1e-9 * max(self.dt, 1.0):
            raise ValueError(f"time not on grid: {t!r}")
        return k

    def path_id_from_values(self, vals: Sequence[float]) -> int:
        """Invert ``path_values`` row -> path id (by increment signs)."""
        arr = np.asarray(vals, dtype=float)
        ups = np.diff(arr) > 0
        return int(np.sum((1 << np.arange(self.steps, dtype=np.int64))[ups]))


def build_lattice(steps: int, dt: float, b0: float, db: float, dw: float,
                  max_steps: int = HARD_STEP_CAP) -> LatticeModel:
    """Validate parameters and construct a :class:`LatticeModel`.

    ``max_steps`` bounds the 4**K joint enumeration; raise it explicitly
    if you really want a bigger lattice.
    """
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise ValueError("steps must be an integer >= 1")
    if dt <= 0 or db <= 0 or dw <= 0:
        raise ValueError("dt, db and dw must be positive")
    if steps > max_steps:
        raise ValueError(
            f"lattice too large: steps={steps} exceeds cap {max_steps} "
            f"(4**{steps} joint paths); pass max_steps to override")
    return LatticeModel(int(steps), float(dt), float(b0), float(db), float(dw))


# ---------------------------------------------------------------------------
# measures on the time grid
# ---------------------------------------------------------------------------


class GridMeasure:
    """Probability measure on the grid dates, stored as a mass vector."""

    __slots__ = ("times", "mass", "_cdf")

    def __init__(self, times: np.ndarray, mass: np.ndarray):
        times = np.asarray(times, dtype=float)
        mass = np.asarray(mass, dtype=float)
        if times.shape != mass.shape:
            raise ValueError("times and mass must have equal length")
        if np.any(mass < 0):
            raise ValueError("mass must be nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mass must sum to 1, got {total!r}")
        cdf = np.cumsum(mass)
        times.setflags(write=False)
        mass.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "_cdf", cdf)

    def __setattr__(self, name, value):  # immutable
        raise AttributeError("GridMeasure is immutable")

    @property
    def cdf(self) -> np.ndarray:
        return self._cdf

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 1.0

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k >= len(self.times) or abs(t - self.times[k]) > 1e-9 * max(self.dt, 1.0):
            raise ValueError(f"time not on grid: {t!r}")
        return k

    def mass_before(self, t: float) -> float:
        """Mass of [0, t): everything strictly before ``t``."""
        k = self.index_of(t)
        return float(self._cdf[k - 1]) if k > 0 else 0.0

    def mass_upto(self, t: float) -> float:
        """Mass of [0, t], the closed-interval read."""
        return float(self._cdf[self.index_of(t)])

    def __eq__(self, other) -> bool:
        return (isinstance(other, GridMeasure)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.mass, other.mass))

    def __repr__(self) -> str:
        nz = {float(t): float(m) for t, m in zip(self.times, self.mass) if m > 0}
        return f"GridMeasure({nz})"


def point_mass(lat: LatticeModel, k: int) -> GridMeasure:
    """Dirac measure at grid index ``k``."""
    mass = np.zeros(lat.steps + 1)
    mass[k] = 1.0
    return GridMeasure(lat.grid, mass)


def empirical_measure(times: Iterable[float], lat: LatticeModel) -> GridMeasure:
    """Empirical distribution of a sequence of grid dates."""
    times = list(times)
    if not times:
        raise ValueError("empirical_measure needs at least one time")
    mass = np.zeros(lat.steps + 1)
    for t in times:
        mass[lat.time_index(t)] += 1.0
    return GridMeasure(lat.grid, mass / len(times))


def empirical_measure_from_steps(steps: np.ndarray, lat: LatticeModel) -> GridMeasure:
    """Same as :func:`empirical_measure` but from integer grid indices."""
    steps = np.asarray(steps)
    if steps.size == 0:
        raise ValueError("empirical_measure needs at least one time")
    mass = np.bincount(steps.ravel(), minlength=lat.steps + 1).astype(float)
    return GridMeasure(lat.grid, mass / steps.size)


def cdf_uniform_distance(m: GridMeasure, m0: GridMeasure) -> float:
    """Kolmogorov distance: sup over grid dates of |CDF difference|."""
    if not np.array_equal(m.times, m0.times):
        raise ValueError("grid mismatch")
    return float(np.max(np.abs(m.cdf - m0.cdf)))


# ---------------------------------------------------------------------------
# adapted random measures
# ---------------------------------------------------------------------------


class AdaptedMeasure:
    """Per-common-path CDF over grid dates, adapted to the common history.

    ``cdf[b, k]`` is the probability that the population has stopped by
    date ``t_k`` on common path ``b``.  Adaptedness means the column-k
    entries agree across paths sharing the same k-step prefix; this is
    checked exactly (bit for bit) at construction.
    """

    __slots__ = ("lat", "cdf", "_rows")

    def __init__(self, lat: LatticeModel, cdf: np.ndarray, _validated: bool = False):
        cdf = np.asarray(cdf, dtype=float)
        if cdf.shape != (lat.num_paths, lat.steps + 1):
            raise ValueError("cdf must have shape (2**K, K+1)")
        if not _validated:
            if np.any(cdf < 0.0) or np.any(cdf > 1.0):
                raise ValueError("cdf values must lie in [0, 1]")
            if np.any(np.diff(cdf, axis=1) < 0):
                raise ValueError("cdf must be nondecreasing along each path")
            if np.any(cdf[:, -1] != 1.0):
                raise ValueError("cdf must equal 1 at the horizon")
            assert_adapted(lat, cdf)
        cdf.setflags(write=False)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "cdf", cdf)
        object.__setattr__(self, "_rows", {})

    def __setattr__(self, name, value):
        raise AttributeError("AdaptedMeasure is immutable")

    def grid_measure(self, b_id: int) -> GridMeasure:
        """Distribution over stop dates along common path ``b_id``."""
        b_id = int(b_id)
        row = self._rows.get(b_id)
        if row is None:
            c = self.cdf[b_id]
            mass = np.empty_like(c)
            mass[0] = c[0]
            mass[1:] = np.diff(c)
            row = GridMeasure(self.lat.grid, mass)
            self._rows[b_id] = row  # idempotent write, safe under races
        return row

    def __eq__(self, other) -> bool:
        return (isinstance(other, AdaptedMeasure)
                and self.lat == other.lat
                and np.array_equal(self.cdf, other.cdf))


def assert_adapted(lat: LatticeModel, cdf: np.ndarray) -> None:
    """Check cdf[:, k] is a function of the k-bit path prefix, exactly."""
    ids = lat.path_ids
    for k in range(lat.steps + 1):
        mask = (1 << k) - 1
        rep = ids & mask
        if not np.array_equal(cdf[:, k], cdf[rep, k]):
            raise ValueError(f"cdf not adapted at step {k}")


def stochastic_leq(mu: AdaptedMeasure, mu2: AdaptedMeasure) -> bool:
    """True iff ``mu <= mu2`` in the order where later stopping is larger.

    Equivalently: the CDF of ``mu2`` lies below the CDF of ``mu`` at
    every (path, date).  Exact comparison, no tolerance.
    """
    if mu.lat != mu2.lat:
        raise ValueError("lattice mismatch")
    return bool(np.all(mu2.cdf <= mu.cdf))
