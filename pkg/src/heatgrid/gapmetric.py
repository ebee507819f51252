"""Frequency-domain gap metrics over the identified plant family.

Amplitude-dependent step tests on one channel yield several local models.
Picking the controller-design model by eye is fragile, so this module scores
every pair of candidates with the nu-gap metric (Vinnicombe) evaluated on
their rationalized ladder forms, assembles the scores into a matrix, and
selects the member whose worst-case distance to the rest is smallest.

The pointwise kernel is the chordal distance between two frequency-response
values seen as points on the Riemann sphere.  The nu-gap is its supremum over
frequency, valid only when a winding-number condition on
``1 + conj(G_a) * G_b`` holds; when it fails the metric saturates at 1.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fractional import (
    DEFAULT_BAND,
    DEFAULT_N_CELLS,
    FoTransferFunction,
    RationalTf,
    rationalize,
)
from .fractional import log_grid as _log_grid

__all__ = [
    "GapMatrix",
    "chordal_distance",
    "log_grid",
    "nu_gap",
    "gap_matrix",
    "select_nominal",
]

# Evaluation grid defaults: comfortably inside the rationalization band so
# the ladder is faithful everywhere the max is searched.
DEFAULT_GRID_SPAN = (1e-3, 1e2)
DEFAULT_POINTS_PER_DECADE = 60

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GapMatrix:
    """Symmetric pairwise nu-gap table for a model family."""

    values: tuple
    member_labels: tuple

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError("values must form a square matrix")
        n = vals.shape[0]
        labels = tuple(str(x) for x in self.member_labels)
        if len(labels) != n:
            raise ValueError("member_labels length must match matrix size")
        if not np.allclose(vals, vals.T, rtol=0.0, atol=0.0):
            raise ValueError("gap matrix must be symmetric")
        if np.any(np.diag(vals) != 0.0):
            raise ValueError("gap matrix diagonal must be zero")
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise ValueError("gap entries must lie in [0, 1]")
        object.__setattr__(self, "values", tuple(map(tuple, vals)))
        object.__setattr__(self, "member_labels", labels)

    @property
    def size(self) -> int:
        return len(self.member_labels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def row_max(self) -> np.ndarray:
        """Worst-case distance from each member to any other."""
        return self.as_array().max(axis=1)


def chordal_distance(p: complex, q: complex) -> float:
    """Distance between two response values on the Riemann sphere.

    kappa = |p - q| / sqrt((1 + |p|^2) (1 + |q|^2)), in [0, 1].  Either
    argument may be an infinite sentinel for the point at infinity.
    """
    p = complex(p)
    q = complex(q)
    if cmath.isnan(p) or cmath.isnan(q):
        raise ValueError("chordal_distance requires non-NaN inputs")
    p_inf = cmath.isinf(p)
    q_inf = cmath.isinf(q)
    if p_inf and q_inf:
        return 0.0
    if p_inf or q_inf:
        finite = q if p_inf else p
        return 1.0 / math.sqrt(1.0 + abs(finite) ** 2)
    return abs(p - q) / math.sqrt((1.0 + abs(p) ** 2) * (1.0 + abs(q) ** 2))


def log_grid(
    lo: float = DEFAULT_GRID_SPAN[0],
    hi: float = DEFAULT_GRID_SPAN[1],
    points_per_decade: int = DEFAULT_POINTS_PER_DECADE,
) -> np.ndarray:
    """Default evaluation grid; thin wrapper fixing the gap-metric span."""
    return _log_grid(lo, hi, points_per_decade)


def _checked_grid(grid, band) -> np.ndarray:
    if grid is None:
        return log_grid()
    w = np.asarray(grid, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("grid must be a 1-D array with at least two points")
    if np.any(~np.isfinite(w)) or np.any(w <= 0.0) or np.any(np.diff(w) <= 0.0):
        raise ValueError("grid must be positive, finite and strictly increasing")
    if w[0] < band[0] or w[-1] > band[1]:
        raise ValueError(
            f"grid [{w[0]:g}, {w[-1]:g}] extends outside the "
            f"rationalization band [{band[0]:g}, {band[1]:g}]"
        )
    return w


def _kappa_curve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.sqrt((1.0 + np.abs(a) ** 2) * (1.0 + np.abs(b) ** 2))


def _nu_gap_rational(
    ra: RationalTf,
    rb: RationalTf,
    grid: np.ndarray,
    refine: bool,
) -> float:
    s = 1j * grid
    resp_a = ra.eval_at(s)
    resp_b = rb.eval_at(s)

    # Homotopy condition: 1 + conj(Ga) Gb must stay away from the origin and
    # accumulate no net winding along the grid, otherwise the pair is not
    # comparable and the metric saturates.
    f = 1.0 + np.conj(resp_a) * resp_b
    if np.any(np.abs(f) < 1e-12):
        return 1.0
    phase = np.unwrap(np.angle(f))
    winding = abs(phase[-1] - phase[0]) / (2.0 * math.pi)
    if winding >= 0.5:
        return 1.0

    kappa = _kappa_curve(resp_a, resp_b)
    i = int(np.argmax(kappa))
    grid_peak = float(kappa[i])
    if not refine:
        return grid_peak

    # Golden-section polish of the peak between the neighbouring grid points;
    # this removes the grid-placement jitter from the reported supremum.
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]

    def kappa_at(log_w: float) -> float:
        sw = np.array([1j * 10.0 ** log_w])
        return float(_kappa_curve(ra.eval_at(sw), rb.eval_at(sw))[0])

    a, b = math.log10(lo), math.log10(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = kappa_at(c), kappa_at(d)
    for _ in range(60):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = kappa_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = kappa_at(d)
    return max(grid_peak, kappa_at((a + b) / 2.0))


def nu_gap(
    g_a: FoTransferFunction,
    g_b: FoTransferFunction,
    grid=None,
    *,
    band=DEFAULT_BAND,
    n_cells: int = DEFAULT_N_CELLS,
    refine: bool = True,
) -> float:
    """nu-gap between two stable fractional plants via their ladder forms.

    The supremum of the chordal distance over ``grid`` (default: 60 points
    per decade across [1e-3, 1e2] rad/s), with a golden-section polish of
    the peak so the result is stable under grid refinement.  Returns 1.0
    when the winding-number condition fails.
    """
    w = _checked_grid(grid, band)
    ra = rationalize(g_a, band=band, n_cells=n_cells)
    rb = rationalize(g_b, band=band, n_cells=n_cells)
    return _nu_gap_rational(ra, rb, w, refine)


def _members_of(family) -> tuple[FoTransferFunction, ...]:
    members = getattr(family, "members", family)
    out = tuple(members)
    if not out:
        raise ValueError("family must contain at least one member")
    for m in out:
        if not isinstance(m, FoTransferFunction):
            raise TypeError("family members must be FoTransferFunction")
    return out


def gap_matrix(
    family,
    grid=None,
    *,
    labels: Sequence[str] | None = None,
    band=DEFAULT_BAND,
    n_cells: int = DEFAULT_N_CELLS,
) -> GapMatrix:
    """Pairwise nu-gap matrix of a family; symmetric, zero diagonal."""
    members = _members_of(family)
    w = _checked_grid(grid, band)
    rats = [rationalize(m, band=band, n_cells=n_cells) for m in members]
    n = len(members)
    vals = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = _nu_gap_rational(rats[i], rats[j], w, refine=True)
            vals[i, j] = vals[j, i] = d
    if labels is None:
        labels = tuple(f"member{i + 1}" for i in range(n))
    return GapMatrix(tuple(map(tuple, vals)), tuple(labels))


def select_nominal(family, gaps: GapMatrix) -> tuple[int, FoTransferFunction]:
    """Minimax pick: the member whose largest gap to any other is smallest.

    Ties resolve to the lowest index, so the choice is deterministic under
    re-runs and stable under relabeling up to the permuted index.
    """
    members = _members_of(family)
    if gaps.size != len(members):
        raise ValueError("gap matrix size does not match family size")
    idx = int(np.argmin(gaps.row_max()))
    return idx, members[idx]
