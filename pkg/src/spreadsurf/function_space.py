"""Discretized weighted Sobolev space of forward-spread surfaces.

A surface is a function h(xi, eta) on [0, xi_max] x [0, 1], sampled on a
uniform tensor grid. The norm is

    ||h||^2 = h(0,0)^2 + int |d_xi h(xi,0)|^2 e^{b xi} dxi
            + int |d_eta h(0,eta)|^2 deta
            + int int |d_xi d_eta h|^2 deta e^{b xi} dxi

evaluated with central differences in the interior, one-sided differences at
the boundary and trapezoid quadrature. All array kernels act on the last two
axes (xi, eta) so they broadcast over leading batch axes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DataError, RangeError, UsageError

# largest argument accepted by exp_surface before declaring overflow
EXP_LIMIT = 700.0


@dataclass(frozen=True)
class SurfaceGrid:
    """Uniform grid xi_i = i*d_xi, eta_k = k/n_eta."""

    xi_max: float
    n_xi: int
    n_eta: int
    beta: float = 0.5
    beta_prime: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.xi_max) and self.xi_max > 0):
            raise UsageError(f"xi_max must be positive, got {self.xi_max}")
        if int(self.n_xi) != self.n_xi or self.n_xi < 2:
            raise UsageError(f"n_xi must be an integer >= 2, got {self.n_xi}")
        if int(self.n_eta) != self.n_eta or self.n_eta < 1:
            raise UsageError(f"n_eta must be an integer >= 1, got {self.n_eta}")
        if not (0 < self.beta < self.beta_prime):
            raise UsageError(
                f"need 0 < beta < beta_prime, got {self.beta}, {self.beta_prime}"
            )
        object.__setattr__(self, "xi_max", float(self.xi_max))
        object.__setattr__(self, "n_xi", int(self.n_xi))
        object.__setattr__(self, "n_eta", int(self.n_eta))

    @property
    def d_xi(self) -> float:
        return self.xi_max / self.n_xi

    @property
    def d_eta(self) -> float:
        return 1.0 / self.n_eta

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_xi + 1, self.n_eta + 1)

    @cached_property
    def xi(self) -> np.ndarray:
        return np.arange(self.n_xi + 1) * self.d_xi

    @cached_property
    def eta(self) -> np.ndarray:
        return np.arange(self.n_eta + 1) / self.n_eta

    def xi_index(self, value: float) -> int:
        """Lattice index of a maturity offset; raises if off-lattice."""
        k = value / self.d_xi
        ki = int(round(k))
        if value < 0 or abs(k - ki) > 1e-9 * max(1.0, abs(k)):
            raise UsageError(f"{value} is not a non-negative multiple of d_xi={self.d_xi}")
        if ki > self.n_xi:
            raise UsageError(f"{value} lies beyond xi_max={self.xi_max}")
        return ki

    def eta_index(self, value: float) -> int:
        k = value * self.n_eta
        ki = int(round(k))
        if abs(k - ki) > 1e-9 or not 0 <= ki <= self.n_eta:
            raise UsageError(f"eta={value} is not on the eta grid (n_eta={self.n_eta})")
        return ki

    def weights_xi(self, exponent: float) -> np.ndarray:
        w = np.full(self.n_xi + 1, self.d_xi)
        w[0] = w[-1] = 0.5 * self.d_xi
        return w * np.exp(exponent * self.xi)

    @cached_property
    def weights_eta(self) -> np.ndarray:
        w = np.full(self.n_eta + 1, self.d_eta)
        w[0] = w[-1] = 0.5 * self.d_eta
        return w

    def refined(self, factor: int = 2) -> "SurfaceGrid":
        return SurfaceGrid(self.xi_max, self.n_xi * factor, self.n_eta, self.beta, self.beta_prime)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- array kernels ---------------------------------------------------------


def d_xi(values: np.ndarray, dxi: float) -> np.ndarray:
    return np.gradient(values, dxi, axis=-2)


def d_eta(values: np.ndarray, deta: float) -> np.ndarray:
    if values.shape[-1] == 1:
        return np.zeros_like(values)
    return np.gradient(values, deta, axis=-1)


def norm_terms(values: np.ndarray, grid: SurfaceGrid, exponent: float):
    """The four squared components of the norm, batched over leading axes."""
    values = np.broadcast_to(values, values.shape[:-2] + grid.shape)
    wx = grid.weights_xi(exponent)
    we = grid.weights_eta
    dx = d_xi(values, grid.d_xi)
    point = values[..., 0, 0] ** 2
    xi_term = (dx[..., :, 0] ** 2) @ wx
    eta_term = (d_eta(values[..., 0, :], grid.d_eta) ** 2) @ we
    mixed = d_eta(dx, grid.d_eta) ** 2
    mixed_term = (mixed @ we) @ wx
    return point, xi_term, eta_term, mixed_term


def norm_values(values: np.ndarray, grid: SurfaceGrid, exponent: float | None = None):
    exponent = grid.beta if exponent is None else exponent
    return np.sqrt(sum(norm_terms(values, grid, exponent)))


def cumtrapz_xi(values: np.ndarray, dxi: float) -> np.ndarray:
    """Cumulative trapezoid along the xi axis, zero at xi = 0."""
    out = np.zeros_like(values, dtype=float)
    inc = 0.5 * dxi * (values[..., 1:, :] + values[..., :-1, :])
    np.cumsum(inc, axis=-2, out=out[..., 1:, :])
    return out


def shift_values(values: np.ndarray, k: int) -> np.ndarray:
    """S_{k d_xi}: values(xi + k d_xi) with flat extrapolation past xi_max."""
    if k == 0:
        return values.copy()
    n = values.shape[-2]
    idx = np.minimum(np.arange(n) + k, n - 1)
    return values[..., idx, :]


# -- surfaces ---------------------------------------------------------------


@dataclass(frozen=True)
class NormBreakdown:
    point_term: float
    xi_term: float
    eta_term: float
    mixed_term: float

    @property
    def total(self) -> float:
        return float(np.sqrt(self.point_term + self.xi_term + self.eta_term + self.mixed_term))


@dataclass(frozen=True, eq=False)
class HbSurface:
    """A surface sampled on a grid; values[i, k] = h(xi_i, eta_k)."""

    grid: SurfaceGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise DataError(f"values shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("surface contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: SurfaceGrid, fn) -> "HbSurface":
        """Sample fn(xi, eta) with xi a column and eta a row vector."""
        v = np.broadcast_to(fn(grid.xi[:, None], grid.eta[None, :]), grid.shape)
        return cls(grid, v)

    @classmethod
    def constant(cls, grid: SurfaceGrid, c: float) -> "HbSurface":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def zeros(cls, grid: SurfaceGrid) -> "HbSurface":
        return cls.constant(grid, 0.0)

    def norm(self, exponent: float | None = None) -> float:
        return hb_norm(self, exponent).total

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _coerce(self, other):
        if isinstance(other, HbSurface):
            if other.grid != self.grid:
                raise UsageError("surfaces live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return HbSurface(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return HbSurface(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return HbSurface(self.grid, self._coerce(other) - self.values)

    def __mul__(self, a):
        if isinstance(a, HbSurface):
            return multiply(self, a)
        return HbSurface(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def __neg__(self):
        return HbSurface(self.grid, -self.values)

    def __eq__(self, other):
        return (
            isinstance(other, HbSurface)
            and other.grid == self.grid
            and np.array_equal(other.values, self.values)
        )

    __hash__ = None


def hb_norm(h: HbSurface, exponent: float | None = None) -> NormBreakdown:
    """Discrete H_beta norm of h; exponent defaults to the grid's beta."""
    exponent = h.grid.beta if exponent is None else float(exponent)
    if not exponent > 0:
        raise UsageError(f"norm exponent must be positive, got {exponent}")
    if not np.all(np.isfinite(h.values)):
        raise DataError("surface contains non-finite values")
    terms = norm_terms(h.values, h.grid, exponent)
    return NormBreakdown(*(float(t) for t in terms))


def integral_op(h: HbSurface) -> HbSurface:
    """(I h)(xi, eta) = int_0^xi h(z, eta) dz by cumulative trapezoid."""
    return HbSurface(h.grid, cumtrapz_xi(h.values, h.grid.d_xi))


def shift(h: HbSurface, t: float) -> HbSurface:
    """Shift semigroup on the d_xi lattice with a flat long end."""
    if t < 0:
        raise UsageError(f"shift time must be non-negative, got {t}")
    k = t / h.grid.d_xi
    ki = int(round(k))
    if abs(k - ki) > 1e-9 * max(1.0, k):
        raise UsageError(f"shift time {t} is not a multiple of d_xi={h.grid.d_xi}")
    return HbSurface(h.grid, shift_values(h.values, ki))


def exp_values(values: np.ndarray) -> np.ndarray:
    if np.any(values > EXP_LIMIT):
        raise RangeError("exp overflow: surface value exceeds %g" % EXP_LIMIT)
    return np.exp(values)


def exp_surface(h: HbSurface) -> HbSurface:
    return HbSurface(h.grid, exp_values(h.values))


def multiply(h: HbSurface, g: HbSurface) -> HbSurface:
    if h.grid != g.grid:
        raise UsageError("surfaces live on different grids")
    return HbSurface(h.grid, h.values * g.values)


def in_decaying_subspace(h: HbSurface, tol: float) -> bool:
    """Truncated test for the closed subspace with h(xi,0) -> 0, d_eta h(xi,.) -> 0."""
    last = h.values[-1]
    slope = d_eta(last[None, :], h.grid.d_eta)[0]
    return bool(abs(last[0]) <= tol and np.max(np.abs(slope)) <= tol)


# -- random surfaces --------------------------------------------------------


def random_surface_params(rng: np.random.Generator, size=None, beta_prime: float = 1.0,
                          decaying: bool = False, n_terms: int = 3) -> np.ndarray:
    """Parameters of the random surface family, flattened per sample.

    Layout: a (n_terms), b (n_terms), c (n_terms x 3), offset (2, zero when
    decaying). Decay rates b exceed beta_prime/2 so every member has finite
    beta_prime norm.
    """
    lead = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    lo = 0.5 * beta_prime + 0.25
    a = np.empty(lead + (n_terms,))
    b = np.empty(lead + (n_terms,))
    c = np.empty(lead + (n_terms, 3))
    for t in range(n_terms):
        a[..., t] = rng.normal(size=lead)
        b[..., t] = rng.uniform(lo, lo + 2.5, size=lead)
        c[..., t, :] = rng.normal(size=lead + (3,))
    c0 = np.zeros(lead + (2,)) if decaying else rng.normal(size=lead + (2,))
    return np.concatenate([a, b, c.reshape(lead + (3 * n_terms,)), c0], axis=-1)


def surface_from_params(grid: SurfaceGrid, params: np.ndarray) -> np.ndarray:
    """sum_k a_k e^{-b_k xi} (c_k0 + c_k1 eta + c_k2 eta^2) + c0_0 + c0_1 eta."""
    params = np.asarray(params, dtype=float)
    n_terms = (params.shape[-1] - 2) // 5
    a = params[..., :n_terms, None, None]
    b = params[..., n_terms:2 * n_terms, None, None]
    c = params[..., 2 * n_terms:5 * n_terms].reshape(params.shape[:-1] + (n_terms, 3))
    c0 = params[..., 5 * n_terms:]
    xi = grid.xi[:, None]
    eta = grid.eta[None, :]
    poly = c[..., 0, None, None] + c[..., 1, None, None] * eta + c[..., 2, None, None] * eta**2
    out = np.sum(a * np.exp(-b * xi) * poly, axis=-3)
    return out + c0[..., 0, None, None] + c0[..., 1, None, None] * eta


def random_surface_values(grid: SurfaceGrid, rng: np.random.Generator, size=None,
                          scale: float = 1.0, decaying: bool = False, n_terms: int = 3):
    """Smooth random surfaces sum_k a_k e^{-b_k xi} p_k(eta) (+ offset)."""
    params = random_surface_params(rng, size, grid.beta_prime, decaying, n_terms)
    return scale * surface_from_params(grid, params)


def random_surface(grid: SurfaceGrid, rng: np.random.Generator, **kw) -> HbSurface:
    return HbSurface(grid, random_surface_values(grid, rng, None, **kw))


# -- empirical constants ----------------------------------------------------


@dataclass(frozen=True)
class GridConstants:
    """Empirical estimates of the embedding and operator constants.

    c1: ||h||_inf <= c1 ||h||_beta
    c2, c3: ||exp h||_beta <= c2 (1 + ||h||_beta) exp(c3 ||h||_beta)
    mult_norm: ||h g||_beta <= mult_norm ||h||_beta ||g||_beta
    integral_norm: ||I h||_beta <= integral_norm ||h||_beta' on decaying h
    """

    grid_fingerprint: str
    c1: float
    c2: float
    c3: float
    mult_norm: float
    integral_norm: float
    n_samples: int
    seed: int
    margin: float

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_constants(grid: SurfaceGrid, n_samples: int = 2000, seed: int = 20130625,
                        margin: float = 1.05, batch: int = 250) -> GridConstants:
    """Calibration sweep: maximal observed ratios, inflated by `margin`."""
    rng = np.random.default_rng(seed)
    c1 = mult = integ = 0.0
    exp_pairs = []
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        scales = rng.uniform(0.05, 1.0, size=m)[:, None, None]
        h = random_surface_values(grid, rng, m) * scales
        g = random_surface_values(grid, rng, m) * rng.uniform(0.05, 1.0, size=m)[:, None, None]
        d = random_surface_values(grid, rng, m, decaying=True)
        nh = norm_values(h, grid)
        ng = norm_values(g, grid)
        c1 = max(c1, float(np.max(np.max(np.abs(h), axis=(-2, -1)) / nh)))
        mult = max(mult, float(np.max(norm_values(h * g, grid) / (nh * ng))))
        integ = max(integ, float(np.max(
            norm_values(cumtrapz_xi(d, grid.d_xi), grid) / norm_values(d, grid, grid.beta_prime))))
        exp_pairs.append((nh, norm_values(exp_values(h), grid)))
        done += m
    c1 *= margin
    c3 = c1
    c2 = max(float(np.max(ne / ((1 + nh) * np.exp(c3 * nh)))) for nh, ne in exp_pairs) * margin
    return GridConstants(grid.fingerprint(), c1, c2, c3, mult * margin, integ * margin,
                         n_samples, seed, margin)


_CONSTANTS: dict[str, GridConstants] = {}


def cache_dir() -> Path | None:
    p = os.environ.get("SPREADSURF_CACHE")
    return Path(p) if p else None


def grid_constants(grid: SurfaceGrid, directory: Path | None = None, **kw) -> GridConstants:
    """Constants for `grid`, memoized in-process and optionally on disk."""
    key = grid.fingerprint()
    if key in _CONSTANTS:
        return _CONSTANTS[key]
    directory = directory if directory is not None else cache_dir()
    path = Path(directory) / f"constants-{key}.json" if directory else None
    if path is not None and path.exists():
        consts = GridConstants(**json.loads(path.read_text()))
    else:
        consts = calibrate_constants(grid, **kw)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(consts.to_dict(), indent=2, sort_keys=True))
    _CONSTANTS[key] = consts
    return consts


# -- serialization ----------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def surface_to_csv(h: HbSurface, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi\\eta"] + [_fmt(e) for e in h.grid.eta])
        for x, row in zip(h.grid.xi, h.values):
            w.writerow([_fmt(x)] + [_fmt(v) for v in row])


def surface_from_csv(path, beta: float = 0.5, beta_prime: float = 1.0) -> HbSurface:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise DataError(f"{path}: need a header and at least two xi rows")
    try:
        eta = np.array([float(v) for v in rows[0][1:]])
        body = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    xi = body[:, 0]
    grid = SurfaceGrid(float(xi[-1]), len(xi) - 1, len(eta) - 1, beta, beta_prime)
    if not (np.allclose(xi, grid.xi, rtol=0, atol=1e-12 * grid.xi_max)
            and np.allclose(eta, grid.eta, rtol=0, atol=1e-12)):
        raise DataError(f"{path}: grid coordinates are not uniform")
    return HbSurface(grid, body[:, 1:])


def surface_to_json(h: HbSurface) -> dict:
    return {"grid": h.grid.to_dict(), "values": h.values.tolist()}


def surface_from_json(obj: dict) -> HbSurface:
    try:
        grid = SurfaceGrid(**obj["grid"])
        return HbSurface(grid, np.asarray(obj["values"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed surface JSON: {exc}") from None
