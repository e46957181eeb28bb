"""Coefficient registry and no-arbitrage drift assembly.

Every coefficient map (volatility factor, market jump, loss jump) is an
instance of a registered family. Families evaluate on batched surface arrays
of shape (..., n_xi+1, n_eta+1) and return arrays whose last axis is either
n_eta+1 or 1 (eta-independent families), so callers rely on broadcasting.

Loss-jump compensator. With lam(t, eta) = h(0, eta) - h(0, 1) and the short
end h(0, .) interpolated linearly in eta, the loss-size measure has the cell-
wise constant density rho = -d_eta h(0, L + x) on (0, 1 - L]. The telescoping
identity nu((0, y]) = lam(t, L) - lam(t, L + y) then holds exactly.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ModelError, UsageError
from .function_space import HbSurface, SurfaceGrid, cumtrapz_xi, exp_values

# relative tolerance below which negative loss densities are clamped to zero
NEGATIVE_DENSITY_TOL = 1e-8


# -- families ---------------------------------------------------------------


def _exp_profile_sq(a: float, beta_prime: float) -> float:
    """||e^{-a xi}||^2 in the beta_prime norm, or inf when not integrable."""
    if a == 0:
        return 1.0
    if 2 * a <= beta_prime:
        return float("inf")
    return 1.0 + a * a / (2 * a - beta_prime)


class Family:
    """Base class of registered coefficient maps."""

    name = "base"
    required: tuple[str, ...] = ()
    optional: dict = {}
    state_dependent = False
    eta_independent = True

    def __init__(self, **params):
        unknown = set(params) - set(self.required) - set(self.optional)
        if unknown:
            raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for family '{self.name}'")
        missing = [p for p in self.required if p not in params]
        if missing:
            raise ConfigError(f"missing parameter(s) {missing} for family '{self.name}'")
        merged = dict(self.optional)
        merged.update(params)
        for k, v in merged.items():
            if not isinstance(v, (int, float)) or not np.isfinite(v):
                raise ConfigError(f"parameter '{k}' of family '{self.name}' must be a finite number")
        self.params = {k: float(v) for k, v in merged.items()}
        self._check()

    def _check(self):
        pass

    @property
    def power(self) -> float:
        return self.params.get("power", 0.0)

    def __repr__(self):
        args = ", ".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.name}({args})"

    def to_dict(self) -> dict:
        return {"family": self.name, "params": dict(self.params)}

    def _profile(self, grid: SurfaceGrid) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, grid: SurfaceGrid, h: np.ndarray | None = None, x=None) -> np.ndarray:
        """Coefficient value; leading shape is broadcast(h.shape[:-2], shape(x))."""
        lead_h = () if h is None else h.shape[:-2]
        xs = None if x is None else np.asarray(x, dtype=float)
        lead = np.broadcast_shapes(lead_h, () if xs is None else xs.shape)
        out = self._values(grid, h)
        if xs is not None and self.power != 0:
            out = out * (np.abs(xs) ** self.power)[..., None, None]
        return np.broadcast_to(out, lead + out.shape[-2:])

    def _values(self, grid, h):
        return self._profile(grid)

    def declared_bound(self, grid: SurfaceGrid, x_max: float = 1.0) -> float:
        """Declared sup over h of the beta_prime norm (the (c^j) / M constants)."""
        raise NotImplementedError

    def declared_lipschitz(self, grid: SurfaceGrid, x_max: float = 1.0) -> float:
        return 0.0 if not self.state_dependent else self.declared_bound(grid, x_max)

    def vanishes_with_state(self) -> bool:
        return False


class Zero(Family):
    name = "zero"

    def _profile(self, grid):
        return np.zeros((grid.n_xi + 1, 1))

    def declared_bound(self, grid, x_max=1.0):
        return 0.0

    def vanishes_with_state(self):
        return True


class Constant(Family):
    """c, optionally scaled by |x|^power for jump marks."""

    name = "constant"
    required = ("c",)
    optional = {"power": 0.0}

    def _profile(self, grid):
        return np.full((grid.n_xi + 1, 1), self.params["c"])

    def declared_bound(self, grid, x_max=1.0):
        return abs(self.params["c"]) * x_max ** self.power


class ExpDecay(Family):
    """c e^{-a xi} |x|^power."""

    name = "exp_decay"
    required = ("c", "a")
    optional = {"power": 0.0}

    def _check(self):
        if self.params["a"] < 0:
            raise ConfigError("exp_decay: decay rate 'a' must be >= 0")

    def _profile(self, grid):
        return (self.params["c"] * np.exp(-self.params["a"] * grid.xi))[:, None]

    def declared_bound(self, grid, x_max=1.0):
        p = self.params
        return abs(p["c"]) * np.sqrt(_exp_profile_sq(p["a"], grid.beta_prime)) * x_max ** self.power


class EtaLinear(Family):
    """c e^{-a xi} (1 - kappa eta) |x|^power."""

    name = "eta_linear"
    required = ("c", "a", "kappa")
    optional = {"power": 0.0}
    eta_independent = False

    def _check(self):
        if self.params["a"] < 0:
            raise ConfigError("eta_linear: decay rate 'a' must be >= 0")

    def _profile(self, grid):
        p = self.params
        return p["c"] * np.exp(-p["a"] * grid.xi)[:, None] * (1 - p["kappa"] * grid.eta)[None, :]

    def declared_bound(self, grid, x_max=1.0):
        p = self.params
        sq = (1 + p["kappa"] ** 2) * _exp_profile_sq(p["a"], grid.beta_prime)
        return abs(p["c"]) * np.sqrt(sq) * x_max ** self.power


class ProportionalCapped(Family):
    """c e^{-a xi} min(h, cap) |x|^power; vanishes wherever h does.

    The map is not norm-bounded on all of H_beta, so its norm bound must be
    declared explicitly through `bound` and is audited by sampling.
    """

    name = "proportional_capped"
    required = ("c", "cap", "bound")
    optional = {"a": 0.0, "power": 0.0}
    state_dependent = True
    eta_independent = False

    def _check(self):
        if self.params["cap"] <= 0:
            raise ConfigError("proportional_capped: 'cap' must be positive")
        if self.params["a"] < 0:
            raise ConfigError("proportional_capped: decay rate 'a' must be >= 0")

    def _values(self, grid, h):
        if h is None:
            raise UsageError("proportional_capped needs the current surface")
        p = self.params
        prof = p["c"] * np.exp(-p["a"] * grid.xi)[:, None]
        return prof * np.minimum(h, p["cap"])

    def declared_bound(self, grid, x_max=1.0):
        return self.params["bound"] * x_max ** self.power

    def vanishes_with_state(self):
        return True


REGISTRY: dict[str, type[Family]] = {
    cls.name: cls for cls in (Zero, Constant, ExpDecay, EtaLinear, ProportionalCapped)
}


def make_family(name: str, params: dict | None = None) -> Family:
    if name not in REGISTRY:
        close = difflib.get_close_matches(name, REGISTRY, n=3, cutoff=0.4)
        hint = f"; did you mean {close}?" if close else ""
        raise ConfigError(f"unknown registry family '{name}' (known: {sorted(REGISTRY)}){hint}")
    return REGISTRY[name](**(params or {}))


# -- coefficient specs ------------------------------------------------------


@dataclass(frozen=True)
class FactorVolatility:
    """Truncated Q-Wiener volatility: sigma^j = sqrt(weight_j) * family_j(h)."""

    factors: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        factors = tuple(self.factors)
        weights = tuple(float(w) for w in self.weights) if self.weights else (1.0,) * len(factors)
        if len(weights) != len(factors):
            raise UsageError("need one weight per volatility factor")
        if any(not (w > 0 and np.isfinite(w)) for w in weights):
            raise UsageError("volatility weights must be positive and finite")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "weights", weights)

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def state_dependent(self) -> bool:
        return any(f.state_dependent for f in self.factors)

    def evaluate(self, grid, h=None) -> list[np.ndarray]:
        return [np.sqrt(w) * f.evaluate(grid, h) for f, w in zip(self.factors, self.weights)]

    def declared_bounds(self, grid) -> np.ndarray:
        return np.array([np.sqrt(w) * f.declared_bound(grid) for f, w in zip(self.factors, self.weights)])


@dataclass(frozen=True)
class MarketJumpSpec:
    """Discrete mark measure sum_x w_x delta_x with jump coefficient gamma."""

    marks: tuple = ()
    weights: tuple = ()
    gamma: Family = field(default_factory=Zero)

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if marks.shape != weights.shape:
            raise UsageError("need one weight per market mark")
        if np.any(~np.isfinite(marks)) or np.any(~(weights > 0)) or np.any(~np.isfinite(weights)):
            raise UsageError("mark weights must be positive and finite")
        object.__setattr__(self, "marks", tuple(marks.tolist()))
        object.__setattr__(self, "weights", tuple(weights.tolist()))

    @property
    def total_mass(self) -> float:
        return float(sum(self.weights))

    @property
    def active(self) -> bool:
        return bool(self.marks) and not isinstance(self.gamma, Zero)

    def x_max(self) -> float:
        return max((abs(m) for m in self.marks), default=0.0)


@dataclass(frozen=True)
class LossJumpSpec:
    delta: Family = field(default_factory=Zero)

    @property
    def active(self) -> bool:
        return not isinstance(self.delta, Zero)


@dataclass(frozen=True)
class LossState:
    """Loss level L_t and its left limit L_{t-}."""

    level: float = 0.0
    level_pre: float | None = None

    def __post_init__(self):
        pre = self.level if self.level_pre is None else self.level_pre
        object.__setattr__(self, "level_pre", float(pre))
        object.__setattr__(self, "level", float(self.level))
        if not (0.0 <= self.level_pre <= self.level <= 1.0):
            raise UsageError(f"invalid loss state: need 0 <= {pre} <= {self.level} <= 1")


# -- loss compensator --------------------------------------------------------


def _batch(h):
    h = np.asarray(h, dtype=float)
    return (h[None], True) if h.ndim == 2 else (h, False)


def loss_quadrature(grid: SurfaceGrid, short: np.ndarray, level: np.ndarray):
    """Nodes and weights for x -> int_{(0, eta-L]} g(x) nu(dx).

    short: (B, n_eta+1) short end h(0, .); level: (B,).
    Returns sizes (B, n_eta+2) and weights W (B, n_eta+1, n_eta+2) such that
    the integral at target eta_k is sum_n W[b, k, n] g(sizes[b, n]) using the
    signed cell density (trapezoid inside each cell).
    """
    B = short.shape[0]
    ne = grid.n_eta
    L = np.asarray(level, dtype=float).reshape(B)
    y = np.empty((B, ne + 2))
    y[:, 0] = L
    y[:, 1:] = np.maximum(grid.eta[None, :], L[:, None])
    width = np.diff(y, axis=1)  # (B, ne+1); cell 0 always has zero width
    rho = np.zeros((B, ne + 1))
    rho[:, 1:] = -np.diff(short, axis=1) / grid.d_eta
    c = 0.5 * rho * width
    C = np.zeros((B, ne + 2))
    C[:, : ne + 1] = c
    Cp = np.zeros((B, ne + 2))
    Cp[:, 1:] = c
    k = np.arange(ne + 1)[:, None]
    n = np.arange(ne + 2)[None, :]
    m1 = (n <= k).astype(float)
    m2 = ((n >= 1) & (n <= k + 1)).astype(float)
    W = C[:, None, :] * m1 + Cp[:, None, :] * m2
    return y - L[:, None], W


def _interp_short(grid, short, level):
    """Linear interpolation of each short end at its own loss level."""
    pos = np.clip(level * grid.n_eta, 0, grid.n_eta)
    i0 = np.minimum(np.floor(pos).astype(int), grid.n_eta - 1)
    frac = pos - i0
    rows = np.arange(short.shape[0])
    return short[rows, i0] * (1 - frac) + short[rows, i0 + 1] * frac


@dataclass(frozen=True)
class LossIntensity:
    """Compensator of L at one instant: rate and size distribution.

    `nodes` are loss sizes bounding the cells, `density` the (clamped) size
    density on each cell, so int density = total_rate.
    """

    level: float
    total_rate: float
    nodes: np.ndarray
    density: np.ndarray

    @property
    def jump_density(self) -> np.ndarray:
        return self.density

    def __iter__(self):
        return iter((self.total_rate, self.density))

    def integral(self) -> float:
        return float(np.sum(self.density * np.diff(self.nodes)))

    def cdf_nodes(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.density * np.diff(self.nodes))])

    def sample_size(self, u: float) -> float:
        return float(sample_sizes(self.nodes[None], self.density[None], np.array([u]))[0])


def intensity_arrays(grid: SurfaceGrid, short: np.ndarray, level: np.ndarray,
                     tol: float = NEGATIVE_DENSITY_TOL):
    """Batched loss intensity: (total_rate, nodes, clamped density).

    Raises ModelError if the short end increases in eta above the loss level
    by more than the clamp tolerance.
    """
    short = np.atleast_2d(short)
    L = np.atleast_1d(np.asarray(level, dtype=float))
    B = short.shape[0]
    ne = grid.n_eta
    y = np.empty((B, ne + 2))
    y[:, 0] = L
    y[:, 1:] = np.maximum(grid.eta[None, :], L[:, None])
    width = np.diff(y, axis=1)
    rho = np.zeros((B, ne + 1))
    rho[:, 1:] = -np.diff(short, axis=1) / grid.d_eta
    live = width > 0
    scale = np.maximum(np.max(np.abs(short), axis=1, keepdims=True), 1e-300)
    bad = live & (rho < -tol * scale)
    if np.any(bad):
        b, m = np.argwhere(bad)[0]
        raise ModelError(
            "spread curve not monotone in quality: loss density %.3g < 0 at eta in [%.4g, %.4g]"
            % (rho[b, m], y[b, m], y[b, m + 1]))
    rho = np.where(live, np.maximum(rho, 0.0), 0.0)
    total = np.sum(rho * width, axis=1)
    return total, y - L[:, None], rho


def sample_sizes(nodes: np.ndarray, density: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of the cellwise-constant size density, linear inside cells."""
    mass = density * np.diff(nodes, axis=1)
    cum = np.cumsum(mass, axis=1)
    total = cum[:, -1]
    target = u * total
    m = np.sum(cum < target[:, None], axis=1)
    m = np.minimum(m, mass.shape[1] - 1)
    rows = np.arange(len(u))
    before = cum[rows, m] - mass[rows, m]
    d = density[rows, m]
    lo = nodes[rows, m]
    hi = nodes[rows, m + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(d > 0, lo + (target - before) / d, hi)
    return np.clip(x, lo, hi)


def loss_intensity(h: HbSurface, loss: LossState, tol: float = NEGATIVE_DENSITY_TOL) -> LossIntensity:
    """Loss-jump compensator read off the short end of the spread curve."""
    total, nodes, rho = intensity_arrays(h.grid, h.values[0][None], np.array([loss.level]), tol)
    return LossIntensity(loss.level, float(total[0]), nodes[0], rho[0])


# -- drift assembly -----------------------------------------------------------


def _sigma_terms(grid, vol, h):
    sig = vol.evaluate(grid, h)
    return sig, [cumtrapz_xi(s, grid.d_xi) for s in sig]


def alpha_diffusion(grid, vol, h=None):
    """sum_j sigma^j * I sigma^j."""
    out = 0.0
    for s, S in zip(*_sigma_terms(grid, vol, h)):
        out = out + s * S
    return out


def alpha_market(grid, mjump, h=None, compensated=False):
    """-sum_x w_x gamma e^{-I gamma}; with compensated=True the bracket is (e^{-I gamma} - 1)."""
    out = 0.0
    if not mjump.active:
        return out
    for x, w in zip(mjump.marks, mjump.weights):
        g = mjump.gamma.evaluate(grid, h, x)
        e = exp_values(-cumtrapz_xi(g, grid.d_xi))
        out = out - w * g * (e - 1.0 if compensated else e)
    return out


def _eps_nodes(grid, ljump, h, sizes):
    """delta(h, x_n) and its xi-integral at every quadrature node."""
    hb = None if h is None else h[:, None]
    d = ljump.delta.evaluate(grid, hb, sizes)
    return d, cumtrapz_xi(d, grid.d_xi)


def loss_node_values(grid, ljump, sizes, h=None):
    """delta e^{-I delta} at the quadrature nodes, shape (B, N, n_xi+1, 1 or n_eta+1)."""
    d, D = _eps_nodes(grid, ljump, h if ljump.delta.state_dependent else None, sizes)
    return d * exp_values(-D)


def _contract(W, E):
    """sum_n W[b,k,n] E[b,n,i,k] (or E[b,n,i,0] for eta-independent E)."""
    if E.shape[-1] == 1:
        return np.matmul(W, E[..., 0]).transpose(0, 2, 1)
    return np.einsum("bkn,bnik->bik", W, E)


def eta_major(E):
    """Reorder node values to (B, n_eta+1, N, n_xi+1) for contract_eta_major."""
    return np.ascontiguousarray(E.transpose(0, 3, 1, 2))


def contract_eta_major(W, Ek):
    """_contract for node values stored eta-major; a batched matmul."""
    B, K, N = W.shape
    return np.matmul(W.reshape(B, K, 1, N), Ek)[:, :, 0, :].transpose(0, 2, 1)


def alpha_loss(grid, ljump, h, level, node_values=None):
    """-int_{(0, eta - L]} delta e^{-I delta} nu(dx), nu from the short end.

    node_values may carry precomputed loss_node_values for these levels.
    """
    hb, _ = _batch(h)
    L = np.broadcast_to(np.asarray(level, dtype=float), hb.shape[:1])
    sizes, W = loss_quadrature(grid, hb[:, 0, :], L)
    E = loss_node_values(grid, ljump, sizes, hb) if node_values is None else node_values
    return -_contract(W, E)


def drift_alpha_values(grid, h, level, vol, mjump, ljump, loss_dynamics=True):
    """Batched drift; h is (B, n_xi+1, n_eta+1) or a single surface array."""
    hb, single = _batch(h)
    out = np.zeros(hb.shape)
    out = out + alpha_diffusion(grid, vol, hb if vol.state_dependent else None)
    out = out + alpha_market(grid, mjump, hb if mjump.gamma.state_dependent else None)
    if ljump.active and loss_dynamics:
        out = out + alpha_loss(grid, ljump, hb, level)
    if not np.all(np.isfinite(out)):
        raise ModelError("drift assembly produced non-finite values")
    return out[0] if single else out


def drift_alpha(loss: LossState, h: HbSurface, vol: FactorVolatility,
                mjump: MarketJumpSpec, ljump: LossJumpSpec) -> HbSurface:
    """No-arbitrage drift alpha^1 + alpha^2 + alpha^3 at the current state."""
    vals = drift_alpha_values(h.grid, h.values, loss.level_pre, vol, mjump, ljump)
    return HbSurface(h.grid, vals)


def mortality_alpha_values(grid, h, vol, mjump):
    """Batched mortality drift; the jump bracket is e^{-I gamma} - 1."""
    hb, single = _batch(h)
    out = np.zeros(hb.shape)
    out = out + alpha_diffusion(grid, vol, hb if vol.state_dependent else None)
    out = out + alpha_market(grid, mjump, hb if mjump.gamma.state_dependent else None,
                             compensated=True)
    if not np.all(np.isfinite(out)):
        raise ModelError("drift assembly produced non-finite values")
    return out[0] if single else out


def mortality_drift(vol: FactorVolatility, mjump: MarketJumpSpec,
                    h: HbSurface | SurfaceGrid) -> HbSurface:
    """Drift for compensated jumps: sum sigma I sigma - sum w gamma (e^{-I gamma} - 1).

    Pass the current surface for state-dependent families, or just the grid.
    """
    if isinstance(h, SurfaceGrid):
        if vol.state_dependent or mjump.gamma.state_dependent:
            raise UsageError("state-dependent coefficients need the current surface")
        grid, hv = h, np.zeros(h.shape)
    else:
        grid, hv = h.grid, h.values
    return HbSurface(grid, mortality_alpha_values(grid, hv, vol, mjump))


def drift_residual_values(h: HbSurface, loss: LossState, vol, mjump, ljump,
                          alpha: HbSurface, indicator_sign: float = 1.0) -> np.ndarray:
    """Integrated drift condition on the whole (T - t, eta) grid.

    Uses the compensated form of the condition: the drift of the compensated
    equation is alpha + sum_x w gamma + int delta nu, and the default
    indicator enters as 1 + beta = indicator_sign * 1{L_{t-} + x <= eta}.
    Entries with eta < L_{t-} carry no condition and are returned as NaN.
    """
    grid = h.grid
    hv = h.values
    L = loss.level_pre
    short = hv[0]
    lam = short - short[-1]
    res = (short - short[-1]) - lam  # zero by the short-rate convention

    comp = alpha.values.copy()
    sig, Sig = _sigma_terms(grid, vol, hv)
    for S in Sig:
        res = res + 0.5 * S**2
    if mjump.active:
        for x, w in zip(mjump.marks, mjump.weights):
            g = mjump.gamma.evaluate(grid, hv, x)
            G = cumtrapz_xi(g, grid.d_xi)
            comp = comp + w * g
            res = res + w * (exp_values(-G) - 1.0 + G)
    if ljump.active:
        sizes, W = loss_quadrature(grid, short[None], np.array([L]))
        d, D = _eps_nodes(grid, ljump, hv[None], sizes)
        full = np.broadcast_to(W[:, -1:, :], W.shape)  # every cell: x in (0, 1 - L]
        comp = comp + _contract(full, d)[0]
        res = res + indicator_sign * _contract(W, exp_values(-D) - 1.0)[0] + _contract(full, D)[0]
    res = res - cumtrapz_xi(comp, grid.d_xi)
    out = np.broadcast_to(res, grid.shape).copy()
    out[:, grid.eta < L] = np.nan
    return out


def drift_residual(h: HbSurface, loss: LossState, vol, mjump, ljump, alpha: HbSurface,
                   T_minus_t: float, eta: float, indicator_sign: float = 1.0) -> float:
    """Drift-condition residual at one (T - t, eta) on the pre-default branch."""
    if eta < loss.level_pre:
        raise DomainError(f"eta={eta} below the loss level {loss.level_pre}: no condition applies")
    i = h.grid.xi_index(T_minus_t)
    k = h.grid.eta_index(eta)
    return float(drift_residual_values(h, loss, vol, mjump, ljump, alpha, indicator_sign)[i, k])
