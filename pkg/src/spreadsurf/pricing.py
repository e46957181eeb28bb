"""Bond prices, Monte Carlo martingale tests and STCDO legs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import PathState, SimulationEnsemble
from .errors import UsageError
from .function_space import HbSurface, cumtrapz_xi

# scheme-bias allowance per unit of dt * T in the martingale test
BIAS_CONSTANTS = {"default": 1e-3, "strict": 5e-4}


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    stderr: float
    n_paths: int

    def __post_init__(self):
        if not self.stderr >= 0:
            raise UsageError("stderr must be non-negative")

    @classmethod
    def from_samples(cls, samples) -> "PriceEstimate":
        x = np.asarray(samples, dtype=float)
        x = x[np.isfinite(x)]
        n = len(x)
        if n == 0:
            return cls(float("nan"), 0.0, 0)
        sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
        return cls(float(np.mean(x)), float(sd / np.sqrt(n)), n)

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_paths": self.n_paths}


def _slice_log_bond(values: np.ndarray, d_xi: float, tau: float) -> np.ndarray:
    k = tau / d_xi
    i = int(round(k))
    if abs(k - i) > 1e-9 * max(1.0, k):
        raise UsageError(f"time to maturity {tau} not on the xi lattice")
    if i >= values.shape[-2]:
        raise UsageError(f"time to maturity {tau} beyond the grid")
    if i == 0:
        return np.zeros(values.shape[-1])
    return -cumtrapz_xi(values[..., : i + 1, :], d_xi)[..., i, :]


def bond_price(state: PathState, T: float, eta: float) -> float:
    """P(t, T, eta) = 1{L_t <= eta} exp(-int_0^{T-t} r_t(u, eta) du)."""
    if T < state.t - 1e-12:
        raise UsageError(f"maturity {T} before current time {state.t}")
    g = state.surface.grid
    k = g.eta_index(eta)
    if state.loss.level > g.eta[k]:
        return 0.0
    return float(np.exp(_slice_log_bond(state.surface.values, g.d_xi, max(T - state.t, 0.0))[k]))


def initial_bond_curve(h0: HbSurface, T: float, initial_loss: float = 0.0) -> np.ndarray:
    """P(0, T, eta_k) for every eta on the grid."""
    g = h0.grid
    return np.where(initial_loss <= g.eta, np.exp(_slice_log_bond(h0.values, g.d_xi, T)), 0.0)


def ensemble_bond_prices(ens: SimulationEnsemble, t: float, T: float) -> np.ndarray:
    """Pathwise P(t, T, eta_k), shape (n_paths, n_eta + 1)."""
    s = ens.snapshot_index(t)
    m = ens.maturity_index(T)
    if T < t - 1e-12:
        raise UsageError(f"maturity {T} before snapshot {t}")
    alive = ens.loss[:, s, None] <= ens.grid.eta[None, :]
    return np.where(alive, np.exp(ens.log_bond[:, s, m]), 0.0)


def bias_tolerance(dt: float, T: float, profile: str = "default") -> float:
    if profile not in BIAS_CONSTANTS:
        raise UsageError(f"unknown tolerance profile '{profile}'")
    return BIAS_CONSTANTS[profile] * dt * T


@dataclass(frozen=True)
class MartingaleResult:
    estimate: PriceEstimate
    reference: float
    bias_tol: float
    passed: bool

    def __iter__(self):
        return iter((self.estimate, self.reference))

    @property
    def deviation(self) -> float:
        return self.estimate.value - self.reference

    @property
    def sigmas(self) -> float:
        se = self.estimate.stderr
        return abs(self.deviation) / se if se > 0 else (0.0 if self.deviation == 0 else float("inf"))

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.to_dict(),
            "reference": self.reference,
            "deviation": self.deviation,
            "tolerances": {"mc_sigmas": 3.0, "bias": self.bias_tol},
            "pass": self.passed,
        }


def martingale_samples(ens: SimulationEnsemble, T: float, eta: float) -> np.ndarray:
    """D_T 1{L_T <= eta} per path (survival probability in mortality mode)."""
    s = ens.snapshot_index(T)
    k = ens.grid.eta_index(eta)
    if ens.config.mode == "mortality":
        return np.exp(ens.log_survival[:, s, k])
    return np.exp(ens.log_discount[:, s]) * (ens.loss[:, s] <= ens.grid.eta[k])


def martingale_test(ens: SimulationEnsemble, T: float, eta: float, profile: str = "default",
                    bias_tol: float | None = None) -> MartingaleResult:
    """Compare the MC mean of the discounted payoff with the time-0 bond price."""
    est = PriceEstimate.from_samples(martingale_samples(ens, T, eta))
    k = ens.grid.eta_index(eta)
    ref = float(initial_bond_curve(ens.initial_surface, T, ens.config.initial_loss)[k])
    tol = bias_tolerance(ens.config.dt, T, profile) if bias_tol is None else bias_tol
    passed = abs(est.value - ref) <= 3.0 * est.stderr + tol
    return MartingaleResult(est, ref, tol, bool(passed))


# -- STCDO ---------------------------------------------------------------------


@dataclass(frozen=True)
class TranchSpec:
    """Single-tranche CDO: detachments x1 <= x2, premium dates T_1..T_n after T_0."""

    x1: float
    x2: float
    dates: tuple
    kappa: float

    def __post_init__(self):
        if not 0.0 <= self.x1 <= self.x2 <= 1.0:
            raise UsageError(f"need 0 <= x1 <= x2 <= 1, got {self.x1}, {self.x2}")
        d = tuple(float(t) for t in self.dates)
        if len(d) < 2 or any(b <= a for a, b in zip(d, d[1:])):
            raise UsageError("need at least two strictly increasing dates T_0 < T_1 < ...")
        object.__setattr__(self, "dates", d)

    @property
    def payment_dates(self) -> tuple:
        return self.dates[1:]


def payoff_H(x, x1: float, x2: float):
    """Tranche notional outstanding: (x2 - x)^+ - (x1 - x)^+."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x2 - x, 0.0) - np.maximum(x1 - x, 0.0)


def _premium_samples(ens, tr):
    out = np.zeros(ens.n_paths)
    for T in tr.payment_dates:
        s = ens.snapshot_index(T)
        out = out + np.exp(ens.log_discount[:, s]) * tr.kappa * payoff_H(ens.loss[:, s], tr.x1, tr.x2)
    return out


def _protection_samples(ens, tr):
    ev = ens.loss_events
    t0, tn = tr.dates[0], tr.dates[-1]
    sel = (ev["time"] > t0) & (ev["time"] <= tn)
    pay = np.exp(ev["log_discount"][sel]) * (
        payoff_H(ev["level_before"][sel], tr.x1, tr.x2) - payoff_H(ev["level_after"][sel], tr.x1, tr.x2))
    out = np.zeros(ens.n_paths)
    np.add.at(out, ev["path"][sel], pay)  # events are sorted by (path, time)
    out[ens.failed] = np.nan
    return out


def stcdo_value(ens: SimulationEnsemble, tranche: TranchSpec):
    """(premium leg, protection leg, premium - protection) from path simulation."""
    if tranche.dates[-1] > ens.config.horizon + 1e-12:
        raise UsageError("tranche dates beyond the simulation horizon")
    prem = _premium_samples(ens, tranche)
    prot = _protection_samples(ens, tranche)
    return (PriceEstimate.from_samples(prem), PriceEstimate.from_samples(prot),
            PriceEstimate.from_samples(prem - prot))


def _integrate_eta(eta: np.ndarray, f: np.ndarray, a: float, b: float) -> float:
    """Trapezoid of a grid function over [a, b], with partial end cells."""
    if b <= a:
        return 0.0
    inner = eta[(eta > a) & (eta < b)]
    x = np.concatenate([[a], inner, [b]])
    y = np.interp(x, eta, f)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def stcdo_value_by_bonds(h0: HbSurface, tranche: TranchSpec, initial_loss: float = 0.0) -> PriceEstimate:
    """Premium leg kappa * sum_i int_{x1}^{x2} P(0, T_i, y) dy from the initial surface."""
    g = h0.grid
    total = 0.0
    for T in tranche.payment_dates:
        total += tranche.kappa * _integrate_eta(g.eta, initial_bond_curve(h0, T, initial_loss),
                                                tranche.x1, tranche.x2)
    return PriceEstimate(float(total), 0.0, 0)


def price_report(instrument: str, est: PriceEstimate, tolerances: dict, passed: bool) -> dict:
    return {"instrument": instrument, "value": est.value, "stderr": est.stderr,
            "n_paths": est.n_paths, "tolerances": tolerances, "pass": bool(passed)}
