"""Mild-solution stepper and ensemble simulation.

One step of length dt = d_xi is the splitting

    r <- S_dt [ r + alpha(L_{t-}, r) dt + sum_j sigma^j(r) dW^j + jumps ]

where the jumps of (t, t + dt] are inserted in time order, each evaluated at
the pre-jump surface, before the lattice shift. Shifting drift and jumps
together keeps their first-order placement errors cancelling in discounted
bond prices. Paths are simulated in fixed batches with numpy; every path
draws from its own keyed streams, so results do not depend on the batch
size or on how many threads run the batches.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .coefficients import (
    FactorVolatility,
    LossJumpSpec,
    LossState,
    MarketJumpSpec,
    alpha_diffusion,
    alpha_loss,
    alpha_market,
    contract_eta_major,
    eta_major,
    intensity_arrays,
    loss_node_values,
    loss_quadrature,
    mortality_alpha_values,
    sample_sizes,
)
from .errors import BlowUpError, ThinningBoundError, UsageError
from .function_space import HbSurface, SurfaceGrid, cumtrapz_xi, shift_values
from .mpp import JumpEvent, LossProposals, RngStream, market_jump_arrays

MODES = ("credit", "mortality")
DRIFTS = ("no_arbitrage", "zero")
LOSS_DYNAMICS = ("spread", "none")
BLOWUP_POLICIES = ("raise", "record")


def _on_lattice(t: float, d: float) -> int:
    k = t / d
    ki = int(round(k))
    if abs(k - ki) > 1e-9 * max(1.0, abs(k)):
        raise UsageError(f"time {t} is not a multiple of d_xi={d}")
    return ki


@dataclass(frozen=True)
class ModelConfig:
    """Everything a simulation needs; the step size is the grid's d_xi.

    drift="zero" and loss_dynamics="none" exist for negative controls: the
    first drops the no-arbitrage drift, the second switches the loss process
    (and its drift contribution) off.
    """

    grid: SurfaceGrid
    initial_surface: HbSurface
    vol: FactorVolatility = field(default_factory=FactorVolatility)
    mjump: MarketJumpSpec = field(default_factory=MarketJumpSpec)
    ljump: LossJumpSpec = field(default_factory=LossJumpSpec)
    horizon: float = 1.0
    n_paths: int = 1000
    seed: int = 0
    rate_bound: float | None = None
    mode: str = "credit"
    drift: str = "no_arbitrage"
    loss_dynamics: str = "spread"
    output_times: tuple = ()
    bond_maturities: tuple = ()
    batch_size: int = 512
    keep_surfaces: int = 0
    blowup: str = "raise"
    initial_loss: float = 0.0

    def __post_init__(self):
        g = self.grid
        if self.initial_surface.grid != g:
            raise UsageError("initial surface is not on the model grid")
        for name, val, allowed in (("mode", self.mode, MODES), ("drift", self.drift, DRIFTS),
                                   ("loss_dynamics", self.loss_dynamics, LOSS_DYNAMICS),
                                   ("blowup", self.blowup, BLOWUP_POLICIES)):
            if val not in allowed:
                raise UsageError(f"{name} must be one of {allowed}, got '{val}'")
        if not self.horizon > 0:
            raise UsageError("horizon must be positive")
        _on_lattice(self.horizon, g.d_xi)
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise UsageError("n_paths must be a positive integer")
        if not (0 <= int(self.seed) < 2**64):
            raise UsageError("seed must fit in 64 bits")
        if self.batch_size < 1 or self.keep_surfaces < 0:
            raise UsageError("batch_size must be >= 1 and keep_surfaces >= 0")
        if not 0.0 <= self.initial_loss <= 1.0:
            raise UsageError("initial_loss must lie in [0, 1]")
        times = tuple(float(t) for t in (self.output_times or (self.horizon,)))
        for t in times:
            if t < 0 or t > self.horizon + 1e-12:
                raise UsageError(f"output time {t} outside [0, horizon]")
            _on_lattice(t, g.d_xi)
        if list(times) != sorted(set(times)):
            raise UsageError("output times must be strictly increasing")
        object.__setattr__(self, "output_times", times)
        mats = tuple(float(T) for T in self.bond_maturities)
        for T in mats:
            _on_lattice(T, g.d_xi)
            if T > g.xi_max + 1e-12:
                raise UsageError(f"bond maturity {T} beyond the grid's xi_max={g.xi_max}")
        object.__setattr__(self, "bond_maturities", mats)
        if self.rate_bound is None:
            short = self.initial_surface.values[0]
            lam0 = float(short[0] - short[-1])
            object.__setattr__(self, "rate_bound", max(2.0 * lam0, 0.01))
        elif not self.rate_bound > 0:
            raise UsageError("rate_bound must be positive")

    @property
    def dt(self) -> float:
        return self.grid.d_xi

    @property
    def n_steps(self) -> int:
        return _on_lattice(self.horizon, self.dt)

    @property
    def loss_active(self) -> bool:
        return self.mode == "credit" and self.loss_dynamics == "spread"

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class PathState:
    t: float
    surface: HbSurface
    loss: LossState = field(default_factory=LossState)
    log_discount: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.log_discount):
            raise UsageError("log_discount must be finite")


# -- drift for a batch ---------------------------------------------------------


class _Drift:
    """Drift evaluator that caches the state-independent parts."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        g = cfg.grid
        self.zero = cfg.drift == "zero"
        self.const = None
        if self.zero:
            return
        vol, mj = cfg.vol, cfg.mjump
        self.vol_sd = vol.state_dependent
        self.gam_sd = mj.gamma.state_dependent
        comp = cfg.mode == "mortality"
        parts = 0.0
        if not self.vol_sd:
            parts = parts + alpha_diffusion(g, vol, None)
        if not self.gam_sd:
            parts = parts + alpha_market(g, mj, None, compensated=comp)
        self.const = np.broadcast_to(parts, g.shape) if np.ndim(parts) else np.zeros((1, 1))
        self.loss = cfg.loss_active and cfg.ljump.active
        self.cache_nodes = self.loss and not cfg.ljump.delta.state_dependent
        self._levels = None
        self._nodes = None

    def _loss(self, r, L):
        g = self.cfg.grid
        if not self.cache_nodes:
            return alpha_loss(g, self.cfg.ljump, r, L)
        # node values depend on the path only through its loss level
        sizes, W = loss_quadrature(g, r[:, 0, :], L)
        flat = self.cfg.ljump.delta.eta_independent
        if self._levels is None or self._levels.shape != L.shape:
            E = loss_node_values(g, self.cfg.ljump, sizes)
            self._nodes = E.copy() if flat else eta_major(E)
        else:
            ch = np.flatnonzero(self._levels != L)
            if ch.size:
                E = loss_node_values(g, self.cfg.ljump, sizes[ch])
                self._nodes[ch] = E if flat else eta_major(E)
        self._levels = L.copy()
        if flat:
            return -np.matmul(W, self._nodes[..., 0]).transpose(0, 2, 1)
        return -contract_eta_major(W, self._nodes)

    def __call__(self, r: np.ndarray, L: np.ndarray):
        if self.zero:
            return 0.0
        cfg, g = self.cfg, self.cfg.grid
        out = self.const
        if self.vol_sd:
            out = out + alpha_diffusion(g, cfg.vol, r)
        if self.gam_sd:
            out = out + alpha_market(g, cfg.mjump, r, compensated=cfg.mode == "mortality")
        if self.loss:
            out = out + self._loss(r, L)
        return out


def _diffusion(cfg: ModelConfig, r: np.ndarray, dW: np.ndarray):
    """sum_j sigma^j(r) dW^j with dW of shape (B, J)."""
    out = 0.0
    sig = cfg.vol.evaluate(cfg.grid, r if cfg.vol.state_dependent else None)
    for j, s in enumerate(sig):
        out = out + s * dW[:, j, None, None]
    return out


# -- single-path step ----------------------------------------------------------


def step_mild(state: PathState, dt: float, events, dW, config: ModelConfig,
              alpha: np.ndarray | HbSurface | None = None) -> PathState:
    """Advance one path by one lattice step.

    `events` are JumpEvents in (t, t + dt]; `dW` holds one N(0, dt) draw per
    factor. `alpha` overrides the assembled drift (for forced-drift studies).
    """
    g = config.grid
    if abs(dt - g.d_xi) > 1e-12 * g.d_xi:
        raise UsageError(f"dt must equal d_xi={g.d_xi}, got {dt}")
    dW = np.asarray(dW, dtype=float).reshape(1, -1)
    if dW.shape[1] != config.vol.n_factors:
        raise UsageError(f"need {config.vol.n_factors} Wiener increments, got {dW.shape[1]}")
    r = state.surface.values[None]
    L = state.loss.level
    if alpha is None:
        a = _Drift(config)(r, np.array([L]))
    else:
        a = alpha.values if isinstance(alpha, HbSurface) else np.asarray(alpha)
    new = r + a * dt + _diffusion(config, r, dW)
    t1 = state.t + dt
    for ev in sorted(events, key=lambda e: e.time):
        if not state.t < ev.time <= t1 + 1e-12:
            raise UsageError(f"event at {ev.time} outside ({state.t}, {t1}]")
        if ev.kind == "market":
            new = new + config.mjump.gamma.evaluate(g, new, ev.mark)
        else:
            x = min(ev.mark, 1.0 - L)
            new = new + config.ljump.delta.evaluate(g, new, x)
            L = L + x
    new = shift_values(new, 1)
    if not np.all(np.isfinite(new)):
        raise BlowUpError("surface became non-finite", time=t1)
    log_d = state.log_discount - 0.5 * dt * (r[0, 0, -1] + new[0, 0, -1])
    return PathState(t1, HbSurface(g, new[0]), LossState(L, L), float(log_d))


# -- ensemble ------------------------------------------------------------------


@dataclass
class SimulationEnsemble:
    """Snapshots of every path at the configured output times.

    Array fields are indexed (path, snapshot, ...). log_bond[p, s, m, k] is
    -int_0^{T_m - t_s} r_{t_s}(u, eta_k) du (NaN when T_m < t_s); the default
    indicator is applied by the pricing layer from `loss`.
    """

    config: ModelConfig
    output_times: np.ndarray
    loss: np.ndarray
    log_discount: np.ndarray
    min_value: np.ndarray
    short_end: np.ndarray
    compensator: np.ndarray
    log_bond: np.ndarray
    log_survival: np.ndarray | None
    market_counts: np.ndarray
    loss_events: dict
    surfaces: np.ndarray
    failures: list

    @property
    def grid(self) -> SurfaceGrid:
        return self.config.grid

    @property
    def n_paths(self) -> int:
        return self.loss.shape[0]

    @property
    def initial_surface(self) -> HbSurface:
        return self.config.initial_surface

    @property
    def failed(self) -> np.ndarray:
        mask = np.zeros(self.n_paths, dtype=bool)
        for f in self.failures:
            mask[f["path"]] = True
        return mask

    def snapshot_index(self, t: float) -> int:
        hits = np.flatnonzero(np.abs(self.output_times - t) <= 1e-9 * max(1.0, t))
        if not hits.size:
            raise UsageError(f"{t} is not a snapshot time ({self.output_times.tolist()})")
        return int(hits[0])

    def maturity_index(self, T: float) -> int:
        mats = np.asarray(self.config.bond_maturities)
        hits = np.flatnonzero(np.abs(mats - T) <= 1e-9 * max(1.0, T))
        if not hits.size:
            raise UsageError(f"maturity {T} not among the configured bond maturities {mats.tolist()}")
        return int(hits[0])

    def path_state(self, path: int, t: float) -> PathState:
        """Full state of one of the first `keep_surfaces` paths."""
        if path >= self.surfaces.shape[0]:
            raise UsageError(f"surface of path {path} not kept (keep_surfaces={self.surfaces.shape[0]})")
        s = self.snapshot_index(t)
        return PathState(float(self.output_times[s]), HbSurface(self.grid, self.surfaces[path, s]),
                         LossState(float(self.loss[path, s])), float(self.log_discount[path, s]))


_EVENT_FIELDS = ("path", "time", "size", "level_before", "level_after", "log_discount")


def _simulate_batch(cfg: ModelConfig, paths: np.ndarray) -> dict:
    g = cfg.grid
    B = len(paths)
    dt = cfg.dt
    n_steps = cfg.n_steps
    K = g.n_eta + 1
    eta = g.eta
    out_steps = {_on_lattice(t, dt): i for i, t in enumerate(cfg.output_times)}
    S = len(cfg.output_times)
    mats = np.asarray(cfg.bond_maturities)
    M = len(mats)
    keep = max(0, min(cfg.keep_surfaces - int(paths[0]), B))

    J = cfg.vol.n_factors
    dW = np.zeros((B, n_steps, J))
    mt, mx = [], []
    props = []
    for b, p in enumerate(paths):
        if J:
            dW[b] = RngStream(cfg.seed, int(p), "wiener").generator().standard_normal((n_steps, J))
        if cfg.mjump.active:
            t_, x_ = market_jump_arrays(cfg.mjump, cfg.horizon,
                                        RngStream(cfg.seed, int(p), "market_jumps").generator())
            mt.append(t_)
            mx.append(x_)
        if cfg.loss_active:
            props.append(LossProposals(RngStream(cfg.seed, int(p), "loss_jumps").generator(),
                                       cfg.rate_bound))
    dW *= np.sqrt(dt)
    n_m = max((len(t) for t in mt), default=0)
    m_times = np.full((B, n_m + 1), np.inf)
    m_marks = np.zeros((B, n_m + 1))
    for b, (t_, x_) in enumerate(zip(mt, mx)):
        m_times[b, : len(t_)] = t_
        m_marks[b, : len(x_)] = x_
    m_ptr = np.zeros(B, dtype=int)
    p_next = np.full((B, 3), np.inf)
    for b, pr in enumerate(props):
        p_next[b] = pr.next()

    r = np.broadcast_to(cfg.initial_surface.values, (B,) + g.shape).copy()
    L = np.full(B, float(cfg.initial_loss))
    log_d = np.zeros(B)
    log_s = np.zeros((B, K))
    comp = np.zeros((B, K))
    run_min = r.reshape(B, -1).min(axis=1)
    failed = np.zeros(B, dtype=bool)
    failures = []
    counts = np.zeros(B, dtype=int)
    events = {k: [] for k in _EVENT_FIELDS}
    drift = _Drift(cfg)

    res = {
        "loss": np.full((B, S), np.nan),
        "log_discount": np.full((B, S), np.nan),
        "min_value": np.full((B, S), np.nan),
        "short_end": np.full((B, S, K), np.nan),
        "compensator": np.full((B, S, K), np.nan),
        "log_bond": np.full((B, S, M, K), np.nan),
        "log_survival": np.full((B, S, K), np.nan) if cfg.mode == "mortality" else None,
        "surfaces": np.full((keep, S) + g.shape, np.nan),
    }

    def snapshot(step):
        s = out_steps[step]
        t = step * dt
        ok = ~failed
        res["loss"][ok, s] = L[ok]
        res["log_discount"][ok, s] = log_d[ok]
        res["min_value"][ok, s] = run_min[ok]
        res["short_end"][ok, s] = r[ok, 0, :]
        res["compensator"][ok, s] = comp[ok]
        if res["log_survival"] is not None:
            res["log_survival"][ok, s] = log_s[ok]
        if M:
            I = cumtrapz_xi(r, g.d_xi)
            for m, T in enumerate(mats):
                if T >= t - 1e-12:
                    res["log_bond"][ok, s, m] = -I[ok, _on_lattice(T - t, dt) if T > t else 0, :]
        if keep:
            res["surfaces"][:keep, s] = np.where(ok[:keep, None, None], r[:keep], np.nan)

    def fail(b, t, msg):
        failed[b] = True
        failures.append({"path": int(paths[b]), "time": float(t), "message": msg})
        r[b] = 0.0

    if 0 in out_steps:
        snapshot(0)
    rows = np.arange(B)
    for step in range(n_steps):
        t0 = step * dt
        t1 = (step + 1) * dt
        short0 = r[:, 0, :].copy()
        rs0 = short0[:, -1].copy()
        if cfg.loss_active:
            live = ~failed
            intensity_arrays(g, short0[live], L[live])  # monotonicity check
            cell = np.maximum(-np.diff(short0, axis=1) / g.d_eta, 0.0) * g.d_eta
            tail = np.concatenate([np.cumsum(cell[:, ::-1], axis=1)[:, ::-1], np.zeros((B, 1))], axis=1)
        r += drift(r, L) * dt + _diffusion(cfg, r, dW[:, step])

        seg = np.full(B, t0)
        while True:
            tm = m_times[rows, m_ptr]
            tl = p_next[:, 0]
            act = (np.minimum(tm, tl) <= t1) & ~failed
            if not act.any():
                break
            mk = np.flatnonzero(act & (tm <= tl))
            if mk.size:
                r[mk] += cfg.mjump.gamma.evaluate(g, r[mk], m_marks[mk, m_ptr[mk]])
                counts[mk] += 1
                m_ptr[mk] += 1
            lk = np.flatnonzero(act & (tl < tm))
            if lk.size:
                tau = p_next[lk, 0]
                total, nodes, rho = intensity_arrays(g, short0[lk], L[lk])
                over = total > cfg.rate_bound * (1 + 1e-12)
                if over.any():
                    i = int(np.flatnonzero(over)[0])
                    raise ThinningBoundError(
                        f"loss intensity {total[i]:.6g} exceeds rate bound {cfg.rate_bound:.6g}",
                        path_index=int(paths[lk[i]]), time=float(tau[i]))
                acc = p_next[lk, 1] * cfg.rate_bound < total
                ia = lk[acc]
                if ia.size:
                    x = sample_sizes(nodes[acc], rho[acc], p_next[ia, 2])
                    x = np.minimum(x, 1.0 - L[ia])
                    ta = p_next[ia, 0]
                    ld = log_d[ia] - (ta - t0) * rs0[ia]
                    comp[ia] += (L[ia, None] <= eta) * tail[ia] * (ta - seg[ia])[:, None]
                    seg[ia] = ta
                    r[ia] += cfg.ljump.delta.evaluate(g, r[ia], x)
                    newL = np.minimum(L[ia] + x, 1.0)
                    for f, v in zip(_EVENT_FIELDS, (paths[ia], ta, x, L[ia], newL, ld)):
                        events[f].append(np.asarray(v))
                    L[ia] = newL
                for b in lk:
                    p_next[b] = props[b].next()
        if cfg.loss_active:
            comp += (L[:, None] <= eta) * tail * (t1 - seg)[:, None]
        r[:, :-1] = r[:, 1:]  # S_dt with a flat long end

        lo = r.min(axis=(1, 2))
        finite = np.isfinite(lo) & np.isfinite(r.max(axis=(1, 2))) | failed
        if not finite.all():
            bad = np.flatnonzero(~finite)
            if cfg.blowup == "raise":
                raise BlowUpError("surface became non-finite", path_index=int(paths[bad[0]]), time=t1)
            for b in bad:
                fail(b, t1, "surface became non-finite")
        log_d -= 0.5 * dt * (rs0 + r[:, 0, -1])
        if cfg.mode == "mortality":
            log_s -= 0.5 * dt * (short0 + r[:, 0, :])
        run_min = np.where(failed, run_min, np.minimum(run_min, lo))
        if step + 1 in out_steps:
            snapshot(step + 1)

    res["market_counts"] = counts
    res["loss_events"] = {k: (np.concatenate(v) if v else np.empty(0)) for k, v in events.items()}
    res["failures"] = failures
    return res


def simulate(config: ModelConfig, output_times=None, threads: int = 1) -> SimulationEnsemble:
    """Simulate all paths; identical for any thread count and batch size."""
    if output_times is not None:
        config = config.with_(output_times=tuple(output_times))
    starts = range(0, config.n_paths, config.batch_size)
    batches = [np.arange(s, min(s + config.batch_size, config.n_paths)) for s in starts]
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda p: _simulate_batch(config, p), batches))
    else:
        parts = [_simulate_batch(config, p) for p in batches]

    def cat(key):
        return np.concatenate([p[key] for p in parts], axis=0)

    ev = {k: np.concatenate([p["loss_events"][k] for p in parts]) for k in _EVENT_FIELDS}
    ev["path"] = ev["path"].astype(int)
    order = np.lexsort((ev["time"], ev["path"]))
    ev = {k: v[order] for k, v in ev.items()}
    return SimulationEnsemble(
        config=config,
        output_times=np.asarray(config.output_times),
        loss=cat("loss"),
        log_discount=cat("log_discount"),
        min_value=cat("min_value"),
        short_end=cat("short_end"),
        compensator=cat("compensator"),
        log_bond=cat("log_bond"),
        log_survival=cat("log_survival") if config.mode == "mortality" else None,
        market_counts=cat("market_counts"),
        loss_events=ev,
        surfaces=cat("surfaces"),
        failures=[f for p in parts for f in p["failures"]],
    )


def path_events(ensemble: SimulationEnsemble, path: int) -> list[JumpEvent]:
    ev = ensemble.loss_events
    sel = ev["path"] == path
    return [JumpEvent(float(t), "loss", float(x)) for t, x in zip(ev["time"][sel], ev["size"][sel])]
