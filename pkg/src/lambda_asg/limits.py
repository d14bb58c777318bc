"""Scaling limits: the jump SDE for the frequency, the limit ancestor chain,
and the truncation scheme connecting finite populations to the limit.

The limiting frequency Y is a pure-jump process: events arrive at the
coupling's total rate; an event with atom (y, z) and uniform u moves Y up by
``y (1 - Y)`` when ``u < Y`` and down by ``(y + z) Y`` otherwise.  This is the
uncompensated form, valid for finite-mass couplings, which atom lists always
are.  Measures meant to model infinite activity enter through
:func:`truncate_measure`, which restricts to ``y^2 > N^{-alpha}`` at
population size N.

The limit ancestor count coalesces from m to m - k + 1 when k of m lines are
hit neutrally and branches to m + 1 on selective-only events; its branch rate
is at most ``m * integral(z)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .errors import InfiniteMass, NotConverged, StateCapReached
from .measures import CoupledMeasure
from .moran import MoranConfig, simulate_final_counts
from .paths import FrequencyPath
from .rng import (
    TAG_CHAIN_PATH,
    TAG_CONVERGENCE_MORAN,
    TAG_CONVERGENCE_SDE,
    TAG_KS_BOOTSTRAP,
    TAG_LIMIT_CHAIN,
    TAG_SDE,
    TAG_SDE_PATH,
    chunk_bounds,
    substream,
)


@dataclass(frozen=True)
class SdeConfig:
    coupling: CoupledMeasure
    x0: float
    horizon: float
    mode: str = "event_driven"

    def __post_init__(self) -> None:
        if not 0.0 <= self.x0 <= 1.0:
            raise ValueError("x0 must lie in [0, 1]")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.mode != "event_driven":
            raise ValueError(
                "only event_driven mode is supported; apply truncate_measure "
                "to the coupling for the truncated construction"
            )
        if not np.isfinite(self.coupling.total_mass):
            raise InfiniteMass("event-driven simulation needs a finite-mass coupling")
        moment = self.coupling.integrate(lambda y, z: y * y + z)
        if not np.isfinite(moment):
            raise ValueError("coupling must have finite y^2 + z integral")


@dataclass(frozen=True)
class TruncationScheme:
    """Keep only atoms with ``y^2 > N**(-alpha)``; alpha in (0, 1/2)."""

    alpha: float
    N: int

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 1/2)")
        if self.N < 1:
            raise ValueError("N must be >= 1")


def truncate_measure(coupling: CoupledMeasure, scheme: TruncationScheme) -> CoupledMeasure:
    """Restriction of the coupling to the truncation region.

    Warns when atoms with y = 0 and z > 0 are present: they are removed at
    every truncation level yet feed the limit branch rate, so truncated-model
    rates differ from limit rates by their z-mass.
    """
    if np.any((coupling.ys == 0.0) & (coupling.zs > 0.0)):
        warnings.warn(
            "coupling carries mass on {y = 0, z > 0}, which every truncation "
            "level removes; truncated branch rates will undershoot the limit",
            stacklevel=2,
        )
    keep = coupling.ys**2 > scheme.N ** (-scheme.alpha)
    return CoupledMeasure.from_atoms(
        zip(coupling.ys[keep], coupling.zs[keep], coupling.masses[keep])
    )


# -- frequency SDE -------------------------------------------------------------


def _sde_events(
    vals: np.ndarray, c: CoupledMeasure, atom_p: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One event per entry of ``vals``: up by y(1-v) w.p. v, else down by (y+z)v."""
    n = len(vals)
    a = rng.choice(len(c), size=n, p=atom_p)
    u = rng.random(n)
    y = c.ys[a]
    s = y + c.zs[a]
    return np.where(u < vals, vals + y * (1.0 - vals), vals - s * vals)


def simulate_sde(cfg: SdeConfig, seed: int, replicate: int = 0) -> FrequencyPath:
    """Exact event-driven path of the limiting frequency in [0, 1].

    Jumps multiply the distance to the approached boundary, so the path hits
    0 or 1 exactly only through atoms with y = 1 or y + z = 1; it is recorded
    at change points and stops early once absorbed.
    """
    rng = substream(seed, TAG_SDE_PATH, replicate)
    c = cfg.coupling
    times = [0.0]
    vals = [float(cfg.x0)]
    rate = c.total_mass
    if rate > 0.0:
        atom_p = c.masses / rate
        t = 0.0
        v = float(cfg.x0)
        while 0.0 < v < 1.0:
            t += rng.exponential(1.0 / rate)
            if t > cfg.horizon:
                break
            new = float(_sde_events(np.array([v]), c, atom_p, rng)[0])
            if new != v:
                v = new
                times.append(t)
                vals.append(v)
    return FrequencyPath(times=np.asarray(times), values=np.asarray(vals))


def sde_final_values(
    coupling: CoupledMeasure,
    x0: float,
    horizon: float,
    replicates: int,
    seed: int,
    key: tuple[int, ...] = (TAG_SDE,),
) -> np.ndarray:
    """Time-``horizon`` marginal of the SDE over many replicates (vectorized)."""
    out = np.empty(replicates)
    for chunk_idx, start, stop in chunk_bounds(replicates):
        rng = substream(seed, *key, chunk_idx)
        out[start:stop] = _sde_final_chunk(coupling, x0, horizon, stop - start, rng)
    return out


def _sde_final_chunk(
    c: CoupledMeasure, x0: float, horizon: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    vals = np.full(n, float(x0))
    rate = c.total_mass
    if rate == 0.0 or n == 0:
        return vals
    atom_p = c.masses / rate
    n_events = rng.poisson(rate * horizon, size=n)
    for step in range(int(n_events.max(initial=0))):
        live = (n_events > step) & (vals > 0.0) & (vals < 1.0)
        if not live.any():
            break
        idx = np.nonzero(live)[0]
        vals[idx] = _sde_events(vals[idx], c, atom_p, rng)
    return vals


def sde_absorption(
    coupling: CoupledMeasure,
    x0: float,
    replicates: int,
    seed: int,
    threshold: float = 1e-9,
    max_events: int = 10**5,
    key: tuple[int, ...] = (TAG_SDE,),
) -> np.ndarray:
    """Run each replicate until it leaves (threshold, 1 - threshold).

    Returns a boolean array marking absorption near 1 (fixation of the
    disadvantaged type).  Time plays no role, so events are applied directly.

    Raises:
        NotConverged: if some path is still interior after ``max_events``.
    """
    if coupling.total_mass <= 0.0:
        raise ValueError("absorption needs a coupling with events")
    out = np.empty(replicates, dtype=bool)
    atom_p = coupling.masses / coupling.total_mass
    for chunk_idx, start, stop in chunk_bounds(replicates):
        rng = substream(seed, *key, chunk_idx)
        vals = np.full(stop - start, float(x0))
        for step in range(max_events):
            live = (vals > threshold) & (vals < 1.0 - threshold)
            if not live.any():
                break
            idx = np.nonzero(live)[0]
            vals[idx] = _sde_events(vals[idx], coupling, atom_p, rng)
        else:
            raise NotConverged(
                f"paths still interior after {max_events} events; "
                "increase max_events or check the coupling"
            )
        out[start:stop] = vals >= 1.0 - threshold
    return out


# -- limit ancestor chain ------------------------------------------------------


def limit_chain_rates(coupling: CoupledMeasure, m: int) -> tuple[np.ndarray, float]:
    """Rates out of state ``m``: ``coalesce[k]`` sends m to m - k + 1 for
    k = 2..m (indices 0 and 1 unused), ``branch`` sends m to m + 1."""
    if m < 1:
        raise ValueError("m must be >= 1")
    c = coupling
    coalesce = np.zeros(m + 1)
    if len(c) == 0:
        return coalesce, 0.0
    if m >= 2:
        ks = np.arange(2, m + 1)
        coalesce[2:] = binom.pmf(ks[:, None], m, c.ys[None, :]) @ c.masses
    branch = float(c.masses @ ((1.0 - c.ys) ** m - (1.0 - c.ys - c.zs) ** m))
    return coalesce, branch


class _ChainTable:
    """Cumulative transition rows for states 1..size, grown on demand.

    Row layout for state s: index 0 is the branch (target s + 1), index
    j >= 1 is the coalescence to target s - j.
    """

    def __init__(self, coupling: CoupledMeasure, size: int) -> None:
        self.coupling = coupling
        self.total = np.zeros(1)
        self.cum = np.zeros((1, 1))
        self.grow(size)

    def grow(self, size: int) -> None:
        if size < len(self.total) - 1:
            return
        total = np.zeros(size + 1)
        cum = np.ones((size + 1, size + 1))
        for s in range(1, size + 1):
            coalesce, branch = limit_chain_rates(self.coupling, s)
            # rates in row order: branch, then k = 2..s (targets s-1 .. 1)
            rates = np.concatenate([[branch], coalesce[2:]])
            tot = rates.sum()
            total[s] = tot
            if tot > 0.0:
                row = np.cumsum(rates) / tot
                row[-1] = 1.0
                cum[s, : len(row)] = row
        self.total = total
        self.cum = cum


def simulate_limit_chain(
    coupling: CoupledMeasure,
    n0: int,
    horizon: float,
    seed: int,
    state_cap: int = 10**6,
    replicate: int = 0,
) -> FrequencyPath:
    """One path of the limit ancestor chain (values >= 1).

    Raises:
        StateCapReached: if the path exceeds ``state_cap`` (diagnostic guard
            against branching explosion).
    """
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    rng = substream(seed, TAG_CHAIN_PATH, replicate)
    t = 0.0
    n = n0
    times = [0.0]
    values = [n0]
    table = _ChainTable(coupling, max(n0 + 8, 16))
    while True:
        if n >= len(table.total) - 1:
            table.grow(2 * n)
        total = table.total[n]
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        u = rng.random()
        j = int(np.searchsorted(table.cum[n], u, side="right"))
        n = n + 1 if j == 0 else n - j
        if n > state_cap:
            raise StateCapReached(f"ancestor count exceeded cap {state_cap}")
        times.append(t)
        values.append(n)
    return FrequencyPath(times=np.asarray(times), values=np.asarray(values, dtype=np.int64))


def chain_final_states(
    coupling: CoupledMeasure,
    n0: int,
    horizon: float,
    replicates: int,
    seed: int,
    state_cap: int = 10**6,
    key: tuple[int, ...] = (TAG_LIMIT_CHAIN,),
) -> np.ndarray:
    """Time-``horizon`` marginal of the limit chain over many replicates."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    out = np.empty(replicates, dtype=np.int64)
    table = _ChainTable(coupling, max(n0 + 8, 16))
    for chunk_idx, start, stop in chunk_bounds(replicates):
        rng = substream(seed, *key, chunk_idx)
        out[start:stop] = _chain_chunk(
            table, n0, horizon, stop - start, rng, state_cap
        )
    return out


def _chain_chunk(
    table: _ChainTable,
    n0: int,
    horizon: float,
    n_paths: int,
    rng: np.random.Generator,
    state_cap: int,
) -> np.ndarray:
    states = np.full(n_paths, n0, dtype=np.int64)
    t = np.zeros(n_paths)
    active = np.ones(n_paths, dtype=bool)
    while active.any():
        idx = np.nonzero(active)[0]
        s = states[idx]
        if int(s.max()) >= len(table.total) - 1:
            table.grow(2 * int(s.max()))
        totals = table.total[s]
        draws = rng.exponential(1.0, size=len(idx))
        with np.errstate(divide="ignore"):
            dt = np.where(totals > 0.0, draws / totals, np.inf)
        t[idx] += dt
        done = t[idx] > horizon
        active[idx[done]] = False
        live = idx[~done]
        if len(live) == 0:
            continue
        s_live = states[live]
        u = rng.random(len(live))
        j = (u[:, None] > table.cum[s_live]).sum(axis=1)
        states[live] = np.where(j == 0, s_live + 1, s_live - j)
        if int(states[live].max()) > state_cap:
            raise StateCapReached(f"ancestor count exceeded cap {state_cap}")
    return states


# -- convergence of truncated models to the SDE --------------------------------


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (tie-aware)."""
    data = np.concatenate([a, b])
    order = np.argsort(data, kind="mergesort")
    steps = np.where(order < len(a), 1.0 / len(a), -1.0 / len(b))
    cum = np.cumsum(steps)
    sorted_data = data[order]
    # only evaluate where the pooled value changes (handles ties)
    boundary = np.append(sorted_data[1:] != sorted_data[:-1], True)
    return float(np.abs(cum[boundary]).max())


def ks_bootstrap_stderr(
    a: np.ndarray, b: np.ndarray, resamples: int, rng: np.random.Generator
) -> float:
    stats = np.empty(resamples)
    for r in range(resamples):
        ra = a[rng.integers(0, len(a), len(a))]
        rb = b[rng.integers(0, len(b), len(b))]
        stats[r] = ks_distance(ra, rb)
    return float(stats.std(ddof=1))


def convergence_study(
    coupling: CoupledMeasure,
    x0: float,
    schemes: list[TruncationScheme],
    T: float,
    replicates: int,
    seed: int,
    bootstrap: int = 1000,
) -> list[dict]:
    """KS distance between truncated-model and SDE marginals at time T.

    One SDE sample is drawn from the full coupling; each scheme simulates the
    finite model of size N driven by the truncated coupling from
    ``floor(x0 N) / N`` and reports the distance of the two time-T samples
    with a bootstrap standard error.
    """
    if sorted(s.N for s in schemes) != [s.N for s in schemes]:
        raise ValueError("schemes must be ordered by increasing N")
    sde = sde_final_values(
        coupling, x0, T, replicates, seed, key=(TAG_CONVERGENCE_SDE,)
    )
    rows = []
    for level, scheme in enumerate(schemes):
        truncated = truncate_measure(coupling, scheme)
        cfg = MoranConfig(
            N=scheme.N, coupling=truncated,
            initial_count=int(math.floor(x0 * scheme.N)),
        )
        counts = simulate_final_counts(
            cfg, T, replicates, seed, key=(TAG_CONVERGENCE_MORAN, level)
        )
        freqs = counts / scheme.N
        boot_rng = substream(seed, TAG_KS_BOOTSTRAP, level)
        rows.append({
            "N": scheme.N,
            "alpha": scheme.alpha,
            "truncated_mass": truncated.total_mass,
            "ks": ks_distance(freqs, sde),
            "stderr": ks_bootstrap_stderr(freqs, sde, bootstrap, boot_rng),
        })
    return rows
