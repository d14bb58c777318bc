"""Duality between the forward frequency process and the ancestral count.

The duality function is the all-disadvantaged sampling probability
``S(i, n) = C(i, n) / C(N, n)``: the chance that a uniform n-sample from a
population with i disadvantaged members is entirely disadvantaged.  The
forward chain X and the ancestor count A satisfy
``E_i[S(X_t, n)] = E_n[S(i, A_t)]`` exactly; in matrix form ``B D = D A^T``.

Verification is offered at three levels: the exact finite-N matrix identity,
a Monte Carlo pathwise check that evaluates both sides on shared event
streams, and Monte Carlo moment duality ``E_x[Y_t^n] = E_n[x^{A_t}]`` for the
scaling limits, plus the closed-form limit generator identity.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import limits
from .asg import generate_asg, line_count_rates, potential_ancestors, propagate_forward, TypeAssignment
from .measures import CoupledMeasure
from .moran import MoranConfig, generator_matrix
from .rng import TAG_PATHWISE, pathwise_chunks, run_jobs, substream


def sampling_function(N: int, i: int, n: int) -> float:
    """``C(i, n) / C(N, n)`` via the stable product form; 0 when n > i."""
    if not (0 <= i <= N and 0 <= n <= N):
        raise ValueError("need 0 <= i, n <= N")
    value = 1.0
    for m in range(n):
        value *= (i - m) / (N - m)
        if value == 0.0:
            break
    return max(value, 0.0)


def sampling_matrix(N: int) -> np.ndarray:
    """Matrix D with D[i, n] = sampling_function(N, i, n)."""
    D = np.zeros((N + 1, N + 1))
    D[:, 0] = 1.0
    i = np.arange(N + 1, dtype=float)
    for n in range(1, N + 1):
        D[:, n] = D[:, n - 1] * np.maximum(i - (n - 1), 0.0) / (N - (n - 1))
    return D


def line_count_generator(N: int, coupling: CoupledMeasure) -> np.ndarray:
    """Generator of the ancestor count on states 0..N; row 0 is inert padding
    (the constant column of the duality function lies in the kernel of B)."""
    A = np.zeros((N + 1, N + 1))
    for n in range(1, N + 1):
        coalesce, branch = line_count_rates(N, coupling, n)
        for k in range(1, n):
            A[n, n - k] = coalesce[k]
        if n < N:
            A[n, n + 1] = branch
        A[n, n] = -(coalesce[1:].sum() + (branch if n < N else 0.0))
    return A


def generator_duality_check(N: int, coupling: CoupledMeasure) -> float:
    """Max abs entry of B D - D A^T; exactly 0 in exact arithmetic."""
    if N > 300:
        raise ValueError("matrix duality check limited to N <= 300")
    cfg = MoranConfig(N=N, coupling=coupling, initial_count=0)
    B = generator_matrix(cfg)
    A = line_count_generator(N, coupling)
    D = sampling_matrix(N)
    return float(np.abs(B @ D - D @ A.T).max())


@dataclass(frozen=True)
class DualityReport:
    """Two Monte Carlo estimates of equal quantities and their z-score."""

    lhs: float
    rhs: float
    stderr_lhs: float
    stderr_rhs: float
    z: float
    replicates: int
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _report(lhs: np.ndarray, rhs: np.ndarray, params: dict) -> DualityReport:
    n_l, n_r = len(lhs), len(rhs)
    se_l = float(lhs.std(ddof=1) / math.sqrt(n_l)) if n_l > 1 else 0.0
    se_r = float(rhs.std(ddof=1) / math.sqrt(n_r)) if n_r > 1 else 0.0
    denom = math.hypot(se_l, se_r)
    diff = float(lhs.mean() - rhs.mean())
    z = diff / denom if denom > 0 else (0.0 if diff == 0.0 else math.inf)
    return DualityReport(
        lhs=float(lhs.mean()), rhs=float(rhs.mean()),
        stderr_lhs=se_l, stderr_rhs=se_r, z=z,
        replicates=max(n_l, n_r), params=params,
    )


def _pathwise_chunk(args: tuple) -> tuple[np.ndarray, np.ndarray]:
    N, coupling, T, initial_count, sample_size, seed, r_start, r_stop = args
    lhs = np.empty(r_stop - r_start)
    rhs = np.empty(r_stop - r_start)
    for k, r in enumerate(range(r_start, r_stop)):
        rng = substream(seed, TAG_PATHWISE, r)
        asg = generate_asg(N, coupling, T, rng=rng)
        minus0 = rng.permutation(N)[:initial_count]
        forward = propagate_forward(asg, TypeAssignment.from_minus_set(N, minus0))
        lhs[k] = sampling_function(N, forward.minus_count, sample_size)
        sample = rng.permutation(N)[:sample_size]
        ancestors = potential_ancestors(asg, sample, T, 0.0)
        rhs[k] = sampling_function(N, initial_count, len(ancestors))
    return lhs, rhs


def pathwise_duality_check(
    N: int,
    coupling: CoupledMeasure,
    T: float,
    initial_count: int,
    sample_size: int,
    replicates: int,
    seed: int,
    threads: int = 1,
) -> DualityReport:
    """Estimate both sides of the sampling duality on shared realizations.

    Per replicate one event stream is drawn; the left side propagates a
    random disadvantaged set of the given size forward and samples
    ``S(X_T, n)``, the right side sweeps a uniform n-sample backward and
    evaluates ``S(i, A_T)``.  Sharing streams correlates the sides, which
    only makes the pooled-stderr z-score conservative.  Replicate r draws
    from stream (seed, r) regardless of worker count.
    """
    if not 0 <= initial_count <= N:
        raise ValueError("initial_count out of range")
    if not 1 <= sample_size <= N:
        raise ValueError("sample_size out of range")
    jobs = [
        (N, coupling, T, initial_count, sample_size, seed, start, stop)
        for start, stop in pathwise_chunks(replicates)
    ]
    parts = run_jobs(_pathwise_chunk, jobs, threads)
    lhs = np.concatenate([p[0] for p in parts])
    rhs = np.concatenate([p[1] for p in parts])
    return _report(lhs, rhs, {
        "N": N, "T": T, "initial_count": initial_count,
        "sample_size": sample_size, "seed": seed,
    })


def limit_moment_duality_check(
    coupling: CoupledMeasure,
    x: float,
    n: int,
    t: float,
    replicates: int,
    seed: int,
) -> DualityReport:
    """Monte Carlo check of ``E_x[Y_t^n] = E_n[x^{A_t}]`` for the limits."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    y_final = limits.sde_final_values(coupling, x, t, replicates, seed)
    a_final = limits.chain_final_states(coupling, n, t, replicates, seed)
    lhs = y_final**n
    rhs = np.power(x, a_final.astype(float))
    return _report(lhs, rhs, {"x": x, "n": n, "t": t, "seed": seed})


def limit_generator_duality(
    coupling: CoupledMeasure, n_max: int, grid: int
) -> float:
    """Max residual of the closed-form limit generator identity.

    Applies the frequency generator to x -> x^n and the ancestor-count
    generator to n -> x^n; both reduce to the same atom sums, so the residual
    is pure floating-point error.
    """
    if n_max > 12:
        raise ValueError("n_max limited to 12")
    xs = np.linspace(0.0, 1.0, grid)
    c = coupling
    worst = 0.0
    for n in range(1, n_max + 1):
        # frequency side: sum over atoms of
        #   x (x + y(1-x))^n + (1-x) (x(1-y-z))^n - x^n
        up = np.power(xs[:, None] + c.ys[None, :] * (1.0 - xs[:, None]), n)
        dn = np.power(xs[:, None] * (1.0 - c.ys - c.zs)[None, :], n)
        xn = xs**n
        bh = (xs[:, None] * up + (1.0 - xs[:, None]) * dn - xn[:, None]) @ c.masses
        # count side: coalescences k = 1..n send x^n to x^{n-k+1}, a branch
        # sends it to x^{n+1}
        ah = np.zeros_like(xs)
        for k in range(1, n + 1):
            rate = float(
                c.masses @ (math.comb(n, k) * c.ys**k * (1.0 - c.ys) ** (n - k))
            )
            ah += (xs ** (n - k + 1) - xn) * rate
        branch = float(c.masses @ ((1.0 - c.ys) ** n - (1.0 - c.ys - c.zs) ** n))
        ah += (xs ** (n + 1) - xn) * branch
        worst = max(worst, float(np.abs(bh - ah).max()))
    return worst
