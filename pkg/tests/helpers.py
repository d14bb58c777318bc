"""Shared test utilities: random ordered pairs and brute-force oracles."""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import comb

import numpy as np

from lambda_asg.measures import CoupledMeasure, FiniteMeasure1D


def random_ordered_pair(
    rng: np.random.Generator,
    max_atoms: int = 4,
    lattice: int | None = None,
    total_mass: float = 1.0,
) -> tuple[FiniteMeasure1D, FiniteMeasure1D]:
    """Draw a stochastically ordered pair (lower, upper) of equal-size atoms.

    The upper measure is random; the lower one redistributes each upper
    atom's mass onto locations at or below it, which lowers every quantile
    and therefore every tail mass.  With ``lattice`` set, locations live on
    the grid k/lattice so tail-mass comparisons are exact.
    """
    nb = int(rng.integers(1, max_atoms + 1))
    if lattice:
        locs = rng.integers(1, lattice + 1, size=nb) / lattice
    else:
        locs = rng.uniform(0.05, 1.0, size=nb)
    masses = rng.dirichlet(np.ones(nb)) * total_mass
    upper = FiniteMeasure1D.from_atoms(zip(locs, masses))
    lower_atoms = []
    for loc, mass in zip(upper.locations, upper.masses):
        pieces = int(rng.integers(1, 3))
        weights = rng.dirichlet(np.ones(pieces))
        for w in weights:
            if lattice:
                steps = max(int(round(loc * lattice)), 1)
                new_loc = rng.integers(1, steps + 1) / lattice
            else:
                new_loc = rng.uniform(0.0, 1.0) * loc
            lower_atoms.append((new_loc, w * mass))
    lower = FiniteMeasure1D.from_atoms(lower_atoms)
    return lower, upper


def random_coupling(rng: np.random.Generator, max_atoms: int = 4) -> CoupledMeasure:
    """A random valid coupling on the simplex with positive selective mass."""
    k = int(rng.integers(1, max_atoms + 1))
    ys = rng.uniform(0.0, 1.0, k)
    zs = rng.uniform(0.0, 1.0, k) * (1.0 - ys)
    ms = rng.uniform(0.1, 1.0, k)
    return CoupledMeasure.from_atoms(zip(ys, zs, ms))


def transport_vertices(p: np.ndarray, q: np.ndarray) -> list[np.ndarray]:
    """All vertices of the transport polytope with marginals p and q.

    Vertices have at most ``len(p) + len(q) - 1`` support cells; every such
    support set with a consistent solution is enumerated and solved exactly.
    Intended for tiny instances (<= 3 x 3).
    """
    na, nb = len(p), len(q)
    cells = list(itertools.product(range(na), range(nb)))
    target = np.concatenate([p, q])
    vertices: list[np.ndarray] = []
    seen: set[tuple] = set()
    for support in itertools.combinations(cells, na + nb - 1):
        A = np.zeros((na + nb, len(support)))
        for col, (i, j) in enumerate(support):
            A[i, col] = 1.0
            A[na + j, col] = 1.0
        sol, residuals, rank, _ = np.linalg.lstsq(A, target, rcond=None)
        if np.abs(A @ sol - target).max() > 1e-9 or sol.min() < -1e-9:
            continue
        gamma = np.zeros((na, nb))
        for col, (i, j) in enumerate(support):
            gamma[i, j] = max(sol[col], 0.0)
        key = tuple(np.round(gamma, 9).ravel())
        if key not in seen:
            seen.add(key)
            vertices.append(gamma)
    return vertices


def plan_cost(gamma: np.ndarray, a_locs: np.ndarray, b_locs: np.ndarray) -> float:
    """Squared-difference transport cost of a plan over given atom locations."""
    diff = b_locs[None, :] - a_locs[:, None]
    return float((gamma * diff**2).sum())


# -- exact-rational oracle for the fixation recursion ---------------------------


def rational_moment_table(
    atoms: list[tuple[Fraction, Fraction, Fraction]], jmax: int, kmax: int
) -> tuple[list[list[Fraction]], list[Fraction]]:
    """Moment families computed in exact rational arithmetic.

    The u-integral has the closed form
    ``int_0^1 2u (1-uy)^j (uy)^k du = 2 y^k sum_i C(j,i) (-y)^i / (k+i+2)``.
    """
    tilde = sum(w * (y * y + z) for y, z, w in atoms)
    M = [[Fraction(0) for _ in range(kmax + 1)] for _ in range(jmax + 1)]
    q = [Fraction(0) for _ in range(jmax + 1)]
    for y, z, w in atoms:
        for j in range(jmax + 1):
            q[j] += w * ((1 - y) ** (j + 1) - (1 - y - z) ** (j + 1)) / ((j + 1) * tilde)
            if y != 0:
                for k in range(kmax + 1):
                    integral = 2 * y**k * sum(
                        comb(j, i) * (-y) ** i * Fraction(1, k + i + 2)
                        for i in range(j + 1)
                    )
                    M[j][k] += w * y * y * integral / tilde
    return M, q


def rational_polynomials(
    M: list[list[Fraction]], q: list[Fraction], nmax: int
) -> list[list[Fraction]]:
    """The coefficient triangle computed exactly (mirrors the float pipeline)."""
    coeffs: list[list[Fraction]] = [[Fraction(1)]]
    for n in range(1, nmax + 1):
        prev = coeffs[n - 1]
        a = [Fraction(0) for _ in range(n + 1)]
        a[n] = q[n - 1] / M[n - 1][0] * prev[n - 1]
        for j in range(n - 2, -1, -1):
            acc = sum(
                comb(r, j) * M[j][r - j - 1] * a[r] for r in range(j + 2, n + 1)
            )
            a[j + 1] = (n * q[j] * prev[j] - acc) / ((j + 1) * M[j][0])
        a[0] = Fraction(1, n + 1) - sum(a[r] / (r + 1) for r in range(1, n + 1))
        coeffs.append(a)
    return coeffs


def merged_chisquare_pvalue(
    observed_counts: dict[int, int], probs: dict[int, float], total: int,
    min_expected: float = 5.0,
) -> float:
    """Chi-square goodness-of-fit p-value with small expected bins pooled."""
    from scipy.stats import chisquare

    keys = sorted(probs)
    obs, exp = [], []
    pool_obs = pool_exp = 0.0
    for k in keys:
        e = probs[k] * total
        o = observed_counts.get(k, 0)
        if e < min_expected:
            pool_obs += o
            pool_exp += e
        else:
            obs.append(o)
            exp.append(e)
    if pool_exp > 0:
        obs.append(pool_obs)
        exp.append(pool_exp)
    obs_arr = np.asarray(obs, dtype=float)
    exp_arr = np.asarray(exp, dtype=float)
    # renormalize tiny mismatch from probabilities not summing exactly to 1
    exp_arr *= obs_arr.sum() / exp_arr.sum()
    return float(chisquare(obs_arr, exp_arr).pvalue)
