"""Fixation probability of the disadvantaged type via a polynomial recursion.

The generator of the limiting frequency process can be rewritten against the
size-biased measure ``(y^2 + z) * coupling`` using auxiliary variables
U (density 2u on [0, 1]), V (uniform) and W = U Y.  Harmonic functions then
admit a series expansion in polynomials ``h_n`` whose coefficients satisfy a
triangular recursion driven by two moment families,

    M[j][k] = E[(1 - W)^j W^k  * Y^2 / (Z + Y^2)],
    q[j]    = E[(1 - Y - Z V)^j * Z / (Z + Y^2)],

both of which reduce to closed forms per atom.  The fixation probability is
the normalized exponential series

    p(x) = (e^2 - 1)^{-1} * sum_{n >= 1} 2^n / n! * H_n(x),
    H_n(x) = integral_0^x n h_{n-1},

with the constant coefficient of each h_n pinned by ``integral_0^1 h_n =
1/(n+1)``, which makes p(0) = 0 and p(1) = 1 hold by construction.

The recursion's independent correctness oracle is the defining identity

    E[(h_n(x(1-W)+W) - h_n(x(1-W))) / W * Y^2/(Z+Y^2)]
        = n E[h_{n-1}(x(1-Y-ZV)) * Z/(Z+Y^2)],

which :func:`defining_identity_residual` evaluates by direct quadrature
against the coupling, bypassing the moment table and the back-substitution.

The diagonal of the recursion is seeded with the ratio product starting at
index 0 (``a[n][n] = prod_{i=0}^{n-1} q[i] / M[i][0]``); starting at 1 would
contradict the recursion at n = 1 unless q[0] = M[0][0].  The identity oracle
above adjudicates this choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSelection, NearSingular, NotConverged, ZeroMass
from .measures import CoupledMeasure
from .quadrature import gauss_legendre_01

PIVOT_TOL = 1e-13
_QUAD_ORDER = 64  # exact for polynomial integrands up to degree 127


@dataclass(frozen=True)
class MomentTable:
    """Moment families of the size-biased coupling.

    ``M[j, k]`` and ``q[j]`` as in the module docstring; ``tilde_mass`` is
    the total size-biased mass ``integral (y^2 + z)``.
    """

    jmax: int
    kmax: int
    M: np.ndarray
    q: np.ndarray
    tilde_mass: float


def build_moment_table(coupling: CoupledMeasure, jmax: int, kmax: int) -> MomentTable:
    """Closed-form moment table; exact up to quadrature of polynomial degree 127.

    Per atom of weight w the size-biased weight is ``w (y^2 + z) / tilde_mass``;
    the Y^2/(Z+Y^2) and Z/(Z+Y^2) factors cancel against it, leaving

        M[j, k] += w y^2 / tilde_mass * integral_0^1 2u (1-uy)^j (uy)^k du,
        q[j]    += w / tilde_mass * ((1-y)^{j+1} - (1-y-z)^{j+1}) / (j+1).

    Raises:
        ZeroMass: if the size-biased mass vanishes (no atom with y^2 + z > 0).
    """
    w, y, z = coupling.masses, coupling.ys, coupling.zs
    tilde_mass = float(w @ (y * y + z))
    if tilde_mass <= 0.0:
        raise ZeroMass("size-biased coupling has zero mass")
    M = np.zeros((jmax + 1, kmax + 1))
    nodes, wts = gauss_legendre_01(_QUAD_ORDER)
    base = 2.0 * nodes * wts
    js = np.arange(jmax + 1)
    ks = np.arange(kmax + 1)
    for wa, ya in zip(w, y):
        if ya <= 0.0:
            continue
        pj = (1.0 - nodes * ya)[None, :] ** js[:, None]   # (jmax+1, nodes)
        pk = (nodes * ya)[None, :] ** ks[:, None]         # (kmax+1, nodes)
        M += (wa * ya * ya / tilde_mass) * ((pj * base) @ pk.T)
    jp1 = js + 1.0
    q = ((1.0 - y)[None, :] ** jp1[:, None] - (1.0 - y - z)[None, :] ** jp1[:, None]) \
        @ w / (tilde_mass * jp1)
    return MomentTable(jmax=jmax, kmax=kmax, M=M, q=q, tilde_mass=tilde_mass)


@dataclass(frozen=True)
class PolySeq:
    """Coefficient triangle: ``coeffs[n][r]`` multiplies x^r in h_n."""

    coeffs: list[np.ndarray]

    @property
    def nmax(self) -> int:
        return len(self.coeffs) - 1

    def h(self, n: int, x) -> np.ndarray:
        """Evaluate h_n pointwise."""
        return np.polynomial.polynomial.polyval(x, self.coeffs[n])

    def antiderivative_coeffs(self, n: int) -> np.ndarray:
        """Coefficients of H_n(x) = integral_0^x n h_{n-1}; H_n(1) = 1."""
        a = self.coeffs[n - 1]
        out = np.zeros(len(a) + 1)
        out[1:] = n * a / (np.arange(len(a)) + 1.0)
        return out


def build_polynomials(table: MomentTable, nmax: int) -> PolySeq:
    """Back-substitute the triangular recursion up to order ``nmax``.

    Needs ``table.jmax >= nmax - 1`` and ``table.kmax >= nmax - 1``.

    Raises:
        DegenerateSelection: if some required q[j] is not positive (the
            selective gap vanishes; use :func:`p_neutral`).
        NearSingular: if a back-substitution pivot falls below tolerance.
    """
    if table.jmax < nmax - 1 or table.kmax < nmax - 1:
        raise ValueError("moment table too small for requested order")
    M, q = table.M, table.q
    if np.any(q[:nmax] <= 0.0):
        raise DegenerateSelection(
            "q vanishes: the coupling has no selective gap in the needed range"
        )
    coeffs = [np.array([1.0])]
    for n in range(1, nmax + 1):
        prev = coeffs[n - 1]
        a = np.zeros(n + 1)
        if abs(M[n - 1, 0]) < PIVOT_TOL:
            raise NearSingular(
                f"diagonal denominator {M[n - 1, 0]:.3e} below {PIVOT_TOL} at n={n}"
            )
        a[n] = q[n - 1] / M[n - 1, 0] * prev[n - 1]
        for j in range(n - 2, -1, -1):
            pivot = (j + 1) * M[j, 0] / (n * q[j])
            if abs(pivot) < PIVOT_TOL:
                raise NearSingular(
                    f"pivot {pivot:.3e} below {PIVOT_TOL} at n={n}, j={j}"
                )
            acc = 0.0
            for r in range(j + 2, n + 1):
                acc += math.comb(r, j) * M[j, r - j - 1] * a[r]
            a[j + 1] = (n * q[j] * prev[j] - acc) / ((j + 1) * M[j, 0])
        # integral_0^1 h_n = 1/(n+1) pins the constant coefficient
        rs = np.arange(1, n + 1)
        a[0] = 1.0 / (n + 1) - float((a[1:] / (rs + 1.0)).sum())
        coeffs.append(a)
    return PolySeq(coeffs=coeffs)


def build_fixation_solver(coupling: CoupledMeasure, nmax: int = 30) -> "FixationSolver":
    """Convenience: moment table sized for ``nmax`` plus polynomials."""
    table = build_moment_table(coupling, jmax=max(nmax - 1, 0), kmax=max(nmax - 1, 0))
    seq = build_polynomials(table, nmax)
    return FixationSolver(coupling=coupling, table=table, seq=seq, nmax=nmax)


@dataclass(frozen=True)
class FixationSolver:
    coupling: CoupledMeasure
    table: MomentTable
    seq: PolySeq
    nmax: int

    def p(self, x: float) -> float:
        return fixation_probability(self.seq, x, self.nmax)[0]


def fixation_series_coeffs(seq: PolySeq, nmax: int) -> np.ndarray:
    """Polynomial coefficients of the truncated series for p."""
    if nmax > seq.nmax:
        raise ValueError("sequence not built far enough")
    scale = 1.0 / math.expm1(2.0)
    out = np.zeros(nmax + 2)
    for n in range(1, nmax + 1):
        hn = seq.antiderivative_coeffs(n)
        out[: len(hn)] += scale * 2.0**n / math.factorial(n) * hn
    return out


def fixation_probability(seq: PolySeq, x: float, nmax: int) -> tuple[float, float]:
    """Truncated series value and the magnitude of its last term.

    Raises:
        NotConverged: if the last term exceeds 1e-10 of the value.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if nmax > seq.nmax:
        raise ValueError("sequence not built far enough")
    scale = 1.0 / math.expm1(2.0)
    value = 0.0
    last = 0.0
    for n in range(1, nmax + 1):
        hn = np.polynomial.polynomial.polyval(x, seq.antiderivative_coeffs(n))
        last = scale * 2.0**n / math.factorial(n) * float(hn)
        value += last
    if abs(last) > 1e-10 * abs(value):
        raise NotConverged(
            f"last series term {last:.3e} exceeds 1e-10 of p({x}) = {value:.6e}"
        )
    return value, abs(last)


def p_neutral(x: float) -> float:
    """Fixation probability when the selective gap vanishes: the frequency is
    a bounded martingale, so p(x) = x."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    return float(x)


def harmonicity_values(
    seq: PolySeq, coupling: CoupledMeasure, xs: np.ndarray, nmax: int | None = None
) -> np.ndarray:
    """Generator applied to the truncated p, pointwise on ``xs``.

    The exact fixation probability is harmonic; the truncation error of the
    series is the only contribution.
    """
    nmax = seq.nmax if nmax is None else nmax
    coeffs = fixation_series_coeffs(seq, nmax)
    xs = np.asarray(xs, dtype=float)
    c = coupling
    polyval = np.polynomial.polynomial.polyval
    p_up = polyval(xs[:, None] + c.ys[None, :] * (1.0 - xs[:, None]), coeffs)
    p_dn = polyval(xs[:, None] * (1.0 - c.ys - c.zs)[None, :], coeffs)
    p_x = polyval(xs, coeffs)
    integrand = xs[:, None] * p_up + (1.0 - xs[:, None]) * p_dn - p_x[:, None]
    return integrand @ c.masses


def harmonicity_residual(
    seq: PolySeq, coupling: CoupledMeasure, grid: int, nmax: int | None = None
) -> float:
    """Max of |generator applied to the truncated p| over a uniform x-grid."""
    xs = np.linspace(0.0, 1.0, grid)
    return float(np.abs(harmonicity_values(seq, coupling, xs, nmax)).max())


def defining_identity_residual(
    seq: PolySeq,
    coupling: CoupledMeasure,
    grid: int = 21,
    nmax: int | None = None,
) -> float:
    """Largest relative violation of the defining identity of the polynomials.

    Both expectations are evaluated by Gauss-Legendre quadrature straight
    against the coupling's atoms (independently of the moment table and the
    recursion), with h_n evaluated pointwise.  Each order is normalized by
    the larger side's magnitude (floored at 1): the polynomials' pointwise
    scale grows without bound in n, so an absolute residual would only
    measure floating-point granularity at that scale.
    """
    nmax = seq.nmax if nmax is None else nmax
    xs = np.linspace(0.0, 1.0, grid)
    nodes, wts = gauss_legendre_01(_QUAD_ORDER)
    c = coupling
    tilde_mass = float(c.masses @ (c.ys * c.ys + c.zs))
    worst = 0.0
    for n in range(1, nmax + 1):
        lhs = np.zeros_like(xs)
        rhs = np.zeros_like(xs)
        for wa, ya, za in zip(c.masses, c.ys, c.zs):
            if ya > 0.0:
                w_vals = nodes * ya  # W = U y on the u-grid
                shrunk = xs[:, None] * (1.0 - w_vals[None, :])
                quotient = (seq.h(n, shrunk + w_vals[None, :]) - seq.h(n, shrunk)) \
                    / w_vals[None, :]
                lhs += (wa * ya * ya / tilde_mass) * (quotient @ (2.0 * nodes * wts))
            if za > 0.0:
                args = xs[:, None] * (1.0 - ya - za * nodes[None, :])
                rhs += (wa * za / tilde_mass) * (seq.h(n - 1, args) @ wts)
        rhs *= n
        scale = max(1.0, float(np.abs(lhs).max()), float(np.abs(rhs).max()))
        worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
    return worst
