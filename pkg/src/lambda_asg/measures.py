"""Finite measures on [0, 1] and on the simplex, and their monotone coupling.

The reproduction law of the disadvantaged type (``lambda_minus``) and of the
advantaged type (``lambda_plus``) are finite atomic measures on [0, 1].  When
they are stochastically ordered they can be merged into a single *selective
coupling* on the simplex ``{(y, z): y >= 0, z >= 0, y + z <= 1}``: ``y`` is
the neutral reproduction strength shared by both types and ``z`` is the extra
("selective") strength available only to the advantaged type.  The coupling's
first marginal recovers ``lambda_minus`` and the pushforward of ``y + z``
recovers ``lambda_plus``.

Everything here is atoms-only: continuous densities are ingested by
deterministic binning (see :func:`measure_from_beta_density`), after which all
downstream integrals are exact finite sums.  Measures are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import OrderViolation, ZeroMass
from .quadrature import gauss_legendre_01

# Atoms lighter than this are numerical noise and dropped on construction.
MASS_DROP = 1e-15
# Absolute tolerance for tail-mass comparisons in the stochastic order.
ORDER_TOL = 1e-12


def _merge_atoms(keys: np.ndarray, masses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort atoms lexicographically by key rows and sum masses of duplicates."""
    if keys.ndim == 1:
        keys = keys[:, None]
    order = np.lexsort(keys.T[::-1])
    keys = keys[order]
    masses = masses[order]
    if len(masses) == 0:
        return keys, masses
    new_group = np.any(keys[1:] != keys[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(new_group)[0] + 1])
    merged = np.add.reduceat(masses, starts)
    return keys[starts], merged


@dataclass(frozen=True)
class FiniteMeasure1D:
    """A finite measure on [0, 1] stored as strictly increasing weighted atoms."""

    locations: np.ndarray
    masses: np.ndarray
    total_mass: float

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "FiniteMeasure1D":
        """Build from (location, mass) pairs; merges duplicates, drops dust.

        Raises:
            ValueError: if a location is outside [0, 1] or a mass is negative.
        """
        pairs = list(atoms)
        locs = np.asarray([p[0] for p in pairs], dtype=float)
        ms = np.asarray([p[1] for p in pairs], dtype=float)
        if np.any(locs < 0.0) or np.any(locs > 1.0):
            raise ValueError("atom locations must lie in [0, 1]")
        if np.any(ms < 0.0):
            raise ValueError("atom masses must be nonnegative")
        locs, ms = _merge_atoms(locs, ms)
        locs = locs[:, 0]
        keep = ms > MASS_DROP
        locs, ms = locs[keep], ms[keep]
        locs.setflags(write=False)
        ms.setflags(write=False)
        return cls(locations=locs, masses=ms, total_mass=float(ms.sum()))

    @classmethod
    def point_mass(cls, location: float, mass: float = 1.0) -> "FiniteMeasure1D":
        return cls.from_atoms([(location, mass)])

    def __len__(self) -> int:
        return len(self.locations)

    def scaled(self, factor: float) -> "FiniteMeasure1D":
        """Return the measure with all masses multiplied by ``factor >= 0``."""
        if factor < 0:
            raise ValueError("scale factor must be nonnegative")
        return FiniteMeasure1D.from_atoms(zip(self.locations, self.masses * factor))

    def tail_mass(self, x: float) -> float:
        """Mass of [x, 1]."""
        return float(self.masses[self.locations >= x - 1e-15].sum())

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.masses, f(self.locations)))

    def mean(self) -> float:
        return float(np.dot(self.masses, self.locations))


def measure_from_beta_density(
    a: float, b: float, grid: int = 256, mass: float = 1.0
) -> FiniteMeasure1D:
    """Bin a Beta(a, b) density onto ``grid`` equal cells.

    Each cell becomes one atom at its midpoint carrying the cell integral,
    computed with 16-node Gauss-Legendre (near-exact for smooth densities;
    endpoint singularities for a < 1 or b < 1 stay integrable because nodes
    are interior).  Total mass is renormalized to ``mass`` exactly.
    """
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    if grid < 1:
        raise ValueError("grid must be >= 1")
    from scipy.special import betaln

    nodes, weights = gauss_legendre_01(16)
    edges = np.linspace(0.0, 1.0, grid + 1)
    widths = np.diff(edges)
    # evaluation points per cell: shape (grid, 16)
    pts = edges[:-1, None] + widths[:, None] * nodes[None, :]
    lognorm = betaln(a, b)
    dens = np.exp((a - 1.0) * np.log(pts) + (b - 1.0) * np.log1p(-pts) - lognorm)
    cell_mass = widths * (dens @ weights)
    cell_mass *= mass / cell_mass.sum()
    mids = 0.5 * (edges[:-1] + edges[1:])
    return FiniteMeasure1D.from_atoms(zip(mids, cell_mass))


@dataclass(frozen=True)
class CoupledMeasure:
    """A finite measure on the simplex, stored as (y, z, mass) atoms.

    ``y`` is the neutral strength, ``z`` the selective gap.  Atoms at exactly
    (0, 0) are stripped on construction: they generate events that touch
    nobody and are invisible to every downstream process except as a
    constant no-op event rate.
    """

    ys: np.ndarray
    zs: np.ndarray
    masses: np.ndarray
    total_mass: float

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float, float]]) -> "CoupledMeasure":
        triples = list(atoms)
        ys = np.asarray([t[0] for t in triples], dtype=float)
        zs = np.asarray([t[1] for t in triples], dtype=float)
        ms = np.asarray([t[2] for t in triples], dtype=float)
        # clamp roundoff-level boundary violations, reject real ones
        for name, v in (("y", ys), ("z", zs)):
            if np.any(v < -ORDER_TOL):
                raise ValueError(f"{name} coordinates must be >= 0")
        if np.any(ys + zs > 1.0 + ORDER_TOL):
            raise ValueError("atoms must satisfy y + z <= 1")
        if np.any(ms < 0.0):
            raise ValueError("atom masses must be nonnegative")
        ys = np.clip(ys, 0.0, 1.0)
        zs = np.minimum(np.clip(zs, 0.0, 1.0), 1.0 - ys)
        keep = (ms > MASS_DROP) & ~((ys == 0.0) & (zs == 0.0))
        ys, zs, ms = ys[keep], zs[keep], ms[keep]
        keys, ms = _merge_atoms(np.column_stack([ys, zs]), ms)
        ys = keys[:, 0].copy()
        zs = keys[:, 1].copy()
        for arr in (ys, zs, ms):
            arr.setflags(write=False)
        return cls(ys=ys, zs=zs, masses=ms, total_mass=float(ms.sum()))

    def __len__(self) -> int:
        return len(self.masses)

    def scaled(self, factor: float) -> "CoupledMeasure":
        if factor < 0:
            raise ValueError("scale factor must be nonnegative")
        return CoupledMeasure.from_atoms(zip(self.ys, self.zs, self.masses * factor))

    def integrate(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
        """Sum of mass * f(y, z) over atoms."""
        return float(np.dot(self.masses, f(self.ys, self.zs)))

    def y_marginal(self) -> FiniteMeasure1D:
        """Law of the neutral coordinate y."""
        return FiniteMeasure1D.from_atoms(zip(self.ys, self.masses))

    def sum_marginal(self) -> FiniteMeasure1D:
        """Law of the total strength y + z."""
        return FiniteMeasure1D.from_atoms(zip(self.ys + self.zs, self.masses))

    def selective_mass(self) -> float:
        """Integral of z, the mean selective gap (expected selective arrows per event)."""
        return float(np.dot(self.masses, self.zs))


def transport_cost(coupling: CoupledMeasure) -> float:
    """Second moment of the selective gap, ``sum of mass * z**2``.

    In (lower, upper) marginal coordinates this is the squared-difference
    transport cost of the coupling; the quantile coupling minimizes it among
    all couplings of the same ordered pair.
    """
    return float(np.dot(coupling.masses, coupling.zs**2))


def integrate(coupling: CoupledMeasure, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """Integral of f(y, z) against the coupling."""
    return coupling.integrate(f)


def stochastic_order_leq(
    a: FiniteMeasure1D, b: FiniteMeasure1D, tol: float = ORDER_TOL
) -> bool:
    """True iff a[x, 1] <= b[x, 1] + tol for every x.

    Tail masses are piecewise constant with breakpoints at atom locations, so
    checking every atom location of either measure (plus x = 0) is exhaustive.
    """
    return order_violation_witness(a, b, tol) is None


def order_violation_witness(
    a: FiniteMeasure1D, b: FiniteMeasure1D, tol: float = ORDER_TOL
) -> float | None:
    """Return an x with a[x, 1] > b[x, 1] + tol, or None if the order holds."""
    xs = np.unique(np.concatenate([[0.0], a.locations, b.locations]))
    for x in xs:
        if a.tail_mass(x) > b.tail_mass(x) + tol:
            return float(x)
    return None


@dataclass(frozen=True)
class NormalizationRecord:
    """Probability-measure reduction of an ordered finite pair.

    ``mu_plus = lambda_plus / |lambda_plus|`` and
    ``mu_minus = lambda_minus / |lambda_plus| + c * delta_0`` with
    ``c = 1 - |lambda_minus| / |lambda_plus|``.  The original model is the
    normalized one run at event rate ``rate_scale = |lambda_plus|``; the
    compensating atom at 0 produces events that replace nobody.
    """

    mu_minus: FiniteMeasure1D
    mu_plus: FiniteMeasure1D
    c: float
    rate_scale: float


def normalize_pair(lm: FiniteMeasure1D, lp: FiniteMeasure1D) -> NormalizationRecord:
    """Reduce an ordered pair of finite measures to probability measures.

    Raises:
        ZeroMass: if ``lp`` has zero total mass.
        OrderViolation: if the pair is not ordered (tail masses).
    """
    if lp.total_mass <= 0.0:
        raise ZeroMass("lambda_plus must have positive total mass")
    w = order_violation_witness(lm, lp)
    if w is not None:
        raise OrderViolation(f"tail mass of lambda_minus exceeds lambda_plus at x={w}")
    scale = lp.total_mass
    c = 1.0 - lm.total_mass / scale
    c = max(c, 0.0)  # order at x=0 guarantees c >= 0 up to roundoff
    minus_atoms = list(zip(lm.locations, lm.masses / scale))
    if c > MASS_DROP:
        minus_atoms.append((0.0, c))
    return NormalizationRecord(
        mu_minus=FiniteMeasure1D.from_atoms(minus_atoms),
        mu_plus=lp.scaled(1.0 / scale),
        c=c,
        rate_scale=scale,
    )


def quantile_coupling(a: FiniteMeasure1D, b: FiniteMeasure1D) -> CoupledMeasure:
    """Monotone (inverse-CDF) coupling of an ordered pair of equal total mass.

    Sweeps the merged breakpoints of both cumulative-mass functions; each
    u-interval of length m contributes one atom ``(F_a^{-1}, F_b^{-1} - F_a^{-1})``
    of mass m.  Intended for probability measures; any pair of equal total
    mass works after the same construction on [0, total_mass].

    Raises:
        OrderViolation: if the inputs are not stochastically ordered (a
            nonnegative gap coordinate would be impossible).
        ValueError: if total masses differ beyond tolerance or are zero.
    """
    if abs(a.total_mass - b.total_mass) > 1e-9:
        raise ValueError("quantile coupling needs equal total masses; normalize first")
    if a.total_mass <= 0.0:
        raise ValueError("cannot couple zero-mass measures")
    w = order_violation_witness(a, b)
    if w is not None:
        raise OrderViolation(f"tail mass of the lower measure exceeds the upper at x={w}")
    cum_a = np.cumsum(a.masses)
    cum_b = np.cumsum(b.masses)
    breaks = np.unique(np.concatenate([cum_a, cum_b]))
    atoms = []
    prev = 0.0
    ia = ib = 0
    for u in breaks:
        m = u - prev
        if m > MASS_DROP:
            y = a.locations[ia]
            gap = b.locations[ib] - y
            if gap < -1e-9:
                raise OrderViolation(
                    f"inverse CDFs cross at cumulative mass {u}: gap {gap}"
                )
            atoms.append((y, max(gap, 0.0), m))
        prev = u
        #  advance inverse-CDF indices past exhausted atoms
        while ia < len(cum_a) and cum_a[ia] <= u + MASS_DROP:
            ia += 1
        while ib < len(cum_b) and cum_b[ib] <= u + MASS_DROP:
            ib += 1
        ia = min(ia, len(a.locations) - 1)
        ib = min(ib, len(b.locations) - 1)
    return CoupledMeasure.from_atoms(atoms)


def coupling_from_pair(lm: FiniteMeasure1D, lp: FiniteMeasure1D) -> CoupledMeasure:
    """Full pipeline: normalize an ordered finite pair, couple, restore rate.

    The result drives every event-driven process at total event rate
    ``|lambda_plus|`` (minus any stripped (0,0) no-op atoms).
    """
    rec = normalize_pair(lm, lp)
    return quantile_coupling(rec.mu_minus, rec.mu_plus).scaled(rec.rate_scale)


def marginal_mismatch(
    coupling: CoupledMeasure,
    lm: FiniteMeasure1D,
    lp: FiniteMeasure1D,
    ignore_zero: bool = True,
) -> float:
    """Largest per-location mass discrepancy between the coupling's marginals
    and a declared pair.

    With ``ignore_zero`` the location 0 is skipped on the y-marginal side
    (compensating atoms at 0 and stripped (0,0) atoms live there).
    """

    def mismatch(got: FiniteMeasure1D, want: FiniteMeasure1D) -> float:
        locs = np.unique(np.concatenate([got.locations, want.locations]))
        worst = 0.0
        for x in locs:
            if ignore_zero and x == 0.0:
                continue
            g = got.masses[np.abs(got.locations - x) < 1e-13].sum()
            t = want.masses[np.abs(want.locations - x) < 1e-13].sum()
            worst = max(worst, abs(float(g - t)))
        return worst

    return max(
        mismatch(coupling.y_marginal(), lm),
        mismatch(coupling.sum_marginal(), lp),
    )


def measure_from_config(spec: dict) -> FiniteMeasure1D:
    """Parse a measure description: {"atoms": [[loc, mass], ...]} or
    {"density": {"kind": "beta", "params": [a, b], "grid": n, "mass": m}}."""
    if "atoms" in spec:
        return FiniteMeasure1D.from_atoms([(float(l), float(m)) for l, m in spec["atoms"]])
    if "density" in spec:
        d = spec["density"]
        if d.get("kind") != "beta":
            raise ValueError(f"unknown density kind: {d.get('kind')!r}")
        a, b = (float(v) for v in d["params"])
        return measure_from_beta_density(
            a, b, grid=int(d.get("grid", 256)), mass=float(d.get("mass", 1.0))
        )
    raise ValueError("measure spec needs 'atoms' or 'density'")


def coupling_from_config(spec: dict) -> CoupledMeasure:
    """Parse a coupling description {"atoms": [[y, z, mass], ...]}."""
    if "atoms" not in spec:
        raise ValueError("coupling spec needs 'atoms'")
    return CoupledMeasure.from_atoms(
        [(float(y), float(z), float(m)) for y, z, m in spec["atoms"]]
    )
