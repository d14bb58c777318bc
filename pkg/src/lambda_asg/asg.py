"""Ancestral selection graph: Poisson event stream read in both directions.

Each reproduction event carries a reproducer, a strength pair (y, z) and one
arrow label per individual: *neutral* (drawn with probability y) replaces the
target unconditionally, *selective* (probability z) replaces it only when the
reproducer carries the advantaged type.  Individuals are indexed 0..N-1.

Forward in time the events propagate types (advantaged through both arrow
kinds, disadvantaged through neutral only); backward in time they drive the
potential-ancestor sweep: lines hit by a neutral arrow always merge into the
reproducer line, lines hit by a selective arrow stay and the reproducer line
is added.  The count of potential ancestors is Markov; its rates are exposed
here as an oracle and as a standalone simulator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from scipy.stats import binom

from .errors import SizeLimit
from .measures import CoupledMeasure
from .paths import FrequencyPath
from .rng import (
    TAG_ASG,
    TAG_CONSISTENCY,
    TAG_LINECOUNT_PATH,
    pathwise_chunks,
    run_jobs,
    substream,
)

OUTCOME_NONE = 0
OUTCOME_NEUTRAL = 1
OUTCOME_SELECTIVE = 2

# Above this many stored outcome labels, realizations must be streamed to a
# binary log instead of held in memory.
MAX_IN_MEMORY_OUTCOMES = 10**7

LOG_MAGIC = b"ASG1"


@dataclass(frozen=True)
class AsgEvent:
    t: float
    reproducer: int
    y: float
    z: float
    outcome: np.ndarray  # (N,) uint8 arrow labels; self-entry is inert


@dataclass(frozen=True)
class AsgRealization:
    """A time-sorted event log, stored columnar."""

    N: int
    horizon: float
    times: np.ndarray        # (E,) strictly increasing
    reproducers: np.ndarray  # (E,) int64 in [0, N)
    ys: np.ndarray           # (E,)
    zs: np.ndarray           # (E,)
    outcomes: np.ndarray     # (E, N) uint8

    def __len__(self) -> int:
        return len(self.times)

    def event(self, idx: int) -> AsgEvent:
        return AsgEvent(
            t=float(self.times[idx]),
            reproducer=int(self.reproducers[idx]),
            y=float(self.ys[idx]),
            z=float(self.zs[idx]),
            outcome=self.outcomes[idx],
        )

    def events(self) -> Iterator[AsgEvent]:
        return (self.event(i) for i in range(len(self)))


@dataclass(frozen=True)
class TypeAssignment:
    """Types of all N individuals; True marks the disadvantaged type."""

    minus: np.ndarray

    @classmethod
    def all_minus(cls, N: int) -> "TypeAssignment":
        return cls(minus=np.ones(N, dtype=bool))

    @classmethod
    def all_plus(cls, N: int) -> "TypeAssignment":
        return cls(minus=np.zeros(N, dtype=bool))

    @classmethod
    def from_minus_set(cls, N: int, members: Iterable[int]) -> "TypeAssignment":
        minus = np.zeros(N, dtype=bool)
        minus[list(members)] = True
        return cls(minus=minus)

    @property
    def minus_count(self) -> int:
        return int(self.minus.sum())

    def __len__(self) -> int:
        return len(self.minus)


def generate_asg(
    N: int,
    coupling: CoupledMeasure,
    horizon: float,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> AsgRealization:
    """Draw one realization of the event stream on [0, horizon].

    Inter-event times are exponential at the coupling's total mass; the
    reproducer is uniform, the strength pair is an atom drawn by mass, and
    each individual's arrow label is sampled independently from (y, z).

    Raises:
        SizeLimit: if the realization would store more than
            ``MAX_IN_MEMORY_OUTCOMES`` labels; use :func:`stream_asg_to_log`.
    """
    if N < 2:
        raise ValueError("need at least two individuals")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if rng is None:
        if seed is None:
            raise ValueError("pass a seed or an explicit generator")
        rng = substream(seed, TAG_ASG, 0)
    rate = coupling.total_mass
    times = _poisson_times(rate, horizon, rng)
    E = len(times)
    if E * N > MAX_IN_MEMORY_OUTCOMES:
        raise SizeLimit(
            f"{E} events x {N} individuals exceeds the in-memory cap; "
            "stream to disk with stream_asg_to_log"
        )
    reproducers = rng.integers(0, N, size=E)
    if E > 0:
        atom_idx = rng.choice(len(coupling), size=E, p=coupling.masses / rate)
        ys = coupling.ys[atom_idx]
        zs = coupling.zs[atom_idx]
    else:
        ys = np.empty(0)
        zs = np.empty(0)
    u = rng.random((E, N))
    outcomes = np.zeros((E, N), dtype=np.uint8)
    outcomes[u < ys[:, None]] = OUTCOME_NEUTRAL
    outcomes[(u >= ys[:, None]) & (u < (ys + zs)[:, None])] = OUTCOME_SELECTIVE
    return AsgRealization(
        N=N, horizon=horizon, times=times, reproducers=reproducers,
        ys=ys, zs=zs, outcomes=outcomes,
    )


def _poisson_times(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0.0:
        return np.empty(0)
    times: list[float] = []
    t = 0.0
    # draw in blocks sized by the expected count plus slack
    block = max(int(rate * horizon + 6 * np.sqrt(rate * horizon)) + 4, 16)
    while True:
        for dt in rng.exponential(1.0 / rate, size=block):
            t += dt
            if t > horizon:
                return np.asarray(times)
            times.append(t)


def propagate_forward(asg: AsgRealization, init: TypeAssignment) -> TypeAssignment:
    """Push types from time 0 through all events.

    An advantaged reproducer converts every neutral- or selective-hit
    individual; a disadvantaged reproducer converts neutral-hit individuals
    only.  The reproducer's own label is inert (it rewrites its own type).
    """
    if len(init) != asg.N:
        raise ValueError("type assignment length must equal N")
    minus = init.minus.copy()
    for e in range(len(asg)):
        out = asg.outcomes[e]
        if minus[asg.reproducers[e]]:
            minus[out == OUTCOME_NEUTRAL] = True
        else:
            minus[out != OUTCOME_NONE] = False
    return TypeAssignment(minus=minus)


def potential_ancestors(
    asg: AsgRealization,
    sample: Iterable[int],
    from_time: float,
    to_time: float,
) -> set[int]:
    """Potential ancestors at ``to_time`` of a sample alive at ``from_time``.

    Sweeps events in (to_time, from_time] backward.  At each event touching
    the current set: members hit by a neutral arrow are removed (they merge
    into the reproducer line) and the reproducer is added; a selective hit
    alone also adds the reproducer while the hit members stay.  Removals are
    applied before the addition, so a mixed event keeps selective-hit lines.
    """
    if not 0 <= to_time <= from_time <= asg.horizon:
        raise ValueError("need 0 <= to_time <= from_time <= horizon")
    members = np.zeros(asg.N, dtype=bool)
    members[list(sample)] = True
    if not members.any():
        raise ValueError("sample must be nonempty")
    lo = int(np.searchsorted(asg.times, to_time, side="right"))
    hi = int(np.searchsorted(asg.times, from_time, side="right"))
    for e in range(hi - 1, lo - 1, -1):
        out = asg.outcomes[e]
        r = asg.reproducers[e]
        hit = members & (out != OUTCOME_NONE)
        hit[r] = False
        if hit.any():
            members[hit & (out == OUTCOME_NEUTRAL)] = False
            members[r] = True
    return {int(i) for i in np.nonzero(members)[0]}


def line_count_rates(
    N: int, coupling: CoupledMeasure, n: int
) -> tuple[np.ndarray, float]:
    """Transition rates of the potential-ancestor count at value ``n``.

    Returns ``(coalesce, branch)``: ``coalesce[k]`` is the rate of
    ``n -> n - k`` for k = 1..n-1 (index 0 unused), ``branch`` the rate of
    ``n -> n + 1``.  A coalescence by k happens when a member reproducer hits
    k of the other n-1 member lines neutrally, or an outside reproducer hits
    k+1 member lines neutrally; a branch needs an outside reproducer with no
    neutral hit and at least one selective hit among the n lines.
    """
    if not 1 <= n <= N:
        raise ValueError("need 1 <= n <= N")
    c = coupling
    coalesce = np.zeros(max(n, 1))
    branch = 0.0
    if len(c) == 0:
        return coalesce, branch
    if n >= 2:
        ks = np.arange(1, n)
        inside = (n / N) * (binom.pmf(ks[:, None], n - 1, c.ys[None, :]) @ c.masses)
        outside = (1.0 - n / N) * (
            binom.pmf(ks[:, None] + 1, n, c.ys[None, :]) @ c.masses
        )
        coalesce[1:] = inside + outside
    branch = float(
        (1.0 - n / N) * (c.masses @ ((1.0 - c.ys) ** n - (1.0 - c.ys - c.zs) ** n))
    )
    return coalesce, branch


def simulate_line_count(
    N: int, coupling: CoupledMeasure, n0: int, horizon: float, seed: int,
    replicate: int = 0,
) -> FrequencyPath:
    """Continuous-time Markov chain of the potential-ancestor count."""
    if not 1 <= n0 <= N:
        raise ValueError("need 1 <= n0 <= N")
    rng = substream(seed, TAG_LINECOUNT_PATH, replicate)
    rate_cache: dict[int, tuple[np.ndarray, np.ndarray, float]] = {}

    def state_rates(n: int) -> tuple[np.ndarray, np.ndarray, float]:
        if n not in rate_cache:
            coalesce, branch = line_count_rates(N, coupling, n)
            targets = np.concatenate([n - np.arange(1, n), [n + 1]])
            rates = np.concatenate([coalesce[1:], [branch]])
            rate_cache[n] = (targets, rates, float(rates.sum()))
        return rate_cache[n]

    t = 0.0
    n = n0
    times = [0.0]
    values = [n0]
    while True:
        targets, rates, total = state_rates(n)
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        n = int(rng.choice(targets, p=rates / total))
        times.append(t)
        values.append(n)
    return FrequencyPath(times=np.asarray(times), values=np.asarray(values, dtype=np.int64))


def _consistency_chunk(args: tuple) -> tuple[int, int]:
    N, coupling, horizon, seed, r_start, r_stop = args
    checked = 0
    violations = 0
    for r in range(r_start, r_stop):
        rng = substream(seed, TAG_CONSISTENCY, r)
        realization = generate_asg(N, coupling, horizon, rng=rng)
        init = TypeAssignment(minus=rng.random(N) < 0.5)
        final = propagate_forward(realization, init)
        for i in range(N):
            ancestors = potential_ancestors(realization, {i}, horizon, 0.0)
            plus_reachable = any(not init.minus[j] for j in ancestors)
            checked += 1
            if plus_reachable != (not final.minus[i]):
                violations += 1
    return checked, violations


def ancestry_consistency_check(
    N: int,
    coupling: CoupledMeasure,
    horizon: float,
    replicates: int,
    seed: int,
    threads: int = 1,
) -> tuple[int, int]:
    """Forward/backward agreement on random realizations.

    For each replicate, random initial types are propagated forward; every
    individual's final type must be advantaged exactly when its
    potential-ancestor set at time 0 contains an advantaged individual.
    Returns (individuals checked, violations); any violation falsifies the
    graph construction.
    """
    jobs = [
        (N, coupling, horizon, seed, start, stop)
        for start, stop in pathwise_chunks(replicates)
    ]
    parts = run_jobs(_consistency_chunk, jobs, threads)
    checked = sum(p[0] for p in parts)
    violations = sum(p[1] for p in parts)
    return checked, violations


# -- binary event log ---------------------------------------------------------

def _record_dtype(N: int) -> np.dtype:
    return np.dtype(
        [("t", "<f8"), ("reproducer", "<u4"), ("y", "<f8"), ("z", "<f8"),
         ("outcome", "u1", (N,))]
    )


def write_event_log(asg: AsgRealization, path: str) -> None:
    """Write the 16-byte header (magic, N, horizon) and packed event records."""
    records = np.empty(len(asg), dtype=_record_dtype(asg.N))
    records["t"] = asg.times
    records["reproducer"] = asg.reproducers
    records["y"] = asg.ys
    records["z"] = asg.zs
    records["outcome"] = asg.outcomes
    with open(path, "wb") as fh:
        fh.write(LOG_MAGIC)
        fh.write(struct.pack("<Id", asg.N, asg.horizon))
        fh.write(records.tobytes())


def read_event_log(path: str) -> AsgRealization:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != LOG_MAGIC:
            raise ValueError(f"not an ASG event log (magic {magic!r})")
        N, horizon = struct.unpack("<Id", fh.read(12))
        records = np.frombuffer(fh.read(), dtype=_record_dtype(N))
    return AsgRealization(
        N=N, horizon=horizon,
        times=records["t"].copy(),
        reproducers=records["reproducer"].astype(np.int64),
        ys=records["y"].copy(),
        zs=records["z"].copy(),
        outcomes=records["outcome"].copy(),
    )


def stream_asg_to_log(
    N: int,
    coupling: CoupledMeasure,
    horizon: float,
    seed: int,
    path: str,
    events_per_block: int = 4096,
) -> int:
    """Generate a realization directly to disk; returns the event count.

    Holds only ``events_per_block`` events in memory at a time, for
    realizations beyond the in-memory cap.
    """
    rng = substream(seed, TAG_ASG, 0)
    rate = coupling.total_mass
    dtype = _record_dtype(N)
    count = 0
    t = 0.0
    with open(path, "wb") as fh:
        fh.write(LOG_MAGIC)
        fh.write(struct.pack("<Id", N, horizon))
        if rate <= 0.0:
            return 0
        atom_p = coupling.masses / rate
        done = False
        while not done:
            block_t = []
            for dt in rng.exponential(1.0 / rate, size=events_per_block):
                t += dt
                if t > horizon:
                    done = True
                    break
                block_t.append(t)
            E = len(block_t)
            if E == 0:
                continue
            records = np.empty(E, dtype=dtype)
            records["t"] = block_t
            records["reproducer"] = rng.integers(0, N, size=E)
            atom_idx = rng.choice(len(coupling), size=E, p=atom_p)
            ys = coupling.ys[atom_idx]
            zs = coupling.zs[atom_idx]
            records["y"] = ys
            records["z"] = zs
            u = rng.random((E, N))
            out = np.zeros((E, N), dtype=np.uint8)
            out[u < ys[:, None]] = OUTCOME_NEUTRAL
            out[(u >= ys[:, None]) & (u < (ys + zs)[:, None])] = OUTCOME_SELECTIVE
            records["outcome"] = out
            fh.write(records.tobytes())
            count += E
    return count
