"""Discrete-event simulation of the token-based load balancing mechanism.

The dynamic policy keeps all available tokens in a single bucket sorted by
release time; an arriving job seizes the first compatible token and is
blocked if none exists.  Service follows either the sequential first-come
first-served discipline (per-position rates, order dependent) or the
balanced fair sharing (per-class rates read off the Phi table).

Between events every job depletes at a constant rate, so the next completion
time is exact; there is no time-stepping error.  Ties are broken
deterministically: completions before arrivals, lower position first.
"""
from __future__ import annotations

import math
from bisect import bisect_right, insort
from dataclasses import dataclass, field

import numpy as np

from .exact import BalanceTables
from .model import CompatModel

BLOCKED = -1


# -- pure per-state rate helpers (shared with the Markov-chain oracle) -------


def service_rates_fcfs(model: CompatModel, c) -> list[float]:
    """Per-position service rates of the job sequence ``c`` under FCFS.

    Position p receives the capacity of the servers compatible with its class
    but with none of the earlier jobs; rates telescope to mu(active(c)).
    """
    rates = []
    seen = 0
    prev = 0.0
    for cls in c:
        seen |= 1 << cls
        cur = model.mu(seen)
        rates.append(cur - prev)
        prev = cur
    return rates


def seize_rates(model: CompatModel, t) -> list[float]:
    """Per-position seize rates of the token sequence ``t``.

    The token in position p is seized by the types compatible with its class
    but with none of the earlier tokens; rates telescope to nu(active(t)).
    """
    rates = []
    seen = 0
    prev = 0.0
    for cls in t:
        seen |= 1 << cls
        cur = model.nu(seen)
        rates.append(cur - prev)
        prev = cur
    return rates


def admit(model: CompatModel, t, k: int) -> int:
    """Position of the first token in ``t`` compatible with type ``k``.

    Returns ``BLOCKED`` when no compatible token is available; blocking is a
    counted outcome, not an error.
    """
    for p, cls in enumerate(t):
        if k in model.classes[cls].types:
            return p
    return BLOCKED


# -- results -----------------------------------------------------------------


@dataclass
class RunResult:
    arrivals: np.ndarray        # per-type arrival counts in the measured window
    blocked: np.ndarray         # per-type blocked counts
    idle_time: np.ndarray       # per-server idle time
    duration: float             # measured simulated time
    events: int
    seed: int | None = None
    occupancy: dict[tuple, float] | None = None

    @property
    def beta_k(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            out = self.blocked / self.arrivals
        return np.nan_to_num(out, nan=0.0)

    @property
    def psi_s(self) -> np.ndarray:
        if self.duration == 0:
            return np.ones_like(self.idle_time)
        return self.idle_time / self.duration

    @property
    def beta(self) -> float:
        total = self.arrivals.sum()
        return float(self.blocked.sum() / total) if total else 0.0


@dataclass
class SimEstimate:
    """Across-replication means with 95% normal-approximation half-widths."""

    beta_k: np.ndarray
    beta_k_halfwidth: np.ndarray
    psi_s: np.ndarray
    psi_s_halfwidth: np.ndarray
    beta: float
    beta_halfwidth: float
    eta: float
    arrivals: np.ndarray
    events: int
    runs: int
    seed: int


class _Draws:
    """Batched draws from a numpy generator; cheap scalar access."""

    def __init__(self, rng, batch: int = 8192):
        self.rng = rng
        self.batch = batch
        self._exp: list[float] = []
        self._uni: list[float] = []

    def exp(self) -> float:
        if not self._exp:
            self._exp = self.rng.standard_exponential(self.batch).tolist()
        return self._exp.pop()

    def uniform(self) -> float:
        if not self._uni:
            self._uni = self.rng.random(self.batch).tolist()
        return self._uni.pop()


def _draw_size(draws: _Draws, dist) -> float:
    if dist.kind == "exponential":
        return draws.exp() * dist.mean
    u = draws.uniform()
    acc = 0.0
    for p, m in dist.branches:
        acc += p
        if u <= acc:
            return draws.exp() * m
    return draws.exp() * dist.branches[-1][1]


def _check_horizon(events: int, warmup: int) -> None:
    if events <= 0:
        raise ValueError("measured horizon must be positive")
    if warmup < 0:
        raise ValueError("warmup must be nonnegative")


def _pick_type(cum: list[float], u: float) -> int:
    return min(bisect_right(cum, u * cum[-1]), len(cum) - 1)


def run_dynamic(
    model: CompatModel,
    events: int,
    warmup: int = 0,
    seed=0,
    alloc: str = "fcfs",
    tables: BalanceTables | None = None,
    nu_scale: float = 1.0,
    track_occupancy: bool = False,
) -> RunResult:
    """Simulate the deterministic token mechanism.

    ``alloc`` selects the resource allocation: ``"fcfs"`` for sequential
    scheduling with per-position rates, ``"balanced_fairness"`` for per-class
    balanced fair sharing (requires ``tables`` unless the class server sets
    are pairwise disjoint).
    """
    return _simulate(
        model, "dynamic", alloc, events, warmup, seed, nu_scale, tables, None,
        track_occupancy,
    )


def run_randomized(
    model: CompatModel,
    tables: BalanceTables,
    events: int,
    warmup: int = 0,
    seed=0,
    nu_scale: float = 1.0,
    split: str = "flow",
    track_occupancy: bool = False,
) -> RunResult:
    """Simulate the randomized insensitive load balancing (cross-check policy).

    Only the aggregate per-class assignment rates are canonical; the per-type
    split is not.  ``split="flow"`` solves a transportation problem per token
    state so the aggregate rates are reproduced exactly (the state chain then
    matches the product form).  ``split="proportional"`` picks a compatible
    free class with probability proportional to its balanced arrival rate;
    it is simpler but biases the aggregate rates on asymmetric graphs.
    """
    if tables is None:
        raise ValueError("randomized policy requires balance tables")
    if split not in ("flow", "proportional"):
        raise ValueError(f"unknown split rule {split!r}")
    return _simulate(
        model, "randomized-" + split, "balanced_fairness", events, warmup,
        seed, nu_scale, tables, None, track_occupancy,
    )


def _flow_split(model: CompatModel, tables: BalanceTables, y: tuple) -> list[list[float]]:
    """Per-type cumulative assignment probabilities realizing the balanced rates.

    Feasibility follows from the balanced arrival rates lying in the
    polymatroid capacity set of the type-class graph; totals balance because
    they both equal nu of the free classes.
    """
    import networkx as nx

    from .exact import per_class_arrival_rates

    lam = per_class_arrival_rates(tables, y)
    g = nx.DiGraph()
    eligible = []
    for k in range(model.n_types):
        kbit = 1 << k
        if any(model.type_masks[i] & kbit and y[i] > 0 for i in range(model.n_classes)):
            eligible.append(k)
            g.add_edge("src", ("t", k), capacity=model.types[k].rate)
            for i, rate in lam.items():
                if model.type_masks[i] & kbit:
                    g.add_edge(("t", k), ("c", i))  # uncapacitated
    for i, rate in lam.items():
        g.add_edge(("c", i), "snk", capacity=rate)
    if not eligible:
        return [[0.0] * model.n_classes for _ in range(model.n_types)]
    _value, flow = nx.maximum_flow(g, "src", "snk")
    cum = []
    for k in range(model.n_types):
        row = [0.0] * model.n_classes
        if k in eligible:
            out = flow.get(("t", k), {})
            for node, f in out.items():
                row[node[1]] = f / model.types[k].rate
            total = sum(row)
            if total > 0:
                row = [v / total for v in row]  # absorb solver round-off
        acc = 0.0
        crow = []
        for v in row:
            acc += v
            crow.append(acc)
        cum.append(crow)
    return cum


def run_static(
    model: CompatModel,
    assignment: np.ndarray,
    events: int,
    warmup: int = 0,
    seed=0,
    alloc: str = "balanced_fairness",
    tables: BalanceTables | None = None,
    nu_scale: float = 1.0,
    track_occupancy: bool = False,
) -> RunResult:
    """Simulate state-independent random assignment with the given matrix."""
    return _simulate(
        model, "static", alloc, events, warmup, seed, nu_scale, tables,
        np.asarray(assignment, dtype=float), track_occupancy,
    )


def _simulate(
    model: CompatModel,
    policy: str,
    alloc: str,
    events: int,
    warmup: int,
    seed,
    nu_scale: float,
    tables: BalanceTables | None,
    assignment: np.ndarray | None,
    track_occupancy: bool,
) -> RunResult:
    _check_horizon(events, warmup)
    if alloc not in ("fcfs", "balanced_fairness"):
        raise ValueError(f"unknown allocation {alloc!r}")
    n = model.n_classes
    n_types = model.n_types
    n_servers = model.n_servers
    ell = model.tokens
    class_types = model.type_masks
    size_dists = [t.size for t in model.types]

    disjoint = True
    seen = 0
    for m in model.server_masks:
        if seen & m:
            disjoint = False
            break
        seen |= m
    use_bf = alloc == "balanced_fairness"
    if use_bf and tables is None and not disjoint:
        raise ValueError("balanced fairness on overlapping server sets requires tables")
    randomized = policy.startswith("randomized")
    if randomized and tables is None:
        raise ValueError("randomized policy requires tables")
    flow_split = policy == "randomized-flow"
    split_cache: dict[int, list[list[float]]] = {}
    if use_bf and disjoint and tables is None:
        bf_fixed_rates = [model.mu(1 << i) for i in range(n)]
    else:
        bf_fixed_rates = None
    if tables is not None:
        strides = tables.space.strides
        log_phi = tables.log_phi
        log_lam = tables.log_lam
        top = tables.space.size - 1

    rng = np.random.default_rng(seed)
    draws = _Draws(rng)
    rates_k = [t.rate * nu_scale for t in model.types]
    total_rate = sum(rates_k)
    cum_rates = list(np.cumsum(rates_k))
    if assignment is not None:
        assign_cum = [list(np.cumsum(assignment[k])) for k in range(n_types)]

    # state
    bucket: list[int] = []
    for i in range(n):
        bucket.extend([i] * ell[i])
    x = [0] * n
    active_mask = 0
    x_idx = 0  # mixed-radix index of x, maintained only when tables exist

    # fcfs job bookkeeping: parallel to arrival order
    jobs: list[list] = []      # [cls, remaining, rate]
    serving: list[list] = []   # jobs with positive rate
    union_mask = 0             # server mask of all jobs in arrival order
    # balanced-fairness bookkeeping: per-class sorted completion thresholds
    thresh: list[list[float]] = [[] for _ in range(n)]
    virt: list[float] = [0.0] * n

    idle_cache: dict[int, list[int]] = {}
    arrivals = [0] * n_types
    blocked = [0] * n_types
    idle_time = [0.0] * n_servers
    clock = 0.0
    occ: dict[int, float] | None = {} if track_occupancy else None

    def idle_servers(mask: int) -> list[int]:
        got = idle_cache.get(mask)
        if got is None:
            busy = model.server_union_mask(mask)
            got = [s for s in range(n_servers) if not (busy >> s) & 1]
            idle_cache[mask] = got
        return got

    next_arrival = draws.exp() / total_rate
    total_events = warmup + events
    count = 0
    measured_start = 0.0
    while count < total_events:
        # next completion
        dt_comp = math.inf
        comp_cls = -1
        comp_job = None
        if use_bf:
            phi_rate = [0.0] * n
            if active_mask:
                for i in range(n):
                    if x[i] == 0:
                        continue
                    if bf_fixed_rates is not None:
                        r = bf_fixed_rates[i]
                    else:
                        r = math.exp(log_phi[x_idx - strides[i]] - log_phi[x_idx])
                    phi_rate[i] = r
                    dt = (thresh[i][0] - virt[i]) * x[i] / r
                    if dt < dt_comp:
                        dt_comp = dt
                        comp_cls = i
        else:
            for job in serving:
                dt = job[1] / job[2]
                if dt < dt_comp:
                    dt_comp = dt
                    comp_job = job
        dt_event = dt_comp if dt_comp <= next_arrival else next_arrival
        # advance time
        if dt_event > 0.0:
            for s in idle_servers(active_mask):
                idle_time[s] += dt_event
            if occ is not None:
                key = x_idx if tables is not None else tuple(x)
                occ[key] = occ.get(key, 0.0) + dt_event
            clock += dt_event
        if dt_comp <= next_arrival:
            next_arrival -= dt_event
            i = comp_cls
            if use_bf:
                for j in range(n):
                    if phi_rate[j]:
                        virt[j] += phi_rate[j] / x[j] * dt_event
                thresh[i].pop(0)
                x[i] -= 1
                if x[i] == 0:
                    active_mask &= ~(1 << i)
                    virt[i] = 0.0
                if tables is not None:
                    x_idx -= strides[i]
            else:
                for job in serving:
                    job[1] -= job[2] * dt_event
                pos = jobs.index(comp_job)
                jobs.pop(pos)
                i = comp_job[0]
                x[i] -= 1
                if x[i] == 0:
                    active_mask &= ~(1 << i)
                if tables is not None:
                    x_idx -= strides[i]
                # recompute rates from the removal position on
                mask = 0
                for job in jobs[:pos]:
                    mask |= model.server_masks[job[0]]
                prev = model.capacity_of_server_mask(mask)
                for job in jobs[pos:]:
                    mask |= model.server_masks[job[0]]
                    cur = model.capacity_of_server_mask(mask)
                    job[2] = cur - prev
                    prev = cur
                union_mask = mask
                serving = [job for job in jobs if job[2] > 0.0]
            bucket.append(i)
        else:
            # arrival
            if not use_bf:
                for job in serving:
                    job[1] -= job[2] * dt_event
            else:
                for j in range(n):
                    if phi_rate[j]:
                        virt[j] += phi_rate[j] / x[j] * dt_event
            next_arrival = draws.exp() / total_rate
            k = _pick_type(cum_rates, draws.uniform())
            arrivals[k] += 1
            chosen = BLOCKED
            if policy == "dynamic":
                kbit = 1 << k
                for p, cls in enumerate(bucket):
                    if class_types[cls] & kbit:
                        chosen = cls
                        bucket.pop(p)
                        break
            elif randomized:
                if flow_split:
                    cum = split_cache.get(x_idx)
                    if cum is None:
                        y = tuple(ell[i] - x[i] for i in range(n))
                        cum = _flow_split(model, tables, y)
                        split_cache[x_idx] = cum
                    row = cum[k]
                    if row and row[-1] > 0.0:
                        chosen = min(
                            bisect_right(row, draws.uniform() * row[-1]), n - 1
                        )
                        bucket.remove(chosen)
                else:
                    kbit = 1 << k
                    y_idx = top - x_idx
                    cand = []
                    weights = []
                    acc = 0.0
                    for i in range(n):
                        if class_types[i] & kbit and x[i] < ell[i]:
                            w = math.exp(log_lam[y_idx - strides[i]] - log_lam[y_idx])
                            acc += w
                            cand.append(i)
                            weights.append(acc)
                    if cand:
                        u = draws.uniform() * acc
                        chosen = cand[bisect_right(weights, u)] if len(cand) > 1 else cand[0]
                        bucket.remove(chosen)
            else:  # static
                i = _pick_type(assign_cum[k], draws.uniform())
                if x[i] < ell[i]:
                    chosen = i
                    bucket.remove(i)
            if chosen == BLOCKED:
                blocked[k] += 1
            else:
                i = chosen
                size = _draw_size(draws, size_dists[k])
                x[i] += 1
                active_mask |= 1 << i
                if tables is not None:
                    x_idx += strides[i]
                if use_bf:
                    insort(thresh[i], virt[i] + size)
                else:
                    union_before = model.capacity_of_server_mask(union_mask)
                    union_mask |= model.server_masks[i]
                    rate = model.capacity_of_server_mask(union_mask) - union_before
                    job = [i, size, rate]
                    jobs.append(job)
                    if rate > 0.0:
                        serving.append(job)
        count += 1
        if count == warmup:
            arrivals = [0] * n_types
            blocked = [0] * n_types
            idle_time = [0.0] * n_servers
            measured_start = clock
            if occ is not None:
                occ = {}
    result_occ = None
    if occ is not None:
        dur = clock - measured_start
        if tables is not None:
            result_occ = {
                tables.space.state_of(i): v / dur for i, v in occ.items()
            }
        else:
            result_occ = {k: v / dur for k, v in occ.items()}
    return RunResult(
        arrivals=np.array(arrivals, dtype=float),
        blocked=np.array(blocked, dtype=float),
        idle_time=np.array(idle_time),
        duration=clock - measured_start,
        events=events,
        occupancy=result_occ,
    )


def replicate(run_fn, runs: int, seed: int = 0, capacities=None) -> SimEstimate:
    """Aggregate independent replications of ``run_fn(seed_sequence)``.

    Seeds are spawned from a single master seed so replications are
    independent yet reproducible; at least two runs are required for a
    variance estimate.  ``capacities`` enables the occupancy estimate.
    """
    if runs < 2:
        raise ValueError("need at least 2 replications for a variance estimate")
    streams = np.random.SeedSequence(seed).spawn(runs)
    results = [run_fn(s) for s in streams]
    beta_k = np.stack([r.beta_k for r in results])
    psi_s = np.stack([r.psi_s for r in results])
    beta = np.array([r.beta for r in results])
    if capacities is not None:
        mu_s = np.asarray(capacities, dtype=float)
        eta = float(((1.0 - psi_s) @ mu_s).mean() / mu_s.sum())
    else:
        eta = math.nan
    z = 1.959963984540054  # 95% two-sided normal quantile

    def hw(a):
        return z * a.std(axis=0, ddof=1) / math.sqrt(runs)

    return SimEstimate(
        beta_k=beta_k.mean(axis=0),
        beta_k_halfwidth=hw(beta_k),
        psi_s=psi_s.mean(axis=0),
        psi_s_halfwidth=hw(psi_s),
        beta=float(beta.mean()),
        beta_halfwidth=float(hw(beta)),
        eta=eta,
        arrivals=np.stack([r.arrivals for r in results]).sum(axis=0),
        events=sum(r.events for r in results),
        runs=runs,
        seed=seed,
    )
