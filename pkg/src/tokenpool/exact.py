"""Exact product-form engine for token-based load balancing.

Builds the two balance tables over the box of aggregate states x <= tokens:

* Phi(0) = 1,  Phi(x)  = sum_{i active} Phi(x - e_i) / mu(active(x))
* Lambda(0) = 1, Lambda(y) = sum_{i active} Lambda(y - e_i) / nu(active(y))

The stationary distribution of the dynamic policy is
pi(x) = Phi(x) Lambda(tokens - x) / G.  Tables are stored in the log domain
with per-level rescaling so large instances neither overflow nor underflow.

A load sweep does not need new tables: scaling every arrival rate by a
common factor a multiplies Lambda(y) by a^-|y|, which shows up here as an
extra |x| * log(a) term in the log weight of state x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import CompatModel, indices_of

DEFAULT_STATE_CAP = 10**7


class StateSpaceTooLarge(RuntimeError):
    """Raised when an exact computation would exceed the state-count cap."""


@dataclass
class StateSpace:
    """Mixed-radix encoding of the box {x : 0 <= x <= tokens}.

    State x maps to index sum(x[i] * strides[i]); the complement tokens - x
    maps to index (size - 1) - index(x).
    """

    ell: tuple[int, ...]
    strides: tuple[int, ...]
    size: int
    levels: np.ndarray        # |x| per state
    active_mask: np.ndarray   # bitmask of classes with x_i > 0
    full_mask: np.ndarray     # bitmask of classes with x_i = ell_i
    level_index: list[np.ndarray]

    def index_of(self, x) -> int:
        return int(sum(int(v) * s for v, s in zip(x, self.strides)))

    def state_of(self, idx: int) -> tuple[int, ...]:
        out = []
        for i, s in enumerate(self.strides):
            out.append((idx // s) % (self.ell[i] + 1))
        return tuple(out)


def build_state_space(model: CompatModel, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    ell = model.tokens
    size = 1
    for l in ell:
        size *= l + 1
    if size > cap:
        raise StateSpaceTooLarge(
            f"aggregate state space has {size} states, above the cap of {cap}"
        )
    n = len(ell)
    strides = [0] * n
    acc = 1
    for i in range(n - 1, -1, -1):
        strides[i] = acc
        acc *= ell[i] + 1
    idx = np.arange(size, dtype=np.int64)
    levels = np.zeros(size, dtype=np.int64)
    active = np.zeros(size, dtype=np.int64)
    full = np.zeros(size, dtype=np.int64)
    for i in range(n):
        digit = (idx // strides[i]) % (ell[i] + 1)
        levels += digit
        active |= (digit > 0).astype(np.int64) << i
        full |= (digit == ell[i]).astype(np.int64) << i
    max_level = int(levels.max()) if size else 0
    level_index = [np.flatnonzero(levels == k) for k in range(max_level + 1)]
    return StateSpace(ell, tuple(strides), size, levels, active, full, level_index)


def _set_function_table(model: CompatModel, which: str) -> np.ndarray:
    """Vector of mu(A) (or nu(A)) over all 2^N class subsets A."""
    n = model.n_classes
    masks = model.server_masks if which == "mu" else model.type_masks
    union = np.zeros(1 << n, dtype=np.int64)
    for m in range(1, 1 << n):
        low = m & -m
        union[m] = union[m ^ low] | masks[low.bit_length() - 1]
    if which == "mu":
        weights = model.servers
    else:
        weights = tuple(t.rate for t in model.types)
    out = np.zeros(1 << n)
    for s, w in enumerate(weights):
        out += w * ((union >> s) & 1)
    return out


def _balance_log_table(space: StateSpace, total_rate: np.ndarray) -> np.ndarray:
    """Log-domain balance table; ``total_rate`` is mu or nu of the active set."""
    raw = np.zeros(space.size)
    raw[0] = 1.0
    n_levels = len(space.level_index)
    logscale = np.zeros(n_levels)
    ell, strides = space.ell, space.strides
    for lvl in range(1, n_levels):
        sel = space.level_index[lvl]
        acc = np.zeros(len(sel))
        for i in range(len(ell)):
            digit = (sel // strides[i]) % (ell[i] + 1)
            has = digit > 0
            acc[has] += raw[sel[has] - strides[i]]
        vals = acc / total_rate[sel]
        m = vals.max()
        raw[sel] = vals / m
        logscale[lvl] = logscale[lvl - 1] + math.log(m)
    return np.log(raw) + logscale[space.levels]


@dataclass
class BalanceTables:
    """Phi and Lambda over the aggregate state space, in log domain."""

    model: CompatModel
    space: StateSpace
    log_phi: np.ndarray
    log_lam: np.ndarray

    @classmethod
    def build(cls, model: CompatModel, cap: int = DEFAULT_STATE_CAP) -> "BalanceTables":
        space = build_state_space(model, cap)
        mu_table = _set_function_table(model, "mu")
        nu_table = _set_function_table(model, "nu")
        # total_rate at the empty state is unused (level 0 is the base case)
        mu_states = mu_table[space.active_mask]
        nu_states = nu_table[space.active_mask]
        log_phi = _balance_log_table(space, mu_states)
        log_lam = _balance_log_table(space, nu_states)
        return cls(model, space, log_phi, log_lam)

    def phi(self, x) -> float:
        return math.exp(self.log_phi[self.space.index_of(x)])

    def lam(self, y) -> float:
        return math.exp(self.log_lam[self.space.index_of(y)])

    def log_weights(self, nu_scale: float = 1.0) -> np.ndarray:
        """log(Phi(x) * Lambda(tokens - x)) per state, at scaled arrival rates."""
        lw = self.log_phi + self.log_lam[::-1]
        if nu_scale != 1.0:
            lw = lw + self.space.levels * math.log(nu_scale)
        return lw

    def log_g(self, nu_scale: float = 1.0) -> float:
        return float(logsumexp(self.log_weights(nu_scale)))

    @property
    def g(self) -> float:
        return math.exp(self.log_g())


def build_tables(model: CompatModel, cap: int = DEFAULT_STATE_CAP) -> BalanceTables:
    return BalanceTables.build(model, cap)


def stationary_distribution(
    tables: BalanceTables, nu_scale: float = 1.0
) -> tuple[np.ndarray, float]:
    """Normalized pi over the state space (index order) and the constant G."""
    lw = tables.log_weights(nu_scale)
    lg = float(logsumexp(lw))
    return np.exp(lw - lg), math.exp(lg)


def per_class_service_rates(tables: BalanceTables, x) -> dict[int, float]:
    """phi_i(x) = Phi(x - e_i) / Phi(x) for every active class i."""
    space = tables.space
    idx = space.index_of(x)
    out = {}
    for i, v in enumerate(x):
        if v > 0:
            out[i] = math.exp(tables.log_phi[idx - space.strides[i]] - tables.log_phi[idx])
    return out


def per_class_arrival_rates(tables: BalanceTables, y, nu_scale: float = 1.0) -> dict[int, float]:
    """lambda_i(y) = Lambda(y - e_i) / Lambda(y) for every class with a free token."""
    space = tables.space
    idx = space.index_of(y)
    out = {}
    for i, v in enumerate(y):
        if v > 0:
            r = math.exp(tables.log_lam[idx - space.strides[i]] - tables.log_lam[idx])
            out[i] = r * nu_scale
    return out


@dataclass
class PerfReport:
    beta_k: np.ndarray   # per-type blocking probability
    psi_s: np.ndarray    # per-server idle probability
    beta: float          # arrival-weighted average blocking
    eta: float           # capacity-weighted resource occupancy
    rho: float           # total offered load
    g: float             # normalization constant (may overflow to inf for huge tables)
    log_g: float


def _report_from_weights(
    model: CompatModel,
    log_w: np.ndarray,
    full_mask: np.ndarray,
    active_mask: np.ndarray,
    nu_scale: float,
) -> PerfReport:
    w = np.exp(log_w - log_w.max())
    total = float(w.sum())
    beta_k = np.zeros(model.n_types)
    for k in range(model.n_types):
        ck = model.classes_for_type(k)
        blocked = (full_mask & ck) == ck
        beta_k[k] = float(w[blocked].sum()) / total
    psi_s = np.zeros(model.n_servers)
    for s in range(model.n_servers):
        ds = model.classes_for_server(s)
        idle = (active_mask & ds) == 0
        psi_s[s] = float(w[idle].sum()) / total
    nu_k = np.array([t.rate for t in model.types]) * nu_scale
    mu_s = np.array(model.servers)
    beta = float(nu_k @ beta_k / nu_k.sum())
    eta = float(mu_s @ (1.0 - psi_s) / mu_s.sum())
    rho = float(nu_k.sum() / mu_s.sum())
    lg = float(logsumexp(log_w))
    with np.errstate(over="ignore"):
        g = math.exp(lg) if lg < 709 else math.inf
    return PerfReport(beta_k, psi_s, beta, eta, rho, g, lg)


def performance_report(tables: BalanceTables, nu_scale: float = 1.0) -> PerfReport:
    """Blocking, idleness, and occupancy under the dynamic token policy."""
    space = tables.space
    return _report_from_weights(
        tables.model,
        tables.log_weights(nu_scale),
        space.full_mask,
        space.active_mask,
        nu_scale,
    )


# -- static load balancing ---------------------------------------------------


def uniform_static_assignment(model: CompatModel) -> np.ndarray:
    """Equal split of each type over its compatible classes."""
    p = np.zeros((model.n_types, model.n_classes))
    for k in range(model.n_types):
        compat = indices_of(model.classes_for_type(k))
        for i in compat:
            p[k, i] = 1.0 / len(compat)
    return p


def proportional_static_assignment(model: CompatModel) -> np.ndarray:
    """Split each type over compatible classes proportionally to their capacity."""
    p = np.zeros((model.n_types, model.n_classes))
    for k in range(model.n_types):
        compat = indices_of(model.classes_for_type(k))
        caps = [model.mu(1 << i) for i in compat]
        total = sum(caps)
        for i, c in zip(compat, caps):
            p[k, i] = c / total
    return p


def check_assignment(model: CompatModel, p: np.ndarray) -> None:
    if p.shape != (model.n_types, model.n_classes):
        raise ValueError("assignment matrix has wrong shape")
    if (p < -1e-12).any():
        raise ValueError("assignment matrix has negative entries")
    for k in range(model.n_types):
        compat = model.classes_for_type(k)
        for i in range(model.n_classes):
            if p[k, i] > 1e-12 and not (compat >> i) & 1:
                raise ValueError(f"type {k} assigned to incompatible class {i}")
        if abs(p[k].sum() - 1.0) > 1e-9:
            raise ValueError(f"row {k} of the assignment matrix does not sum to 1")


def class_arrival_rates(model: CompatModel, p: np.ndarray, nu_scale: float = 1.0) -> np.ndarray:
    nu_k = np.array([t.rate for t in model.types]) * nu_scale
    return nu_k @ p


def _server_load_matrix(model: CompatModel) -> np.ndarray:
    """Row s, column i: per-unit class-i arrival contribution to server-s load.

    The work of class i is spread over its servers proportionally to their
    capacities, so each of them sees the same load increment lambda_i / mu(S_i).
    """
    a = np.zeros((model.n_servers, model.n_classes))
    for i in range(model.n_classes):
        cap = model.mu(1 << i)
        for s in model.classes[i].servers:
            a[s, i] = 1.0 / cap
    return a


def best_static_assignment(model: CompatModel) -> np.ndarray:
    """Assignment minimizing the maximum per-server offered load.

    Solved as a linear program; ties among optimal assignments are broken by
    maximizing the entropy of the rows, which makes the result deterministic.
    """
    from scipy.optimize import linprog

    K, N, S = model.n_types, model.n_classes, model.n_servers
    nu_k = np.array([t.rate for t in model.types])
    load = _server_load_matrix(model)
    # variables: p[k, i] flattened, then z
    nvar = K * N + 1
    c = np.zeros(nvar)
    c[-1] = 1.0
    a_ub = np.zeros((S, nvar))
    for s in range(S):
        for k in range(K):
            a_ub[s, k * N : (k + 1) * N] = nu_k[k] * load[s]
        a_ub[s, -1] = -1.0
    b_ub = np.zeros(S)
    a_eq = np.zeros((K, nvar))
    for k in range(K):
        a_eq[k, k * N : (k + 1) * N] = 1.0
    b_eq = np.ones(K)
    bounds = []
    for k in range(K):
        compat = model.classes_for_type(k)
        for i in range(N):
            bounds.append((0.0, 1.0) if (compat >> i) & 1 else (0.0, 0.0))
    bounds.append((0.0, None))
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"static assignment LP failed: {res.message}")
    z_star = res.x[-1]

    import cvxpy as cp

    p = cp.Variable((K, N), nonneg=True)
    cons = [cp.sum(p, axis=1) == 1]
    for k in range(K):
        compat = model.classes_for_type(k)
        for i in range(N):
            if not (compat >> i) & 1:
                cons.append(p[k, i] == 0)
    per_server = cp.vstack(
        [cp.sum(cp.multiply(nu_k[:, None] * load[s][None, :], p)) for s in range(S)]
    )
    cons.append(per_server <= z_star * (1 + 1e-9) + 1e-12)
    prob = cp.Problem(cp.Maximize(cp.sum(cp.entr(p))), cons)
    prob.solve()
    if p.value is None:
        raise RuntimeError("entropy tie-break failed")
    out = np.clip(p.value, 0.0, None)
    out /= out.sum(axis=1, keepdims=True)
    return out


def _classes_disjoint(model: CompatModel) -> bool:
    seen = 0
    for m in model.server_masks:
        if seen & m:
            return False
        seen |= m
    return True


def _loss_queue_distribution(a: float, ell: int) -> np.ndarray:
    """Stationary law of a single birth-death loss queue with load ``a``."""
    if a == 0.0:
        out = np.zeros(ell + 1)
        out[0] = 1.0
        return out
    # normalize by the largest term for stability at any load
    logs = np.arange(ell + 1) * math.log(a)
    w = np.exp(logs - logs.max())
    return w / w.sum()


def static_report(
    model: CompatModel,
    assignment: np.ndarray,
    nu_scale: float = 1.0,
    cap: int = DEFAULT_STATE_CAP,
) -> PerfReport:
    """Performance under state-independent random assignment.

    With pairwise disjoint class server sets the pool factorizes into
    independent per-class loss queues and is evaluated in closed form;
    otherwise the product-form distribution is enumerated (subject to the
    state-count cap).
    """
    check_assignment(model, assignment)
    lam = class_arrival_rates(model, assignment, nu_scale)
    nu_k = np.array([t.rate for t in model.types]) * nu_scale
    mu_s = np.array(model.servers)
    rho = float(nu_k.sum() / mu_s.sum())
    if _classes_disjoint(model):
        p_full = np.zeros(model.n_classes)
        p_empty = np.ones(model.n_classes)
        for i in range(model.n_classes):
            dist = _loss_queue_distribution(lam[i] / model.mu(1 << i), model.tokens[i])
            p_full[i] = dist[-1]
            p_empty[i] = dist[0]
        beta_k = np.array([float(assignment[k] @ p_full) for k in range(model.n_types)])
        psi_s = np.zeros(model.n_servers)
        for s in range(model.n_servers):
            prob = 1.0
            for i in indices_of(model.classes_for_server(s)):
                prob *= p_empty[i]
            psi_s[s] = prob
        beta = float(nu_k @ beta_k / nu_k.sum())
        eta = float(mu_s @ (1.0 - psi_s) / mu_s.sum())
        return PerfReport(beta_k, psi_s, beta, eta, rho, math.nan, math.nan)
    log_w, space = _static_log_weights(model, lam, cap)
    rep = _report_from_weights(model, log_w, space.full_mask, space.active_mask, nu_scale)
    # blocking under static assignment is per assigned class, not per free token
    w = np.exp(log_w - log_w.max())
    total = float(w.sum())
    beta_k = np.zeros(model.n_types)
    for k in range(model.n_types):
        for i in indices_of(model.classes_for_type(k)):
            full = (space.full_mask >> i) & 1 == 1
            beta_k[k] += assignment[k, i] * float(w[full].sum()) / total
    rep.beta_k = beta_k
    rep.beta = float(nu_k @ beta_k / nu_k.sum())
    return rep


def _static_log_weights(model: CompatModel, lam: np.ndarray, cap: int):
    space = build_state_space(model, cap)
    mu_table = _set_function_table(model, "mu")
    log_phi = _balance_log_table(space, mu_table[space.active_mask])
    idx = np.arange(space.size, dtype=np.int64)
    log_w = log_phi.copy()
    for i in range(model.n_classes):
        digit = (idx // space.strides[i]) % (model.tokens[i] + 1)
        if lam[i] == 0.0:
            log_w[digit > 0] = -np.inf  # classes with no traffic stay empty
        else:
            log_w = log_w + digit * math.log(lam[i])
    return log_w, space


def static_stationary(
    model: CompatModel,
    assignment: np.ndarray,
    nu_scale: float = 1.0,
    cap: int = DEFAULT_STATE_CAP,
) -> tuple[np.ndarray, float]:
    """Enumerated stationary law pi(x) = Phi(x) prod lam_i^{x_i} / G."""
    check_assignment(model, assignment)
    lam = class_arrival_rates(model, assignment, nu_scale)
    log_w, _space = _static_log_weights(model, lam, cap)
    lg = float(logsumexp(log_w))
    return np.exp(log_w - lg), math.exp(lg)


# -- ideal baseline ----------------------------------------------------------


def ideal_blocking(rho: float) -> float:
    """Lowest average blocking compatible with stability at load ``rho``."""
    return max(0.0, 1.0 - 1.0 / rho) if rho > 0 else 0.0


def per_type_blocking_bounds(model: CompatModel, nu_scale: float = 1.0) -> np.ndarray:
    """Per-type lower bounds on blocking imposed by reachable capacity."""
    out = np.zeros(model.n_types)
    for k in range(model.n_types):
        cap = model.mu(model.classes_for_type(k))
        rate = model.types[k].rate * nu_scale
        out[k] = max(0.0, 1.0 - cap / rate)
    return out
