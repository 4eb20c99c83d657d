"""Brute-force Markov chain oracles for small instances.

The detailed state is a pair of sequences (c, t): jobs in service in arrival
order and available tokens in release order.  This module enumerates that
state space explicitly, builds the transition rate matrix from the same
per-position rate helpers the simulator uses, solves the balance equations
numerically, and compares the result against the product-form prediction.
Everything here is deliberately independent of the recursive table engine so
that agreement between the two routes is meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .exact import BalanceTables
from .model import CompatModel
from .simulate import seize_rates, service_rates_fcfs

# Enumeration refuses above this many detailed states; the point of the
# oracle is exhaustiveness on instances small enough to trust.
MAX_DETAILED_STATES = 200_000


def _multiset_sequences(counts: list[int]) -> list[tuple[int, ...]]:
    """All orderings of a multiset given as per-symbol counts."""
    out: list[tuple[int, ...]] = []
    seq: list[int] = []
    total = sum(counts)

    def rec():
        if len(seq) == total:
            out.append(tuple(seq))
            return
        for i, c in enumerate(counts):
            if c:
                counts[i] -= 1
                seq.append(i)
                rec()
                seq.pop()
                counts[i] += 1

    rec()
    return out


def _count_sequences(counts) -> int:
    total = sum(counts)
    n = math.factorial(total)
    for c in counts:
        n //= math.factorial(c)
    return n


def count_detailed_states(model: CompatModel) -> int:
    """Number of (job sequence, token sequence) pairs without enumerating."""
    total = 0
    for x in _iter_counts(model.tokens):
        y = [l - v for l, v in zip(model.tokens, x)]
        total += _count_sequences(x) * _count_sequences(y)
    return total


def _iter_counts(ell):
    if not ell:
        yield ()
        return
    for head in range(ell[0] + 1):
        for rest in _iter_counts(ell[1:]):
            yield (head,) + rest


def enumerate_detailed_states(model: CompatModel) -> list[tuple[tuple, tuple]]:
    """Every reachable-by-construction detailed state (c, t).

    c lists the classes of jobs in service in arrival order, t the classes of
    free tokens in release order; per class the two lengths sum to the token
    budget.  Raises when the count exceeds ``MAX_DETAILED_STATES``.
    """
    total = count_detailed_states(model)
    if total > MAX_DETAILED_STATES:
        raise ValueError(
            f"detailed state space has {total} states, "
            f"above the oracle cap of {MAX_DETAILED_STATES}"
        )
    states = []
    for x in _iter_counts(model.tokens):
        y = [l - v for l, v in zip(model.tokens, x)]
        for c in _multiset_sequences(list(x)):
            for t in _multiset_sequences(list(y)):
                states.append((c, t))
    return states


@dataclass
class Generator:
    """Sparse rate matrix over an explicit detailed state list."""

    states: list[tuple[tuple, tuple]]
    index: dict[tuple[tuple, tuple], int]
    q: sp.csr_matrix

    @property
    def n(self) -> int:
        return len(self.states)


def build_generator(model: CompatModel, states=None) -> Generator:
    """Transition rates of the detailed chain under FCFS service.

    A completion at job position p moves that class's token to the tail of
    the token sequence; a token seizure at position q moves the token to the
    tail of the job sequence.  Rates come from the same helpers the
    simulator uses, so this matrix is a genuine second opinion only for the
    solver and the product-form comparison, not for the rates themselves.
    """
    if states is None:
        states = enumerate_detailed_states(model)
    index = {st: i for i, st in enumerate(states)}
    rows, cols, vals = [], [], []
    for i, (c, t) in enumerate(states):
        for p, rate in enumerate(service_rates_fcfs(model, c)):
            if rate <= 0.0:
                continue
            nxt = (c[:p] + c[p + 1:], t + (c[p],))
            rows.append(i)
            cols.append(index[nxt])
            vals.append(rate)
        for p, rate in enumerate(seize_rates(model, t)):
            if rate <= 0.0:
                continue
            nxt = (c + (t[p],), t[:p] + t[p + 1:])
            rows.append(i)
            cols.append(index[nxt])
            vals.append(rate)
    n = len(states)
    q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    q = q - sp.diags(np.asarray(q.sum(axis=1)).ravel())
    return Generator(states=states, index=index, q=q.tocsr())


@dataclass
class IrreducibilityReport:
    irreducible: bool
    n_components: int
    witness: tuple | None = None  # a pair of mutually unreachable states


def check_irreducible(gen: Generator) -> IrreducibilityReport:
    """Strong connectivity of the transition graph, with a witness on failure."""
    n_comp, labels = connected_components(gen.q, directed=True, connection="strong")
    if n_comp == 1:
        return IrreducibilityReport(True, 1)
    a = gen.states[int(np.argmax(labels == labels.min()))]
    other = labels != labels.min()
    b = gen.states[int(np.argmax(other))]
    return IrreducibilityReport(False, int(n_comp), (a, b))


def solve_ctmc(gen: Generator) -> np.ndarray:
    """Stationary distribution by direct linear solve.

    One balance equation is replaced by the normalization constraint; the
    residual of the full balance system is checked afterwards.
    """
    n = gen.n
    qt = gen.q.T.tolil()
    qt[n - 1, :] = 1.0
    b = np.zeros(n)
    b[n - 1] = 1.0
    if n <= 1500:
        pi = np.linalg.solve(qt.toarray(), b)
    else:
        pi = spsolve(qt.tocsr(), b)
    residual = np.abs(gen.q.T @ pi).max()
    if residual > 1e-12 * max(1.0, float(np.abs(gen.q.data).max(initial=0.0))):
        raise ArithmeticError(f"balance residual {residual:.3e} too large")
    return pi


def product_form_weights(model: CompatModel, states) -> np.ndarray:
    """Unnormalized product-form weights Phi(c) * Lambda(t) per detailed state.

    Computed directly from the sequence recursions (reciprocals of prefix
    set-function values), independently of the level-by-level tables.
    """
    w = np.empty(len(states))
    for i, (c, t) in enumerate(states):
        v = 1.0
        seen = 0
        for cls in c:
            seen |= 1 << cls
            v /= model.mu(seen)
        seen = 0
        for cls in t:
            seen |= 1 << cls
            v /= model.nu(seen)
        w[i] = v
    return w


@dataclass
class ProductFormReport:
    tv_distance: float          # between solved and product-form laws
    max_abs_diff: float
    aggregate_tv: float         # after summing onto job count vectors
    g: float                    # product-form normalization constant


def compare_product_form(
    model: CompatModel,
    gen: Generator | None = None,
    tables: BalanceTables | None = None,
) -> ProductFormReport:
    """Solve the chain numerically and compare with the product form.

    When ``tables`` is given, the solved law is also aggregated over job
    count vectors and compared with the table-based stationary law, tying
    the two independent routes together.
    """
    if gen is None:
        gen = build_generator(model)
    pi = solve_ctmc(gen)
    w = product_form_weights(model, gen.states)
    g = w.sum()
    q = w / g
    tv = 0.5 * np.abs(pi - q).sum()
    agg_tv = math.nan
    if tables is not None:
        from .exact import stationary_distribution

        pi_x, _ = stationary_distribution(tables)
        agg = np.zeros_like(pi_x)
        for i, (c, _t) in enumerate(gen.states):
            x = [0] * model.n_classes
            for cls in c:
                x[cls] += 1
            agg[tables.space.index_of(x)] += pi[i]
        agg_tv = 0.5 * float(np.abs(agg - pi_x).sum())
    return ProductFormReport(
        tv_distance=float(tv),
        max_abs_diff=float(np.abs(pi - q).max()),
        aggregate_tv=agg_tv,
        g=float(g),
    )


def check_rate_identities(
    model: CompatModel, tables: BalanceTables, gen: Generator | None = None
) -> float:
    """Max error of the per-class rate identities linking sequences to counts.

    For every count vector x, the table value phi_i(x) must equal the
    product-form average over sequences with counts x of the total FCFS rate
    received by class i; symmetrically for the token side.  Returns the
    largest absolute deviation found.
    """
    if gen is None:
        gen = build_generator(model)
    from .exact import per_class_arrival_rates, per_class_service_rates

    w = product_form_weights(model, gen.states)
    n = model.n_classes
    space = tables.space
    mass = np.zeros(space.size)
    job_rate = np.zeros((space.size, n))
    token_rate = np.zeros((space.size, n))
    for i, (c, t) in enumerate(gen.states):
        x = [0] * n
        for cls in c:
            x[cls] += 1
        idx = space.index_of(x)
        mass[idx] += w[i]
        for p, r in enumerate(service_rates_fcfs(model, c)):
            job_rate[idx, c[p]] += w[i] * r
        for p, r in enumerate(seize_rates(model, t)):
            token_rate[idx, t[p]] += w[i] * r
    err = 0.0
    for idx in range(space.size):
        x = space.state_of(idx)
        y = tuple(l - v for l, v in zip(model.tokens, x))
        phi = per_class_service_rates(tables, x)
        lam = per_class_arrival_rates(tables, y)
        for i in range(n):
            err = max(err, abs(job_rate[idx, i] / mass[idx] - phi.get(i, 0.0)))
            err = max(err, abs(token_rate[idx, i] / mass[idx] - lam.get(i, 0.0)))
    return err


def check_overtake_rates(model: CompatModel, order) -> bool:
    """True iff every later class can overtake every earlier one at positive rate.

    For positions p > q in ``order``, the class at p placed directly behind
    the class at q must receive a strictly positive rate in the token queue
    (a type compatible with it but not with the class ahead) or in the job
    queue (a server likewise).  This is the single-step move irreducibility
    arguments rely on.
    """
    for p in range(1, len(order)):
        for q in range(p):
            i, j = order[p], order[q]
            seize = model.nu([j, i]) - model.nu([j])
            serve = model.mu([j, i]) - model.mu([j])
            if seize <= 0.0 and serve <= 0.0:
                return False
    return True


@dataclass
class CertificateReport:
    n_states: int
    irreducible: bool
    tv_distance: float
    aggregate_tv: float
    rate_identity_error: float
    witness: tuple | None = None

    @property
    def ok(self) -> bool:
        return self.irreducible and self.tv_distance < 1e-9


def certify(model: CompatModel, tables: BalanceTables | None = None) -> CertificateReport:
    """Full small-instance certificate: irreducibility plus product form."""
    gen = build_generator(model)
    irr = check_irreducible(gen)
    if not irr.irreducible:
        return CertificateReport(
            n_states=gen.n,
            irreducible=False,
            tv_distance=math.nan,
            aggregate_tv=math.nan,
            rate_identity_error=math.nan,
            witness=irr.witness,
        )
    pf = compare_product_form(model, gen, tables)
    rid = check_rate_identities(model, tables, gen) if tables is not None else math.nan
    return CertificateReport(
        n_states=gen.n,
        irreducible=True,
        tv_distance=pf.tv_distance,
        aggregate_tv=pf.aggregate_tv,
        rate_identity_error=rid,
    )
