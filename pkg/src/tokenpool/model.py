"""Tripartite compatibility model: servers, job types, and token-limited classes.

A class couples a set of servers (where its jobs may run) with a set of job
types (which arrivals may be assigned to it) and a token budget limiting its
concurrency.  Class subsets are carried as integer bitmasks throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

# Bitmask representation caps the class count at the machine word size.
# Practical instances have at most ~20 classes.
MAX_CLASSES = 62


def mask_of(indices: Iterable[int]) -> int:
    """Pack an iterable of indices into a bitmask."""
    m = 0
    for i in indices:
        m |= 1 << i
    return m


def indices_of(mask: int) -> list[int]:
    """Unpack a bitmask into a sorted list of indices."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class SizeDistribution:
    """Job size distribution: exponential or a finite mixture of exponentials.

    ``mean`` always holds the overall mean; ``branches`` is a tuple of
    (probability, mean) pairs and is empty for the plain exponential.
    """

    kind: str
    mean: float = 1.0
    branches: tuple[tuple[float, float], ...] = ()

    @staticmethod
    def exponential(mean: float = 1.0) -> "SizeDistribution":
        return SizeDistribution("exponential", mean=float(mean))

    @staticmethod
    def hyperexponential(branches: Iterable[tuple[float, float]]) -> "SizeDistribution":
        br = tuple((float(p), float(m)) for p, m in branches)
        mean = sum(p * m for p, m in br)
        return SizeDistribution("hyperexponential", mean=mean, branches=br)

    def sample(self, rng) -> float:
        if self.kind == "exponential":
            return rng.exponential(self.mean)
        u = rng.random()
        acc = 0.0
        for p, m in self.branches:
            acc += p
            if u <= acc:
                return rng.exponential(m)
        return rng.exponential(self.branches[-1][1])


@dataclass(frozen=True)
class JobType:
    rate: float
    size: SizeDistribution = field(default_factory=SizeDistribution.exponential)


@dataclass(frozen=True)
class JobClass:
    servers: frozenset[int]
    types: frozenset[int]
    tokens: int


class CompatModel:
    """Immutable server pool description with memoized set-function values.

    ``mu(A)`` is the aggregate capacity of the servers compatible with at
    least one class in the subset ``A``; ``nu(A)`` is the aggregate arrival
    rate of the types that may be assigned to at least one class in ``A``.
    Both are normalized, non-decreasing and submodular.
    """

    def __init__(
        self,
        servers: Sequence[float],
        types: Sequence[JobType],
        classes: Sequence[JobClass],
    ):
        self.servers = tuple(float(c) for c in servers)
        self.types = tuple(types)
        self.classes = tuple(classes)
        if len(self.classes) > MAX_CLASSES:
            raise ValueError(
                f"at most {MAX_CLASSES} classes supported, got {len(self.classes)}"
            )
        self.server_masks = tuple(mask_of(c.servers) for c in self.classes)
        self.type_masks = tuple(mask_of(c.types) for c in self.classes)
        self.tokens = tuple(c.tokens for c in self.classes)
        self._server_union: dict[int, int] = {0: 0}
        self._type_union: dict[int, int] = {0: 0}
        self._mu: dict[int, float] = {0: 0.0}
        self._nu: dict[int, float] = {0: 0.0}

    # -- sizes ---------------------------------------------------------------

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def total_capacity(self) -> float:
        return sum(self.servers)

    @property
    def total_arrival_rate(self) -> float:
        return sum(t.rate for t in self.types)

    @property
    def load(self) -> float:
        """Total offered load: aggregate arrival rate over aggregate capacity."""
        return self.total_arrival_rate / self.total_capacity

    # -- set functions -------------------------------------------------------

    def _union(self, class_mask: int, memo: dict, source: tuple) -> int:
        got = memo.get(class_mask)
        if got is not None:
            return got
        low = class_mask & -class_mask
        rest = self._union(class_mask ^ low, memo, source)
        got = rest | source[low.bit_length() - 1]
        memo[class_mask] = got
        return got

    def server_union_mask(self, class_mask: int) -> int:
        return self._union(class_mask, self._server_union, self.server_masks)

    def type_union_mask(self, class_mask: int) -> int:
        return self._union(class_mask, self._type_union, self.type_masks)

    def capacity_of_server_mask(self, server_mask: int) -> float:
        return sum(self.servers[s] for s in indices_of(server_mask))

    def mu(self, class_subset) -> float:
        """Aggregate capacity of the servers reachable from ``class_subset``."""
        mask = class_subset if isinstance(class_subset, int) else mask_of(class_subset)
        got = self._mu.get(mask)
        if got is None:
            got = self.capacity_of_server_mask(self.server_union_mask(mask))
            self._mu[mask] = got
        return got

    def nu(self, class_subset) -> float:
        """Aggregate arrival rate of the types reachable from ``class_subset``."""
        mask = class_subset if isinstance(class_subset, int) else mask_of(class_subset)
        got = self._nu.get(mask)
        if got is None:
            tmask = self.type_union_mask(mask)
            got = sum(self.types[k].rate for k in indices_of(tmask))
            self._nu[mask] = got
        return got

    # -- compatibility lookups -----------------------------------------------

    def classes_for_type(self, k: int) -> int:
        """Bitmask of the classes that type-k jobs may be assigned to."""
        return mask_of(i for i in range(self.n_classes) if k in self.classes[i].types)

    def classes_for_server(self, s: int) -> int:
        """Bitmask of the classes whose jobs server s can process."""
        return mask_of(i for i in range(self.n_classes) if s in self.classes[i].servers)

    def scaled(self, nu_scale: float) -> "CompatModel":
        """Copy with every type arrival rate multiplied by ``nu_scale``."""
        types = tuple(JobType(t.rate * nu_scale, t.size) for t in self.types)
        return CompatModel(self.servers, types, self.classes)


def mu_of(model: CompatModel, class_subset) -> float:
    return model.mu(class_subset)


def nu_of(model: CompatModel, class_subset) -> float:
    return model.nu(class_subset)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def separable(self) -> bool:
        return not any(w.startswith("separability") for w in self.warnings)


def validate(model: CompatModel) -> ValidationReport:
    """Check model assumptions; hard errors never abort, they are reported.

    Separability violations are warnings only: exact computations stay valid,
    but irreducibility of the detailed token chain is no longer guaranteed.
    """
    rep = ValidationReport()
    for s, cap in enumerate(model.servers):
        if cap <= 0:
            rep.errors.append(f"server {s}: capacity {cap} is not positive")
    for k, t in enumerate(model.types):
        if t.rate <= 0:
            rep.errors.append(f"type {k}: arrival rate {t.rate} is not positive")
        d = t.size
        if d.kind == "hyperexponential":
            total = sum(p for p, _ in d.branches)
            if abs(total - 1.0) > 1e-9:
                rep.errors.append(f"type {k}: branch probabilities sum to {total}")
            if any(m <= 0 for _, m in d.branches) or any(p < 0 for p, _ in d.branches):
                rep.errors.append(f"type {k}: invalid hyperexponential branches")
        elif d.kind == "exponential":
            if d.mean <= 0:
                rep.errors.append(f"type {k}: size mean {d.mean} is not positive")
        else:
            rep.errors.append(f"type {k}: unknown size distribution kind {d.kind!r}")
    for i, c in enumerate(model.classes):
        if not c.servers:
            rep.errors.append(f"class {i}: empty server set")
        if not c.types:
            rep.errors.append(f"class {i}: empty type set")
        if c.tokens < 0:
            rep.errors.append(f"class {i}: negative token count {c.tokens}")
        elif c.tokens == 0:
            rep.warnings.append(f"class {i}: zero tokens, class can never be used")
        if any(s < 0 or s >= model.n_servers for s in c.servers):
            rep.errors.append(f"class {i}: server index out of range")
        if any(k < 0 or k >= model.n_types for k in c.types):
            rep.errors.append(f"class {i}: type index out of range")
    for i in range(model.n_classes):
        for j in range(i + 1, model.n_classes):
            if (
                model.classes[i].servers == model.classes[j].servers
                and model.classes[i].types == model.classes[j].types
            ):
                rep.warnings.append(
                    f"separability violated by class pair ({i}, {j}): "
                    "identical server and type sets"
                )
    return rep


def separability_ordering(model: CompatModel) -> list[int]:
    """Class permutation in which each class can overtake all earlier ones.

    Classes are sorted by a topological order of their type sets under
    inclusion, ties between identical type sets broken by a topological order
    of their server sets.  In the result, for every pair of positions p > q,
    the class at p has a type set not included in (or a server set not
    included in) the class at q, so its tokens can overtake in at least one
    of the two queues of the tandem network.
    """
    order = sorted(
        range(model.n_classes),
        key=lambda i: (
            len(model.classes[i].types),
            len(model.classes[i].servers),
            i,
        ),
    )
    if not is_valid_ordering(model, order):
        raise ValueError("separability violated: no valid class ordering exists")
    return order


def is_valid_ordering(model: CompatModel, order: Sequence[int]) -> bool:
    """True iff every class in ``order`` can overtake all of its predecessors."""
    if sorted(order) != list(range(model.n_classes)):
        return False
    for p in range(1, len(order)):
        for q in range(p):
            i, j = order[p], order[q]
            k_inc = model.classes[i].types <= model.classes[j].types
            s_inc = model.classes[i].servers <= model.classes[j].servers
            if k_inc and s_inc:
                return False
    return True
