"""Shared model builders for the test suite."""
import pytest

from tokenpool.model import CompatModel, JobClass, JobType, SizeDistribution


def toy_model(ell=(1, 1)):
    """Three unit servers, two unit-rate types, two classes.

    Class 0: servers {0,1}, type {0}.  Class 1: servers {1,2}, types {0,1}.
    The hand-checked reference instance for most exact values.
    """
    return CompatModel(
        servers=[1.0, 1.0, 1.0],
        types=[JobType(1.0), JobType(1.0)],
        classes=[
            JobClass(frozenset({0, 1}), frozenset({0}), ell[0]),
            JobClass(frozenset({1, 2}), frozenset({0, 1}), ell[1]),
        ],
    )


def single_pool(ell=6, rate=25.0, n_slow=5, n_fast=5):
    """Heterogeneous pool: slow unit servers plus fast capacity-4 servers.

    One type, one single-server class per server with ``ell`` tokens.  The
    default rate 25 puts the 10-server pool at load 1.
    """
    servers = [1.0] * n_slow + [4.0] * n_fast
    classes = [
        JobClass(frozenset({s}), frozenset({0}), ell) for s in range(len(servers))
    ]
    return CompatModel(servers, [JobType(rate)], classes)


def two_type_pool(ell=6, nu=1.0, sizes=None):
    """Six unit servers, one class per server, two asymmetric types.

    Type 0 (rate nu) may be assigned to servers 0-3, type 1 (rate 4*nu) to
    servers 2-5, so only servers 2 and 3 accept both.  Nominal nu=1 puts
    the pool at load 5/6.
    """
    if sizes is None:
        sizes = [SizeDistribution.exponential(), SizeDistribution.exponential()]
    type_sets = [{0}, {0}, {0, 1}, {0, 1}, {1}, {1}]
    return CompatModel(
        servers=[1.0] * 6,
        types=[JobType(nu, sizes[0]), JobType(4.0 * nu, sizes[1])],
        classes=[
            JobClass(frozenset({s}), frozenset(type_sets[s]), ell)
            for s in range(6)
        ],
    )


def single_class_model(nu=1.0, ell=2, mu=1.0):
    """One class on one server: an M/M/1/ell loss queue."""
    return CompatModel(
        servers=[mu],
        types=[JobType(nu)],
        classes=[JobClass(frozenset({0}), frozenset({0}), ell)],
    )


def pair_model():
    """Two classes on overlapping unit servers, one type each (no sharing)."""
    return CompatModel(
        servers=[1.0, 1.0, 1.0],
        types=[JobType(1.0), JobType(1.0)],
        classes=[
            JobClass(frozenset({0, 1}), frozenset({0}), 1),
            JobClass(frozenset({1, 2}), frozenset({1}), 1),
        ],
    )


@pytest.fixture
def toy():
    return toy_model()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance criterion lines past pytest's output capture."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
