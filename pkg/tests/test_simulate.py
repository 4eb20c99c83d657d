"""Event-driven simulator: rate helpers, admission, and estimator checks."""
import numpy as np
import pytest

from tokenpool.exact import build_tables, performance_report, stationary_distribution
from tokenpool.simulate import (
    BLOCKED,
    admit,
    replicate,
    run_dynamic,
    run_randomized,
    run_static,
    seize_rates,
    service_rates_fcfs,
)
from tokenpool.exact import proportional_static_assignment

from conftest import single_class_model, single_pool, toy_model


class TestRateHelpers:
    def test_seize_rates_shadowing(self, toy):
        # the second class-1 token is shadowed by the first
        assert seize_rates(toy, (0, 1, 1)) == [1.0, 1.0, 0.0]

    def test_seize_rates_empty(self, toy):
        assert seize_rates(toy, ()) == []

    def test_seize_rates_single_class(self, toy):
        assert seize_rates(toy, (1, 1)) == [2.0, 0.0]

    def test_service_rates_interleaved(self, toy):
        assert service_rates_fcfs(toy, (0, 0, 1, 0, 1)) == [2.0, 0.0, 1.0, 0.0, 0.0]

    def test_service_rates_telescope(self, toy):
        c = (1, 0, 1, 0)
        assert sum(service_rates_fcfs(toy, c)) == pytest.approx(toy.mu([0, 1]))

    def test_service_rates_single(self, toy):
        assert service_rates_fcfs(toy, (0,)) == [2.0]

    def test_admit_first_compatible(self, toy):
        assert admit(toy, (0, 1, 1), 0) == 0
        assert admit(toy, (0, 1, 1), 1) == 1
        assert admit(toy, (0,), 1) == BLOCKED
        assert admit(toy, (), 0) == BLOCKED


class TestRunDynamic:
    def test_fcfs_matches_exact(self, toy):
        tables = build_tables(toy)
        rep = performance_report(tables)
        est = replicate(
            lambda s: run_dynamic(toy, events=40_000, warmup=4_000, seed=s),
            runs=8,
            seed=7,
            capacities=toy.servers,
        )
        for k in range(2):
            assert abs(est.beta_k[k] - rep.beta_k[k]) < 3 * est.beta_k_halfwidth[k]
        for s in range(3):
            assert abs(est.psi_s[s] - rep.psi_s[s]) < 4 * est.psi_s_halfwidth[s]

    def test_balanced_fairness_matches_exact(self, toy):
        tables = build_tables(toy)
        rep = performance_report(tables)
        est = replicate(
            lambda s: run_dynamic(
                toy, events=40_000, warmup=4_000, seed=s,
                alloc="balanced_fairness", tables=tables,
            ),
            runs=8,
            seed=11,
        )
        for k in range(2):
            assert abs(est.beta_k[k] - rep.beta_k[k]) < 3 * est.beta_k_halfwidth[k]

    def test_loss_queue_blocking(self):
        m = single_class_model(nu=1.0, ell=2)
        est = replicate(
            lambda s: run_dynamic(m, events=30_000, warmup=3_000, seed=s),
            runs=6,
            seed=3,
        )
        assert abs(est.beta - 1 / 3) < max(3 * est.beta_halfwidth, 0.01)

    def test_occupancy_matches_stationary_law(self, toy):
        tables = build_tables(toy)
        pi, _ = stationary_distribution(tables)
        r = run_dynamic(
            toy, events=150_000, warmup=10_000, seed=5,
            tables=tables, track_occupancy=True,
        )
        tv = 0.5 * sum(
            abs(r.occupancy.get(tables.space.state_of(i), 0.0) - pi[i])
            for i in range(tables.space.size)
        )
        assert tv < 0.01

    def test_reproducible(self, toy):
        a = run_dynamic(toy, events=5_000, seed=123)
        b = run_dynamic(toy, events=5_000, seed=123)
        assert a.blocked.tolist() == b.blocked.tolist()
        assert a.duration == b.duration

    def test_rejects_bad_horizon(self, toy):
        with pytest.raises(ValueError):
            run_dynamic(toy, events=0)
        with pytest.raises(ValueError):
            run_dynamic(toy, events=100, warmup=-1)

    def test_bf_needs_tables_when_overlapping(self, toy):
        with pytest.raises(ValueError):
            run_dynamic(toy, events=100, alloc="balanced_fairness")

    def test_unknown_alloc(self, toy):
        with pytest.raises(ValueError):
            run_dynamic(toy, events=100, alloc="psjf")


class TestRunRandomized:
    def test_flow_split_matches_exact(self, toy):
        tables = build_tables(toy)
        rep = performance_report(tables)
        est = replicate(
            lambda s: run_randomized(toy, tables, events=40_000, warmup=4_000, seed=s),
            runs=8,
            seed=19,
        )
        for k in range(2):
            assert abs(est.beta_k[k] - rep.beta_k[k]) < 3 * est.beta_k_halfwidth[k]

    def test_proportional_split_biased_on_toy(self, toy):
        # the naive per-type renormalization overfeeds the flexible class;
        # the bias is visible far beyond sampling noise
        tables = build_tables(toy)
        rep = performance_report(tables)
        est = replicate(
            lambda s: run_randomized(
                toy, tables, events=60_000, warmup=4_000, seed=s,
                split="proportional",
            ),
            runs=8,
            seed=19,
        )
        assert est.beta_k[1] - rep.beta_k[1] > 0.02

    def test_single_class_equivalent_to_dynamic(self):
        m = single_class_model(nu=1.0, ell=2)
        tables = build_tables(m)
        est = replicate(
            lambda s: run_randomized(m, tables, events=20_000, warmup=2_000, seed=s),
            runs=4,
            seed=1,
        )
        assert abs(est.beta - 1 / 3) < max(3 * est.beta_halfwidth, 0.02)

    def test_requires_tables(self, toy):
        with pytest.raises(ValueError):
            run_randomized(toy, None, events=100)

    def test_unknown_split(self, toy):
        with pytest.raises(ValueError):
            run_randomized(toy, build_tables(toy), events=100, split="greedy")


class TestRunStatic:
    def test_proportional_pool(self):
        m = single_pool(ell=6)
        p = proportional_static_assignment(m)
        est = replicate(
            lambda s: run_static(m, p, events=40_000, warmup=4_000, seed=s),
            runs=6,
            seed=2,
            capacities=m.servers,
        )
        assert abs(est.beta - 1 / 7) < max(3 * est.beta_halfwidth, 0.01)
        assert abs(est.eta - 6 / 7) < 0.02

    def test_degenerate_column(self):
        # all mass on one class reduces to the single-class dynamics
        m = single_class_model(nu=1.0, ell=2)
        est = replicate(
            lambda s: run_static(m, np.array([[1.0]]), events=20_000, seed=s),
            runs=4,
            seed=4,
        )
        assert abs(est.beta - 1 / 3) < 0.02


class TestReplicate:
    def test_rejects_single_run(self, toy):
        with pytest.raises(ValueError):
            replicate(lambda s: run_dynamic(toy, events=100, seed=s), runs=1)

    def test_estimate_fields(self, toy):
        est = replicate(
            lambda s: run_dynamic(toy, events=2_000, seed=s),
            runs=3,
            seed=99,
            capacities=toy.servers,
        )
        assert est.runs == 3
        assert est.seed == 99
        assert est.events == 6_000
        assert np.all(est.beta_k_halfwidth >= 0.0)
        assert 0.0 <= est.eta <= 1.0

    def test_zero_arrivals_flagged(self):
        # vanishing traffic: no arrivals in the window counts as no blocking
        m = single_class_model(nu=1e-12, ell=2)
        r = run_dynamic(m, events=10, seed=0)
        assert r.arrivals.sum() >= 0
        assert r.beta == 0.0 or r.arrivals.sum() > 0
