"""Set functions, validation, and class orderings."""
import itertools

import pytest

from tokenpool.model import (
    CompatModel,
    JobClass,
    JobType,
    SizeDistribution,
    indices_of,
    is_valid_ordering,
    mask_of,
    mu_of,
    nu_of,
    separability_ordering,
    validate,
)

from conftest import pair_model, single_class_model, toy_model


def test_mask_round_trip():
    assert mask_of([0, 2, 5]) == 0b100101
    assert indices_of(0b100101) == [0, 2, 5]
    assert mask_of([]) == 0
    assert indices_of(0) == []


class TestSetFunctions:
    def test_mu_overlapping_pair(self):
        m = pair_model()
        assert mu_of(m, [0]) == 2.0
        assert mu_of(m, [0, 1]) == 3.0
        assert mu_of(m, []) == 0.0

    def test_nu_toy(self):
        m = toy_model()
        assert nu_of(m, [0]) == 1.0
        assert nu_of(m, [1]) == 2.0
        assert nu_of(m, []) == 0.0

    def test_bitmask_and_iterable_agree(self):
        m = toy_model()
        assert m.mu(0b11) == m.mu([0, 1])
        assert m.nu(0b10) == m.nu([1])

    @pytest.mark.parametrize("which", ["mu", "nu"])
    def test_normalized_monotone_submodular(self, which):
        # exhaustive over all subset pairs of a 5-class model
        m = CompatModel(
            servers=[1.0, 2.0, 0.5, 3.0],
            types=[JobType(1.0), JobType(0.7), JobType(2.5)],
            classes=[
                JobClass(frozenset({0, 1}), frozenset({0}), 1),
                JobClass(frozenset({1, 2}), frozenset({0, 1}), 2),
                JobClass(frozenset({3}), frozenset({2}), 1),
                JobClass(frozenset({0, 3}), frozenset({1, 2}), 1),
                JobClass(frozenset({2}), frozenset({1}), 3),
            ],
        )
        f = m.mu if which == "mu" else m.nu
        assert f(0) == 0.0
        full = (1 << m.n_classes) - 1
        for a in range(full + 1):
            for b in range(full + 1):
                if a & b == a:
                    assert f(a) <= f(b) + 1e-12
                assert f(a | b) + f(a & b) <= f(a) + f(b) + 1e-12

    def test_compatibility_lookups(self):
        m = toy_model()
        assert m.classes_for_type(0) == 0b11
        assert m.classes_for_type(1) == 0b10
        assert m.classes_for_server(0) == 0b01
        assert m.classes_for_server(1) == 0b11


class TestValidate:
    def test_toy_clean(self):
        rep = validate(toy_model())
        assert rep.ok
        assert not rep.warnings
        assert rep.separable

    def test_duplicate_classes_warn(self):
        m = CompatModel(
            servers=[1.0],
            types=[JobType(1.0)],
            classes=[
                JobClass(frozenset({0}), frozenset({0}), 1),
                JobClass(frozenset({0}), frozenset({0}), 1),
            ],
        )
        rep = validate(m)
        assert rep.ok  # separability is a warning, not an error
        assert not rep.separable
        assert any("(0, 1)" in w for w in rep.warnings)

    def test_empty_type_set_is_hard_error(self):
        m = CompatModel(
            servers=[1.0],
            types=[JobType(1.0)],
            classes=[JobClass(frozenset({0}), frozenset(), 1)],
        )
        rep = validate(m)
        assert not rep.ok
        assert any("empty type set" in e for e in rep.errors)

    def test_nonpositive_rates(self):
        m = CompatModel(
            servers=[0.0],
            types=[JobType(-1.0)],
            classes=[JobClass(frozenset({0}), frozenset({0}), 1)],
        )
        rep = validate(m)
        assert len(rep.errors) >= 2

    def test_bad_hyperexponential(self):
        size = SizeDistribution("hyperexponential", 1.0, ((0.5, 1.0), (0.4, 2.0)))
        m = single_class_model()
        bad = CompatModel(m.servers, [JobType(1.0, size)], m.classes)
        rep = validate(bad)
        assert any("sum to" in e for e in rep.errors)


def four_class_config():
    """Four classes over two types and three servers with duplicated sets.

    Classes 1 and 2 share the type set {0,1} but are dissociated by their
    server sets; classes 0 and 1 share the server set {0,1} but are
    dissociated by their type sets.  The reference valid ordering is
    (0, 3, 2, 1).
    """
    return CompatModel(
        servers=[1.0, 1.0, 1.0],
        types=[JobType(1.0), JobType(1.0)],
        classes=[
            JobClass(frozenset({0, 1}), frozenset({0}), 1),
            JobClass(frozenset({0, 1}), frozenset({0, 1}), 1),
            JobClass(frozenset({1}), frozenset({0, 1}), 1),
            JobClass(frozenset({2}), frozenset({1}), 1),
        ],
    )


class TestOrdering:
    def test_reference_ordering_is_valid(self):
        # singleton type sets first, then the duplicated type set pair in
        # increasing server set order
        m = four_class_config()
        assert is_valid_ordering(m, [0, 3, 2, 1])

    def test_computed_ordering(self):
        m = four_class_config()
        order = separability_ordering(m)
        assert is_valid_ordering(m, order)
        # type-set sizes must be non-decreasing along the order
        sizes = [len(m.classes[i].types) for i in order]
        assert sizes == sorted(sizes)

    def test_toy_both_orders_valid(self):
        m = toy_model()
        assert is_valid_ordering(m, [0, 1])
        assert is_valid_ordering(m, [1, 0])

    def test_single_class_identity(self):
        assert separability_ordering(single_class_model()) == [0]

    def test_duplicates_have_no_ordering(self):
        m = CompatModel(
            servers=[1.0],
            types=[JobType(1.0)],
            classes=[
                JobClass(frozenset({0}), frozenset({0}), 1),
                JobClass(frozenset({0}), frozenset({0}), 1),
            ],
        )
        with pytest.raises(ValueError):
            separability_ordering(m)

    def test_every_valid_ordering_overtakes(self):
        m = four_class_config()
        found = 0
        for perm in itertools.permutations(range(4)):
            if is_valid_ordering(m, list(perm)):
                found += 1
                for p in range(1, 4):
                    for q in range(p):
                        i, j = perm[p], perm[q]
                        assert not (
                            m.classes[i].types <= m.classes[j].types
                            and m.classes[i].servers <= m.classes[j].servers
                        )
        assert found >= 1

    def test_not_a_permutation_rejected(self):
        assert not is_valid_ordering(toy_model(), [0, 0])


class TestSizeDistribution:
    def test_hyperexponential_mean(self):
        d = SizeDistribution.hyperexponential([(1 / 3, 2.0), (2 / 3, 0.5)])
        assert d.mean == pytest.approx(1.0)

    def test_scaled_model(self):
        m = toy_model().scaled(3.0)
        assert m.total_arrival_rate == pytest.approx(6.0)
        assert m.load == pytest.approx(2.0)
