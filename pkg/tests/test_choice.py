import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rhpivot.choice import (Nest, NestedLogitModel, mnl_probabilities, nest_logsum,
                            nested_probabilities, nested_probabilities_array)
from rhpivot.errors import EmptyNest, ModelStructureError, NoAvailableMode

utility = st.floats(-50, 50, allow_nan=False)


def softmax_oracle(values):
    e = [math.exp(v) for v in values]
    return [x / sum(e) for x in e]


@pytest.fixture
def city_model():
    return NestedLogitModel.from_dict({
        "modes": ["walk", "bicycle", "autoDriver", "autoPassenger", "bus", "metro", "train"],
        "nests": [
            {"name": "walk", "members": ["walk"], "nc": 1.0},
            {"name": "bicycle", "members": ["bicycle"], "nc": 1.0},
            {"name": "auto", "members": ["autoDriver", "autoPassenger"], "nc": 0.7},
            {"name": "transit", "members": ["bus", "metro", "train"], "nc": 0.5},
        ],
        "coefficients": {"beta_gc_metro": -0.05},
    })


class TestMNL:
    def test_symmetric(self):
        p = mnl_probabilities({"a": 0.0, "b": 0.0, "c": 0.0})
        for v in p.values():
            assert v == pytest.approx(1 / 3, abs=1e-15)

    def test_ln2(self):
        p = mnl_probabilities({"a": math.log(2), "b": 0.0})
        expected = softmax_oracle([math.log(2), 0.0])
        assert p["a"] == pytest.approx(expected[0], abs=1e-15)
        assert p["b"] == pytest.approx(expected[1], abs=1e-15)
        assert p["a"] == pytest.approx(2 / 3, abs=1e-15)

    def test_single(self):
        assert mnl_probabilities({"a": 5.0}) == {"a": 1.0}

    def test_unavailable_excluded(self):
        p = mnl_probabilities({"a": 0.0, "b": None, "c": 0.0})
        assert p == {"a": 0.5, "b": 0.0, "c": 0.5}

    def test_no_available(self):
        with pytest.raises(NoAvailableMode):
            mnl_probabilities({"a": None})

    def test_overflow(self):
        p = mnl_probabilities({"a": 700.0, "b": -700.0, "c": 699.0})
        assert all(math.isfinite(v) for v in p.values())
        assert sum(p.values()) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(utility, min_size=1, max_size=8), st.floats(-100, 100))
    def test_translation_invariance(self, us, k):
        u = {str(i): v for i, v in enumerate(us)}
        p = mnl_probabilities(u)
        q = mnl_probabilities({m: v + k for m, v in u.items()})
        for m in u:
            assert abs(p[m] - q[m]) <= 1e-10

    @given(st.lists(utility, min_size=1, max_size=10))
    def test_normalisation(self, us):
        p = mnl_probabilities({str(i): v for i, v in enumerate(us)})
        assert abs(sum(p.values()) - 1.0) <= 1e-12

    @given(st.lists(utility, min_size=2, max_size=6), st.floats(0.01, 10))
    def test_monotone(self, us, bump):
        u = {str(i): v for i, v in enumerate(us)}
        p = mnl_probabilities(u)
        q = mnl_probabilities({**u, "0": u["0"] + bump})
        assert q["0"] >= p["0"]
        if 1e-300 < p["0"] < 1 - 1e-12:
            assert q["0"] > p["0"]
        for m in u:
            if m != "0":
                assert q[m] <= p[m] + 1e-15


class TestLogsum:
    def test_single_member(self):
        assert nest_logsum({"m": 4.2}, 0.5) == pytest.approx(4.2, abs=1e-15)

    def test_two_members(self):
        assert nest_logsum({"a": 0.0, "b": 0.0}, 1.0) == pytest.approx(math.log(2), abs=1e-15)
        assert nest_logsum({"a": 0.0, "b": 0.0}, 0.5) == pytest.approx(0.5 * math.log(2), abs=1e-15)

    def test_large_values(self):
        assert nest_logsum({"a": 700.0, "b": 700.0}, 0.3) == pytest.approx(700 + 0.3 * math.log(2))

    def test_empty(self):
        with pytest.raises(EmptyNest):
            nest_logsum({"a": None}, 0.5)
        with pytest.raises(EmptyNest):
            nest_logsum({}, 0.5)

    def test_bad_nc(self):
        with pytest.raises(ModelStructureError):
            nest_logsum({"a": 0.0}, 1.5)


class TestNested:
    def test_two_nest_hand_computed(self):
        model = NestedLogitModel((Nest("n1", ("a", "b"), 0.5), Nest("n2", ("c",), 1.0)))
        p = nested_probabilities(model, {"a": 0.0, "b": 0.0, "c": 0.0})
        p_n1 = math.exp(0.5 * math.log(2)) / (math.exp(0.5 * math.log(2)) + 1)
        assert p["a"] == pytest.approx(p_n1 / 2, abs=1e-15)
        assert p["b"] == pytest.approx(p_n1 / 2, abs=1e-15)
        assert p["c"] == pytest.approx(1 - p_n1, abs=1e-15)

    def test_symmetry(self):
        model = NestedLogitModel((Nest("x", ("a",)), Nest("y", ("b",))))
        assert nested_probabilities(model, {"a": 1.3, "b": 1.3}) == {"a": 0.5, "b": 0.5}

    @given(st.lists(utility, min_size=1, max_size=7))
    def test_degenerate_nests_equal_mnl(self, us):
        u = {f"m{i}": v for i, v in enumerate(us)}
        model = NestedLogitModel(tuple(Nest(m, (m,), 1.0) for m in u))
        p, q = nested_probabilities(model, u), mnl_probabilities(u)
        for m in u:
            assert abs(p[m] - q[m]) <= 1e-12

    @given(st.lists(utility, min_size=4, max_size=4))
    def test_nc_one_grouped_equals_mnl(self, us):
        u = dict(zip("abcd", us))
        model = NestedLogitModel((Nest("x", ("a", "b"), 1.0), Nest("y", ("c", "d"), 1.0)))
        p, q = nested_probabilities(model, u), mnl_probabilities(u)
        for m in u:
            assert abs(p[m] - q[m]) <= 1e-12

    @given(st.lists(utility, min_size=7, max_size=7), st.floats(-100, 100))
    def test_invariants(self, us, k):
        model = NestedLogitModel((Nest("w", ("walk",)), Nest("auto", ("ad", "ap"), 0.7),
                                  Nest("transit", ("bus", "metro", "train"), 0.4),
                                  Nest("bike", ("bicycle",))))
        u = dict(zip(["walk", "ad", "ap", "bus", "metro", "train", "bicycle"], us))
        p = nested_probabilities(model, u)
        assert abs(sum(p.values()) - 1.0) <= 1e-12
        q = nested_probabilities(model, {m: v + k for m, v in u.items()})
        for m in u:
            assert abs(p[m] - q[m]) <= 1e-10

    def test_overflow(self, city_model):
        u = {"walk": 700.0, "bicycle": -700.0, "autoDriver": 699.0, "autoPassenger": 700.0,
             "bus": -700.0, "metro": 700.0, "train": 650.0}
        p = nested_probabilities(city_model, u)
        assert all(math.isfinite(v) for v in p.values())
        assert sum(p.values()) == pytest.approx(1.0, abs=1e-12)

    def test_unavailable_nest_dropped(self, city_model):
        u = {"walk": 0.0, "bicycle": None, "autoDriver": None, "autoPassenger": None,
             "bus": 0.0, "metro": None, "train": None}
        p = nested_probabilities(city_model, u)
        assert p["walk"] == pytest.approx(0.5)
        assert p["bus"] == pytest.approx(0.5)
        assert p["metro"] == 0.0

    def test_monotone_in_nested_model(self, city_model):
        rng = np.random.default_rng(3)
        for _ in range(200):
            u = dict(zip(city_model.modes, rng.uniform(-5, 5, 7)))
            m = city_model.modes[rng.integers(7)]
            p = nested_probabilities(city_model, u)
            q = nested_probabilities(city_model, {**u, m: u[m] + 0.5})
            assert q[m] > p[m]
            assert all(q[o] <= p[o] + 1e-15 for o in u if o != m)

    def test_array_matches_scalar(self, city_model):
        rng = np.random.default_rng(11)
        modes = list(city_model.modes)
        U = rng.uniform(-8, 8, size=(300, len(modes)))
        A = rng.random((300, len(modes))) > 0.25
        A[:, modes.index("walk")] = True
        P, logsums, p_nest = nested_probabilities_array(city_model, modes, U, A)
        for i in range(300):
            u = {m: (float(U[i, j]) if A[i, j] else None) for j, m in enumerate(modes)}
            p = nested_probabilities(city_model, u)
            np.testing.assert_allclose([p[m] for m in modes], P[i], atol=1e-14)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


class TestModelStructure:
    def test_rejects_deeper_tree(self):
        with pytest.raises(ModelStructureError):
            NestedLogitModel.from_dict({"nests": [
                {"name": "outer", "members": [{"name": "inner", "members": ["a"]}]}]})

    def test_rejects_shared_mode(self):
        with pytest.raises(ModelStructureError):
            NestedLogitModel((Nest("x", ("a", "b")), Nest("y", ("b",))))

    def test_rejects_bad_nc(self):
        with pytest.raises(ModelStructureError):
            Nest("x", ("a",), 0.0)

    def test_rejects_unnested_declared_mode(self):
        with pytest.raises(ModelStructureError):
            NestedLogitModel.from_dict({"modes": ["a", "b", "metro"], "nests": [
                {"name": "transit", "members": ["metro"]}, {"name": "x", "members": ["a"]}]})

    def test_purpose_override(self, city_model):
        m = NestedLogitModel.from_dict({**city_model.to_dict(), "purpose_overrides": {
            "HBE": {"nc": {"transit": 0.8}, "coefficients": {"beta_gc_metro": -0.1}}}})
        hbe = m.for_purpose("HBE")
        assert hbe.nest("transit").nc == 0.8
        assert hbe.coefficients["beta_gc_metro"] == -0.1
        assert m.for_purpose("HBW").nest("transit").nc == 0.5

    def test_round_trip(self, city_model):
        assert NestedLogitModel.from_dict(city_model.to_dict()) == city_model
