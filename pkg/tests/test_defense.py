import csv
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from qpdlab.defense import (DefendedEndpoint, DefenseError, PrivacyAccountant, allocation_curve, apba_allocate,
                            scale_parameter, wrap_bdpl_with_mdp)
from qpdlab.mechanisms import bdpl_keep_probability
from qpdlab.models import train_logistic


@pytest.fixture(scope="module")
def setup(task5):
    return task5, train_logistic(task5.train)


class TestAllocation:
    def test_figure_parameters(self):
        acct = PrivacyAccountant(20 / 3, 10.0)
        assert scale_parameter(20 / 3, 10.0) == pytest.approx(0.1, abs=1e-15)
        assert apba_allocate(acct) == pytest.approx(1.0, abs=1e-15)

    def test_at_threshold(self):
        acct = PrivacyAccountant(1.0, 10.0)
        acct.leakage = 10.0
        assert apba_allocate(acct) == 0.0
        assert acct.exhausted

    def test_no_budget_left(self):
        acct = PrivacyAccountant(1.0, 10.0)
        acct.commit(1.0)
        assert acct.epsilon_remaining == 0.0
        assert apba_allocate(acct) == 0.0

    def test_integral(self):
        eps, lt = 20 / 3, 10.0
        val, _ = integrate.quad(lambda L: float(allocation_curve(L, eps, lt)), 0, lt)
        assert val == pytest.approx(eps, rel=1e-3)

    @given(st.floats(0.01, 50), st.floats(0.1, 100), st.lists(st.floats(0, 1), min_size=2, max_size=20))
    def test_monotone_in_leakage(self, eps, lt, fracs):
        L = np.sort(np.asarray(fracs)) * lt
        eps_i = []
        for value in L:
            acct = PrivacyAccountant(eps, lt)
            acct.leakage = float(value)
            eps_i.append(apba_allocate(acct))
        assert np.all(np.diff(eps_i) <= 1e-15)

    def test_first_allocation_closed_form(self, setup):
        sp, target = setup
        for eps, alpha in ((1.0, 1.0), (4.0, 0.5), (0.1, 0.25)):
            ep = DefendedEndpoint(target, sp.train, "laplace", eps, alpha)
            lt = ep.accountant.threshold
            out = ep.respond(sp.test.X[0])
            assert out.epsilon_spent == pytest.approx(min(1.5 * eps / lt, eps), rel=1e-12)

    def test_fixed_p_keeps_initial_scale(self):
        acct = PrivacyAccountant(2.0, 5.0, fixed_p=True)
        p0 = acct.scale
        acct.commit(1.0)
        assert acct.scale == p0
        assert PrivacyAccountant(2.0, 5.0).scale == p0

    def test_invalid(self):
        with pytest.raises(DefenseError):
            PrivacyAccountant(0.0, 1.0)
        with pytest.raises(DefenseError):
            PrivacyAccountant(1.0, 0.0)
        with pytest.raises(DefenseError):
            PrivacyAccountant(1.0, 1.0).commit(2.0)


class TestEndpoint:
    @pytest.mark.parametrize("fixed_p", [False, True])
    def test_identical_flood_plateaus(self, setup, fixed_p):
        sp, target = setup
        q = sp.test.X[0]
        ep = DefendedEndpoint(target, sp.train, "bdpl", 1.0, delta_zone=0.5, response="label", fixed_p=fixed_p)
        for _ in range(40):
            ep.respond(q)
        hist = [h for h in ep.accountant.history]
        leak = [h[2] for h in hist]
        # leakage moves only while a new (q, z) pair appears; with two labels that is at most twice
        assert len(set(leak)) <= 3
        flat = [h[1] for h in hist if h[2] == leak[-1]][:-1]  # drop a final allocation capped by the budget
        assert len(flat) >= 3
        if fixed_p:
            assert max(flat) - min(flat) < 1e-12
        else:
            ratios = np.array(flat[1:]) / np.array(flat[:-1])
            assert np.ptp(ratios) < 1e-9 and ratios[0] < 1

    def test_flood_decreases_allocation(self, setup):
        sp, target = setup
        ep = DefendedEndpoint(target, sp.train, "bdpl", 1.0, delta_zone=0.5)
        rng = np.random.default_rng(0)
        for _ in range(200):
            ep.respond(rng.uniform(-1, 1, 5))
        eps_i = [h[1] for h in ep.accountant.history if h[3] == "answered"]
        keep = [bdpl_keep_probability(e) for e in eps_i]
        assert np.all(np.diff(eps_i) <= 0)
        assert keep[-1] < keep[0] and keep[-1] - 0.5 < 0.05

    def test_refusal_is_absorbing(self, setup):
        sp, target = setup
        ep = DefendedEndpoint(target, sp.train, "laplace", 1.0, 0.05)
        rng = np.random.default_rng(1)
        while not ep.refused:
            ep.respond(rng.uniform(-1, 1, 5))
        spent = ep.accountant.spent
        outs = [ep.respond(rng.uniform(-1, 1, 5)) for _ in range(100)]
        assert all(o.refused and o.value == 0.5 and o.epsilon_spent == 0 for o in outs)
        assert ep.accountant.spent == spent

    def test_label_refusal_is_a_coin(self, setup):
        sp, target = setup
        ep = DefendedEndpoint(target, sp.train, "laplace", 1.0, response="label")
        ep.refused = True
        vals = [ep.submit(sp.test.X[0]) for _ in range(400)]
        assert set(vals) == {0.0, 1.0} and abs(np.mean(vals) - 0.5) < 0.1

    def test_full_zone_always_charged(self, setup):
        sp, target = setup
        ep = wrap_bdpl_with_mdp(target, sp.train, 1.0, 50.0, delta_zone=0.5)
        for x in sp.test.X[:30]:
            assert ep.respond(x).epsilon_spent > 0

    def test_far_from_boundary_is_free(self, setup):
        sp, target = setup
        rng = np.random.default_rng(0)
        Q = rng.uniform(-1, 1, (2000, 5))
        far = Q[np.abs(target.predict_prob(Q) - 0.5) >= 0.125][:50]
        ep = wrap_bdpl_with_mdp(target, sp.train, 1.0, 50.0)
        for q in far:
            ep.respond(q)
        assert ep.accountant.spent == 0.0

    def test_wrapper_validates_zone(self, setup):
        sp, target = setup
        with pytest.raises(DefenseError):
            wrap_bdpl_with_mdp(target, sp.train, 1.0, 10.0, delta_zone=0.0)

    def test_bad_alpha(self, setup):
        sp, target = setup
        with pytest.raises(DefenseError):
            DefendedEndpoint(target, sp.train, alpha=1.5)

    def test_history_export(self, setup, tmp_path):
        sp, target = setup
        ep = DefendedEndpoint(target, sp.train, "gaussian", 1.0)
        for x in sp.test.X[:5]:
            ep.respond(x)
        ep.accountant.export_history(tmp_path / "b.csv")
        rows = list(csv.DictReader(open(tmp_path / "b.csv")))
        assert [r["i"] for r in rows] == ["1", "2", "3", "4", "5"]
        assert sum(float(r["epsilon_i"]) for r in rows) == pytest.approx(ep.accountant.spent)

    @given(st.integers(0, 2**31 - 1), st.sampled_from(["laplace", "gaussian", "bdpl"]), st.floats(0.05, 10),
           st.floats(0.05, 1.0), st.booleans())
    def test_budget_conservation(self, setup, seed, mech, eps, alpha, fixed_p):
        sp, target = setup
        ep = DefendedEndpoint(target, sp.train, mech, eps, alpha, fixed_p=fixed_p, seed=seed)
        rng = np.random.default_rng(seed)
        for _ in range(60):
            ep.respond(rng.uniform(-1, 1, 5))
        exact = sum(Fraction(h[1]) for h in ep.accountant.history)
        assert exact <= Fraction(eps)
