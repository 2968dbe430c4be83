"""Label processes: dual maps, exact simulation laws, site processes."""

import numpy as np
import pytest
from scipy.linalg import expm as dense_expm
from scipy.stats import chi2_contingency

from recodyn.closedform import ActiveSiteFlow, site_mutation_operator
from recodyn.dynamics import DriftFlow, SelectionMutationField
from recodyn.errors import LabelOverflow
from recodyn.labels import (
    CIRC,
    ClockLabels,
    MutationFlags,
    SiteProcess,
    YuleLabels,
    check_dual_assumptions,
    site_process_for,
)
from recodyn.partitions import DELTA, RecombinationRates
from recodyn.typespace import (
    TypeDistribution,
    TypeSpace,
    condition_on_active,
    random_distribution,
    tv_distance,
)


def binary(n, active=1):
    return TypeSpace.binary(n, active)


def two_sample_chisq_ok(counts_a, counts_b, p_floor=0.001):
    table = np.array([counts_a, counts_b], dtype=float)
    keep = table.sum(axis=0) > 0
    table = table[:, keep]
    if table.shape[1] < 2:
        return True
    _, p, _, _ = chi2_contingency(table)
    return p > p_floor


class TestEmptyLabelIdentity:
    def test_all_processes(self):
        sp = binary(2)
        nu = random_distribution(sp, np.random.default_rng(0))
        procs = [
            ClockLabels(ActiveSiteFlow(sp, 0.8, 0.1)),
            YuleLabels(sp, 0.8),
            MutationFlags(sp, (0.3, 0.4), (0.5, 0.5), (0.5, 0.5)),
        ]
        for proc in procs:
            out = proc.dual_h(nu, proc.empty())
            np.testing.assert_allclose(out.weights, nu.weights, atol=1e-15)


class TestClockLabels:
    def test_zero_time(self):
        sp = binary(2)
        proc = ClockLabels(ActiveSiteFlow(sp, 0.7, 0.0))
        nu = random_distribution(sp, np.random.default_rng(1))
        np.testing.assert_allclose(proc.dual_h(nu, 0.0).weights, nu.weights)

    def test_selection_logistic(self):
        sp = binary(1)
        s = 1.1
        proc = ClockLabels(ActiveSiteFlow(sp, s, 0.0))
        nu = TypeDistribution(sp, (1,), [0.5, 0.5])
        for t in (0.3, 1.7):
            got = proc.dual_h(nu, t).weights[0]
            want = 0.5 * np.exp(s * t) / (0.5 + 0.5 * np.exp(s * t))
            assert got == pytest.approx(want, abs=1e-12)

    def test_flow_property(self):
        sp = binary(2)
        proc = ClockLabels(ActiveSiteFlow(sp, 0.8, 0.2))
        nu = random_distribution(sp, np.random.default_rng(2))
        a = proc.dual_h(proc.dual_h(nu, 0.6), 0.9)
        b = proc.dual_h(nu, 1.5)
        assert tv_distance(a, b) < 1e-9

    def test_step_is_addition(self):
        sp = binary(1)
        proc = ClockLabels(ActiveSiteFlow(sp, 0.0, 0.0))
        assert proc.step(1.25, 0.5) == 1.75


class TestYuleLabels:
    def test_count_one_is_identity(self):
        sp = binary(2)
        proc = YuleLabels(sp, 0.9)
        nu = random_distribution(sp, np.random.default_rng(3))
        np.testing.assert_allclose(proc.dual_h(nu, 1).weights, nu.weights, atol=1e-15)

    def test_half_fit_two_lines(self):
        sp = binary(2)
        proc = YuleLabels(sp, 0.9)
        w = np.array([0.2, 0.3, 0.15, 0.35])
        nu = TypeDistribution(sp, (1, 2), w)
        split = condition_on_active(nu)
        assert split.fit_share == pytest.approx(0.35)
        q = (1 - 0.35) ** 2
        want = q * split.unfit.weights + (1 - q) * split.fit.weights
        np.testing.assert_allclose(proc.dual_h(nu, 2).weights, want, atol=1e-15)

    def test_all_fit_returns_input(self):
        sp = binary(1)
        proc = YuleLabels(sp, 0.9)
        nu = TypeDistribution(sp, (1,), [1.0, 0.0])
        for k in (1, 3, 9):
            np.testing.assert_allclose(proc.dual_h(nu, k).weights, nu.weights)

    def test_mean_growth_oracle(self):
        # pure-birth mean is exponential in time; 3 sigma Monte Carlo band
        sp = binary(1)
        s, t, n = 0.8, 1.0, 10 ** 5
        proc = YuleLabels(sp, s)
        rng = np.random.default_rng(101)
        counts = np.array([proc.step(1, t, rng) for _ in range(n)])
        p = np.exp(-s * t)
        want_mean = 1.0 / p
        want_sd = np.sqrt((1 - p) / p ** 2)
        assert abs(counts.mean() - want_mean) < 3 * want_sd / np.sqrt(n)

    def test_count_law_is_geometric(self):
        # the line count started from one line is geometric on {1,2,...}
        sp = binary(1)
        s, t, n = 0.7, 0.9, 2 * 10 ** 4
        proc = YuleLabels(sp, s)
        rng = np.random.default_rng(102)
        counts = np.array([proc.step(1, t, rng) for _ in range(n)])
        p = np.exp(-s * t)
        kmax = 12
        observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)[1:]
        probs = np.array([p * (1 - p) ** (k - 1) for k in range(1, kmax)])
        probs = np.append(probs, 1 - probs.sum())  # tail bucket
        _, pval = __import__("scipy.stats", fromlist=["chisquare"]).chisquare(
            observed, probs * n)
        assert pval > 0.001

    def test_zero_duration(self):
        sp = binary(1)
        proc = YuleLabels(sp, 5.0)
        assert proc.step(7, 0.0, np.random.default_rng(0)) == 7

    def test_cap_overflow(self):
        sp = binary(1)
        proc = YuleLabels(sp, 5.0, cap=10)
        with pytest.raises(LabelOverflow):
            proc.step(1, 50.0, np.random.default_rng(1))

    def test_chapman_kolmogorov_two_sample(self):
        sp = binary(1)
        proc = YuleLabels(sp, 0.9)
        rng = np.random.default_rng(103)
        n = 10 ** 4
        comp = [proc.step(proc.step(1, 0.4, rng), 0.6, rng) for _ in range(n)]
        direct = [proc.step(1, 1.0, rng) for _ in range(n)]
        cap = 15
        a = np.bincount(np.minimum(comp, cap), minlength=cap + 1)
        b = np.bincount(np.minimum(direct, cap), minlength=cap + 1)
        assert two_sample_chisq_ok(a, b)


class TestMutationFlags:
    def proc(self, sp=None):
        sp = sp or binary(2)
        return MutationFlags(sp, (0.6, 1.0), (0.3, 0.8), (0.7, 0.2))

    def test_single_flag_formula(self):
        sp = binary(2)
        proc = self.proc(sp)
        nu = random_distribution(sp, np.random.default_rng(4))
        out = proc.dual_h(nu, (CIRC, 1))
        point = np.zeros(2)
        point[1] = 1.0
        want = np.outer(point, nu.marginal((1,)).weights).reshape(-1)
        np.testing.assert_allclose(out.weights, want, atol=1e-15)

    def test_all_flags_point_mass(self):
        sp = binary(2)
        proc = self.proc(sp)
        nu = random_distribution(sp, np.random.default_rng(5))
        out = proc.dual_h(nu, (1, 0))
        assert out.weights[sp.encode((1, 0))] == 1.0

    def test_untouched_probability_oracle(self):
        # a site stays untouched with exponentially decaying probability
        sp = binary(2)
        proc = self.proc(sp)
        rng = np.random.default_rng(104)
        t, n = 0.8, 10 ** 5
        states = [proc.step(proc.empty(), t, rng) for _ in range(n)]
        for i, u in enumerate((0.6, 1.0)):
            frac = sum(1 for s in states if s[i] is CIRC) / n
            want = np.exp(-u * t)
            sd = np.sqrt(want * (1 - want) / n)
            assert abs(frac - want) < 3 * sd

    def test_absorption_targets(self):
        sp = binary(2)
        proc = self.proc(sp)
        rng = np.random.default_rng(105)
        t, n = 5.0, 10 ** 5
        states = [proc.step(proc.empty(), t, rng) for _ in range(n)]
        zeros = sum(1 for s in states if s[0] == 0)
        absorbed = sum(1 for s in states if s[0] is not CIRC)
        # conditional on absorption the target is Bernoulli(m0)
        frac = zeros / absorbed
        sd = np.sqrt(0.3 * 0.7 / absorbed)
        assert abs(frac - 0.3) < 3 * sd

    def test_zero_duration(self):
        proc = self.proc()
        rng = np.random.default_rng(0)
        assert proc.step((CIRC, 1), 0.0, rng) == (CIRC, 1)

    def test_absorbed_sites_stay(self):
        proc = self.proc()
        rng = np.random.default_rng(6)
        for _ in range(50):
            out = proc.step((0, 1), 3.0, rng)
            assert out == (0, 1)

    def test_chapman_kolmogorov_two_sample(self):
        sp = binary(2)
        proc = self.proc(sp)
        rng = np.random.default_rng(106)
        n = 10 ** 4
        cats = {CIRC: 0, 0: 1, 1: 2}
        comp = np.zeros((2, 3), dtype=int)
        direct = np.zeros((2, 3), dtype=int)
        for _ in range(n):
            a = proc.step(proc.step(proc.empty(), 0.3, rng), 0.5, rng)
            b = proc.step(proc.empty(), 0.8, rng)
            for i in range(2):
                comp[i][cats[a[i]]] += 1
                direct[i][cats[b[i]]] += 1
        for i in range(2):
            assert two_sample_chisq_ok(comp[i], direct[i])

    def test_duality_without_recombination(self):
        # label-averaged duals reproduce the mutation-only solution
        sp = binary(2)
        u, m0, m1 = (0.6, 1.0), (0.3, 0.8), (0.7, 0.2)
        proc = MutationFlags(sp, u, m0, m1)
        nu0 = random_distribution(sp, np.random.default_rng(7))
        t, n = 0.7, 10 ** 5
        rng = np.random.default_rng(107)
        states = [proc.step(proc.empty(), t, rng) for _ in range(n)]
        rows = proc.batch_dual(nu0, states)
        mean = rows.mean(axis=0)
        stderr = rows.std(axis=0, ddof=1) / np.sqrt(n)
        gen = sum(u[i] * (site_mutation_operator(sp, i + 1, m0[i], m1[i]).dense()
                          - np.eye(4)) for i in range(2))
        want = dense_expm(t * gen) @ nu0.weights
        assert np.all(np.abs(mean - want) <= 3 * stderr + 1e-12)


class TestYuleDuality:
    def test_selection_duality_without_recombination(self):
        sp = binary(1)
        s, t, n = 0.8, 1.0, 10 ** 5
        proc = YuleLabels(sp, s)
        nu0 = TypeDistribution(sp, (1,), [0.3, 0.7])
        rng = np.random.default_rng(108)
        counts = [proc.step(1, t, rng) for _ in range(n)]
        rows = proc.batch_dual(nu0, counts)
        mean = rows.mean(axis=0)
        stderr = rows.std(axis=0, ddof=1) / np.sqrt(n)
        want0 = 0.3 * np.exp(s * t) / (0.7 + 0.3 * np.exp(s * t))
        assert abs(mean[0] - want0) <= 3 * max(stderr[0], 1e-12)


class TestSiteProcess:
    def test_delta_holding_time(self):
        rho, t, n = 0.7, 1.0, 10 ** 5
        sp = binary(1)
        proc = SiteProcess(ClockLabels(ActiveSiteFlow(sp, 0.0, 0.0)), 0.5, rho)
        rng = np.random.default_rng(109)
        still = sum(1 for _ in range(n) if proc.step(DELTA, t, rng) is DELTA)
        want = np.exp(-rho * t)
        sd = np.sqrt(want * (1 - want) / n)
        assert abs(still / n - want) < 3 * sd

    def test_degenerate_rates_reduce_to_label(self):
        sp = binary(1)
        yule = YuleLabels(sp, 0.9)
        proc = SiteProcess(yule, 0.0, 0.0)
        rng = np.random.default_rng(110)
        n = 10 ** 4
        a = np.array([proc.step(1, 1.0, rng) for _ in range(n)])
        b = np.array([yule.step(1, 1.0, rng) for _ in range(n)])
        cap = 15
        assert two_sample_chisq_ok(np.bincount(np.minimum(a, cap), minlength=cap + 1),
                                   np.bincount(np.minimum(b, cap), minlength=cap + 1))
        assert proc.step(DELTA, 5.0, rng) is DELTA

    def test_clock_reset_age_law(self):
        # age at the horizon: the full horizon with no reset, else a
        # truncated exponential
        sp = binary(1)
        r, t, n = 0.8, 1.0, 10 ** 5
        proc = SiteProcess(ClockLabels(ActiveSiteFlow(sp, 0.0, 0.0)), r, 0.3)
        rng = np.random.default_rng(111)
        ages = np.array([proc.step(0.0, t, rng) for _ in range(n)])
        at_t = (ages == t).mean()
        want = np.exp(-r * t)
        assert abs(at_t - want) < 3 * np.sqrt(want * (1 - want) / n)
        inner = ages[ages < t]
        edges = np.linspace(0, t, 9)
        for lo, hi in zip(edges[:-1], edges[1:]):
            got = ((inner >= lo) & (inner < hi)).sum() / n
            pr = np.exp(-r * lo) - np.exp(-r * hi)
            assert abs(got - pr) < 3 * np.sqrt(pr * (1 - pr) / n)

    def test_delta_start_matches_semigroup_sampler(self):
        # event-driven vs two-clock closed form, binned two-sample test
        sp = binary(1)
        proc = SiteProcess(ClockLabels(ActiveSiteFlow(sp, 0.0, 0.0)), 0.6, 0.9)
        rng = np.random.default_rng(112)
        t, n = 1.2, 10 ** 5
        a = [proc.step(DELTA, t, rng) for _ in range(n)]
        b = [proc.semigroup_sample(DELTA, t, rng) for _ in range(n)]

        def hist(vals):
            delta = sum(1 for v in vals if v is DELTA)
            ages = np.array([v for v in vals if v is not DELTA])
            counts, _ = np.histogram(ages, bins=np.linspace(0, t, 13))
            return np.concatenate([[delta], counts])

        assert two_sample_chisq_ok(hist(a), hist(b))

    def test_label_start_matches_semigroup_sampler(self):
        sp = binary(1)
        proc = SiteProcess(ClockLabels(ActiveSiteFlow(sp, 0.0, 0.0)), 0.9, 0.4)
        rng = np.random.default_rng(113)
        t, n = 0.9, 10 ** 5
        start = 0.37
        a = np.array([proc.step(start, t, rng) for _ in range(n)])
        b = np.array([proc.semigroup_sample(start, t, rng) for _ in range(n)])
        bins = np.concatenate([np.linspace(0, t, 10), [t + start + 1e-9]])
        ha, _ = np.histogram(a, bins=bins)
        hb, _ = np.histogram(b, bins=bins)
        assert two_sample_chisq_ok(ha, hb)

    def test_site_process_for_uses_resetting_rate(self):
        sp = binary(3)
        rates = RecombinationRates.single_crossover_list(3, 1, [0.5, 0.25])
        proc = site_process_for(3, ClockLabels(ActiveSiteFlow(sp, 0.0, 0.0)), rates)
        assert proc.reset_rate == pytest.approx(0.75)
        assert proc.split_rate == pytest.approx(0.25)


class TestDualAssumptionChecks:
    def test_yule_passes(self):
        sp = binary(3, active=2)
        proc = YuleLabels(sp, 0.8)
        rep = check_dual_assumptions(proc, trials=48, tol=1e-10,
                                     rng=np.random.default_rng(114))
        assert rep.passed

    def test_clock_closed_form_passes(self):
        sp = binary(3)
        proc = ClockLabels(ActiveSiteFlow(sp, 0.8, 0.2))
        rep = check_dual_assumptions(proc, trials=24, tol=1e-10,
                                     rng=np.random.default_rng(115))
        assert rep.passed

    def test_clock_ode_flow_within_integrator_tolerance(self):
        sp = binary(3)
        field = SelectionMutationField(sp, s=0.8, u=(0.2, 0, 0), selection=True,
                                       mutation_sites=(1,))
        proc = ClockLabels(DriftFlow(field))
        rep = check_dual_assumptions(proc, trials=12, tol=1e-8,
                                     rng=np.random.default_rng(116))
        assert rep.max_defect <= 1e-8

    def test_flags_fail_when_non_active_flag_set(self):
        sp = binary(3, active=1)
        proc = MutationFlags(sp, (0.0, 2.0, 2.0), (0.5,) * 3, (0.5,) * 3)
        rng = np.random.default_rng(117)
        rep = check_dual_assumptions(proc, trials=64, tol=0.01, horizon=2.0, rng=rng)
        assert rep.split_defect > 0.01
        # the dual map is linear in its distribution argument
        assert rep.mixture_defect <= 1e-12


class TestStateJson:
    def test_roundtrips(self):
        sp = binary(2)
        clock = ClockLabels(ActiveSiteFlow(sp, 0.1, 0.0))
        yule = YuleLabels(sp, 0.5)
        flags = MutationFlags(sp, (0.1, 0.2), (0.5, 0.5), (0.5, 0.5))
        assert clock.state_from_json(clock.state_to_json(1.5)) == 1.5
        assert yule.state_from_json(yule.state_to_json(4)) == 4
        assert flags.state_from_json(flags.state_to_json((CIRC, 1))) == (CIRC, 1)
        assert clock.state_from_json(clock.state_to_json(DELTA)) is DELTA
        assert flags.state_to_json((CIRC, 0)) == {"kind": "flags", "v": [None, 0]}
