import numpy as np
import pytest

import hutamp.model_order as mo
from hutamp.bigamp import BigAmpOptions
from hutamp.errors import ParameterError
from hutamp.model_order import MosOptions, dof_count, mos_score, select_model_order
from hutamp.synthetic import SyntheticSpec, gen_synthetic
from hutamp.turbo import TurboOptions


class TestDofCount:
    def test_reference_value(self):
        assert dof_count(10, 100, 115, 3) == 2265

    def test_smallest_case(self):
        assert dof_count(1, 1, 1, 1) == 9

    def test_monotone_in_order(self, rng):
        for _ in range(20):
            m = int(rng.integers(1, 200))
            t = int(rng.integers(1, 500))
            l = int(rng.integers(1, 5))
            ns = rng.integers(1, 14, size=2)
            lo, hi = int(ns.min()), int(ns.max()) + 1
            assert dof_count(hi, m, t, l) > dof_count(lo, m, t, l)

    def test_matches_itemized_sum(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 12))
            m = int(rng.integers(1, 300))
            t = int(rng.integers(1, 600))
            l = int(rng.integers(1, 6))
            want = m * n + (n - 1) * t + 5 * n + 2 * n * l + n * (l - 1) + m
            assert dof_count(n, m, t, l) == want

    def test_rejects_zero_dims(self):
        with pytest.raises(ParameterError):
            dof_count(0, 10, 10, 3)


class _FakeResult:
    def __init__(self, s, a):
        class _S:
            pass

        self.endmembers = _S()
        self.endmembers.s = s
        self.abundances = _S()
        self.abundances.a = a


class TestMosScore:
    def _cube(self, rng, m=8, t=16):
        from hutamp.cube import HsiCube

        return HsiCube(data=rng.uniform(0, 1, size=(m, t)), spatial=(1, t))

    def test_unit_mean_square_residual(self, rng):
        cube = self._cube(rng)
        m, t = cube.m, cube.t
        # a zero estimate against data rescaled to RSS = MT: fit term vanishes
        s = np.zeros((m, 2))
        a = np.zeros((2, t))
        rss0 = float(np.sum(cube.data**2))
        cube2 = type(cube)(data=cube.data * np.sqrt(m * t / rss0), spatial=cube.spatial)
        score, rss, flags = mos_score(cube2, _FakeResult(s, a), 2, 3)
        dof = dof_count(2, m, t, 3)
        assert rss == pytest.approx(m * t, rel=1e-12)
        assert score == pytest.approx(-2.0 * m * t * dof / (m * t - dof - 1), rel=1e-12)

    def test_dof_domain_edge_flags(self, rng):
        cube = self._cube(rng, m=4, t=6)
        score, _, flags = mos_score(cube, _FakeResult(np.zeros((4, 3)), np.zeros((3, 6))), 3, 3)
        assert score == -np.inf
        assert flags.get("dof_exceeds_sample")

    def test_exact_fit_flags(self, rng):
        cube = self._cube(rng, m=30, t=80)
        s = cube.data[:, :2]
        # a reproduces the cube exactly only if cube columns lie in span; force it
        from hutamp.cube import HsiCube

        a = rng.dirichlet(np.ones(2), size=80).T
        cube2 = HsiCube(data=s @ a, spatial=(1, 80))
        score, rss, flags = mos_score(cube2, _FakeResult(s, a), 2, 3)
        assert score == np.inf and rss == 0.0 and flags.get("exact_fit")

    def test_fixed_instance_arithmetic(self, rng):
        m, t, n, l = 8, 16, 2, 3
        cube = self._cube(rng, m=m, t=t)
        s = rng.uniform(0, 1, size=(m, n))
        a = rng.dirichlet(np.ones(n), size=t).T
        resid = cube.data - s @ a
        rss = float(np.sum(resid**2))
        score, rss_got, _ = mos_score(cube, _FakeResult(s, a), n, l)
        dof = dof_count(n, m, t, l)
        want = -m * t * np.log(rss / (m * t)) - 2 * m * t * dof / (m * t - dof - 1)
        assert rss_got == pytest.approx(rss, rel=1e-12)
        assert score == pytest.approx(want, rel=1e-12)

    def test_deterministic(self, rng):
        cube = self._cube(rng)
        s = rng.uniform(0, 1, size=(8, 2))
        a = rng.dirichlet(np.ones(2), size=16).T
        r = _FakeResult(s, a)
        assert mos_score(cube, r, 2, 3) == mos_score(cube, r, 2, 3)


class TestSelectModelOrder:
    def test_stopping_rule_trace(self, monkeypatch, rng):
        # scores 10, 12, 11 -> order 3 wins after exactly 3 fits
        calls = []

        def fake_unmix(cube, n, opts):
            calls.append(n)
            return _FakeResult(np.zeros((cube.m, n)), np.zeros((n, cube.t)))

        fake_scores = {2: 10.0, 3: 12.0, 4: 11.0, 5: 9.0}

        def fake_score(cube, result, n, l=3):
            return fake_scores[n], 1.0, {}

        monkeypatch.setattr(mo, "unmix", fake_unmix)
        monkeypatch.setattr(mo, "mos_score", fake_score)
        cube = TestMosScore()._cube(rng, m=20, t=30)
        res = select_model_order(cube)
        assert res.n_hat == 3
        assert calls == [2, 3, 4]
        assert not res.boundary
        assert res.runner_up is res.results[4]

    def test_monotone_scores_hit_boundary(self, monkeypatch, rng):
        def fake_unmix(cube, n, opts):
            return _FakeResult(np.zeros((cube.m, n)), np.zeros((n, cube.t)))

        def fake_score(cube, result, n, l=3):
            return float(n), 1.0, {}

        monkeypatch.setattr(mo, "unmix", fake_unmix)
        monkeypatch.setattr(mo, "mos_score", fake_score)
        cube = TestMosScore()._cube(rng, m=20, t=30)
        res = select_model_order(cube, MosOptions(n_max=5))
        assert res.n_hat == 5
        assert res.boundary

    def test_failed_candidate_is_skipped(self, monkeypatch, rng):
        from hutamp.errors import NumericError

        def fake_unmix(cube, n, opts):
            if n == 3:
                raise NumericError("boom")
            return _FakeResult(np.zeros((cube.m, n)), np.zeros((n, cube.t)))

        fake_scores = {2: 10.0, 4: 12.0, 5: 11.0}

        def fake_score(cube, result, n, l=3):
            return fake_scores[n], 1.0, {}

        monkeypatch.setattr(mo, "unmix", fake_unmix)
        monkeypatch.setattr(mo, "mos_score", fake_score)
        cube = TestMosScore()._cube(rng, m=20, t=30)
        with pytest.warns(UserWarning):
            res = select_model_order(cube, MosOptions(n_max=6))
        assert res.n_hat == 4
        assert 3 in res.flags

    def test_selects_true_order_on_strip_scene(self):
        spec = SyntheticSpec(m=30, n=3, t1=10, t2=12, scene="pure_strips",
                             snr_db=30.0, seed=0)
        cube, *_ = gen_synthetic(spec)
        res = select_model_order(
            cube,
            MosOptions(turbo=TurboOptions(max_turbo=8, bigamp=BigAmpOptions(max_iters=150))),
        )
        assert res.n_hat == 3
        assert set(res.scores) == {2, 3, 4}
