import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from periface import metrics
from periface.errors import (
    ConditioningError,
    DegenerateEmbeddingError,
    DimensionError,
    InsufficientPairsError,
    ScaleError,
)
from periface.metrics import (
    MetricReport,
    PairList,
    PairRecord,
    cosine_similarity,
    curves_from_similarities,
    default_thresholds,
    evaluate_pairs,
    fid_from_stats,
    metric_fid,
    metric_l1,
    metric_psnr,
    metric_ssim,
    metric_tv,
    verification_curves,
)


class TestL1:
    def test_identical_zero(self, rng):
        x = rng.uniform(size=(4, 4, 3))
        assert metric_l1(x, x.copy()) == 0.0

    def test_zeros_vs_ones_is_765(self):
        z = np.zeros((4, 4, 3))
        o = np.ones((4, 4, 3))
        assert metric_l1(z, o) == 765.0

    def test_matches_direct_summation(self, rng):
        a = rng.uniform(size=(4, 4, 3))
        b = rng.uniform(size=(4, 4, 3))
        want = sum(
            np.abs(a[i, j] - b[i, j]).sum() * 255.0 for i in range(4) for j in range(4)
        ) / 16.0
        assert abs(metric_l1(a, b) - want) <= 1e-9

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        assert metric_l1(a, b) == metric_l1(b, a)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimensionError):
            metric_l1(rng.uniform(size=(4, 4, 3)), rng.uniform(size=(5, 4, 3)))


class TestPsnr:
    def test_full_scale_error_is_zero_db(self):
        assert metric_psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 0.0

    def test_identical_capped(self, rng):
        x = rng.uniform(size=(4, 4, 3))
        assert metric_psnr(x, x.copy()) == 99.0

    def test_matches_direct_mse(self, rng):
        a = rng.uniform(size=(4, 4, 3))
        b = rng.uniform(size=(4, 4, 3))
        mse = np.mean(((a - b) * 255.0) ** 2)
        want = 10.0 * math.log10(255.0**2 / mse)
        assert abs(metric_psnr(a, b) - want) <= 1e-9

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        assert metric_psnr(a, b) == metric_psnr(b, a)


class TestSsim:
    def test_identical_is_one(self, rng):
        x = rng.uniform(size=(16, 16, 3))
        assert abs(metric_ssim(x, x.copy()) - 1.0) <= 1e-9

    def test_constant_offset_closed_form(self):
        c, delta = 100.0, 20.0
        a = np.full((16, 16, 3), c / 255.0)
        b = np.full((16, 16, 3), (c + delta) / 255.0)
        c1 = (0.01 * 255.0) ** 2
        want = (2 * c * (c + delta) + c1) / (c * c + (c + delta) ** 2 + c1)
        assert metric_ssim(a, b) == pytest.approx(want, abs=1e-9)

    def test_matches_sliding_window_oracle(self, rng):
        a = rng.uniform(size=(12, 12, 3))
        b = np.clip(a + rng.normal(0, 0.05, size=a.shape), 0, 1)
        got = metric_ssim(a, b)
        ya = (a @ np.array([0.299, 0.587, 0.114])) * 255.0
        yb = (b @ np.array([0.299, 0.587, 0.114])) * 255.0
        want = oracles.ssim_reference(ya, yb, (0.01 * 255) ** 2, (0.03 * 255) ** 2)
        assert got == pytest.approx(want, abs=1e-9)

    def test_symmetric(self, rng):
        a = rng.uniform(size=(12, 12, 3))
        b = rng.uniform(size=(12, 12, 3))
        assert metric_ssim(a, b) == pytest.approx(metric_ssim(b, a), abs=1e-12)

    def test_too_small_rejected(self, rng):
        with pytest.raises(ScaleError):
            metric_ssim(rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3)))


class TestTv:
    def test_constant_zero(self):
        assert metric_tv(np.full((5, 7, 3), 0.3)) == 0.0

    def test_two_by_two_example(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert metric_tv(img) == 1.0

    def test_matches_hand_summation(self, rng):
        px = rng.uniform(size=(4, 5, 3))
        h, w = 4, 5
        v = sum(
            abs(px[i + 1, j, k] - px[i, j, k])
            for i in range(h - 1) for j in range(w) for k in range(3)
        )
        hz = sum(
            abs(px[i, j + 1, k] - px[i, j, k])
            for i in range(h) for j in range(w - 1) for k in range(3)
        )
        want = v / ((h - 1) * w) + hz / (h * (w - 1))
        assert abs(metric_tv(px) - want) <= 1e-9

    def test_translation_invariant(self, rng):
        px = rng.uniform(0.0, 0.5, size=(4, 4, 3))
        assert metric_tv(px) == metric_tv(px + 0.4)

    def test_too_small_rejected(self):
        with pytest.raises(DimensionError):
            metric_tv(np.zeros((1, 5, 3)))


class TestFid:
    def test_identical_sets_near_zero(self, rng):
        x = rng.standard_normal((12, 3))
        assert metric_fid(x, x.copy()) <= 1e-6

    def test_diagonal_closed_form(self):
        mu = np.zeros(2)
        got = fid_from_stats(mu, np.diag([1.0, 4.0]), mu, np.diag([4.0, 1.0]))
        assert abs(got - 2.0) <= 1e-6

    def test_mean_shift_with_equal_covariance(self, rng):
        # trace terms cancel; squared mean distance 1+1=2 within sampling noise
        base = rng.standard_normal((4000, 2))
        shifted = base + np.array([1.0, 1.0])
        got = metric_fid(base, shifted)
        assert got == pytest.approx(2.0, rel=0.05)

    def test_symmetric(self, rng):
        a = rng.standard_normal((10, 3))
        b = rng.standard_normal((10, 3)) + 0.5
        assert abs(metric_fid(a, b) - metric_fid(b, a)) <= 1e-6

    def test_small_sample_without_shrinkage_rejected(self, rng):
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal((3, 5))
        with pytest.raises(ConditioningError):
            metric_fid(a, b)

    def test_shrinkage_allows_small_samples(self, rng):
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal((3, 5))
        assert math.isfinite(metric_fid(a, b, shrinkage=0.2))

    def test_shrinkage_identity_case(self):
        # full shrinkage replaces the covariance by (tr/d) I on both sides
        a = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        got = metric_fid(a, a + 1.0, shrinkage=1.0)
        assert got == pytest.approx(2.0, abs=1e-9)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimensionError):
            metric_fid(rng.standard_normal((5, 2)), rng.standard_normal((5, 3)))


class TestCosine:
    def test_self_similarity_one(self, rng):
        a = rng.standard_normal(8)
        assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_zero(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_antipodal_minus_one(self, rng):
        a = rng.standard_normal(8)
        assert cosine_similarity(a, -a) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateEmbeddingError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


GENUINE = [0.8, 0.6, 0.2]
IMPOSTOR = [0.5, 0.3, -0.1]


class TestCurves:
    def test_endpoints(self):
        curves = curves_from_similarities(GENUINE, IMPOSTOR)
        assert curves.fnmr[0] == 0.0 and curves.fmr[0] == 1.0  # t = -1
        assert curves.fnmr[-1] == 1.0 and curves.fmr[-1] == 0.0  # t = +1

    def test_hand_counted_values(self):
        curves = curves_from_similarities(GENUINE, IMPOSTOR)
        t = curves.thresholds

        def at(x):
            i = int(np.argmin(np.abs(t - x)))
            return curves.fnmr[i], curves.fmr[i]

        # genuine {0.8, 0.6, 0.2}, impostor {0.5, 0.3, -0.1}
        assert at(0.0) == (0.0, 2 / 3)       # no genuine below 0; imp {0.3, 0.5}
        assert at(0.25) == (1 / 3, 2 / 3)    # genuine {0.2}; imp {0.3, 0.5}
        assert at(0.4) == (1 / 3, 1 / 3)     # imp {0.5}
        assert at(0.7) == (2 / 3, 0.0)       # genuine {0.2, 0.6}
        assert at(0.9) == (1.0, 0.0)

    def test_eer_by_linear_interpolation(self):
        curves = curves_from_similarities(GENUINE, IMPOSTOR)
        # curves cross on the flat diff=0 run [0.302, 0.5]; its left edge
        # interpolates with zero fraction, so eer = fnmr there = 1/3
        assert curves.eer == 1 / 3

    def test_accuracy_at_best_threshold(self):
        curves = curves_from_similarities(GENUINE, IMPOSTOR)
        # t just above 0.5 classifies 5 of 6 pairs correctly
        assert curves.accuracy == 5 / 6
        assert curves.best_threshold == pytest.approx(0.502, abs=1e-9)

    def test_fnmr_monotone_nondecreasing_fmr_nonincreasing(self, rng):
        for _ in range(5):
            gen = rng.uniform(-1, 1, size=rng.randint(1, 30))
            imp = rng.uniform(-1, 1, size=rng.randint(1, 30))
            curves = curves_from_similarities(gen, imp)
            assert (np.diff(curves.fnmr) >= 0).all()
            assert (np.diff(curves.fmr) <= 0).all()

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_eer_between_zero_and_one(self, seed):
        rs = np.random.RandomState(seed)
        gen = rs.uniform(-1, 1, size=rs.randint(1, 20))
        imp = rs.uniform(-1, 1, size=rs.randint(1, 20))
        curves = curves_from_similarities(gen, imp)
        assert 0.0 <= curves.eer <= 1.0
        assert 0.0 <= curves.accuracy <= 1.0

    def test_missing_impostors_raises_with_partial_curves(self):
        with pytest.raises(InsufficientPairsError) as exc:
            curves_from_similarities(GENUINE, [])
        partial = exc.value.curves
        assert partial is not None
        assert np.isfinite(partial.fnmr).all()
        assert np.isnan(partial.fmr).all()

    def test_missing_genuine_raises_with_partial_curves(self):
        with pytest.raises(InsufficientPairsError) as exc:
            curves_from_similarities([], IMPOSTOR)
        assert np.isnan(exc.value.curves.fnmr).all()
        assert np.isfinite(exc.value.curves.fmr).all()

    def test_custom_threshold_grid(self):
        curves = curves_from_similarities(GENUINE, IMPOSTOR, thresholds=[0.0, 0.4])
        assert curves.thresholds.shape == (2,)

    def test_default_grid(self):
        t = default_thresholds()
        assert t.shape == (1001,)
        assert t[0] == -1.0 and t[-1] == 1.0

    def test_curves_csv_round_trip(self, tmp_path):
        curves = curves_from_similarities(GENUINE, IMPOSTOR)
        path = tmp_path / "curves.csv"
        curves.to_csv(path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "threshold,fnmr,fmr"
        assert len(rows) == 1 + curves.thresholds.size
        t0, fn0, fm0 = rows[1].split(",")
        assert float(t0) == curves.thresholds[0]
        assert float(fn0) == curves.fnmr[0]
        assert float(fm0) == curves.fmr[0]


class TestVerificationOverPairs:
    def test_stub_embeddings_reproduce_hand_counts(self):
        # vectors crafted so each pair's cosine equals the fixture value
        table = {}
        records = []
        for i, (sims, genuine) in enumerate([(GENUINE, True), (IMPOSTOR, False)]):
            for j, s in enumerate(sims):
                pa, pb = f"a{i}{j}", f"b{i}{j}"
                table[pa] = np.array([1.0, 0.0])
                table[pb] = np.array([s, math.sqrt(1.0 - s * s)])
                records.append(PairRecord(pa, pb, genuine))
        curves = verification_curves(PairList(records), table.__getitem__)
        assert curves.eer == pytest.approx(1 / 3, abs=1e-9)
        assert curves.accuracy == pytest.approx(5 / 6, abs=1e-9)

    def test_pair_list_csv_round_trip(self, tmp_path):
        pairs = PairList([PairRecord("x.png", "y.png", True), PairRecord("x.png", "z.png", False)])
        path = tmp_path / "pairs.csv"
        pairs.to_csv(path)
        loaded = PairList.from_csv(path)
        assert loaded.records == pairs.records

    def test_pair_list_csv_skips_comments(self, tmp_path):
        path = tmp_path / "pairs.csv"
        path.write_text("path_a,path_b,genuine\n# comment\na.png,b.png,1\na.png,c.png,no\n")
        loaded = PairList.from_csv(path)
        assert [r.genuine for r in loaded.records] == [True, False]

    def test_empty_pair_list_rejected(self):
        with pytest.raises(InsufficientPairsError):
            PairList([])


class TestReport:
    def test_json_round_trip(self, tmp_path):
        report = MetricReport(l1=1.5, psnr=30.0, ssim=0.9, fid=float("nan"), tv=0.01, n_samples=3)
        path = tmp_path / "report.json"
        report.to_json(path)
        loaded = MetricReport.from_json(path)
        assert (loaded.l1, loaded.psnr, loaded.ssim, loaded.tv, loaded.n_samples) == (
            1.5, 30.0, 0.9, 0.01, 3,
        )
        assert math.isnan(loaded.fid)

    def test_validation(self):
        with pytest.raises(DimensionError):
            MetricReport(l1=-1.0, psnr=0.0, ssim=0.0, fid=0.0, tv=0.0, n_samples=1)
        with pytest.raises(DimensionError):
            MetricReport(l1=0.0, psnr=0.0, ssim=2.0, fid=0.0, tv=0.0, n_samples=1)

    def test_evaluate_pairs_identical_images(self, rng):
        imgs = [rng.uniform(size=(16, 16, 3)) for _ in range(3)]
        report = evaluate_pairs([(x, x.copy()) for x in imgs])
        assert report.l1 == 0.0
        assert report.psnr == 99.0
        assert report.ssim == pytest.approx(1.0, abs=1e-9)
        assert math.isnan(report.fid)
        assert report.n_samples == 3

    def test_evaluate_pairs_with_features_and_per_sample(self, rng):
        imgs = [(rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))) for _ in range(2)]
        feats = rng.standard_normal((8, 3))
        report = evaluate_pairs(imgs, fid_features=(feats, feats + 0.1), keep_per_sample=True)
        assert math.isfinite(report.fid)
        assert len(report.per_sample) == 2
        assert set(report.per_sample[0]) == {"l1", "psnr", "ssim", "tv"}

    def test_evaluate_pairs_empty_rejected(self):
        with pytest.raises(DimensionError):
            evaluate_pairs([])
