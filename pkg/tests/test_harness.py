import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from warpkit import tom
from warpkit.gmm import warp_with_theta
from warpkit.harness import experiments as ex
from warpkit.harness import metrics, synth


class TestTv:
    def test_constant(self):
        assert metrics.tv_norm(np.full((3, 8, 6), 0.4)) == 0.0

    def test_vertical_step(self):
        h, w = 10, 8
        img = np.zeros((3, h, w))
        img[1, :, 4:] = 1.0
        assert metrics.tv_norm(img) == pytest.approx(h / (h * w)) == pytest.approx(1 / w)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 5, 4), elements=st.floats(0, 1)))
    def test_transpose_symmetry(self, img):
        assert metrics.tv_norm(img) == pytest.approx(metrics.tv_norm(img.transpose(0, 2, 1)), rel=1e-12, abs=1e-15)

    def test_too_small(self):
        with pytest.raises(ValueError):
            metrics.tv_norm(np.zeros((3, 1, 5)))


class TestSplit:
    def test_default_k(self):
        assert inspect.signature(metrics.split_tv).parameters["k"].default == 50

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=40), st.integers(1, 5))
    def test_disjoint_ordered_deterministic(self, tvs, k):
        if len(tvs) < 2 * k:
            return
        items = [(f"g{i:03d}", v) for i, v in enumerate(tvs)]
        large, small = metrics.split_tv(items, k)
        assert len(large) == len(small) == k
        assert not set(large) & set(small)
        tv = dict(items)
        assert min(tv[n] for n in large) >= max(tv[n] for n in small)
        assert metrics.split_tv(items[::-1], k) == (large, small)

    def test_ties_by_name(self):
        items = [("b", 1.0), ("a", 1.0), ("d", 0.0), ("c", 0.0)]
        assert metrics.split_tv(items, 1) == (["b"], ["c"])

    def test_insufficient(self):
        with pytest.raises(ValueError, match="at least"):
            metrics.split_tv([("a", 1.0)] * 5, 3)


def recover_shift(orig, out, radius):
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if np.array_equal(metrics.shift(orig, dx, dy), out):
                return dx, dy
    return None


class TestPerturb:
    def test_zero_is_identity(self, rng):
        x = rng.random((3, 6, 5))
        np.testing.assert_array_equal(metrics.perturb(x, 0, 1), x)

    @pytest.mark.parametrize("n", [0, 5, 10, 15, 20])
    def test_reference_radii_accepted(self, rng, n):
        assert metrics.perturb(rng.random((3, 48, 48)), n, 0).shape == (3, 48, 48)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 4))
    def test_shift_in_ball_and_multiset(self, seed, radius):
        x = np.random.default_rng(seed).random((2, 9, 8))
        out = metrics.perturb(x, radius, seed)
        dxy = recover_shift(x, out, radius)
        assert dxy is not None
        dx, dy = dxy
        # away from the replicated border the pixel multiset is exactly the source's
        h, w = x.shape[1:]
        oy, ox = slice(max(dy, 0), h + min(dy, 0)), slice(max(dx, 0), w + min(dx, 0))
        iy, ix = slice(max(-dy, 0), h + min(-dy, 0)), slice(max(-dx, 0), w + min(-dx, 0))
        assert np.array_equal(np.sort(out[:, oy, ox].ravel()), np.sort(x[:, iy, ix].ravel()))

    def test_uniform_over_ball(self):
        rng = np.random.default_rng(0)
        x = np.arange(25.0).reshape(1, 5, 5) * 10
        counts = {}
        for _ in range(900):
            key = recover_shift(x, metrics.perturb(x, 1, rng), 1)
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 9 and None not in counts
        assert min(counts.values()) > 60 and max(counts.values()) < 140

    def test_negative(self):
        with pytest.raises(ValueError):
            metrics.perturb(np.zeros((1, 3, 3)), -1)

    def test_radius_scaling(self):
        assert [ex.radius_pixels(n, 48) for n in ex.RADII] == [0, 1, 3, 4, 5]
        assert [ex.radius_pixels(n, 192) for n in ex.RADII] == list(ex.RADII)


class TestSynth:
    def test_deterministic_pngs(self, tmp_path):
        for d in ("a", "b"):
            synth.save_dataset(synth.gen_synth_dataset(4, seed=11), tmp_path / d)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 4 * 9 + 1
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f

    def test_warp_round_trip(self, small_samples):
        for s in small_samples:
            assert np.abs(warp_with_theta(s.cloth, s.theta) - s.worn).max() < 1e-6

    def test_stored_warp_round_trip(self, tmp_path, small_samples):
        synth.save_dataset(small_samples[:2], tmp_path)
        s = synth.load_sample(tmp_path, small_samples[1].name)
        assert np.abs(warp_with_theta(s.cloth, s.theta) - warp_with_theta(s.cloth, small_samples[1].theta)).max() < 1e-6
        np.testing.assert_array_equal(s.theta, small_samples[1].theta)

    def test_warps_bounded(self):
        for s in synth.gen_synth_dataset(20, seed=5):
            assert np.abs(s.theta).max() <= synth.MAX_WARP

    def test_textures_richer_than_flat(self):
        samples = synth.gen_synth_dataset(40, seed=2)
        tv = {k: [metrics.tv_norm(s.cloth) for s in samples if s.texture == k] for k in synth.TEXTURES}
        flat = np.mean(tv["flat"])
        for kind in ("stripes", "checkers", "logo"):
            assert np.mean(tv[kind]) >= 3 * flat, kind

    def test_sample_fields(self, small_samples):
        s = small_samples[0]
        assert s.cloth.shape == s.worn.shape == s.person.shape == (3, 64, 48)
        assert s.keypoints.shape == (18, 3)
        assert set(np.unique(s.body_mask)) <= {0.0, 1.0}
        assert (s.body_mask >= s.worn_mask).all()

    def test_bad_n(self):
        with pytest.raises(ValueError):
            synth.gen_synth_dataset(0)

    def test_load_dataset_matches_memory(self, tmp_path, small_samples):
        synth.save_dataset(small_samples, tmp_path)
        disk = synth.load_dataset(tmp_path)
        mem = synth.to_arrays(small_samples)
        assert disk.names == mem.names
        assert np.abs(disk.cloth - mem.cloth).max() <= 0.5 / 255 + 1e-6


class TestReports:
    def nets(self):
        return {v: tom.TomNet(tom.TomConfig(variant=v, filter_div=16)) for v in ("full", "no_mask")}

    def test_rows_per_condition(self, small_arrays):
        cfg = ex.RobustnessConfig(radii=(0, 10, 20), perceptual=tom.PerceptualConfig(filter_div=16))
        rep = ex.robustness_experiment(self.nets(), small_arrays, cfg)
        assert len(rep.rows) == 2 * 3
        assert {(r.method, r.condition) for r in rep.rows} == {(v, f"N={n}") for v in ("full", "no_mask") for n in (0, 10, 20)}
        assert np.isnan(rep.find("no_mask", "N=0").mean_mask)

    def test_missing_variant(self, small_arrays):
        with pytest.raises(KeyError, match="no_mask"):
            ex.robustness_experiment({"full": self.nets()["full"]}, small_arrays)

    def test_paired_perturbations(self, small_arrays):
        a = ex._perturbed(small_arrays.worn, 3, 0, 15)
        b = ex._perturbed(small_arrays.worn, 3, 0, 15)
        np.testing.assert_array_equal(a, b)

    def test_csv_round_trip_bit_exact(self, tmp_path):
        rep = ex.ExperimentReport()
        rep.add(ex.ReportRow("full", "N=0", 0.1 + 0.2, 1 / 3, np.pi, 0.987654321, None))
        rep.add(ex.ReportRow("scmm", "00001", wall_clock=0.0123))
        rep.save_csv(tmp_path / "r.csv")
        back = ex.ExperimentReport.load_csv(tmp_path / "r.csv")
        assert back.rows[0].l1 == 0.1 + 0.2 and back.rows[0].perceptual == 1 / 3
        assert back.rows[0].wall_clock is None and back.rows[1].wall_clock == 0.0123
        back.save_csv(tmp_path / "r2.csv")
        assert (tmp_path / "r.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()
        raw = (tmp_path / "r.csv").read_bytes()
        assert b"\r" not in raw and raw.startswith(b"method,condition,l1,")

    def test_speed_comparison_rows(self, small_samples):
        rep = ex.speed_comparison(small_samples[:2], n_points=32)
        assert [r.method for r in rep.rows] == ["gmm", "scmm"] * 2
        assert all(r.wall_clock > 0 for r in rep.rows)
