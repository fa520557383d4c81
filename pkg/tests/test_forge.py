import numpy as np
import pytest

from molex import forge, fourier, rng

SPEC = forge.SyntheticSpec(image_size=64, channels=3)


class TestGenReal:
    def test_deterministic(self):
        assert np.array_equal(forge.gen_real(SPEC, 42), forge.gen_real(SPEC, 42))

    def test_different_seed_differs(self):
        assert not np.array_equal(forge.gen_real(SPEC, 1), forge.gen_real(SPEC, 2))

    def test_values_in_unit_interval(self):
        img = forge.gen_real(SPEC, 5)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_mean_pixel_band_over_100_samples(self):
        means = [forge.gen_real(SPEC, s).mean() for s in range(100)]
        assert min(means) >= 0.35 and max(means) <= 0.65

    def test_pink_spectrum_slope(self):
        # ensemble-averaged radial power; single images are too noisy to fit
        r = forge._radius_grid(64)
        bins = np.arange(2, 25)
        power = np.zeros(len(bins))
        n = 24
        for seed in range(n):
            gray = forge.gen_real(SPEC, seed).mean(axis=0)
            f = np.abs(fourier.fft2(gray - gray.mean())) ** 2
            power += np.array([f[(r >= b - 0.5) & (r < b + 0.5)].mean() for b in bins])
        slope = np.polyfit(np.log(bins), np.log(power / n), 1)[0]
        assert abs(slope - (-2.0)) < 0.3, f"fitted slope {slope:.3f}"

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError, match="power of two"):
            forge.gen_real(forge.SyntheticSpec(image_size=48), 0)


class TestGenFake:
    def test_zero_amplitude_equals_real(self):
        g = forge.GeneratorSpec("grid", period=4, amp=0.0)
        assert np.array_equal(forge.gen_fake(SPEC, g, 3), forge.gen_real(SPEC, 3))

    def test_differs_only_by_artifact_before_clipping(self):
        g = forge.GeneratorSpec("lowfreq", amp=0.05)
        base = forge.gen_real(SPEC, 11)
        fake = forge.gen_fake(SPEC, g, 11)
        trace = forge.artifact_field(g, 64, 11)
        interior = (base + trace > 0) & (base + trace < 1)
        assert np.allclose((fake - base)[interior], np.broadcast_to(trace, base.shape)[interior])

    def test_grid_peaks_at_quarter_frequency(self):
        g = forge.GeneratorSpec("grid", period=4, amp=0.1)
        for seed in (0, 1, 2):
            mag = np.abs(fourier.fft2(forge.gen_fake(SPEC, g, seed).mean(axis=0)))
            for peak_bin in ((0, 16), (0, 48), (16, 0), (48, 0)):
                peak = mag[peak_bin]
                row = mag[peak_bin[0]] if peak_bin[1] else mag[:, peak_bin[1]]
                neighborhood = np.concatenate([row[8:13], row[20:25]])
                assert peak > 5.0 * np.median(neighborhood), (seed, peak_bin)

    def test_checker_energy_at_nyquist_corner(self):
        g = forge.GeneratorSpec("checker", period=2, amp=0.1)
        mag = np.abs(fourier.fft2(forge.gen_fake(SPEC, g, 9).mean(axis=0)))
        corner = mag[32, 32]
        assert corner > 50.0 * np.median(mag)

    def test_unknown_generator_rejected(self):
        with pytest.raises(ValueError, match="unknown generator"):
            forge.artifact_field(forge.GeneratorSpec("vortex"), 64, 0)
        with pytest.raises(ValueError, match="unknown generator"):
            forge.parse_generator("vortex9")

    def test_parse_round_trip(self):
        g = forge.parse_generator("grid4")
        assert g.kind == "grid" and g.period == 4 and g.generator_id == "grid4"
        assert forge.parse_generator("checker2").period == 2
        assert forge.parse_generator("ring").kind == "ring"
        assert forge.parse_generator("lowfreq:0.3").amp == 0.3


class TestGaussianBlur:
    def test_sigma_zero_identity(self):
        img = forge.gen_real(SPEC, 2)
        assert np.array_equal(forge.gaussian_blur(img, 0.0), img)

    def test_constant_preserved(self):
        const = np.full((3, 32, 32), 0.41)
        assert np.abs(forge.gaussian_blur(const, 2.0) - const).max() < 1e-12

    def test_impulse_center_weight(self):
        imp = np.zeros((65, 65))
        imp[32, 32] = 1.0
        out = forge.gaussian_blur(imp, 1.0)
        assert abs(out[32, 32] - 0.159) < 1e-2

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            forge.gaussian_blur(np.zeros((4, 4)), -1.0)

    def test_mass_preserved(self):
        img = forge.gen_real(SPEC, 3)
        out = forge.gaussian_blur(img, 2.0)
        assert abs(out.mean() - img.mean()) < 1e-3


class TestJpegLike:
    def test_quality_100_near_lossless(self):
        assert (forge.quant_table(100) == 1).all()
        img = forge.gen_real(SPEC, 1)
        assert np.abs(forge.jpeg_like(img, 100) - img).max() <= 2.0 / 255.0

    def test_constant_unchanged_any_quality(self):
        const = np.full((32, 32), 0.37)
        for q in (100, 90, 50, 30, 1):
            assert np.abs(forge.jpeg_like(const, q) - const).max() < 1.0 / 255.0

    def test_low_quality_increases_error(self):
        for seed in (0, 4, 8):
            img = forge.gen_real(SPEC, seed)
            e90 = np.abs(forge.jpeg_like(img, 90) - img).mean()
            e30 = np.abs(forge.jpeg_like(img, 30) - img).mean()
            assert e30 > e90

    def test_out_of_range_quality_rejected(self):
        for q in (0, 101, -3):
            with pytest.raises(ValueError):
                forge.jpeg_like(np.zeros((8, 8)), q)


class TestAugment:
    def _batch(self, n=16):
        images = np.stack([forge.gen_real(SPEC, s) for s in range(n)])
        return forge.Batch(images=images, labels=np.zeros(n, dtype=np.int64))

    def test_p_zero_unchanged(self):
        batch = self._batch()
        out = forge.augment(batch, 0.0, rng.stream(0, "aug"))
        assert np.array_equal(out.images, batch.images)

    def test_p_one_perturbs_every_image(self):
        batch = self._batch()
        out = forge.augment(batch, 1.0, rng.stream(1, "aug"))
        for i in range(len(batch.images)):
            assert not np.array_equal(out.images[i], batch.images[i])

    def test_deterministic_given_stream(self):
        batch = self._batch(8)
        a = forge.augment(batch, 0.5, rng.stream(3, "aug"))
        b = forge.augment(batch, 0.5, rng.stream(3, "aug"))
        assert np.array_equal(a.images, b.images)

    def test_empirical_rate_matches_p(self):
        gen = rng.stream(9, "rate")
        hits = 0
        n = 10000
        for _ in range(n):
            gate_blur = gen.uniform()
            gen.uniform(0.0, 3.0)
            gen.uniform()
            gen.integers(30, 101)
            hits += gate_blur < 0.1
        assert 0.08 <= hits / n <= 0.12


class TestCorpus:
    def test_ppm_round_trip_lossless_at_8bit(self, tmp_path):
        img = forge.gen_real(SPEC, 17)
        quantized = np.round(img * 255.0) / 255.0
        path = str(tmp_path / "x.ppm")
        forge.write_ppm(path, img)
        back = forge.read_ppm(path)
        assert np.abs(back - quantized).max() < 1e-12

    def test_split_write_load(self, tmp_path):
        gens = [forge.parse_generator("grid4"), forge.parse_generator("lowfreq")]
        forge.write_split(str(tmp_path / "train"), SPEC, 6, [(gens[0], 3), (gens[1], 3)],
                          seed=0, tag="train")
        corpus = forge.load_split(str(tmp_path / "train"))
        assert len(corpus) == 12
        assert (corpus.labels == 0).sum() == 6
        assert corpus.generator_ids() == ["grid4", "lowfreq2"]
        batch = corpus.gather([0, 6, 7])
        assert batch.images.shape == (3, 3, 64, 64)
        assert list(batch.labels) == [0, 1, 1]

    def test_heldout_generator_protocol(self, tmp_path):
        paths = forge.build_corpus(
            str(tmp_path), SPEC,
            [forge.parse_generator("grid4"), forge.parse_generator("lowfreq")],
            [forge.parse_generator("checker2"), forge.parse_generator("ring")],
            train_size=8, val_size=4, test_size=8, seed=1)
        train = forge.load_split(paths["train"])
        test = forge.load_split(paths["test"])
        assert set(train.generator_ids()) == {"grid4", "lowfreq2"}
        assert set(test.generator_ids()) == {"checker2", "ring6"}
        assert set(train.generator_ids()).isdisjoint(test.generator_ids())

    def test_balanced_shares(self, tmp_path):
        paths = forge.build_corpus(
            str(tmp_path), SPEC, [forge.parse_generator("grid4")],
            [forge.parse_generator("ring")], 10, 4, 6, seed=2)
        train = forge.load_split(paths["train"])
        assert abs(int((train.labels == 1).sum()) - int((train.labels == 0).sum())) <= 1
