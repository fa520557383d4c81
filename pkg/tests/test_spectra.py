import numpy as np
import pytest

from molex import forge, fourier, rng, spectra

SPEC = forge.SyntheticSpec(image_size=64, channels=3)


class TestHighpass:
    def test_constant_image_zero_residual(self):
        assert np.abs(spectra.highpass(np.full((32, 32), 0.6))).max() < 1e-12

    def test_single_bright_pixel_retained(self):
        img = np.zeros((32, 32))
        img[10, 20] = 1.0
        res = spectra.highpass(img)
        assert res[10, 20] > 0.99  # local median is 0; only the DC removal nibbles

    def test_smooth_ramp_mostly_removed(self):
        ramp = np.linspace(0, 1, 64)[None, :] * np.linspace(0, 1, 64)[:, None]
        res = spectra.highpass(ramp)
        assert (res ** 2).sum() < 0.01 * ((ramp - ramp.mean()) ** 2).sum()

    def test_zero_mean(self):
        img = forge.gen_real(SPEC, 3).mean(axis=0)
        assert abs(spectra.highpass(img).mean()) < 1e-6

    def test_per_channel(self):
        img = forge.gen_real(SPEC, 4)
        res = spectra.highpass(img)
        assert res.shape == img.shape

    def test_gaussian_mode(self):
        img = forge.gen_real(SPEC, 5).mean(axis=0)
        med = spectra.highpass(img, "median")
        gau = spectra.highpass(img, "gaussian")
        assert not np.allclose(med, gau)
        with pytest.raises(ValueError):
            spectra.highpass(img, "butterworth")


class TestAvgSpectrum:
    def test_pure_sinusoid_bins(self):
        n, period = 64, 8
        img = 0.5 + 0.3 * np.cos(2 * np.pi * np.arange(n) / period)[None, :] * np.ones((n, 1))
        spec = spectra.avg_fft_spectrum([img])
        c = n // 2
        k = n // period
        values = np.expm1(spec.values)
        row = values[c]
        assert row[c + k] > 10 * np.median(row)
        assert row[c - k] > 10 * np.median(row)

    def test_white_noise_flat(self):
        gen = rng.stream(6, "white")
        images = [gen.uniform(size=(64, 64)) for _ in range(64)]
        spec = spectra.avg_fft_spectrum(images)
        values = np.expm1(spec.values)
        center = values.shape[0] // 2
        values = np.delete(values.reshape(-1), center * values.shape[1] + center)
        assert values.max() / np.median(values) < 3.0

    def test_grid_fakes_vs_reals_fingerprint(self):
        g = forge.GeneratorSpec("grid", period=4, amp=0.1)
        fakes = [forge.gen_fake(SPEC, g, s) for s in range(64)]
        reals = [forge.gen_real(SPEC, 1000 + s) for s in range(64)]
        fake_spec = spectra.avg_fft_spectrum(fakes)
        real_spec = spectra.avg_fft_spectrum(reals)
        for offset in ((0, 16), (0, -16), (16, 0), (-16, 0)):
            assert spectra.peak_background_ratio(fake_spec, offset) >= 5.0, offset
            assert spectra.peak_background_ratio(real_spec, offset) < 2.0, offset

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            spectra.avg_fft_spectrum([np.zeros((32, 32)), np.zeros((64, 64))])

    def test_mean_is_order_independent(self):
        images = [forge.gen_real(SPEC, s) for s in range(8)]
        a = spectra.avg_fft_spectrum(images)
        b = spectra.avg_fft_spectrum(list(reversed(images)))
        assert np.abs(a.values - b.values).max() < 1e-12


class TestExport:
    def test_pgm_header_and_uniform_map(self, tmp_path):
        m = spectra.SpectrumMap(values=np.full((64, 64), 3.0), count=1, filter_mode="median")
        pgm, _ = spectra.export_spectrum(m, str(tmp_path / "flat"))
        with open(pgm, "rb") as f:
            data = f.read()
        header = data.split(b"\n")[:3]
        assert header == [b"P5", b"64 64", b"255"]
        body = data[len(b"P5\n64 64\n255\n"):]
        assert len(set(body)) == 1  # one gray level

    def test_csv_round_trip(self, tmp_path):
        values = rng.gaussian(7, (16, 16))
        m = spectra.SpectrumMap(values=values, count=4, filter_mode="gaussian")
        _, csv = spectra.export_spectrum(m, str(tmp_path / "m"))
        back = spectra.read_spectrum_csv(csv)
        assert np.abs(back - values).max() < 1e-9
        with open(csv) as f:
            assert "filter=gaussian" in f.readline()

    def test_io_failure_names_path(self, tmp_path):
        m = spectra.SpectrumMap(values=np.zeros((4, 4)), count=1, filter_mode="median")
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        target = str(blocker / "x")
        with pytest.raises(OSError, match="blocker"):
            spectra.export_spectrum(m, target)
