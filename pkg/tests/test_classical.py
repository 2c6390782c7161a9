import numpy as np
import pytest

from wasnsep.classical import (DEFAULT_MAX_LAG, METHODS, DelaySet, dsb,
                               estimate_delays, fmva_dsb, initial_masks,
                               postfilter, separate_classical)
from wasnsep.clustering import ClusterModel, coherence_matrix
from wasnsep.dsp import StftConfig, apply_delay, stft

FS = 16000


def two_cluster_model(n_per=3):
    m = 2 * n_per
    membership = np.zeros((m, 3))
    membership[:n_per, 0] = 0.9
    membership[n_per:, 1] = 0.9
    membership[:, 2] = 0.01
    return ClusterModel(
        membership=membership,
        assignments=np.array([0] * n_per + [1] * n_per),
        references=np.array([0, n_per, 0]),
        objective_trace=np.array([1.0, 0.5]),
        n_clusters=3,
    )


def band_noise(n, seed, lo, hi):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1.0 / FS)
    spec[(freqs < lo) | (freqs > hi)] = 0
    y = np.fft.irfft(spec, n)
    return y / np.sqrt(np.mean(y ** 2))


class TestInitialMasks:
    def test_partition(self):
        cfg = StftConfig()
        specs = [stft(band_noise(FS, s, 100, 7000), cfg) for s in (0, 1, 2)]
        masks = initial_masks(specs)
        assert masks.dtype == np.uint8
        assert np.array_equal(masks.sum(axis=0), np.ones(masks.shape[1:], dtype=np.uint64))

    def test_gain_invariant(self):
        cfg = StftConfig()
        a = stft(band_noise(FS, 0, 100, 2000), cfg)
        b = stft(band_noise(FS, 1, 3000, 7000), cfg)
        from wasnsep.dsp import Spectrogram
        b_loud = Spectrogram(b.bins * 100.0, cfg, b.n_samples)
        assert np.array_equal(initial_masks([a, b]), initial_masks([a, b_loud]))

    def test_disjoint_bands_split_correctly(self):
        cfg = StftConfig()
        lowpass = stft(band_noise(2 * FS, 3, 100, 1500), cfg)
        highpass = stft(band_noise(2 * FS, 4, 4000, 7000), cfg)
        masks = initial_masks([lowpass, highpass])
        freqs = np.arange(cfg.n_bins) * FS / cfg.fft_len
        low_bins = (freqs > 200) & (freqs < 1200)
        high_bins = (freqs > 4500) & (freqs < 6500)
        assert masks[0][:, low_bins].mean() > 0.95
        assert masks[1][:, high_bins].mean() > 0.95

    def test_errors(self):
        cfg = StftConfig()
        with pytest.raises(ValueError):
            initial_masks([])
        silent = stft(np.zeros(FS), cfg)
        with pytest.raises(ValueError):
            initial_masks([silent])
        a = stft(band_noise(FS, 0, 100, 7000), cfg)
        b = stft(band_noise(2 * FS, 1, 100, 7000), cfg)
        with pytest.raises(ValueError):
            initial_masks([a, b])


class TestEstimateDelays:
    def test_recovers_integer_delays(self):
        src = band_noise(2 * FS, 10, 100, 7000)
        rec = np.stack([src, np.roll(src, 5), np.roll(src, -9)])
        model = ClusterModel(
            membership=np.array([[0.9, 0.0]] * 3),
            assignments=np.array([0, 0, 0]),
            references=np.array([0, 0]),
            objective_trace=np.array([1.0]),
            n_clusters=2,
        )
        cfg = StftConfig()
        masks = np.ones((1, stft(src, cfg).bins.shape[0], cfg.n_bins), dtype=np.uint8)
        d = estimate_delays(rec, model, masks, (0,), cfg)
        # np.roll(x, k) arrives k samples later
        assert d.tau[0, 0] == 0.0
        assert d.tau[1, 0] == 5.0
        assert d.tau[2, 0] == -9.0

    def test_reference_always_zero(self):
        rng = np.random.default_rng(0)
        rec = rng.standard_normal((4, FS))
        model = two_cluster_model(2)
        cfg = StftConfig()
        frames = stft(rec[0], cfg).bins.shape[0]
        masks = np.ones((2, frames, cfg.n_bins), dtype=np.uint8)
        masks[1] = 0   # empty mask: guard path, delays stay zero
        d = estimate_delays(rec, model, masks, (0, 1), cfg)
        assert d.tau[0, 0] == 0.0
        assert np.all(d.tau[:, 1] == 0.0)

    def test_mask_shape_mismatch(self):
        rec = np.random.default_rng(1).standard_normal((4, FS))
        model = two_cluster_model(2)
        with pytest.raises(ValueError):
            estimate_delays(rec, model, np.ones((1, 10, 257)), (0, 1))


class TestBeamformers:
    def _delayed_scene(self, delays, seed=0):
        src = band_noise(2 * FS, seed, 100, 7000)
        rec = np.stack([np.roll(src, d) for d in delays])
        n = len(delays)
        model = ClusterModel(
            membership=np.full((n, 2), 0.0),
            assignments=np.zeros(n, dtype=int),
            references=np.array([0, 0]),
            objective_trace=np.array([1.0]),
            n_clusters=2,
        )
        model.membership[:, 0] = 0.8
        tau = np.zeros((n, 2))
        tau[:, 0] = delays
        return src, rec, model, DelaySet(tau=tau)

    def test_dsb_realigns_to_reference(self):
        src, rec, model, delays = self._delayed_scene([0, 7, -4, 12])
        out = dsb(rec, model, 0, delays)
        err = np.linalg.norm(out - src) / np.linalg.norm(src)
        assert err < 1e-2

    def test_dsb_averages_noise_down(self):
        # common signal + independent noise: SNR gain should be near 10log10(M)
        rng = np.random.default_rng(3)
        src = band_noise(2 * FS, 4, 100, 7000)
        m = 4
        noise = rng.standard_normal((m, src.size))
        rec = src[None] + noise
        model = ClusterModel(
            membership=np.full((m, 2), 0.5),
            assignments=np.zeros(m, dtype=int),
            references=np.array([0, 0]),
            objective_trace=np.array([1.0]),
            n_clusters=2,
        )
        out = dsb(rec, model, 0, DelaySet(tau=np.zeros((m, 2))))
        resid_in = np.mean((rec[0] - src) ** 2)
        resid_out = np.mean((out - src) ** 2)
        gain_db = 10 * np.log10(resid_in / resid_out)
        assert gain_db == pytest.approx(10 * np.log10(m), abs=0.5)

    def test_fmva_uniform_weights_match_dsb(self):
        _, rec, model, delays = self._delayed_scene([0, 3, -2])
        a = dsb(rec, model, 0, delays)
        b = fmva_dsb(rec, model, 0, delays)   # membership equal per mic
        assert np.allclose(a, b, atol=1e-12)

    def test_fmva_downweights_weak_member(self):
        src, rec, model, delays = self._delayed_scene([0, 0, 0], seed=5)
        rng = np.random.default_rng(6)
        rec = rec.copy()
        rec[2] = rng.standard_normal(rec.shape[1]) * 5.0   # mic 2 is garbage
        model.membership[2, 0] = 1e-6
        uniform = dsb(rec, model, 0, delays)
        weighted = fmva_dsb(rec, model, 0, delays)
        assert (np.linalg.norm(weighted - src) <
                0.5 * np.linalg.norm(uniform - src))

    def test_empty_cluster_rejected(self):
        _, rec, model, delays = self._delayed_scene([0, 1])
        with pytest.raises(ValueError):
            dsb(rec, model, 1, delays)
        with pytest.raises(ValueError):
            fmva_dsb(rec, model, 1, delays)


class TestPostfilter:
    def test_winner_takes_bin(self):
        low = band_noise(FS, 0, 100, 1500)
        high = band_noise(FS, 1, 4000, 7000)
        out, masks = postfilter(np.stack([low + 0.01 * high, high + 0.01 * low]))
        assert np.array_equal(masks.sum(axis=0), np.ones(masks.shape[1:], dtype=np.uint64))
        # each output keeps its own band and loses the leak
        spec0 = np.abs(np.fft.rfft(out[0]))
        freqs = np.fft.rfftfreq(out[0].size, 1.0 / FS)
        assert spec0[(freqs > 4500) & (freqs < 6500)].mean() < \
            0.1 * spec0[(freqs > 200) & (freqs < 1200)].mean()

    def test_non_expansive(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal((2, FS))
        out, _ = postfilter(y)
        for c in range(2):
            assert np.sum(out[c] ** 2) <= np.sum(y[c] ** 2) * (1 + 1e-9)

    def test_needs_two_signals(self):
        with pytest.raises(ValueError):
            postfilter(np.random.default_rng(0).standard_normal((1, FS)))
        with pytest.raises(ValueError):
            postfilter(np.zeros(FS))


class TestSeparateClassical:
    def _scene(self):
        # two disjoint-band sources, each heard loudest by its own trio
        a = band_noise(2 * FS, 0, 100, 1800)
        b = band_noise(2 * FS, 1, 3500, 7000)
        rng = np.random.default_rng(2)
        rec = np.zeros((6, 2 * FS))
        for m in range(3):
            rec[m] = a + 0.1 * b + 0.01 * rng.standard_normal(2 * FS)
        for m in range(3, 6):
            rec[m] = b + 0.1 * a + 0.01 * rng.standard_normal(2 * FS)
        return rec

    @pytest.mark.parametrize("method", METHODS)
    def test_intermediates_recorded(self, method):
        rec = self._scene()
        model = two_cluster_model(3)
        res = separate_classical(rec, model, method, noise_cluster=2)
        assert res.method == method
        assert res.speech_clusters == (0, 1)
        assert res.estimates.shape == (2, rec.shape[1])
        assert res.initial_masks.shape[0] == 2
        assert res.delays.tau.shape == (6, 3)
        if method == "dsb+postfilter":
            assert res.postfilter_masks is not None
        else:
            assert res.postfilter_masks is None

    def test_recovers_band_split(self):
        rec = self._scene()
        model = two_cluster_model(3)
        res = separate_classical(rec, model, "dsb", noise_cluster=2)
        freqs = np.fft.rfftfreq(rec.shape[1], 1.0 / FS)
        for c, (lo, hi) in enumerate([(200, 1500), (4000, 6500)]):
            spec = np.abs(np.fft.rfft(res.estimates[c]))
            inband = spec[(freqs > lo) & (freqs < hi)].mean()
            other = [(4000, 6500), (200, 1500)][c]
            out_of_band = spec[(freqs > other[0]) & (freqs < other[1])].mean()
            assert inband > 3 * out_of_band

    def test_noise_identified_from_coherence_when_not_given(self):
        rec = self._scene()
        # third cluster of incoherent mics plays the noise role
        rng = np.random.default_rng(7)
        rec = np.vstack([rec, rng.standard_normal((2, rec.shape[1]))])
        membership = np.zeros((8, 3))
        membership[:3, 0] = 0.9
        membership[3:6, 1] = 0.9
        membership[6:, 2] = 0.9
        model = ClusterModel(
            membership=membership,
            assignments=np.array([0, 0, 0, 1, 1, 1, 2, 2]),
            references=np.array([0, 3, 6]),
            objective_trace=np.array([1.0]),
            n_clusters=3,
        )
        res = separate_classical(rec, model, "dsb")
        assert res.speech_clusters == (0, 1)

    def test_bad_method_and_bad_noise_cluster(self):
        rec = self._scene()
        model = two_cluster_model(3)
        with pytest.raises(ValueError):
            separate_classical(rec, model, "wiener")
        with pytest.raises(ValueError):
            separate_classical(rec, model, "dsb", noise_cluster=5)

    def test_all_clusters_speech_rejected(self):
        rec = self._scene()[:3]
        model = ClusterModel(
            membership=np.full((3, 1), 0.9),
            assignments=np.zeros(3, dtype=int),
            references=np.array([0]),
            objective_trace=np.array([1.0]),
            n_clusters=1,
        )
        with pytest.raises(ValueError):
            separate_classical(rec, model, "dsb", noise_cluster=0)


class TestDelayPrimitiveContract:
    def test_dsb_handles_fractional_delays(self):
        from wasnsep.dsp import istft
        cfg = StftConfig()
        src = band_noise(2 * FS, 8, 100, 6000)
        delayed = [istft(apply_delay(stft(src, cfg), d)) for d in (3.5, -2.25)]
        rec = np.stack([src] + delayed)
        model = ClusterModel(
            membership=np.full((3, 2), 0.8),
            assignments=np.zeros(3, dtype=int),
            references=np.array([0, 0]),
            objective_trace=np.array([1.0]),
            n_clusters=2,
        )
        tau = np.zeros((3, 2))
        tau[:, 0] = [0.0, 3.5, -2.25]
        out = dsb(rec, model, 0, DelaySet(tau=tau))
        err = np.linalg.norm(out - src) / np.linalg.norm(src)
        assert err < 2e-2
