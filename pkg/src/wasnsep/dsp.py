"""Frame-based spectral analysis/synthesis and delay primitives.

Everything downstream (masking, beamforming, coherence estimation) runs on
the frames produced here, so the analysis/synthesis pair must reconstruct
exactly up to float rounding. Synthesis divides by the accumulated squared
window, which makes the pair self-inverting for any hop at which the window
coverage never drops to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12

_WINDOW_NAMES = ("hann", "sqrt-hann")


def _periodic_hann(n: int) -> np.ndarray:
    # periodic variant: the length-n DFT window, not sympy's symmetric one
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def _coverage(window: np.ndarray, hop: int, n_frames: int = 8) -> np.ndarray:
    """Overlap-added squared-window envelope for a run of frames."""
    frame_len = len(window)
    cov = np.zeros((n_frames - 1) * hop + frame_len)
    wsq = window * window
    for f in range(n_frames):
        cov[f * hop:f * hop + frame_len] += wsq
    return cov


def _cola_ok(window: np.ndarray, hop: int) -> bool:
    # steady-state coverage must stay well away from zero, otherwise the
    # per-sample normalization in istft blows up
    cov = _coverage(window, hop)
    frame_len = len(window)
    interior = cov[frame_len:-frame_len]
    if interior.size == 0:
        return False
    return float(interior.min()) > 1e-3 * float(interior.max())


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters shared by the transform pair.

    frame_len and hop are in samples; fft_len must be a power of two at
    least frame_len. The default 512/256 sqrt-hann pair reconstructs
    exactly (unit squared-window coverage at 50% overlap).
    """

    frame_len: int = 512
    hop: int = 256
    window: str = "sqrt-hann"
    fft_len: int = 512
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window not in _WINDOW_NAMES:
            raise ValueError(f"unknown window {self.window!r}, expected one of {_WINDOW_NAMES}")
        if self.frame_len <= 0:
            raise ValueError("frame_len must be positive")
        if not (0 < self.hop <= self.frame_len):
            raise ValueError("hop must lie in [1, frame_len]")
        n = self.fft_len
        if n < self.frame_len or n <= 0 or (n & (n - 1)) != 0:
            raise ValueError("fft_len must be a power of two >= frame_len")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not _cola_ok(self.window_samples(), self.hop):
            raise ValueError(
                f"window {self.window!r} at hop {self.hop} does not give stable "
                "overlap-add coverage; reduce the hop"
            )

    def window_samples(self) -> np.ndarray:
        w = _periodic_hann(self.frame_len)
        if self.window == "sqrt-hann":
            w = np.sqrt(w)
        return w

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        padded = n_samples + 2 * (self.frame_len // 2)
        if padded < self.frame_len:
            return 1
        return int(np.ceil((padded - self.frame_len) / self.hop)) + 1


@dataclass(frozen=True)
class Spectrogram:
    """Complex frames [n_frames x n_bins] plus the config that made them.

    n_samples is the length of the originating signal so that synthesis can
    trim its output exactly. Treat the bins array as immutable; copy before
    masking.
    """

    bins: np.ndarray
    config: StftConfig
    n_samples: int

    def __post_init__(self):
        if self.bins.ndim != 2 or self.bins.shape[1] != self.config.n_bins:
            raise ValueError(
                f"bins must be [n_frames x {self.config.n_bins}], got {self.bins.shape}")
        if self.n_samples < 0:
            raise ValueError("n_samples must be nonnegative")

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[1]


def stft(signal, config: StftConfig = StftConfig()) -> Spectrogram:
    """Analyze a mono signal into windowed complex frames.

    The signal is zero-padded by frame_len/2 on both ends so that every
    input sample gets full window coverage and the round trip through
    istft is exact up to rounding.

    Args:
        signal: 1-D float array, at least one frame long.
        config: analysis parameters.

    Returns:
        Spectrogram with bins shaped [n_frames, fft_len // 2 + 1].
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a 1-D signal")
    if x.size < config.frame_len:
        raise ValueError(
            f"signal of {x.size} samples is shorter than one frame ({config.frame_len})"
        )
    pad = config.frame_len // 2
    n_frames = config.n_frames(x.size)
    total = (n_frames - 1) * config.hop + config.frame_len
    buf = np.zeros(total)
    buf[pad:pad + x.size] = x

    idx = np.arange(config.frame_len)[None, :] + config.hop * np.arange(n_frames)[:, None]
    frames = buf[idx] * config.window_samples()[None, :]
    bins = np.fft.rfft(frames, n=config.fft_len, axis=1)
    return Spectrogram(bins=bins, config=config, n_samples=x.size)


def istft(spec: Spectrogram) -> np.ndarray:
    """Resynthesize a signal from (possibly modified) frames.

    Overlap-adds windowed inverse transforms and divides by the accumulated
    squared window, then trims the frame_len/2 padding added by stft.

    Returns:
        1-D float array of spec.n_samples samples.
    """
    config = spec.config
    bins = np.asarray(spec.bins)
    if bins.ndim != 2 or bins.shape[1] != config.n_bins:
        raise ValueError(
            f"frame array has {bins.shape} bins, expected [*, {config.n_bins}]"
        )
    window = config.window_samples()
    frames = np.fft.irfft(bins, n=config.fft_len, axis=1)[:, :config.frame_len]
    frames = frames * window[None, :]

    n_frames = bins.shape[0]
    total = (n_frames - 1) * config.hop + config.frame_len
    out = np.zeros(total)
    den = np.zeros(total)
    wsq = window * window
    for f in range(n_frames):
        start = f * config.hop
        out[start:start + config.frame_len] += frames[f]
        den[start:start + config.frame_len] += wsq
    out /= np.maximum(den, EPS)

    pad = config.frame_len // 2
    if spec.n_samples <= 0 or pad + spec.n_samples > total:
        raise ValueError("stored sample count is inconsistent with the frame count")
    return out[pad:pad + spec.n_samples]


def gcc_phat(x, y, max_lag: int):
    """Estimate the integer delay of y relative to x.

    Cross-power phase is whitened before the inverse transform, which makes
    the correlation peak sharp even in reverberation. A positive lag means
    y is a delayed copy of x.

    Args:
        x, y: equal-length 1-D signals with nonzero energy.
        max_lag: search range in samples, must leave headroom in the signal.

    Returns:
        (lag, peak): integer lag in [-max_lag, max_lag] and the peak value
        of the whitened correlation, clipped to [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError("gcc_phat expects two 1-D signals of equal length")
    if max_lag <= 0 or max_lag >= x.size // 2:
        raise ValueError("max_lag must lie in [1, len(x) // 2)")
    if not np.any(x) or not np.any(y):
        raise ValueError("gcc_phat is undefined for zero-energy input")

    # pad so circular correlation equals linear correlation over the search range
    n = 1
    while n < x.size + max_lag:
        n *= 2
    spec_x = np.fft.rfft(x, n)
    spec_y = np.fft.rfft(y, n)
    cross = np.conj(spec_x) * spec_y
    mag = np.abs(cross)
    cross /= np.maximum(mag, 1e-12 * mag.max() + EPS)
    corr = np.fft.irfft(cross, n)

    # lag l >= 0 lives at corr[l], lag -l at corr[n - l]
    candidates = np.concatenate([corr[n - max_lag:], corr[:max_lag + 1]])
    best = int(np.argmax(candidates))
    lag = best - max_lag
    peak = float(np.clip(candidates[best], 0.0, 1.0))
    return lag, peak


def apply_delay(spec: Spectrogram, delay: float) -> Spectrogram:
    """Delay a signal by a (possibly fractional) number of samples in the STFT domain.

    Each bin k is rotated by exp(-2j*pi*k*delay/fft_len). Valid only for
    delays well inside one frame; larger shifts wrap around circularly and
    must be handled in the time domain first.
    """
    config = spec.config
    if abs(delay) >= config.frame_len / 2:
        raise ValueError(
            f"delay {delay} exceeds half a frame ({config.frame_len // 2} samples); "
            "shift in the time domain instead"
        )
    k = np.arange(config.n_bins)
    ramp = np.exp(-2j * np.pi * k * (delay / config.fft_len))
    return Spectrogram(bins=spec.bins * ramp[None, :], config=config, n_samples=spec.n_samples)
