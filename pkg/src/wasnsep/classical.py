"""Cluster-informed classical separation: masking, delays, beamforming, postfilter.

Each speech cluster gets a binary mask from cross-referencing reference-mic
magnitudes, per-member delays from whitened correlation on the masked
resyntheses, and a delay-and-sum estimate (plain or membership-weighted).
An optional postfilter re-masks the beamformed outputs against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel, CoherenceMatrix, coherence_matrix, identify_noise_cluster
from .dsp import Spectrogram, StftConfig, apply_delay, gcc_phat, istft, stft

METHODS = ("initial-mask", "dsb", "fmva-dsb", "dsb+postfilter")

# 640 samples = 13.7 m of path difference at 16 kHz, beyond any room the
# samplers produce; callers with real geometry should pass a tighter bound
DEFAULT_MAX_LAG = 640


@dataclass
class DelaySet:
    """Per (mic, cluster) delay in samples relative to the cluster reference.

    tau is [n_mics, n_clusters]; entries for mics outside a cluster are 0
    and carry no meaning. tau at the reference mic of each cluster is 0 by
    construction.
    """

    tau: np.ndarray


@dataclass
class SeparationResult:
    """Output of one classical separation pass over a clustered recording."""

    estimates: np.ndarray          # [n_speech_clusters, n_samples]
    speech_clusters: tuple         # cluster ids, aligned with estimates
    initial_masks: np.ndarray      # [n_speech_clusters, frames, bins] binary
    postfilter_masks: np.ndarray | None
    delays: DelaySet
    method: str


def initial_masks(ref_specs) -> np.ndarray:
    """Binary masks from comparing normalized reference-mic magnitudes.

    Each reference spectrogram is scaled by its own RMS magnitude so mic
    gain differences cannot bias the comparison; the cluster with the
    largest normalized magnitude wins the bin. Ties go to the lowest
    cluster index, and the masks partition the TF plane by construction.

    Args:
        ref_specs: one Spectrogram per speech cluster, identical shapes.

    Returns:
        uint8 array [n_clusters, frames, bins].
    """
    if len(ref_specs) == 0:
        raise ValueError("need at least one reference spectrogram")
    shapes = {s.bins.shape for s in ref_specs}
    if len(shapes) != 1:
        raise ValueError(f"reference spectrograms disagree in shape: {sorted(shapes)}")

    mags = np.stack([np.abs(s.bins) for s in ref_specs])
    norms = np.sqrt(np.mean(mags * mags, axis=(1, 2), keepdims=True))
    if np.any(norms == 0):
        raise ValueError("reference spectrogram with zero energy")
    mags /= norms
    winner = np.argmax(mags, axis=0)  # argmax takes the lowest index on ties
    masks = np.zeros(mags.shape, dtype=np.uint8)
    np.put_along_axis(masks, winner[None], 1, axis=0)
    return masks


def estimate_delays(rec, model: ClusterModel, masks, speech_clusters,
                    cfg: StftConfig = StftConfig(),
                    max_lag: int = DEFAULT_MAX_LAG) -> DelaySet:
    """Per-member arrival delays relative to each cluster's reference mic.

    The cluster mask is applied to every member's spectrogram and the
    masked resyntheses are cross-correlated (phase-whitened) against the
    masked reference. Masking first matters: it keeps the correlator from
    locking onto an interferer that dominates the raw signals.

    Args:
        rec: [n_mics, n_samples] recording.
        model: cluster model for rec.
        masks: binary masks [n_speech, frames, bins] from initial_masks.
        speech_clusters: cluster ids aligned with the mask axis.
        cfg: analysis config used for masking.
        max_lag: correlation search bound in samples.

    Returns:
        DelaySet; a positive tau means the member hears the source later
        than the reference.
    """
    x = np.asarray(rec, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected [n_mics, n_samples] recording")
    masks = np.asarray(masks)
    if masks.shape[0] != len(speech_clusters):
        raise ValueError("one mask per speech cluster required")

    tau = np.zeros((x.shape[0], model.n_clusters))
    for mask, c in zip(masks, speech_clusters):
        ref = int(model.references[c])
        ref_spec = stft(x[ref], cfg)
        ref_masked = istft(Spectrogram(ref_spec.bins * mask, cfg, ref_spec.n_samples))
        if not np.any(ref_masked):
            continue   # mask claimed no bins: no evidence, delays stay zero
        for m in np.flatnonzero(model.assignments == c):
            if m == ref:
                continue
            spec = stft(x[m], cfg)
            member = istft(Spectrogram(spec.bins * mask, cfg, spec.n_samples))
            if not np.any(member):
                continue
            # gcc lag is the shift of its second argument, so a member that
            # hears the source later than the reference gives a negative lag
            lag, _ = gcc_phat(member, ref_masked, max_lag)
            tau[m, c] = float(-lag)
    return DelaySet(tau=tau)


def _aligned_spectra(rec, members, tau_col, cfg: StftConfig):
    """STFTs of the member signals with their delays removed.

    The integer part of each delay is undone in the time domain (the
    phase-ramp primitive only covers shifts well inside one frame), the
    fractional remainder in the STFT domain.
    """
    x = np.asarray(rec, dtype=np.float64)
    specs = []
    for m in members:
        shift = -float(tau_col[m])
        n0 = int(round(shift))
        frac = shift - n0
        sig = np.zeros_like(x[m])
        if n0 >= 0:
            if n0 < sig.size:
                sig[n0:] = x[m][:sig.size - n0]
        else:
            sig[:n0] = x[m][-n0:]
        spec = stft(sig, cfg)
        if frac != 0.0:
            spec = apply_delay(spec, frac)
        specs.append(spec)
    return specs


def dsb(rec, model: ClusterModel, cluster: int, delays: DelaySet,
        cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Delay-and-sum beamformer over one cluster's members."""
    members = np.flatnonzero(model.assignments == cluster)
    if members.size == 0:
        raise ValueError(f"cluster {cluster} is empty")
    specs = _aligned_spectra(rec, members, delays.tau[:, cluster], cfg)
    mean_bins = np.mean([s.bins for s in specs], axis=0)
    return istft(Spectrogram(mean_bins, cfg, specs[0].n_samples))


def fmva_dsb(rec, model: ClusterModel, cluster: int, delays: DelaySet,
             cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Delay-and-sum with mics weighted by their membership values."""
    members = np.flatnonzero(model.assignments == cluster)
    if members.size == 0:
        raise ValueError(f"cluster {cluster} is empty")
    weights = model.membership[members, cluster].astype(np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError(f"cluster {cluster} has all-zero membership values")
    weights /= total
    specs = _aligned_spectra(rec, members, delays.tau[:, cluster], cfg)
    mean_bins = np.einsum("m,mtk->tk", weights, np.stack([s.bins for s in specs]))
    return istft(Spectrogram(mean_bins, cfg, specs[0].n_samples))


def postfilter(beamformed, cfg: StftConfig = StftConfig()):
    """Binary re-masking of beamformed outputs against each other.

    A bin survives in the cluster whose beamformed magnitude is largest
    there (ties: lowest index), so the postfilter can only remove energy.

    Args:
        beamformed: [n_clusters, n_samples] with n_clusters >= 2.

    Returns:
        (filtered [n_clusters, n_samples], masks [n_clusters, frames, bins]).
    """
    y = np.asarray(beamformed, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 2:
        raise ValueError("postfilter needs at least two equal-length beamformed signals")
    specs = [stft(y[c], cfg) for c in range(y.shape[0])]
    mags = np.stack([np.abs(s.bins) for s in specs])
    winner = np.argmax(mags, axis=0)
    masks = np.zeros(mags.shape, dtype=np.uint8)
    np.put_along_axis(masks, winner[None], 1, axis=0)
    out = np.stack([
        istft(Spectrogram(s.bins * m, cfg, s.n_samples))
        for s, m in zip(specs, masks)
    ])
    return out, masks


def separate_classical(rec, model: ClusterModel, method: str,
                       cfg: StftConfig = StftConfig(),
                       coherence: CoherenceMatrix | None = None,
                       max_lag: int = DEFAULT_MAX_LAG,
                       noise_cluster: int | None = None) -> SeparationResult:
    """Run the classical chain masks -> delays -> beamformer -> postfilter.

    The noise cluster is identified from the coherence matrix (recomputed
    from rec when not supplied) and excluded; every remaining cluster
    yields one estimate. All intermediates are recorded on the result.

    Args:
        rec: [n_mics, n_samples] recording.
        model: cluster model for rec.
        method: one of METHODS.
        cfg: analysis config.
        coherence: optional precomputed coherence matrix of rec.
        max_lag: delay search bound in samples.
        noise_cluster: caller-chosen noise cluster; by default it is
            identified from the coherence matrix. Callers use this when a
            cluster ended up empty, which the identification op rejects.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    x = np.asarray(rec, dtype=np.float64)
    if noise_cluster is None:
        if coherence is None:
            coherence = coherence_matrix(x, cfg)
        noise = identify_noise_cluster(model, coherence)
    else:
        noise = int(noise_cluster)
        if not 0 <= noise < model.n_clusters:
            raise ValueError(f"noise cluster {noise} out of range")
    speech = tuple(c for c in range(model.n_clusters) if c != noise)
    if not speech:
        raise ValueError("no speech clusters left after noise exclusion")

    ref_specs = [stft(x[int(model.references[c])], cfg) for c in speech]
    masks = initial_masks(ref_specs)
    delays = estimate_delays(x, model, masks, speech, cfg, max_lag)

    if method == "initial-mask":
        estimates = np.stack([
            istft(Spectrogram(s.bins * m, cfg, s.n_samples))
            for s, m in zip(ref_specs, masks)
        ])
        post_masks = None
    else:
        beam = fmva_dsb if method == "fmva-dsb" else dsb
        estimates = np.stack([beam(x, model, c, delays, cfg) for c in speech])
        post_masks = None
        if method == "dsb+postfilter":
            estimates, post_masks = postfilter(estimates, cfg)

    return SeparationResult(
        estimates=estimates,
        speech_clusters=speech,
        initial_masks=masks,
        postfilter_masks=post_masks,
        delays=delays,
        method=method,
    )
