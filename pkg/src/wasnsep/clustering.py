"""Blind microphone clustering from pairwise spectral coherence.

Mics picking up the same dominant source show high magnitude-squared
coherence, so the coherence matrix of an ad-hoc array has approximate
block structure. A low-rank symmetric factorization with the diagonal
masked out recovers the blocks; each factor column is one cluster and
the entries say how strongly each mic belongs to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig, stft

EPS = 1e-12

MIN_FRAMES = 16


@dataclass(frozen=True)
class CoherenceMatrix:
    """Symmetric [n_mics x n_mics] matrix of band-averaged MSC values."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("coherence matrix must be square")
        if not np.allclose(v, v.T, atol=1e-10):
            raise ValueError("coherence matrix must be symmetric")
        if np.any(v < -1e-10) or np.any(v > 1.0 + 1e-10):
            raise ValueError("coherence values must lie in [0, 1]")

    @property
    def n_mics(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NmfOptions:
    max_iter: int = 500
    tol: float = 1e-6
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1 or self.restarts < 1:
            raise ValueError("max_iter and restarts must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class ClusterModel:
    """Result of the masked symmetric factorization.

    membership[m, c] is the nonnegative strength of mic m in cluster c;
    assignments holds the argmax cluster per mic, references the mic with
    the highest membership per cluster. objective_trace is the residual
    after each update of the winning restart (leading entry is the value
    at initialization).
    """

    membership: np.ndarray
    assignments: np.ndarray
    references: np.ndarray
    objective_trace: np.ndarray
    n_clusters: int


def coherence_matrix(signals, config: StftConfig = StftConfig(),
                     band_hz=None) -> CoherenceMatrix:
    """Band-averaged magnitude-squared coherence between every mic pair.

    Cross- and auto-spectra are averaged over all frames (Welch over the
    STFT grid), the MSC is formed per bin and then averaged across bins,
    excluding DC. The diagonal is set to exactly 1.

    Args:
        signals: [n_mics, n_samples] array, n_mics >= 2, long enough for
            MIN_FRAMES frames.
        band_hz: optional (low, high) frequency bounds in Hz; when given,
            only bins inside the bounds enter the average. Default is the
            full band above DC.

    Returns:
        CoherenceMatrix with values in [0, 1].
    """
    x = np.asarray(signals, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a [n_mics, n_samples] array")
    n_mics = x.shape[0]
    if n_mics < 2:
        raise ValueError("coherence needs at least two mics")

    specs = np.stack([stft(x[m], config).bins for m in range(n_mics)])
    n_frames = specs.shape[1]
    if n_frames < MIN_FRAMES:
        raise ValueError(
            f"only {n_frames} frames available, need at least {MIN_FRAMES} for "
            "a stable coherence estimate"
        )

    # cross[i, j, k] = mean_t X_i(t, k) X_j(t, k)*
    cross = np.einsum("itk,jtk->ijk", specs, np.conj(specs)) / n_frames
    auto = np.real(np.einsum("iik->ik", cross))
    if np.any(auto.sum(axis=1) < EPS):
        raise ValueError("silent channel: coherence is undefined")

    denom = auto[:, None, :] * auto[None, :, :]
    msc = np.abs(cross) ** 2 / np.maximum(denom, EPS)
    keep = np.arange(1, specs.shape[2])  # DC excluded
    if band_hz is not None:
        lo, hi = band_hz
        if not 0 <= lo < hi:
            raise ValueError("band_hz must satisfy 0 <= low < high")
        freqs = keep * config.sample_rate / config.fft_len
        keep = keep[(freqs >= lo) & (freqs <= hi)]
        if keep.size == 0:
            raise ValueError("band_hz selects no frequency bins")
    values = msc[:, :, keep].mean(axis=2)
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, 1.0)
    return CoherenceMatrix(values=np.clip(values, 0.0, 1.0))


def _masked_objective(target, mask, basis) -> float:
    resid = mask * (target - basis @ basis.T)
    return float(np.sum(resid * resid))


def nmf_cluster(coherence: CoherenceMatrix, n_clusters: int,
                options: NmfOptions = NmfOptions()) -> ClusterModel:
    """Factor the coherence matrix into nonnegative cluster memberships.

    Minimizes || (1 - I) * (C - B B^T) ||_F^2 over nonnegative B via
    damped multiplicative updates, keeping the best of several random
    restarts. The 0.5 damping follows the standard convergence argument
    for symmetric NMF; the undamped rule overshoots and the objective
    oscillates.

    Args:
        coherence: matrix to factor.
        n_clusters: number of columns of B, at most n_mics.
        options: iteration, tolerance, restart and seed settings.

    Returns:
        ClusterModel with the best restart's factorization.
    """
    c = coherence.values
    n_mics = c.shape[0]
    if not (1 <= n_clusters <= n_mics):
        raise ValueError(f"n_clusters must lie in [1, {n_mics}]")

    mask = 1.0 - np.eye(n_mics)
    target = mask * c

    best_obj = np.inf
    best_basis = None
    best_trace = None
    for restart in range(options.restarts):
        rng = np.random.default_rng((options.seed, restart))
        # uniform over (0, 1]: zero entries are absorbing for multiplicative updates
        basis = 1.0 - rng.random((n_mics, n_clusters))
        trace = [_masked_objective(target, mask, basis)]
        prev = trace[0]
        for _ in range(options.max_iter):
            numer = target @ basis
            denom = (mask * (basis @ basis.T)) @ basis + EPS
            basis = basis * (0.5 + 0.5 * numer / denom)
            obj = _masked_objective(target, mask, basis)
            trace.append(obj)
            if abs(prev - obj) <= options.tol * max(prev, EPS):
                break
            prev = obj
        if trace[-1] < best_obj:
            best_obj = trace[-1]
            best_basis = basis
            best_trace = np.asarray(trace)

    assignments = np.argmax(best_basis, axis=1).astype(np.int64)
    references = select_reference(best_basis)
    return ClusterModel(
        membership=best_basis,
        assignments=assignments,
        references=references,
        objective_trace=best_trace,
        n_clusters=n_clusters,
    )


def select_reference(membership) -> np.ndarray:
    """Mic with the highest membership value per cluster (ties: lowest index)."""
    b = np.asarray(membership, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError("membership must be [n_mics, n_clusters]")
    if np.any(b < 0):
        raise ValueError("membership values must be nonnegative")
    return np.argmax(b, axis=0).astype(np.int64)


def identify_noise_cluster(model: ClusterModel, coherence: CoherenceMatrix) -> int:
    """Pick the cluster with the lowest mean intra-cluster coherence.

    Speech-dominated clusters are internally coherent; the leftover cluster
    that collects far-field mics is not. A singleton cluster has no pairs
    and scores 0.0, which makes it maximally noise-like by convention.

    Raises:
        ValueError: if any cluster has no members.
    """
    c = coherence.values
    scores = np.empty(model.n_clusters)
    for q in range(model.n_clusters):
        members = np.flatnonzero(model.assignments == q)
        if members.size == 0:
            raise ValueError(f"cluster {q} has no members")
        if members.size == 1:
            scores[q] = 0.0
            continue
        sub = c[np.ix_(members, members)]
        iu = np.triu_indices(members.size, k=1)
        scores[q] = float(sub[iu].mean())
    return int(np.argmin(scores))


def model_to_json(model: ClusterModel) -> str:
    """Serialize a cluster model to a JSON document.

    The membership matrix is written row by row (one list per mic) so the
    layout is unambiguous across readers.
    """
    doc = {
        "membership": [[float(v) for v in row] for row in np.asarray(model.membership)],
        "assignments": [int(a) for a in model.assignments],
        "references": [int(r) for r in model.references],
        "objective_trace": [float(v) for v in model.objective_trace],
        "n_clusters": int(model.n_clusters),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def model_from_json(text: str) -> ClusterModel:
    doc = json.loads(text)
    return ClusterModel(
        membership=np.asarray(doc["membership"], dtype=np.float64),
        assignments=np.asarray(doc["assignments"], dtype=np.int64),
        references=np.asarray(doc["references"], dtype=np.int64),
        objective_trace=np.asarray(doc["objective_trace"], dtype=np.float64),
        n_clusters=int(doc["n_clusters"]),
    )


def drop_empty_clusters(model: ClusterModel) -> ClusterModel:
    """Remove clusters that own no mics, keeping column order.

    The factorization can leave a column that never wins the argmax; such
    a cluster drives nothing downstream, so batch pipelines shrink the
    model to the populated columns before excluding noise and separating.
    Assignments are relabeled to the surviving columns.
    """
    assignments = np.asarray(model.assignments)
    populated = [c for c in range(model.n_clusters) if np.any(assignments == c)]
    if len(populated) == model.n_clusters:
        return model
    relabel = {old: new for new, old in enumerate(populated)}
    return ClusterModel(
        membership=np.asarray(model.membership)[:, populated],
        assignments=np.asarray([relabel[int(a)] for a in assignments], dtype=np.int64),
        references=np.asarray([int(model.references[c]) for c in populated], dtype=np.int64),
        objective_trace=model.objective_trace,
        n_clusters=len(populated),
    )
