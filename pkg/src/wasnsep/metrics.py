"""Separation scoring: SI-SDR against reverberant source images.

The target for each estimate is the dominant source's image at the
cluster's reference mic, so the metric rewards separation rather than
dereverberation. Estimates are matched to speakers by the permutation
with the highest total score; improvement is always measured against the
unprocessed reference-mic signal and the same matched target.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

SI_SDR_CAP = 100.0
_REL_ZERO = 1e-10


def si_sdr(est, target) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The estimate is compared against its own projection onto the target,
    alpha = est.target / ||target||^2, which removes any gain difference.
    A residual below 1e-10 relative is reported as the +100 dB cap so
    perfect reconstructions stay finite; a vanishing projection is capped
    at -100 dB symmetrically.

    Args:
        est, target: equal-length 1-D signals, target nonzero.
    """
    e = np.asarray(est, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if e.shape != t.shape or e.ndim != 1:
        raise ValueError("si_sdr expects two 1-D signals of equal length")
    t_energy = float(np.dot(t, t))
    if t_energy <= 0:
        raise ValueError("si_sdr target has zero energy")

    alpha = float(np.dot(e, t)) / t_energy
    scaled = alpha * t
    scaled_energy = float(np.dot(scaled, scaled))
    resid = e - scaled
    resid_energy = float(np.dot(resid, resid))
    if scaled_energy <= _REL_ZERO * resid_energy:
        return -SI_SDR_CAP
    if resid_energy <= _REL_ZERO * scaled_energy:
        return SI_SDR_CAP
    return float(10.0 * np.log10(scaled_energy / resid_energy))


@dataclass(frozen=True)
class ScoreRow:
    """One (scenario, method, speaker) line of the report."""

    scenario_id: str
    method: str
    speaker: int
    si_sdr_db: float
    improvement_db: float
    permuted: bool


def score_scenario(estimates, reference_mics, targets, mix, scenario_id: str,
                   method: str):
    """Score one scenario's estimates against the rendered source images.

    Estimates are assigned to speakers by maximizing the total SI-SDR over
    speaker permutations (injective when there are more speakers than
    estimates). Each estimate's target is its matched source's image at
    that estimate's reference mic, and the improvement baseline is the raw
    recording of the same mic against the same target.

    Args:
        estimates: [n_estimates, n_samples].
        reference_mics: reference mic index per estimate.
        targets: [n_sources, n_mics, n_samples] from rendering.
        mix: [n_mics, n_samples] recording that was separated.
        scenario_id, method: labels for the report rows.

    Returns:
        list of ScoreRow, one per estimate, in estimate order.
    """
    est = np.asarray(estimates, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    mix = np.asarray(mix, dtype=np.float64)
    if est.ndim != 2 or targets.ndim != 3:
        raise ValueError("estimates must be [n_est, T] and targets [n_src, n_mics, T]")
    n_est = est.shape[0]
    n_src = targets.shape[0]
    if len(reference_mics) != n_est:
        raise ValueError("one reference mic per estimate required")
    if n_est > n_src:
        raise ValueError(f"{n_est} estimates but only {n_src} sources to assign")

    scores = np.empty((n_est, n_src))
    for c in range(n_est):
        for s in range(n_src):
            scores[c, s] = si_sdr(est[c], targets[s, reference_mics[c]])

    best_perm = None
    best_total = -np.inf
    for perm in itertools.permutations(range(n_src), n_est):
        total = sum(scores[c, perm[c]] for c in range(n_est))
        if total > best_total:
            best_total = total
            best_perm = perm

    identity = tuple(range(n_est))
    rows = []
    for c in range(n_est):
        s = best_perm[c]
        ref = int(reference_mics[c])
        base = si_sdr(mix[ref], targets[s, ref])
        rows.append(ScoreRow(
            scenario_id=scenario_id,
            method=method,
            speaker=int(s),
            si_sdr_db=scores[c, s],
            improvement_db=scores[c, s] - base,
            permuted=best_perm != identity,
        ))
    return rows


def aggregate(rows):
    """Median and mean per method over a batch of score rows.

    Returns:
        dict method -> {"median_si_sdr_db", "mean_si_sdr_db",
        "median_improvement_db", "mean_improvement_db", "count"}.
    """
    by_method: dict = {}
    for row in rows:
        by_method.setdefault(row.method, []).append(row)
    out = {}
    for method, group in by_method.items():
        si = np.array([r.si_sdr_db for r in group])
        imp = np.array([r.improvement_db for r in group])
        out[method] = {
            "median_si_sdr_db": float(np.median(si)),
            "mean_si_sdr_db": float(np.mean(si)),
            "median_improvement_db": float(np.median(imp)),
            "mean_improvement_db": float(np.mean(imp)),
            "count": len(group),
        }
    return out


def write_rows_csv(rows, path):
    """Per-row CSV with a fixed float format so identical runs match byte for byte."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "method", "speaker", "si_sdr_db", "improvement_db"])
        for r in rows:
            writer.writerow([
                r.scenario_id, r.method, r.speaker,
                f"{r.si_sdr_db:.6f}", f"{r.improvement_db:.6f}",
            ])


def write_aggregate_csv(rows, path):
    stats = aggregate(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "count", "median_si_sdr_db", "mean_si_sdr_db",
                        "median_improvement_db", "mean_improvement_db"])
        for method in sorted(stats):
            st = stats[method]
            writer.writerow([
                method, st["count"],
                f"{st['median_si_sdr_db']:.6f}", f"{st['mean_si_sdr_db']:.6f}",
                f"{st['median_improvement_db']:.6f}", f"{st['mean_improvement_db']:.6f}",
            ])


def summary_table(rows) -> str:
    """Plain-text method table ordered by median SI-SDR, best first."""
    stats = aggregate(rows)
    order = sorted(stats, key=lambda m: stats[m]["median_si_sdr_db"], reverse=True)
    lines = [f"{'method':<18} {'n':>5} {'med SI-SDR':>11} {'med improv':>11}"]
    for method in order:
        st = stats[method]
        lines.append(
            f"{method:<18} {st['count']:>5d} {st['median_si_sdr_db']:>11.2f} "
            f"{st['median_improvement_db']:>11.2f}"
        )
    return "\n".join(lines)
