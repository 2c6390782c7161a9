"""Batch command line: generate scenes, cluster, separate, score, report.

Subcommands operate on a directory layout of one subdirectory per
scenario (scenario.json, mic_<i>.wav mixtures, src<j>_mic<i>.wav source
images, plus cluster/estimate files as stages run). `run` composes the
whole pipeline in memory and emits the report CSVs directly, which keeps
repeat runs byte-identical for a fixed seed.

Exit codes: 0 success, 1 configuration or usage error, 2 when some
scenarios failed but the batch finished.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .classical import DEFAULT_MAX_LAG, METHODS as CLASSICAL_METHODS, separate_classical
from .clustering import (NmfOptions, coherence_matrix, identify_noise_cluster,
                         model_from_json, model_to_json, nmf_cluster)
from .dsp import StftConfig
from .metrics import (aggregate, score_scenario, summary_table,
                      write_aggregate_csv, write_rows_csv)
from .neural import NetConfig, init_weights, separate as neural_separate
from .roomsim import (SamplerConfig, Scenario, critical_distance, render_scene,
                      sample_clustered_scenario, sample_unclustered_scenario,
                      scenario_from_json, scenario_to_json, speech_shaped_source,
                      subset_mics, validate_scenario)

ALL_METHODS = ("reference-mic",) + CLASSICAL_METHODS + ("neural",)

DEFAULT_METHODS = ("reference-mic", "initial-mask", "dsb", "fmva-dsb", "dsb+postfilter")

_SCENARIO_SEED_STRIDE = 1_000_003   # keeps per-scenario seeds disjoint across run seeds


@dataclass(frozen=True)
class RunConfig:
    """Everything a batch needs; a fixed seed reproduces the run bit for bit."""

    kind: str = "clustered"
    count: int = 50
    seed: int = 0
    duration_s: float = 4.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    # longer frames than the separation STFT: coherence contrast between
    # near and far mics keeps improving up to ~4096 taps, flat beyond
    coherence_stft: StftConfig = field(default_factory=lambda: StftConfig(
        frame_len=4096, hop=1024, fft_len=4096))
    coherence_band_hz: tuple | None = None
    nmf: NmfOptions = field(default_factory=NmfOptions)
    net: NetConfig = field(default_factory=NetConfig)
    methods: tuple = DEFAULT_METHODS
    out: str = "runs/out"
    subset: bool = True
    plot_data: bool = False

    def __post_init__(self):
        if self.kind not in ("clustered", "unclustered"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("count must be positive")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {ALL_METHODS}")

    def scenario_seed(self, index: int) -> int:
        return self.seed * _SCENARIO_SEED_STRIDE + index


def _config_from_doc(doc: dict) -> RunConfig:
    kwargs = {}
    for key in ("kind", "count", "seed", "duration_s", "out", "subset", "plot_data"):
        if key in doc:
            kwargs[key] = doc[key]
    if "methods" in doc:
        kwargs["methods"] = tuple(doc["methods"])
    if "coherence_band_hz" in doc and doc["coherence_band_hz"] is not None:
        kwargs["coherence_band_hz"] = tuple(doc["coherence_band_hz"])
    if "sampler" in doc:
        sub = dict(doc["sampler"])
        for k in ("dims_lo", "dims_hi", "t60_range", "snr_range_db"):
            if k in sub:
                sub[k] = tuple(sub[k])
        kwargs["sampler"] = SamplerConfig(**sub)
    for key, cls in (("stft", StftConfig), ("coherence_stft", StftConfig),
                     ("nmf", NmfOptions), ("net", NetConfig)):
        if key in doc:
            kwargs[key] = cls(**doc[key])
    return RunConfig(**kwargs)


def load_config(path, overrides: dict) -> RunConfig:
    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return _config_from_doc(doc)


def _write_wav(path: Path, samples, sample_rate: int):
    wavfile.write(path, sample_rate, np.asarray(samples, dtype=np.float32))


def _read_wav(path: Path) -> np.ndarray:
    _, data = wavfile.read(path)
    return np.asarray(data, dtype=np.float64)


def _sample_scenario(cfg: RunConfig, index: int) -> Scenario:
    seed = cfg.scenario_seed(index)
    if cfg.kind == "clustered":
        sc = sample_clustered_scenario(cfg.sampler, seed)
    else:
        sc = sample_unclustered_scenario(cfg.sampler, seed)
    if cfg.subset:
        sc = subset_mics(sc, 1)
    return sc


def _dry_sources(scenario: Scenario, cfg: RunConfig) -> np.ndarray:
    n = int(round(cfg.duration_s * scenario.room.sample_rate))
    # opposite envelope phases so the talkers do not peak in lockstep
    return np.stack([
        speech_shaped_source(n, scenario.room.sample_rate,
                             (scenario.seed, j), mod_phase=np.pi * j)
        for j in range(len(scenario.sources))
    ])


def _noise_and_speech(model, coh):
    """Noise-cluster choice that tolerates an empty factor column.

    An empty cluster means no mic is noise-dominated, so it takes the
    noise role directly; otherwise the lowest-coherence cluster does.
    Two empty clusters leave a single populated one, which is degenerate.
    """
    assignments = np.asarray(model.assignments)
    empty = [c for c in range(model.n_clusters) if not np.any(assignments == c)]
    if len(empty) > 1:
        raise ValueError("degenerate clustering: all mics in one cluster")
    noise = empty[0] if empty else identify_noise_cluster(model, coh)
    return noise, [c for c in range(model.n_clusters) if c != noise]


def _estimates_for_method(method, mix, model, coh, cfg: RunConfig, seed: int):
    """Returns (estimates [n_est, T], reference mic per estimate)."""
    noise, speech = _noise_and_speech(model, coh)
    if method in CLASSICAL_METHODS:
        result = separate_classical(mix, model, method, cfg.stft, coherence=coh,
                                    noise_cluster=noise)
        refs = [int(model.references[c]) for c in result.speech_clusters]
        return np.asarray(result.estimates), refs
    refs = [int(model.references[c]) for c in speech]
    if method == "reference-mic":
        return np.stack([mix[r] for r in refs]), refs
    if method == "neural":
        weights = init_weights(cfg.net, seed)
        outs = []
        for c, ref in zip(speech, refs):
            members = np.flatnonzero(np.asarray(model.assignments) == c)
            local_ref = int(np.flatnonzero(members == ref)[0])
            outs.append(neural_separate(mix[members], weights, cfg.net,
                                        reference=local_ref))
        return np.stack(outs), refs
    raise ValueError(f"unknown method {method!r}")


def _pipeline_rows(cfg: RunConfig, index: int):
    scenario = _sample_scenario(cfg, index)
    validate_scenario(scenario)
    rendered = render_scene(scenario, _dry_sources(scenario, cfg))
    coh = coherence_matrix(rendered.mix, cfg.coherence_stft,
                           band_hz=cfg.coherence_band_hz)
    n_clusters = len(scenario.sources) + 1
    model = nmf_cluster(coh, n_clusters, replace(cfg.nmf, seed=scenario.seed))
    scenario_id = f"scen_{index:05d}"
    rows = []
    for method in cfg.methods:
        est, refs = _estimates_for_method(method, rendered.mix, model, coh, cfg,
                                          cfg.seed)
        rows.extend(score_scenario(est, refs, rendered.targets, rendered.mix,
                                   scenario_id, method))
    return rows


def _write_reports(rows, failures, cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, out / "rows.csv")
    write_aggregate_csv(rows, out / "aggregate.csv")
    (out / "summary.txt").write_text(summary_table(rows))
    manifest = {
        "count": cfg.count,
        "seed": cfg.seed,
        "kind": cfg.kind,
        "methods": list(cfg.methods),
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if cfg.plot_data:
        _write_plot_data(rows, out)


def _write_plot_data(rows, out: Path):
    # gnuplot-friendly: whitespace columns, comment header
    stats = aggregate(rows)
    lines = ["# method median_si_sdr_db mean_si_sdr_db median_improvement_db count"]
    for method in sorted(stats):
        s = stats[method]
        lines.append("%s %.6f %.6f %.6f %d" % (
            method.replace(" ", "_"), s["median_si_sdr_db"], s["mean_si_sdr_db"],
            s["median_improvement_db"], s["count"]))
    (out / "aggregate.dat").write_text("\n".join(lines) + "\n")


def cmd_run(cfg: RunConfig) -> int:
    """Full pipeline over cfg.count scenarios; failures skip, not abort."""
    rows = []
    failures = []
    for i in range(cfg.count):
        try:
            rows.extend(_pipeline_rows(cfg, i))
        except Exception as exc:   # crash isolation is the contract here
            failures.append({"scenario": f"scen_{i:05d}", "error": f"{type(exc).__name__}: {exc}"})
    _write_reports(rows, failures, cfg, Path(cfg.out))
    if failures:
        print(f"{len(failures)}/{cfg.count} scenarios failed; see manifest.json",
              file=sys.stderr)
        return 2
    return 0


def cmd_datagen(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    failures = []
    for i in range(cfg.count):
        scenario_id = f"scen_{i:05d}"
        try:
            scenario = _sample_scenario(cfg, i)
            validate_scenario(scenario)
            rendered = render_scene(scenario, _dry_sources(scenario, cfg))
            sdir = out / scenario_id
            sdir.mkdir(exist_ok=True)
            (sdir / "scenario.json").write_text(scenario_to_json(scenario) + "\n")
            fs = scenario.room.sample_rate
            for m in range(rendered.mix.shape[0]):
                _write_wav(sdir / f"mic_{m:02d}.wav", rendered.mix[m], fs)
            for j in range(rendered.targets.shape[0]):
                for m in range(rendered.targets.shape[1]):
                    _write_wav(sdir / f"src{j}_mic{m:02d}.wav",
                               rendered.targets[j, m], fs)
            entries.append({"id": scenario_id, "n_mics": int(rendered.mix.shape[0]),
                            "seed": scenario.seed, "status": "ok"})
        except Exception as exc:
            failures.append({"scenario": scenario_id,
                             "error": f"{type(exc).__name__}: {exc}"})
    manifest = {"kind": cfg.kind, "seed": cfg.seed, "count": cfg.count,
                "scenarios": entries, "failures": failures}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if failures:
        print(f"{len(failures)}/{cfg.count} scenarios failed", file=sys.stderr)
        return 2
    return 0


def _load_scene_dir(sdir: Path):
    scenario = scenario_from_json((sdir / "scenario.json").read_text())
    mic_paths = sorted(sdir.glob("mic_*.wav"))
    if not mic_paths:
        raise FileNotFoundError(f"no mic WAVs in {sdir}")
    mix = np.stack([_read_wav(p) for p in mic_paths])
    return scenario, mix


def _load_targets(sdir: Path, n_sources: int, n_mics: int):
    targets = []
    for j in range(n_sources):
        per_mic = [_read_wav(sdir / f"src{j}_mic{m:02d}.wav") for m in range(n_mics)]
        targets.append(np.stack(per_mic))
    return np.stack(targets)


def cmd_cluster(cfg: RunConfig, scene_dir: str) -> int:
    sdir = Path(scene_dir)
    scenario, mix = _load_scene_dir(sdir)
    n_clusters = len(scenario.sources) + 1
    if mix.shape[0] < n_clusters:
        print(f"error: {mix.shape[0]} mics cannot support {n_clusters} clusters",
              file=sys.stderr)
        return 1
    coh = coherence_matrix(mix, cfg.coherence_stft, band_hz=cfg.coherence_band_hz)
    model = nmf_cluster(coh, n_clusters, replace(cfg.nmf, seed=scenario.seed))
    (sdir / "cluster.json").write_text(model_to_json(model) + "\n")

    # confusion against geometry: which source is nearest to each mic
    mics = np.asarray(scenario.mics)
    srcs = np.asarray(scenario.sources)
    dist = np.linalg.norm(mics[None, :, :] - srcs[:, None, :], axis=2)
    nearest = np.argmin(dist, axis=0)
    counts = np.zeros((len(srcs) + 1, n_clusters), dtype=int)
    for m in range(mics.shape[0]):
        counts[nearest[m], model.assignments[m]] += 1
    best_acc = 0.0
    for perm in itertools.permutations(range(n_clusters), len(srcs)):
        acc = sum(counts[s, perm[s]] for s in range(len(srcs))) / mics.shape[0]
        best_acc = max(best_acc, acc)
    lines = ["assignment counts (rows: nearest source, cols: cluster)"]
    for s in range(len(srcs)):
        lines.append(f"src{s}: " + " ".join(str(c) for c in counts[s]))
    lines.append(f"accuracy {best_acc:.3f}")
    lines.append(f"critical distance {critical_distance(scenario.room):.3f} m")
    (sdir / "confusion.txt").write_text("\n".join(lines) + "\n")
    print(f"{sdir.name}: accuracy {best_acc:.3f}")
    return 0


def _require_model(sdir: Path, cfg: RunConfig, scenario, mix):
    path = sdir / "cluster.json"
    if path.exists():
        return model_from_json(path.read_text())
    n_clusters = len(scenario.sources) + 1
    coh = coherence_matrix(mix, cfg.coherence_stft, band_hz=cfg.coherence_band_hz)
    return nmf_cluster(coh, n_clusters, replace(cfg.nmf, seed=scenario.seed))


def cmd_separate(cfg: RunConfig, scene_dir: str) -> int:
    sdir = Path(scene_dir)
    scenario, mix = _load_scene_dir(sdir)
    model = _require_model(sdir, cfg, scenario, mix)
    coh = coherence_matrix(mix, cfg.coherence_stft, band_hz=cfg.coherence_band_hz)
    fs = scenario.room.sample_rate
    for method in cfg.methods:
        if method == "neural":
            continue   # nn-forward owns the neural path
        est, _ = _estimates_for_method(method, mix, model, coh, cfg, cfg.seed)
        for c in range(est.shape[0]):
            _write_wav(sdir / f"est_c{c}_{method}.wav", est[c], fs)
    return 0


def cmd_nn_forward(cfg: RunConfig, scene_dir: str) -> int:
    sdir = Path(scene_dir)
    scenario, mix = _load_scene_dir(sdir)
    model = _require_model(sdir, cfg, scenario, mix)
    coh = coherence_matrix(mix, cfg.coherence_stft, band_hz=cfg.coherence_band_hz)
    est, _ = _estimates_for_method("neural", mix, model, coh, cfg, cfg.seed)
    fs = scenario.room.sample_rate
    for c in range(est.shape[0]):
        _write_wav(sdir / f"est_c{c}_neural.wav", est[c], fs)
    return 0


def cmd_eval(cfg: RunConfig, data_dir: str) -> int:
    """Score every estimate WAV found under data_dir's scenario folders."""
    root = Path(data_dir)
    rows = []
    failures = []
    for sdir in sorted(root.glob("scen_*")):
        try:
            scenario, mix = _load_scene_dir(sdir)
            model = _require_model(sdir, cfg, scenario, mix)
            coh = coherence_matrix(mix, cfg.coherence_stft,
                                   band_hz=cfg.coherence_band_hz)
            _, speech = _noise_and_speech(model, coh)
            refs = [int(model.references[c]) for c in speech]
            targets = _load_targets(sdir, len(scenario.sources), mix.shape[0])
            for method in cfg.methods:
                paths = sorted(sdir.glob(f"est_c*_{method}.wav"))
                if not paths:
                    continue
                est = np.stack([_read_wav(p) for p in paths])
                rows.extend(score_scenario(est, refs[:est.shape[0]], targets, mix,
                                           sdir.name, method))
        except Exception as exc:
            failures.append({"scenario": sdir.name,
                             "error": f"{type(exc).__name__}: {exc}"})
    _write_reports(rows, failures, cfg, root)
    if failures:
        print(f"{len(failures)} scenario(s) failed during eval", file=sys.stderr)
        return 2
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wasnsep",
        description="cluster-informed source separation for ad-hoc mic arrays")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_dir=False):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--count", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--methods", default=None,
                       help="comma-separated: " + ",".join(ALL_METHODS))
        p.add_argument("--pooling", choices=("mean", "ref"), default=None)
        p.add_argument("--kind", choices=("clustered", "unclustered"), default=None)
        p.add_argument("--plot-data", action="store_true", default=None)
        if with_dir:
            p.add_argument("scene_dir", help="scenario directory (or data root for eval)")

    common(sub.add_parser("datagen", help="sample and render scenarios"))
    common(sub.add_parser("run", help="full pipeline, report CSVs"))
    for name in ("cluster", "separate", "nn-forward", "eval"):
        common(sub.add_parser(name), with_dir=True)
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "count": args.count,
        "out": args.out,
        "kind": args.kind,
        "plot_data": args.plot_data,
    }
    if args.methods is not None:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    cfg = load_config(args.config, overrides)
    if args.pooling is not None:
        pooling = "mean" if args.pooling == "mean" else "reference-select"
        cfg = replace(cfg, net=replace(cfg.net, pooling=pooling))
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "datagen":
            return cmd_datagen(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "cluster":
            return cmd_cluster(cfg, args.scene_dir)
        if args.command == "separate":
            return cmd_separate(cfg, args.scene_dir)
        if args.command == "nn-forward":
            return cmd_nn_forward(cfg, args.scene_dir)
        if args.command == "eval":
            return cmd_eval(cfg, args.scene_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"unknown command {args.command!r}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
