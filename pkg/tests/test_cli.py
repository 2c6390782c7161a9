import json

import numpy as np
import pytest

from wasnsep.cli import (ALL_METHODS, DEFAULT_METHODS, RunConfig, load_config,
                         main)
from wasnsep.clustering import ClusterModel
from wasnsep.cli import _noise_and_speech


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.kind == "clustered"
        assert cfg.count == 50
        assert cfg.methods == DEFAULT_METHODS
        assert cfg.subset is True

    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(kind="circular")
        with pytest.raises(ValueError):
            RunConfig(count=0)
        with pytest.raises(ValueError):
            RunConfig(methods=("dsb", "wiener"))
        with pytest.raises(ValueError):
            RunConfig(duration_s=0.0)

    def test_scenario_seeds_disjoint_across_run_seeds(self):
        a = {RunConfig(seed=0).scenario_seed(i) for i in range(1000)}
        b = {RunConfig(seed=1).scenario_seed(i) for i in range(1000)}
        assert not a & b


class TestLoadConfig:
    def test_file_plus_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"count": 3, "seed": 7, "methods": ["dsb"]}))
        cfg = load_config(path, {"seed": 9, "out": None})
        assert cfg.count == 3
        assert cfg.seed == 9          # override wins
        assert cfg.methods == ("dsb",)

    def test_nested_sections(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "sampler": {"n_mics": 12, "t60_range": [0.2, 0.4]},
            "nmf": {"restarts": 3},
            "net": {"pooling": "reference-select"},
        }))
        cfg = load_config(path, {})
        assert cfg.sampler.n_mics == 12
        assert cfg.sampler.t60_range == (0.2, 0.4)
        assert cfg.nmf.restarts == 3
        assert cfg.net.pooling == "reference-select"

    def test_rejects_non_object(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1,2,3]")
        with pytest.raises(ValueError):
            load_config(path, {})


class TestNoiseAndSpeech:
    def _model(self, assignments, n_clusters):
        assignments = np.asarray(assignments)
        membership = np.zeros((assignments.size, n_clusters))
        for m, c in enumerate(assignments):
            membership[m, c] = 0.9
        refs = np.zeros(n_clusters, dtype=int)
        for c in range(n_clusters):
            hit = np.flatnonzero(assignments == c)
            refs[c] = hit[0] if hit.size else 0
        return ClusterModel(membership=membership, assignments=assignments,
                            references=refs, objective_trace=np.array([1.0]),
                            n_clusters=n_clusters)

    def test_empty_cluster_takes_noise_role(self):
        model = self._model([0, 0, 1, 1], 3)
        noise, speech = _noise_and_speech(model, None)
        assert noise == 2
        assert speech == [0, 1]

    def test_two_empty_clusters_degenerate(self):
        model = self._model([0, 0, 0, 0], 3)
        with pytest.raises(ValueError):
            _noise_and_speech(model, None)


class TestMainUsage:
    def test_bad_config_file_rc1(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = main(["run", "--config", str(bad)])
        assert rc == 1
        assert "config error" in capsys.readouterr().err

    def test_unknown_method_rc1(self, capsys):
        rc = main(["run", "--methods", "telepathy"])
        assert rc == 1

    def test_cluster_missing_dir_rc1(self, tmp_path, capsys):
        rc = main(["cluster", str(tmp_path / "nope")])
        assert rc == 1


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = main(["datagen", "--count", "2", "--seed", "11", "--out", str(out)])
    return out, rc


class TestDatagen:
    def test_layout(self, small_dataset):
        out, rc = small_dataset
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["count"] == 2
        assert len(manifest["scenarios"]) == 2
        for entry in manifest["scenarios"]:
            sdir = out / entry["id"]
            assert (sdir / "scenario.json").exists()
            mics = sorted(sdir.glob("mic_*.wav"))
            assert len(mics) == entry["n_mics"]
            srcs = sorted(sdir.glob("src0_mic*.wav"))
            assert len(srcs) == entry["n_mics"]

    def test_deterministic(self, small_dataset, tmp_path):
        out, _ = small_dataset
        again = tmp_path / "again"
        assert main(["datagen", "--count", "2", "--seed", "11",
                     "--out", str(again)]) == 0
        for rel in ["scen_00000/scenario.json", "scen_00000/mic_00.wav",
                    "scen_00001/mic_01.wav"]:
            assert (out / rel).read_bytes() == (again / rel).read_bytes()


class TestStagedPipeline:
    def test_cluster_then_separate_then_eval(self, small_dataset):
        out, _ = small_dataset
        sdir = out / "scen_00000"
        assert main(["cluster", str(sdir)]) == 0
        assert (sdir / "cluster.json").exists()
        assert "accuracy" in (sdir / "confusion.txt").read_text()

        assert main(["separate", "--methods", "dsb", str(sdir)]) == 0
        ests = sorted(sdir.glob("est_c*_dsb.wav"))
        assert len(ests) >= 1

        assert main(["eval", "--methods", "dsb", str(out)]) == 0
        assert (out / "rows.csv").exists()
        text = (out / "rows.csv").read_text()
        assert "dsb" in text

    def test_cluster_too_few_mics_rc1(self, tmp_path, small_dataset, capsys):
        import shutil
        out, _ = small_dataset
        src = out / "scen_00000"
        dst = tmp_path / "tiny"
        dst.mkdir()
        shutil.copy(src / "scenario.json", dst / "scenario.json")
        shutil.copy(src / "mic_00.wav", dst / "mic_00.wav")
        shutil.copy(src / "mic_01.wav", dst / "mic_01.wav")
        rc = main(["cluster", str(dst)])
        assert rc == 1
        assert "cannot support" in capsys.readouterr().err


class TestRunCommand:
    def test_byte_identical_reports(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["run", "--count", "2", "--seed", "11", "--methods",
                "reference-mic,dsb"]
        rc1 = main(args + ["--out", str(a)])
        rc2 = main(args + ["--out", str(b)])
        assert rc1 == rc2 == 0
        assert (a / "rows.csv").read_bytes() == (b / "rows.csv").read_bytes()
        assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()

    def test_reference_mic_has_zero_improvement(self, tmp_path):
        out = tmp_path / "r"
        assert main(["run", "--count", "2", "--seed", "11", "--methods",
                     "reference-mic", "--out", str(out)]) == 0
        import csv
        with open(out / "rows.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        for row in rows:
            assert abs(float(row["improvement_db"])) < 1e-9

    def test_plot_data_flag(self, tmp_path):
        out = tmp_path / "p"
        assert main(["run", "--count", "1", "--seed", "11", "--methods",
                     "reference-mic", "--out", str(out), "--plot-data"]) == 0
        text = (out / "aggregate.dat").read_text()
        assert text.startswith("# method")
        assert "reference-mic" in text
