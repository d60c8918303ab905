"""Pipeline orchestration, sweeps, profiles and the command-line interface."""

import json
import shutil
import subprocess

import numpy as np
import pytest

from diarcluster.cli import main
from diarcluster.core import SegmentTable, load_manifest, read_rttm, write_manifest, write_rttm
from diarcluster.pipeline import (
    PipelineConfig,
    apply_overrides,
    cluster_session,
    parse_override,
    profiles_from_session,
    run_pipeline,
    run_sweep,
)
from diarcluster.prep import embed_segments
from diarcluster.synth import SynthConfig, generate_session, generate_suite


@pytest.fixture(scope="module")
def easy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("easy")
    assert main(["synth", "--suite", "easy", "--seed", "0", "--override", '{"n_segments": 120}', "--out", str(out)]) == 0
    return out


def _read(path):
    return path.read_bytes()


class TestConfig:
    @pytest.mark.parametrize(
        "text,key,value",
        [("k=4", "k", 4), ("aggregation=mean", "aggregation", "mean"), ("filter_order=null", "filter_order", None), ("dec.epochs=5", "dec.epochs", 5)],
    )
    def test_parse_override(self, text, key, value):
        assert parse_override(text) == (key, value)

    def test_apply_overrides(self):
        cfg = apply_overrides(PipelineConfig(), ["k=3", "dec.epochs=5", "algorithm=dec_original"])
        assert cfg.k == 3
        assert cfg.dec_config().epochs == 5 and cfg.dec_config().mode == "original"

    @pytest.mark.parametrize("bad", ["nokey", "colour=red", "algorithm=gmm", "aggregation=mode", "k_min=0"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            apply_overrides(PipelineConfig(), [bad])

    def test_json_round_trip_and_echo(self):
        cfg = PipelineConfig(algorithm="dec_improved", seed=3)
        obj = json.loads(json.dumps(cfg.to_json()))
        assert obj["dec"]["seed"] == 3 and obj["dec"]["mode"] == "improved"
        assert PipelineConfig.from_json(obj).dec_config() == cfg.dec_config()

    def test_pca_only_for_centroid_methods(self):
        assert PipelineConfig().uses_pca()
        assert PipelineConfig(algorithm="xmeans").uses_pca()
        for alg in ("spectral", "dec_original", "dec_improved"):
            assert not PipelineConfig(algorithm=alg).uses_pca()


class TestClusterSession:
    def test_needs_k(self):
        sess = generate_session(SynthConfig(n_speakers=2, dim=10, n_segments=20))
        with pytest.raises(ValueError, match="number of speakers"):
            cluster_session(sess.frames, sess.table, PipelineConfig(pca_dim=None))

    @pytest.mark.parametrize("algorithm", ["kmeans", "spectral", "xmeans"])
    def test_classic_algorithms_on_easy(self, algorithm):
        sess = generate_suite("easy", 1)[0]
        res = cluster_session(sess.frames, sess.table, PipelineConfig(algorithm=algorithm), 4)
        assert res.report.recall_pct >= 99.0
        assert res.report_unmerged.recall_pct >= 99.0
        assert res.model.k == 4

    def test_min_duration_drops_segments(self):
        sess = generate_suite("short_segments", 0)[0]
        res = cluster_session(sess.frames, sess.table, PipelineConfig(min_duration=1.0), 4)
        assert np.all(res.table.durations[res.active] > 1.0)
        assert len(res.labels) == len(res.active) < len(res.table)

    def test_hypothesis_rttm_round_trips(self):
        sess = generate_suite("easy", 2)[0]
        res = cluster_session(sess.frames, sess.table, PipelineConfig(), 4)
        hyp = read_rttm(res.hypothesis_rttm())
        assert len(hyp) == len(res.active)
        assert hyp.labels == [f"c{l}" for l in res.labels]


class TestProfiles:
    def test_perfect_prior_gives_true_means(self):
        sess = generate_session(SynthConfig(n_speakers=3, dim=12, n_segments=30, frame_noise_std=0.0, gap_prob=0.0))
        emb = embed_segments(sess.frames, sess.table, "median", 4)
        labels = [int(s[-1]) for s in sess.table.labels]
        prof, warnings = profiles_from_session(labels, emb, 3)
        assert not warnings
        np.testing.assert_allclose(prof.vectors, sess.profiles.vectors, atol=1e-9)

    def test_empty_cluster_dropped_with_warning(self):
        X = np.arange(12.0).reshape(4, 3)
        prof, warnings = profiles_from_session([0, 0, 2, 2], X, 3)
        assert prof.k == 2 and prof.labels == ("c0", "c2")
        assert warnings == ["cluster 1 is empty; no profile produced"]

    def test_profile_init_provenance(self, easy_dir, tmp_path):
        entry = load_manifest(easy_dir / "manifest.json")[0]
        cfg = PipelineConfig(profiles_path=str(easy_dir / entry.extra["profiles_path"]))
        report = run_pipeline([entry], cfg, tmp_path)
        assert report["sessions"][entry.session_id]["cluster_source"] == "profile_init"
        assert report["aggregate"]["recall_pct"] >= 99.0

    def test_profile_init_not_worse_on_noisy(self):
        # first half of a session seeds profiles for the second half
        with_prof, without = [], []
        for seed in range(20):
            sess = generate_suite("noisy", seed, n_segments=400)[0]
            segs = sess.table.segments
            prior = SegmentTable(sess.table.session_id, segs[: len(segs) // 2])
            target = SegmentTable(sess.table.session_id, segs[len(segs) // 2 :])
            cfg = PipelineConfig(seed=seed)
            res = cluster_session(sess.frames, prior, cfg, 4)
            prof, _ = profiles_from_session(res.labels, [res.embeddings[i] for i in res.active], 4)
            with_prof.append(cluster_session(sess.frames, target, cfg, 4, prof).report.recall_pct)
            without.append(cluster_session(sess.frames, target, cfg, 4).report.recall_pct)
        assert np.mean(with_prof) >= np.mean(without)


class TestRunPipeline:
    def test_easy_suite(self, easy_dir, tmp_path):
        report = run_pipeline(load_manifest(easy_dir / "manifest.json"), PipelineConfig(), tmp_path)
        assert report["aggregate"]["recall_pct"] >= 99.0
        assert report["aggregate"]["n_sessions"] == 5 and not report["failures"]
        assert report["config"]["aggregation"] == "median"
        sid = next(iter(report["sessions"]))
        for name in ("hyp.rttm", "clusters.json", "profiles.json", "report.json"):
            assert (tmp_path / sid / name).exists()
        assert "without_merge" in report["sessions"][sid]

    def test_failed_session_is_reported(self, easy_dir, tmp_path):
        entries = load_manifest(easy_dir / "manifest.json")[:2]
        broken = type(entries[1])(entries[1].session_id, str(tmp_path / "missing.frames"), entries[1].rttm_path, 4)
        report = run_pipeline([entries[0], broken], PipelineConfig())
        assert list(report["sessions"]) == [entries[0].session_id]
        assert "missing.frames" in report["failures"][broken.session_id]
        assert report["aggregate"]["n_sessions"] == 1

    def test_workers_do_not_change_results(self, easy_dir):
        entries = load_manifest(easy_dir / "manifest.json")
        assert run_pipeline(entries, PipelineConfig(), workers=1) == run_pipeline(entries, PipelineConfig(), workers=3)

    def test_single_value_sweep_equals_run(self, easy_dir):
        entries = load_manifest(easy_dir / "manifest.json")
        sweep = run_sweep(entries, PipelineConfig(), "min_duration", [0.0])
        assert sweep["runs"]["0.0"] == run_pipeline(entries, PipelineConfig())
        assert f"{run_pipeline(entries, PipelineConfig())['aggregate']['recall_pct']:.2f}" in sweep["table"]

    def test_aggregation_axis(self, easy_dir):
        sweep = run_sweep(load_manifest(easy_dir / "manifest.json"), PipelineConfig(), "aggregation", ["median+filter", "mean"])
        assert sweep["runs"]["median+filter"]["config"]["filter_order"] == 4
        assert sweep["runs"]["mean"]["config"]["filter_order"] is None

    def test_unknown_axis(self, easy_dir):
        with pytest.raises(ValueError):
            run_sweep(load_manifest(easy_dir / "manifest.json"), PipelineConfig(), "colour", ["red"])


class TestCli:
    def test_run_is_byte_identical(self, easy_dir, tmp_path):
        args = ["run", "--manifest", str(easy_dir / "manifest.json"), "--seed", "3"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 1 + 4 * 5
        for rel in files:
            assert _read(tmp_path / "a" / rel) == _read(tmp_path / "b" / rel), rel
        assert json.loads((tmp_path / "a" / "report.json").read_text())["config"]["seed"] == 3

    def test_synth_is_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--suite", "noisy", "--seed", "2", "--override", '{"n_segments": 20}', "--out", str(tmp_path / name)]) == 0
        for p in sorted((tmp_path / "a").iterdir()):
            assert _read(p) == _read(tmp_path / "b" / p.name)

    def test_sweep_writes_table(self, easy_dir, tmp_path, capsys):
        code = main(["sweep", "--manifest", str(easy_dir / "manifest.json"), "--axis", "filter_order", "--values", "none,4", "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "filter_order=none" in out and "filter_order=4" in out
        assert (tmp_path / "sweep.txt").read_text() == out

    def test_score_subcommand(self, tmp_path, capsys):
        ref = tmp_path / "ref.rttm"
        hyp = tmp_path / "hyp.rttm"
        ref.write_text("SPEAKER m 1 0.00 1.00 <NA> <NA> A <NA>\nSPEAKER m 1 1.00 1.00 <NA> <NA> A <NA>\nSPEAKER m 1 2.00 1.00 <NA> <NA> B <NA>\nSPEAKER m 1 3.00 1.00 <NA> <NA> B <NA>\n")
        hyp.write_text("SPEAKER m 1 0.00 1.00 <NA> <NA> x <NA>\nSPEAKER m 1 1.00 1.00 <NA> <NA> y <NA>\nSPEAKER m 1 2.00 1.00 <NA> <NA> y <NA>\nSPEAKER m 1 3.00 1.00 <NA> <NA> y <NA>\n")
        assert main(["score", "--ref", str(ref), "--hyp", str(hyp), "--out", str(tmp_path / "r.json")]) == 0
        assert json.loads(capsys.readouterr().out)["recall_pct"] == 75.0
        first = _read(tmp_path / "r.json")
        main(["score", "--ref", str(ref), "--hyp", str(hyp), "--out", str(tmp_path / "r.json")])
        assert _read(tmp_path / "r.json") == first

    def test_pretrain_subcommand(self, easy_dir, tmp_path):
        args = ["pretrain", "--manifest", str(easy_dir / "manifest.json"), "--set", "dec.pretrain_epochs=3", "--set", 'dec.layer_sizes=[0,16,4,16,0]']
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("autoencoder.ckpt", "loss_curve.csv"):
            assert _read(tmp_path / "a" / name) == _read(tmp_path / "b" / name)
        assert len((tmp_path / "a" / "loss_curve.csv").read_text().splitlines()) == 4

    def test_exit_codes(self, easy_dir, tmp_path):
        entries = load_manifest(easy_dir / "manifest.json")
        broken = type(entries[0])("ghost", str(tmp_path / "none.frames"), entries[0].rttm_path, 4)
        write_manifest(tmp_path / "partial.json", [entries[0], broken])
        write_manifest(tmp_path / "all_bad.json", [broken])
        assert main(["run", "--manifest", str(tmp_path / "partial.json"), "--out", str(tmp_path / "p")]) == 2
        assert main(["run", "--manifest", str(tmp_path / "all_bad.json"), "--out", str(tmp_path / "q")]) == 1
        assert main(["run", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r")]) == 1
        with pytest.raises(SystemExit):
            main(["frobnicate"])

    @pytest.mark.skipif(shutil.which("diarcluster") is None, reason="console script not installed")
    def test_console_script(self, tmp_path):
        ref = tmp_path / "ref.rttm"
        ref.write_text(write_rttm(generate_session(SynthConfig(n_speakers=2, dim=4, n_segments=6)).table))
        proc = subprocess.run(["diarcluster", "score", "--ref", str(ref), "--hyp", str(ref)], capture_output=True, text=True)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["recall_pct"] == 100.0
