import json

import numpy as np
import pytest

from bcgnn.cli import MismatchError, cmd_eval, cmd_infer, cmd_synth, cmd_train, main, model_from_checkpoint
from bcgnn.config import ConfigError, RunConfig, parse_assignments
from bcgnn.data import load_annotations
from bcgnn.pipeline import merge_duplicates
from bcgnn.postprocess import ScoredProposal, auc, save_results

SMALL = "l_s=32,l_w=8,d_b=8,d_g=8,d_c=8,n_samples=4,n_videos=4,max_duration=6,max_epochs=2"


def small_cfg(**extra) -> RunConfig:
    return RunConfig().with_overrides({**parse_assignments(SMALL), **{k: str(v) for k, v in extra.items()}})


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = small_cfg()
    cmd_synth(cfg, root / "data")
    events = []
    cmd_train(cfg, root / "data", root / "model.bcgc", emit=events.append)
    cmd_infer(None, root / "model.bcgc", root / "data", root / "results.json")
    return root, cfg, events


class TestConfig:
    def test_round_trip(self):
        cfg = small_cfg(directed="false", nms_sigma=0.3)
        back = RunConfig.loads(cfg.dumps())
        assert back == cfg and back.config_hash() == cfg.config_hash()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.loads("no_such_key = 3\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            RunConfig.loads("seed = 1\nseed = 2\n")

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            RunConfig.loads("n_videos = 0\n")
        with pytest.raises(ConfigError):
            RunConfig.loads("directed = maybe\n")

    def test_hash_ignores_jobs_and_paths(self):
        base = RunConfig()
        assert base.with_overrides({"jobs": "4", "results": "x.json"}).config_hash() == base.config_hash()
        assert base.with_overrides({"directed": "false"}).config_hash() != base.config_hash()

    def test_comments_and_blank_lines(self):
        assert RunConfig.loads("# note\n\nseed = 5  # inline\n").seed == 5


class TestSynth:
    def test_file_count(self, tmp_path):
        files = cmd_synth(small_cfg(n_videos=3), tmp_path)
        assert len(list(tmp_path.glob("*.bcgf"))) == 3 and len(files) == 4
        assert len(load_annotations(tmp_path / "annotations.json")) == 3

    def test_byte_deterministic(self, tmp_path):
        cmd_synth(small_cfg(), tmp_path / "a")
        cmd_synth(small_cfg(), tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_zero_videos_exit_code(self, tmp_path):
        assert main(["synth", "--set", "n_videos=0", "--out", str(tmp_path)]) == 2


class TestTrain:
    def test_event_log(self, workspace):
        _, cfg, events = workspace
        kinds = [e["event"] for e in events]
        assert kinds[0] == "start" and kinds[1] == "init" and kinds[-1] == "done"
        epochs = [e for e in events if e["event"] == "epoch"]
        assert 1 <= len(epochs) <= cfg.max_epochs
        assert all(np.isfinite(e["train_loss"]) for e in epochs)

    def test_early_stop_event(self, tmp_path):
        cfg = small_cfg(max_epochs=10, patience=1, learning_rate=3.0)
        cmd_synth(cfg, tmp_path)
        events = []
        res = cmd_train(cfg, tmp_path, tmp_path / "m.bcgc", emit=events.append)
        assert res.early_stopped and events[-2]["event"] == "early_stop"
        assert sum(e["event"] == "epoch" for e in events) <= 10

    def test_dimension_mismatch(self, workspace, tmp_path):
        root, _, _ = workspace
        assert main(["train", "--set", SMALL + ",d_i=5", "--data", str(root / "data"), "--out", str(tmp_path / "m")]) == 2

    def test_numeric_failure_exit_code(self, workspace, tmp_path):
        root, _, _ = workspace
        with np.errstate(all="ignore"):
            code = main(["train", "--set", SMALL + ",learning_rate=1e30", "--data", str(root / "data"), "--out", str(tmp_path / "m"), "--log", str(tmp_path / "log")])
        assert code == 3

    def test_checkpoint_loads(self, workspace):
        root, cfg, _ = workspace
        model, header = model_from_checkpoint(root / "model.bcgc", cfg)
        assert header["config_hash"] == cfg.config_hash()
        out = model(np.zeros((cfg.d_i, cfg.l_w), dtype=np.float32))
        assert out.content_prob.data.dtype == np.float32

    def test_checkpoint_config_mismatch(self, workspace):
        root, _, _ = workspace
        with pytest.raises(MismatchError):
            model_from_checkpoint(root / "model.bcgc", small_cfg(d_g=16))


class TestInfer:
    def test_results_respect_limits(self, workspace):
        root, cfg, _ = workspace
        doc = json.loads((root / "results.json").read_text())
        assert doc["_meta"]["config_hash"] == cfg.config_hash()
        for vid, props in ((k, v) for k, v in doc.items() if k != "_meta"):
            assert len(props) <= cfg.top_k
            for p in props:
                assert 0 <= p["start"] < p["end"] <= cfg.l_s
            keys = [(p["start"], p["end"]) for p in props]
            assert len(keys) == len(set(keys))

    def test_duplicates_merge(self):
        merged = merge_duplicates([ScoredProposal(4, 8, 0.2), ScoredProposal(4, 8, 0.7), ScoredProposal(1, 2, 0.1)])
        assert merged == [ScoredProposal(1, 2, 0.1), ScoredProposal(4, 8, 0.7)]

    def test_jobs_do_not_change_results(self, workspace, tmp_path):
        root, cfg, _ = workspace
        cmd_infer(cfg.with_overrides({"jobs": "3"}), root / "model.bcgc", root / "data", tmp_path / "r.json")
        a = json.loads((root / "results.json").read_text())
        b = json.loads((tmp_path / "r.json").read_text())
        assert a == b


class TestEval:
    def test_report(self, workspace):
        root, cfg, _ = workspace
        rep = cmd_eval(root / "results.json", root / "data" / "annotations.json")
        assert 0 <= rep["AR@100"] <= 1
        assert rep["AUC"] == pytest.approx(auc({int(k): v for k, v in rep["curve"].items()}))

    def test_empty_results(self, workspace, tmp_path):
        root, _, _ = workspace
        save_results(tmp_path / "r.json", {})
        rep = cmd_eval(tmp_path / "r.json", root / "data" / "annotations.json")
        assert rep["AR@100"] == 0 and rep["AUC"] == 0

    def test_oracle_results(self, workspace, tmp_path):
        root, _, _ = workspace
        ann = load_annotations(root / "data" / "annotations.json")
        perfect = {vid: [ScoredProposal(g.t_start, g.t_end, 1.0) for g in gts] for vid, (_, gts) in ann.items()}
        save_results(tmp_path / "r.json", perfect)
        rep = cmd_eval(tmp_path / "r.json", root / "data" / "annotations.json")
        assert rep["AR@10"] == 1.0

    def test_unknown_video(self, workspace, tmp_path):
        root, _, _ = workspace
        save_results(tmp_path / "r.json", {"ghost": [ScoredProposal(0, 1, 0.5)]})
        with pytest.raises(MismatchError):
            cmd_eval(tmp_path / "r.json", root / "data" / "annotations.json")
        assert main(["eval", "--results", str(tmp_path / "r.json"), "--annotations", str(root / "data" / "annotations.json")]) == 2

    def test_hash_mismatch(self, workspace):
        root, _, _ = workspace
        other = small_cfg(nms_sigma=0.9)
        with pytest.raises(MismatchError):
            cmd_eval(root / "results.json", root / "data" / "annotations.json", other)
        cmd_eval(root / "results.json", root / "data" / "annotations.json", other, force=True)

    def test_main_end_to_end(self, workspace, tmp_path, capsys):
        root, _, _ = workspace
        out = tmp_path / "report.json"
        assert main(["eval", "--results", str(root / "results.json"), "--annotations", str(root / "data" / "annotations.json"), "--out", str(out)]) == 0
        assert "AUC" in json.loads(out.read_text())


def test_show_config(capsys):
    assert main(["show-config", "--seed", "7", "--ablation", "directed=false"]) == 0
    text = capsys.readouterr().out
    assert "seed = 7" in text and "directed = false" in text and "config_hash" in text


def test_bad_ablation_flag():
    assert main(["show-config", "--ablation", "dropout=true"]) == 2
