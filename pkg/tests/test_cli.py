import json

import pytest

from adaptive_highlight.cli import build_parser, main
from adaptive_highlight.config import ConfigError, from_dict, load_config

SMALL = """
seed = 1

[data]
num_users = [6, 2, 2]
videos_per_user = 3

[model]
channels = [4, 4, 4, 4, 4, 8, 8]
latent_dim = 8
decoder_channels = 8
attn_dim = 4

[train]
epochs = 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL)
    return path


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_config_round_trip(config):
    cfg = load_config(config)
    assert cfg.seed == 1 and cfg.train.epochs == 2
    assert cfg.model.channels == (4, 4, 4, 4, 4, 8, 8)
    assert cfg.data_kwargs() == {"num_users": (6, 2, 2), "videos_per_user": 3, "seed": 1}
    assert cfg.train_config().seed == 1


def test_config_defaults_without_file():
    cfg = load_config(None)
    assert cfg.seed == 0 and cfg.variant == "adaptive" and cfg.train.learning_rate == 1e-4


@pytest.mark.parametrize("raw, key", [
    ({"colour": 1}, "colour"),
    ({"model": {"widths": [1]}}, "model.widths"),
    ({"train": {"lr": 0.1}}, "train.lr"),
    ({"data": {"events": 3}}, "data.events"),
    ({"model": {"normalization": "none"}}, "model.normalization"),
])
def test_unknown_keys_are_named(raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        from_dict(raw)


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError, match="model"):
        from_dict({"model": {"dropout": 1.5}})
    with pytest.raises(ConfigError, match="variant"):
        from_dict({"variant": "vgg"})
    with pytest.raises(ConfigError, match="seed"):
        from_dict({"seed": "three"})


def test_parser_exposes_all_commands():
    parser = build_parser()
    for cmd in ("generate", "train", "eval", "compare", "ablate-affine", "ablate-history", "gradcheck"):
        assert parser.parse_args([cmd] + (["--checkpoint", "x"] if cmd == "eval" else [])).command == cmd
    with pytest.raises(SystemExit):
        parser.parse_args(["train", "--variant", "h-fcsn-fixed"])


def test_generate_is_byte_reproducible(tmp_path, config):
    assert main(["generate", "--config", str(config), "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--config", str(config), "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert set(a) >= {"train/index.jsonl", "train/features.bin", "test/features.bin", "users.json"}
    assert a == b
    main(["generate", "--config", str(config), "--seed", "8", "--out", str(tmp_path / "c")])
    assert tree_bytes(tmp_path / "c") != a


def test_train_then_eval_is_byte_reproducible(tmp_path, config, capsys):
    data = tmp_path / "data"
    assert main(["generate", "--config", str(config), "--out", str(data)]) == 0
    for run in ("r1", "r2"):
        assert main(["train", "--config", str(config), "--dataset", str(data), "--variant", "adaptive",
                     "--out", str(tmp_path / run)]) == 0
        assert main(["eval", "--dataset", str(data), "--checkpoint", str(tmp_path / run / "model.ckpt"),
                     "--out", str(tmp_path / run / "eval")]) == 0
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    assert (r1 / "model.ckpt").read_bytes() == (r2 / "model.ckpt").read_bytes()
    assert (r1 / "eval/report.json").read_bytes() == (r2 / "eval/report.json").read_bytes()
    report = json.loads((r1 / "eval/report.json").read_text())
    assert report["variant"] == "adaptive" and report["num_videos"] == 2
    logs = [[{k: v for k, v in json.loads(line).items() if k != "wall_time"}
             for line in (r / "train_log.jsonl").read_text().splitlines()] for r in (r1, r2)]
    assert logs[0] == logs[1] and len(logs[0]) == 2
    assert "mAP" in capsys.readouterr().out


def test_exit_codes(tmp_path, config, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nwidth = 3\n")
    assert main(["train", "--config", str(bad)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and "model.width" in err["message"]

    broken = tmp_path / "broken.toml"
    broken.write_text("seed = \n")
    assert main(["generate", "--config", str(broken)]) == 2
    assert main(["train", "--dataset", str(tmp_path / "missing")]) == 3

    data = tmp_path / "data"
    main(["generate", "--config", str(config), "--out", str(data)])
    garbage = tmp_path / "garbage.ckpt"
    garbage.write_bytes(b"not a checkpoint")
    assert main(["eval", "--dataset", str(data), "--checkpoint", str(garbage)]) == 3
    blob = data / "train" / "features.bin"
    blob.write_bytes(blob.read_bytes()[:-10])
    assert main(["train", "--config", str(config), "--dataset", str(data), "--out", str(tmp_path / "t")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, config):
    diverge = tmp_path / "diverge.toml"
    diverge.write_text(SMALL.replace("epochs = 2", "epochs = 3\nlearning_rate = 1e30"))
    assert main(["train", "--config", str(diverge), "--variant", "fcsn", "--out", str(tmp_path / "t")]) == 4


def test_history_size_flag_overrides(tmp_path, config):
    assert main(["train", "--config", str(config), "--history-size", "0", "--out", str(tmp_path / "t")]) == 2


def test_compare_reports_user_adaptive_column(tmp_path, config, capsys):
    assert main(["compare", "--config", str(config), "--out", str(tmp_path)]) == 0
    table = json.loads((tmp_path / "comparison.json").read_text())
    flags = {label: cells[1] for label, cells in table["rows"].items()}
    assert flags == {"Random": "no", "FCSN": "no", "H-FCSN": "no", "FCSN-aggregate": "yes",
                     "H-FCSN-aggregate": "yes", "Adaptive-H-FCSN-attn": "yes", "Adaptive-H-FCSN": "yes"}
    assert (tmp_path / "comparison.txt").read_text() in capsys.readouterr().out


def test_ablation_commands_write_tables(tmp_path, config):
    assert main(["ablate-affine", "--config", str(config), "--out", str(tmp_path)]) == 0
    affine = json.loads((tmp_path / "affine_ablation.json").read_text())
    assert affine["rows"]["Adaptive-H-FCSN"][:2] == [None, None]
    assert main(["ablate-history", "--config", str(config), "--sizes", "1,full", "--out", str(tmp_path)]) == 0
    history = json.loads((tmp_path / "history_ablation.json").read_text())
    assert history["columns"] == ["h=0", "h=1", "h=n"]
    assert main(["ablate-history", "--config", str(config), "--sizes", "1,x", "--out", str(tmp_path)]) == 2
