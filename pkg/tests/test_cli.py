import json

import pytest

from fmvp import __version__
from fmvp.autodiff import ContractError
from fmvp.cli import build_parser, main
from fmvp.config import load_config


def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config()
    assert cfg.attack.pgd.epsilon == 8 / 255
    assert cfg.purifier.gamma == 0.5 and cfg.purifier.xi == 1e-5
    assert cfg.train.loss.lambda_fgl == 0.2
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"purifier": {"gamma": 0.6}, "train": {"loss": {"fgl_residual": "magnitude"}}}))
    cfg = load_config(path, {"purifier.gamma": 0.7})
    assert cfg.purifier.gamma == 0.7
    assert cfg.train.loss.fgl_residual == "magnitude"


@pytest.mark.parametrize("doc", [{"purifer": {}}, {"purifier": {"gama": 0.5}}, {"train": {"loss": {"x": 1}}}])
def test_unknown_keys_rejected(tmp_path, doc):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ContractError):
        load_config(path)


def test_type_and_value_checks():
    with pytest.raises(ContractError):
        load_config(None, {"train.steps": "many"})
    with pytest.raises(ContractError):
        load_config(None, {"train.loss.fgl_residual": "phase"})


def test_gen_data_twice_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-data", "--seed", "7", "--num-samples", "3", "--out", str(tmp_path / d / "d.bin")]) == 0
    assert (tmp_path / "a" / "d.bin").read_bytes() == (tmp_path / "b" / "d.bin").read_bytes()
    resolved = json.loads((tmp_path / "a" / "config.resolved.json").read_text())
    assert resolved["version"] == __version__ and resolved["seed"] == 7
    assert resolved["config"]["data"]["num_samples"] == 3
    assert (tmp_path / "a" / "VERSION").read_text().strip() == __version__


def test_bad_magic_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + bytes(32))
    code = main(["train-classifier", "--data", str(bad), "--seed", "0", "--out", str(tmp_path / "c.ckpt")])
    assert code == 2
    assert "NOTMAGIC" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path):
    assert main(["train-classifier", "--data", str(tmp_path / "nope.bin"), "--seed", "0",
                 "--out", str(tmp_path / "c.ckpt")]) == 2


def test_contract_error_exits_1(tmp_path):
    data = tmp_path / "d.bin"
    assert main(["gen-data", "--seed", "1", "--num-samples", "3", "--out", str(data)]) == 0
    assert main(["train-purifier", "--data", str(data), "--seed", "0", "--variant", "pgd",
                 "--steps", "1", "--out", str(tmp_path / "p.ckpt")]) == 1
    assert main(["train-purifier", "--data", str(data), "--seed", "0", "--variant", "gaussian",
                 "--adv", str(data), "--steps", "1", "--out", str(tmp_path / "p.ckpt")]) == 1
    assert main(["gen-data", "--seed", "1", "--set", "data.bogus=1", "--out", str(data)]) == 1


def test_seed_is_mandatory():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["gen-data", "--out", "x.bin"])
    assert info.value.code == 2


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["purify", "--help"])
    out = capsys.readouterr().out
    assert "--workers" in out and "default: 1" in out
