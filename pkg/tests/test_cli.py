import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from sparsedepth.cli import main
from sparsedepth.config import load_run_spec, parse_config
from sparsedepth.datagen import MANIFEST, read_dataset
from sparsedepth.exceptions import ConfigError
from sparsedepth.model import ModelConfig, build_model, load_checkpoint, save_checkpoint

TOY = """\
[model]
encoder_kind = toy
decoder_kind = {decoder}
head_positions = 2, 3

[train]
epochs = 1
batch_size = 4
lr = 0.001
seed = 3
val_fraction = 0.2
"""


def _write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("d")
    assert main(["gen-data", "--scenes", "10", "--size", "64", "--seed", "7", "--pairs", "20",
                 "--texture-noise", "0", "--out", str(out)]) == 0
    return out


def test_gen_data_contract(data_dir, tmp_path, capsys):
    scenes, pairs = read_dataset(data_dir)
    assert len(scenes) == 10 and all(len(p) == 20 for p in pairs)
    assert main(["gen-data", "--scenes", "10", "--size", "64", "--seed", "7", "--pairs", "20",
                 "--texture-noise", "0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / MANIFEST).read_bytes() == (data_dir / MANIFEST).read_bytes()


@pytest.mark.parametrize("flags", [["--scenes", "0"], ["--scenes", "3", "--equal-fraction", "2"],
                                   ["--scenes", "3", "--layers", "1"]])
def test_gen_data_usage_errors(flags, tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        code = main(["gen-data", *flags, "--out", str(tmp_path)])
        raise SystemExit(code)
    assert info.value.code == 2


def test_config_schema_and_errors(tmp_path):
    spec = load_run_spec(_write(tmp_path / "a.cfg", TOY.format(decoder="fbnet_like") + "[data]\ndir = d\n"))
    assert spec.model.encoder_kind == "toy" and spec.model.head_positions == [2, 3]
    assert spec.train.seed == 3 and spec.data_dir == "d"
    for bad in ("[model]\nwidth = 3\n", "[extra]\nx = 1\n", "[train]\nepochs = two\n",
                "[train]\nepochs = 0\n", "[model]\ndecoder_kind = big\n", "[train]\nrebalance = maybe\n"):
        with pytest.raises(ConfigError):
            load_run_spec(_write(tmp_path / "b.cfg", bad))
    with pytest.raises(ConfigError):
        load_run_spec(tmp_path / "missing.cfg")
    assert parse_config("[metrics]\ndelta_threshold = 1.5\n") == {"metrics": {"delta_threshold": 1.5}}


def test_params_fbnet_below_nnconv5(tmp_path, capsys):
    counts = []
    for dec in ("fbnet_like", "nnconv5_like"):
        assert main(["params", "--config", _write(tmp_path / f"{dec}.cfg", TOY.format(decoder=dec))]) == 0
        counts.append(int(capsys.readouterr().out.strip()))
    assert counts[0] < counts[1]


def test_train_eval_export(data_dir, tmp_path, capsys):
    cfg = _write(tmp_path / "t.cfg", TOY.format(decoder="fbnet_like"))
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--data", str(data_dir), "--out", str(out)]) == 0
    assert (out / "config.cfg").read_text() == (tmp_path / "t.cfg").read_text()
    for name in ("events.jsonl", "metrics.csv", "checkpoint/model.json"):
        assert (out / name).is_file()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "checkpoint"), "--data", str(data_dir)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("whdr=") and len(line.splitlines()) == 1
    assert [f.split("=")[0] for f in line.split()] == ["whdr", "rmse", "si_rmse", "delta1"]
    assert main(["export", "--checkpoint", str(out / "checkpoint"), "--out", str(tmp_path / "exp")]) == 0
    exported = load_checkpoint(tmp_path / "exp")
    assert len(exported.aux_heads) == 0 and exported.cfg.head_positions == []


def test_seed_flag_overrides_config(data_dir, tmp_path):
    cfg = _write(tmp_path / "t.cfg", TOY.format(decoder="fbnet_like"))
    for run, seed in (("a", "5"), ("b", "5"), ("c", "6")):
        assert main(["train", "--config", cfg, "--data", str(data_dir), "--out", str(tmp_path / run),
                     "--seed", seed]) == 0
    read = lambda r: (tmp_path / r / "checkpoint" / "p0000.sdt").read_bytes()
    assert read("a") == read("b") != read("c")


def test_distill_command(data_dir, tmp_path):
    cfg = _write(tmp_path / "d.cfg", TOY.format(decoder="fbnet_like") + "[distill]\nlambda_rank = 0\nteacher_noise = 0.1\n")
    assert main(["distill", "--config", cfg, "--data", str(data_dir), "--out", str(tmp_path / "o")]) == 0
    ev = json.loads((tmp_path / "o" / "events.jsonl").read_text().splitlines()[1])
    assert set(ev["payload"]["components"]) == {"pixelwise", "pairwise"}


def _oracle_checkpoint(path):
    """A model whose output is the red channel, which orders scenes by closeness."""
    cfg = ModelConfig(encoder_kind="toy", head_positions=[], x112_variant=True)
    m = build_model(cfg)
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
        m.skips[4].weight[0, 0] = 1.0
        m.head.weight[0, 0] = 1.0
    save_checkpoint(m, path)


def test_eval_oracle_model(data_dir, tmp_path, capsys):
    _oracle_checkpoint(tmp_path / "oracle.ckpt")
    assert main(["eval", "--checkpoint", str(tmp_path / "oracle.ckpt"), "--data", str(data_dir)]) == 0
    assert capsys.readouterr().out.startswith("whdr=0.0000 ")


def test_rebalance_sim_rows_sum_to_one(tmp_path, capsys):
    rows = ["step,name,value"] + [f"{t},{n},{np.exp(-k * t)}" for t in range(8)
                                  for n, k in (("l1", 0.1), ("l2", 1.0), ("l3", 3.0))]
    curves = _write(tmp_path / "c.csv", "\n".join(rows) + "\n")
    assert main(["rebalance-sim", "--curves", curves]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "step,name,weight"
    sums = {}
    for line in lines[1:]:
        step, name, weight = line.split(",")
        assert len(weight.split(".")[1]) == 4
        sums[step] = sums.get(step, 0.0) + float(weight)
    assert len(sums) == 8
    # three values each rounded to 4 decimals
    assert all(abs(v - 1.0) <= 1.5e-4 for v in sums.values())


def test_error_exit_codes(data_dir, tmp_path, capsys):
    assert main(["train", "--config", _write(tmp_path / "x.cfg", "[train]\nbogus = 1\n"),
                 "--data", str(data_dir), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", _write(tmp_path / "y.cfg", TOY.format(decoder="fbnet_like")),
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "nothing"), "--data", str(data_dir)]) == 1
    assert main(["train", "--config", str(tmp_path / "y.cfg"), "--data", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "bogus" in err and "FormatError" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparsedepth", "gen-data", "--scenes", "0", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "scenes" in proc.stderr
