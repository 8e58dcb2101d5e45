import numpy as np
import pytest

from kcascade import cascade, cli, reports
from kcascade.config import RunConfig
from kcascade.errors import ConfigError

SMALL = """\
[data]
n = 1200
d = 8
positive_fraction = 0.08
separation = 5.0
seed = 3
[split]
labeled_count = 240
[bank]
num_chunks = 4
[f]
max_epochs = 12
[g]
max_epochs = 6
"""


def test_defaults_and_overrides():
    cfg = RunConfig.from_text("[f]\ngamma = 4\n")
    assert cfg["f"]["gamma"] == 4.0 and cfg["g"]["gamma"] == 10.0
    assert cfg["data"]["n"] == 20000 and cfg["cascade"]["g_stages"] == 5
    assert cfg["data"]["path"] is None
    assert cfg.distill_config("f").gamma == 4.0


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text("[f]\ngamma = 4\n\n[g]\ngama = 3\n")
    assert info.value.line == 5 and info.value.key == "gama"
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text("[data]\nn = 10\n[extra]\nx = 1\n")
    assert info.value.line == 3


def test_unparsable_value():
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text("[bank]\nnum_chunks = eight\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        RunConfig.from_text("[cascade]\nuse_unlabeled = maybe\n")


def test_text_round_trip_and_digest():
    cfg = RunConfig.from_text(SMALL)
    back = RunConfig.from_text(cfg.to_text())
    assert back.values == cfg.values and back.digest() == cfg.digest()
    assert RunConfig.default().digest() != cfg.digest()
    cfg.override_seed(9)
    assert all(cfg[s]["seed"] == 9 for s in ("data", "split", "f", "g"))


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[f]\nnope = 1\n")
    assert cli.main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")]) == \
        cli.EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["eval", "--cascade", str(tmp_path / "missing.kcas"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_INPUT


def test_cli_rejects_foreign_file(tmp_path):
    junk = tmp_path / "junk.kcas"
    junk.write_bytes(b"not an artifact")
    assert cli.main(["eval", "--cascade", str(junk), "--out", str(tmp_path / "o")]) == \
        cli.EXIT_INPUT


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = tmp / "small.ini"
    cfg.write_text(SMALL)
    out = tmp / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    return tmp, cfg, out


def test_run_writes_everything(small_run):
    _, _, out = small_run
    for name in ("config.ini", "data.kcpf", "f.kcas", "f_train_log.tsv", "cascade.kcas",
                 "stages.tsv", "pipeline.tsv", "summary.tsv", "stage_map.pgm",
                 "stage_counts.tsv", "training.png", "stages.png", "stage_map.png"):
        assert (out / name).exists(), name
    rows = reports.read_tsv((out / "stages.tsv").read_text())
    assert [r["stage"] for r in rows] == ["1", "2", "3", "4", "5", "6"]
    assert rows[-1]["cons"] == "-" and rows[-1]["rFA"] == "-"
    casc = cascade.Cascade.load(out / "cascade.kcas")
    assert [int(r["stage_cost"]) for r in rows] == casc.costs()


def test_eval_report_is_reproducible(small_run):
    tmp, cfg, out = small_run
    again = tmp / "eval_again"
    assert cli.main(["eval", "--config", str(cfg), "--cascade", str(out / "cascade.kcas"),
                     "--out", str(again), "--threads", "3"]) == 0
    for name in ("stages.tsv", "pipeline.tsv", "summary.tsv"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_f_only_cascade(small_run):
    tmp, cfg, out = small_run
    f_only = tmp / "f_only.ini"
    f_only.write_text(SMALL + "[cascade]\ng_stages = 0\n")
    dest = tmp / "f_only"
    assert cli.main(["build-cascade", "--config", str(f_only), "--f", str(out / "f.kcas"),
                     "--out", str(dest)]) == 0
    assert cli.main(["eval", "--config", str(f_only), "--cascade", str(dest / "cascade.kcas"),
                     "--out", str(dest)]) == 0
    rows = reports.read_tsv((dest / "stages.tsv").read_text())
    assert len(rows) == 1 and rows[0]["cons"] == "-" and rows[0]["rFA"] == "-"
    summary = reports.read_tsv((dest / "summary.tsv").read_text())
    assert summary[0]["EER"] == summary[1]["EER"]
    assert float(summary[1]["cost_ratio"]) == 1.0


def test_bad_stage_count(small_run, tmp_path):
    _, _, out = small_run
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL + "[cascade]\ng_stages = 9\n")
    assert cli.main(["build-cascade", "--config", str(cfg), "--f", str(out / "f.kcas"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_map_matches_stage_counts(small_run):
    _, _, out = small_run
    counts = np.loadtxt(out / "stage_counts.tsv", dtype=int, delimiter="\t")
    assert counts.min() >= 1 and counts.max() <= 6 and counts.size == 1200
