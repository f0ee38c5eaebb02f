import csv
import hashlib
import json

import pytest

from hubbard_node import sweep
from hubbard_node.sweep import (
    ENV_OUTPUT,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PARTIAL,
    ConfigError,
    SweepConfig,
    format_config,
    main,
    parse_config,
    point_seed,
)

TINY = """
# two points, short evolution, tiny learning budget
U = 0, 1.5
V = 1.0
dt = 0.05
t_end = 6
T = 5
t0_pearson = 1
predict_from = 4
horizons = 1, 2
train_steps = 60
val_steps = 20
hidden = 16
window = 5
stride = 1
batch = 2
epochs = 2
updates_per_epoch = 2
curve_every = 0.5
"""


def _hashes(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*.f64"))}


class TestConfig:
    def test_ranges_lists_and_comments(self):
        cfg = parse_config("U = 0:1:0.25  # inclusive\nV = 0.5, 2\nworkers = 3\nvariant = abc\n")
        assert cfg.U == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert cfg.V == [0.5, 2.0] and cfg.workers == 3 and cfg.variant == "abc"
        assert len(cfg.points) == 10

    def test_default_grid(self):
        cfg = SweepConfig()
        assert len(cfg.U) == 21 and cfg.U[-1] == 5.0
        assert cfg.V == [0.25 * k for k in range(1, 9)]

    def test_round_trip(self):
        cfg = parse_config(TINY)
        assert parse_config(format_config(cfg)) == cfg

    @pytest.mark.parametrize("text", ["nonsense", "bogus = 1", "dt = abc", "U = 0:1:0",
                                      "predict_from = 40.005", "workers = 0", "normalization = x",
                                      "hole_ordering = other"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_digest_ignores_execution_settings(self):
        a = parse_config(TINY)
        assert a.digest() == parse_config(TINY + "workers = 4\noutput = elsewhere\n").digest()
        assert a.digest() != parse_config(TINY + "seed = 1\n").digest()

    def test_point_seed(self):
        assert point_seed(0, 3.1, 1.0) == point_seed(0, 3.1, 1.0)
        assert len({point_seed(0, 1.0, 1.0), point_seed(0, 1.0, 2.0), point_seed(1, 1.0, 1.0)}) == 3
        cfg = parse_config(TINY)
        assert cfg.train_config(1.5, 1.0).seed == point_seed(cfg.seed, 1.5, 1.0)

    def test_env_overrides_output(self, monkeypatch, tmp_path):
        cfg = parse_config("output = somewhere")
        monkeypatch.setenv(ENV_OUTPUT, str(tmp_path))
        assert cfg.root() == tmp_path

    def test_cli_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("dt = -1\n")
        assert main(["simulate", "-c", str(bad)]) == EXIT_CONFIG
        assert main(["simulate", "-c", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_paper_scale_flag(self, tmp_path):
        args = sweep.build_parser().parse_args(["train", "--paper-scale", "-o", str(tmp_path)])
        cfg = sweep.load_config(args)
        assert cfg.hidden == sweep.PAPER_SCALE_HIDDEN and cfg.output == str(tmp_path)


def test_empty_grid_export_writes_headers(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUTPUT, str(tmp_path))
    cfg_file = tmp_path / "empty.cfg"
    cfg_file.write_text("U =\nV =\n")
    assert main(["diagnose", "-c", str(cfg_file)]) == EXIT_OK
    assert main(["export-figures", "-c", str(cfg_file)]) == EXIT_OK
    for name in ("fig2a_buildup", "fig3b_pearson_updown", "fig3cd_prediction_pearson", "fig5_prediction_length"):
        rows = list(csv.reader(open(tmp_path / "figures" / f"{name}.csv")))
        assert len(rows) == 1 and rows[0][-2:] == ["config_hash", "version"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    cfg_file = root / "tiny.cfg"
    cfg_file.write_text(TINY)
    out = root / "out"
    codes = {cmd: main([cmd, "-c", str(cfg_file), "-o", str(out)])
             for cmd in ("simulate", "diagnose", "train", "predict", "evaluate", "export-figures", "verify")}
    return cfg_file, out, codes


class TestEndToEnd:
    def test_all_stages_succeed(self, tiny_run):
        _, _, codes = tiny_run
        assert codes == dict.fromkeys(codes, EXIT_OK)

    def test_indicator_table(self, tiny_run):
        _, out, _ = tiny_run
        rows = list(csv.DictReader(open(out / "indicators.csv")))
        assert [(r["U"], r["V"]) for r in rows] == [("0.0", "1.0"), ("1.5", "1.0")]
        assert abs(float(rows[0]["buildup"])) <= 1e-9
        assert rows[0]["config_hash"] == parse_config(TINY).digest()

    def test_report_fields(self, tiny_run):
        _, out, _ = tiny_run
        rows = list(csv.DictReader(open(out / "reports-default.csv")))
        assert len(rows) == 4
        for r in rows:
            assert all(r[c] != "" for c in ("pearson_packed", "delta_n1", "delta_d1", "divergence_time"))
        fig = list(csv.DictReader(open(out / "figures" / "fig4_occupation_deviation.csv")))
        assert len(fig) == 4

    def test_model_provenance(self, tiny_run):
        _, out, _ = tiny_run
        manifest = json.loads((out / "points" / "U1.5000_V1.0000" / "model-default" / "manifest.json").read_text())
        prov = manifest["provenance"]
        assert prov["sweep_config_hash"] == parse_config(TINY).digest()
        assert {"config_hash", "data_hash", "best_val_mse", "final"} <= set(prov)

    def test_rerun_is_bit_identical_and_worker_independent(self, tiny_run, tmp_path):
        cfg_file, out, _ = tiny_run
        other = tmp_path / "again"
        assert main(["simulate", "-c", str(cfg_file), "-o", str(other), "-j", "2"]) == EXIT_OK
        assert main(["train", "-c", str(cfg_file), "-o", str(other), "-j", "2"]) == EXIT_OK
        ref = {k: v for k, v in _hashes(out).items() if "prediction" not in k}
        assert any("model-default" in k for k in ref) and any("/data/" in k for k in ref)
        assert _hashes(other) == ref

    def test_failures_are_isolated(self, tiny_run, tmp_path):
        cfg_file, out, _ = tiny_run
        text = cfg_file.read_text() + "U = 0, 1.5, 2.5\n"
        cfg_file2 = tmp_path / "more.cfg"
        cfg_file2.write_text(text)
        assert main(["predict", "-c", str(cfg_file2), "-o", str(out)]) == EXIT_PARTIAL
        summary = json.loads((out / "summary-predict.json").read_text())
        assert summary["failed"] == 1 and summary["failures"][0]["U"] == 2.5

    def test_verify_detects_corruption(self, tiny_run, tmp_path, capsys):
        _, out, _ = tiny_run
        data = out / "points" / "U1.5000_V1.0000" / "data"
        assert main(["verify", str(data), "-o", str(tmp_path)]) == EXIT_OK
        capsys.readouterr()
        blob = next(data.glob("packed*.f64"))
        raw = bytearray(blob.read_bytes())
        raw[100] ^= 0xFF
        broken = tmp_path / "broken"
        broken.mkdir()
        for p in data.iterdir():
            (broken / p.name).write_bytes(bytes(raw) if p == blob else p.read_bytes())
        assert main(["verify", str(broken), "-o", str(tmp_path)]) == EXIT_PARTIAL
