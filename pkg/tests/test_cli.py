import csv
import json
from pathlib import Path

import pytest
import yaml

from coreperiphery.cli import (
    EXIT_ASSUMPTION,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PROPERTY,
    CliError,
    config_to_yaml,
    dumps,
    load_config,
    main,
    parse_config,
)
from coreperiphery.model import CommunityConfig
from coreperiphery.solver import EquilibriumResult, SolverOptions

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "default.yaml"
TINY = ROOT / "configs" / "tiny.yaml"


def edited(tmp_path, **community):
    doc = yaml.safe_load(DESK.read_text())
    for k, v in community.items():
        if v is None:
            doc["community"].pop(k)
        else:
            doc["community"][k] = v
    path = tmp_path / "edited.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


class TestConfig:
    def test_desk_loads(self):
        config, options, seed = load_config(DESK)
        assert config == CommunityConfig()
        assert options == SolverOptions()
        assert seed == 0

    def test_packaged_copy_matches(self):
        packaged = ROOT / "src" / "coreperiphery" / "configs" / "default.yaml"
        assert load_config(packaged) == load_config(DESK)

    def test_yaml_round_trip(self, tmp_path):
        config, options, seed = load_config(TINY)
        path = tmp_path / "again.yaml"
        path.write_text(config_to_yaml(config, options, seed))
        assert load_config(path) == (config, options, seed)

    def test_cost_below_bound(self, tmp_path, capsys):
        rc = main(["solve", "--config", str(edited(tmp_path, cost=0.3)), "--out", str(tmp_path / "o.json")])
        assert rc == EXIT_ASSUMPTION
        err = capsys.readouterr().err
        assert "0.367879" in err and "c=0.3" in err
        assert not (tmp_path / "o.json").exists()

    def test_missing_field(self, tmp_path, capsys):
        rc = main(["solve", "--config", str(edited(tmp_path, num_periphery=None)), "--out", str(tmp_path / "o.json")])
        assert rc == EXIT_CONFIG
        assert "num_periphery" in capsys.readouterr().err

    def test_unknown_field(self):
        doc = yaml.safe_load(DESK.read_text())
        doc["community"]["colour"] = "red"
        with pytest.raises(CliError) as info:
            parse_config(doc)
        assert info.value.code == EXIT_CONFIG and "colour" in str(info.value)

    def test_bad_yaml(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("community: [unclosed\n")
        rc = main(["solve", "--config", str(path), "--out", str(tmp_path / "o.json")])
        assert rc == EXIT_CONFIG
        assert "line" in capsys.readouterr().err

    def test_bad_arguments(self, tmp_path):
        assert main(["sweep", "--config", str(DESK), "--out", str(tmp_path / "s.csv")]) == EXIT_CONFIG
        assert main(["nonsense"]) == EXIT_CONFIG


class TestSolve:
    def test_byte_identical_reruns(self, tmp_path):
        out = tmp_path / "solve.json"
        assert main(["solve", "--config", str(DESK), "--out", str(out)]) == EXIT_OK
        first = out.read_bytes()
        assert main(["solve", "--config", str(DESK), "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == first

    def test_result_round_trip(self, tmp_path, desk_result):
        out = tmp_path / "solve.json"
        main(["solve", "--config", str(DESK), "--out", str(out)])
        doc = json.loads(out.read_text())
        back = EquilibriumResult.from_dict(doc["result"])
        assert back == desk_result
        assert doc["manifest"]["seed"] == 0 and len(doc["manifest"]["config_hash"]) == 64

    def test_float_text_round_trips(self):
        x = 0.1 + 0.2
        assert json.loads(dumps({"x": x}))["x"] == x

    def test_seed_override(self, tmp_path):
        out = tmp_path / "s.json"
        main(["solve", "--config", str(TINY), "--out", str(out), "--init", "random", "--seed", "7"])
        assert json.loads(out.read_text())["manifest"]["seed"] == 7


class TestOtherCommands:
    def test_verify_desk(self, tmp_path):
        out = tmp_path / "verify.json"
        rc = main(["verify", "--config", str(DESK), "--out", str(out), "--trials", "50",
                   "--deviations", "100", "--influence", "50,60"])
        doc = json.loads(out.read_text())
        ids = [r["property_id"] for r in doc["reports"]]
        assert len(ids) == 7 and len(set(ids)) == 7
        assert (rc == EXIT_OK) == doc["passed"] == all(r["passed"] for r in doc["reports"])
        assert rc in (EXIT_OK, EXIT_PROPERTY)

    @pytest.mark.xfail(strict=True, reason="threshold following fails on equal-interest ties at the desk point")
    def test_verify_desk_all_pass(self, tmp_path):
        out = tmp_path / "verify.json"
        assert main(["verify", "--config", str(DESK), "--out", str(out), "--trials", "50",
                     "--deviations", "100", "--influence", "50,60"]) == EXIT_OK

    def test_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = main(["sweep", "--config", str(TINY), "--out", str(out), "--param", "Mc",
                   "--from", "10", "--to", "15", "--steps", "2"])
        assert rc == EXIT_OK
        raw = out.read_bytes()
        assert b"\r\n" in raw
        rows = list(csv.reader(raw.decode().splitlines()))
        assert rows[0][:3] == ["parameter", "value", "agent"]
        assert rows[0][-3:] == ["config_hash", "seed", "version"]
        assert len(rows) == 1 + 2 * 3
        side = json.loads((tmp_path / "sweep.csv.manifest.json").read_text())
        assert side["manifest"]["command"] == "sweep"

    def test_thresholds(self, tmp_path):
        out = tmp_path / "thr.csv"
        rc = main(["thresholds", "--config", str(TINY), "--out", str(out), "--mc-grid", "1,15",
                   "--mp-grid", "1,6"])
        assert rc == EXIT_OK
        rows = list(csv.reader(out.read_text().splitlines()))
        assert len(rows) == 5
        assert json.loads((tmp_path / "thr.csv.manifest.json").read_text())["summary"]["monotone"]

    def test_oracle(self, tmp_path):
        out = tmp_path / "oracle.json"
        assert main(["oracle", "--config", str(TINY), "--out", str(out), "--grid-steps", "60"]) == EXIT_OK
        assert json.loads(out.read_text())["within_bound"]

    def test_oracle_refuses_desk(self, tmp_path):
        assert main(["oracle", "--config", str(DESK), "--out", str(tmp_path / "o.json")]) == EXIT_CONFIG

    def test_derivatives(self, tmp_path):
        out = tmp_path / "d.json"
        assert main(["derivatives", "--config", str(DESK), "--out", str(out), "--samples", "20"]) == EXIT_OK
        assert json.loads(out.read_text())["report"]["passed"]
