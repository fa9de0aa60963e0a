import csv
import hashlib
import json
import logging
import subprocess
import sys

import pytest

from ddos_policer.cli import EXIT_INVALID, EXIT_OK, LOG_ENV, main
from ddos_policer.engine import ConfigError, ScenarioConfig
from ddos_policer.presets import (
    AGGRESSIVENESS_SWEEP,
    PRESETS,
    SHREW_OFF_RATIOS,
    SHREW_SCALES,
    SWEEP_COLUMNS,
    UnknownPreset,
    apply_overrides,
    expand,
    parse_override,
    run_points,
)
from ddos_policer.traffic import PopulationSpec, SenderKind

LINK_50 = 50 * 1500 * 8 / 0.01


def scenario(tmp_path, **kw):
    pop = PopulationSpec(n_legit=2, n_attack=3, aggressiveness=2.0, legit_demand=0.6, rtt=2)
    d = ScenarioConfig(name="cli", duration=300, tick_length=0.01, link_bps=LINK_50, population=pop, seed=3).to_dict()
    d["activation"].update(activate_at=100, auto=False)
    d["policer"]["period"] = 1.0
    d.update(kw)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(d))
    return path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_run_writes_series_and_summary(tmp_path, capsys):
    cfg = scenario(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = (out / "cli.csv").read_text().splitlines()
    assert len(rows) == 301
    summary = json.loads((out / "cli.summary.json").read_text())
    assert summary["bounds"]["lemma1_ok"] in (True, False)
    assert "theorem1_ok=" in capsys.readouterr().out


def test_run_is_reproducible(tmp_path):
    cfg = scenario(tmp_path)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "9"])
    for name in ("cli.csv", "cli.summary.json"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)
    assert digest(tmp_path / "a" / "cli.csv") != digest(tmp_path / "c" / "cli.csv")
    assert json.loads((tmp_path / "c" / "cli.summary.json").read_text())["seed"] == 9


def test_bad_weights_exit_2_naming_queuespec(tmp_path, capsys):
    cfg = scenario(tmp_path)
    d = json.loads(cfg.read_text())
    d["scheduler"]["queues"] = [{"name": "tcp", "weight": 0.9}, {"name": "udp", "weight": 0.3}]
    cfg.write_text(json.dumps(d))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "QueueSpec" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "not found" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    assert main([]) == EXIT_INVALID
    assert main(["run", "--out", "x"]) == EXIT_INVALID
    assert main(["bench", "--sizes", "1e6,abc"]) == EXIT_INVALID
    assert main(["bench", "--sizes", "0.5"]) == EXIT_INVALID


def test_unknown_preset_exit_2(tmp_path, capsys):
    assert main(["preset", "fig9", "--out", str(tmp_path)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "fig9" in err and "fig6a" in err


def test_bad_override_exit_2(tmp_path, capsys):
    assert main(["preset", "baseline", "--out", str(tmp_path), "--set", "population.n_legit=-1"]) == EXIT_INVALID
    assert main(["preset", "baseline", "--out", str(tmp_path), "--set", "nonsense"]) == EXIT_INVALID
    assert main(["preset", "baseline", "--out", str(tmp_path), "--set", "seed.x=1"]) == EXIT_INVALID


def test_preset_with_overrides(tmp_path, capsys):
    code = main(["preset", "baseline", "--out", str(tmp_path), "--set", "duration=120",
                 "--set", "population.n_legit=2"])
    assert code == EXIT_OK
    assert len((tmp_path / "baseline.csv").read_text().splitlines()) == 121
    summary = json.loads((tmp_path / "baseline.summary.json").read_text())
    assert summary["config"]["population"]["n_legit"] == 2
    assert (tmp_path / "baseline.sweep.csv").is_file()


def test_decision_log_option(tmp_path):
    cfg = scenario(tmp_path)
    log_path = tmp_path / "decisions.csv"
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--decisions", str(log_path)]) == 0
    rows = list(csv.reader(log_path.open()))
    assert rows[0] == ["t", "flow", "old_W", "new_W", "packetLoss", "halved"]
    assert len(rows) > 1


def test_log_level_from_environment(tmp_path):
    cfg = scenario(tmp_path, duration=50)
    env_run = [sys.executable, "-m", "ddos_policer", "preset", "baseline", "--out", str(tmp_path),
               "--set", "duration=30"]
    quiet = subprocess.run(env_run, capture_output=True, text=True, env={"PATH": "", LOG_ENV: "WARNING"})
    loud = subprocess.run(env_run, capture_output=True, text=True, env={"PATH": "", LOG_ENV: "info"})
    assert quiet.returncode == loud.returncode == 0
    assert "INFO" not in quiet.stderr
    assert "INFO ddos_policer" in loud.stderr and "running baseline" in loud.stderr
    assert cfg.is_file()
    logging.getLogger("ddos_policer").setLevel(logging.NOTSET)


def test_parse_override_values():
    assert parse_override("population.n_legit=5") == (["population", "n_legit"], 5)
    assert parse_override("name=run 1") == (["name"], "run 1")
    assert parse_override("policer.period=2.5")[1] == 2.5
    with pytest.raises(ConfigError):
        parse_override("=3")


def test_unknown_preset_raises():
    with pytest.raises(UnknownPreset):
        expand("nope")


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates_and_roundtrips(name):
    for p in expand(name):
        cfg = p.config.validate()
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
        assert apply_overrides(cfg, []) is cfg


def test_fig5c_layout():
    (p,) = expand("fig5c")
    q = {s.name: s for s in p.config.queues}
    assert {n: s.weight for n, s in q.items()} == {"premium": 0.2, "tcp": 0.7, "udp": 0.1}
    assert q["premium"].dedicated
    assert p.config.population.premium_demand == 0.2


def test_fig5a_b_scenarios():
    (a,) = expand("fig5a")
    (b,) = expand("fig5b")
    assert {s.name: s.weight for s in a.config.queues} == {"tcp": 0.9, "udp": 0.1}
    for p in (a, b):
        pop = p.config.population
        assert (pop.n_attack, pop.aggressiveness, pop.legit_demand) == (6, 6.0, 0.7)
        assert p.config.link_bps == 1e9
    assert a.config.population.attack_service == "ntp" and b.config.population.attack_service is None


def test_fig6_grids():
    a = expand("fig6a")
    assert [(p.swept["off_ratio"], p.swept["n_attack"]) for p in a] == [
        (r, k * 100) for r in SHREW_OFF_RATIOS for k in SHREW_SCALES]
    assert all(p.config.population.n_legit == 100 for p in a)
    assert all(p.config.population.attack_kind is SenderKind.ON_OFF for p in a)
    b = expand("fig6b")
    assert [p.swept["aggressiveness"] for p in b] == list(AGGRESSIVENESS_SWEEP)
    assert all(p.config.population.n_attack == 500 for p in b)
    c = expand("fig6c")
    assert [p.config.population.attack_kind for p in c] == [SenderKind.COMPLIANT_AIMD, SenderKind.ORACLE]


def test_sweep_csv_columns(tmp_path):
    points = expand("baseline", ["duration=60"])
    results = run_points(points, tmp_path, "baseline")
    with open(tmp_path / "baseline.sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert rows[0]["point"] == "baseline" and len(rows) == len(results) == 1


def test_summary_config_reruns_identically(tmp_path):
    assert main(["preset", "baseline", "--out", str(tmp_path / "p"), "--set", "duration=150"]) == EXIT_OK
    cfg = json.loads((tmp_path / "p" / "baseline.summary.json").read_text())["config"]
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "r")]) == EXIT_OK
    assert digest(tmp_path / "p" / "baseline.csv") == digest(tmp_path / "r" / "baseline.csv")
