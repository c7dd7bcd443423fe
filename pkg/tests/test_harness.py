import json

import numpy as np
import pytest
import yaml

from tfasim.association import UNSERVED, ActivationVector, feasible
from tfasim.channel import channel_checksum, sample_slot_channels
from tfasim.cli import main
from tfasim.ga import GaConfig
from tfasim.harness import (
    ALL_SCHEMES,
    LB_FI,
    MAXSINR_DROP,
    TFA,
    ExperimentResult,
    Scenario,
    csv_files,
    dump_results,
    emit_results,
    load_results,
    power_sweep,
    run_experiment,
    sample_deployment,
)
from tfasim.rate import SlotContext


def tiny(**kw):
    base = dict(
        num_ues=4,
        bs_positions=[[100.0, 150.0], [200.0, 150.0]],
        bs_array=(2, 4),
        num_slots=3,
        master_seed=4,
        ga=GaConfig(population_size=12, max_generations=20, stall_generations=5),
    )
    base.update(kw)
    return Scenario(**base)


@pytest.fixture(scope="module")
def result():
    return run_experiment(tiny())


def test_paired_channels(result):
    digests = {s.channel_digest for s in result.schemes.values()}
    assert len(digests) == 1
    sc = result.scenario
    dep = sample_deployment(sc)
    H = sample_slot_channels(1, dep.cache, sc.cluster_cfg, *sc.geometries())
    assert result.metadata["channel_checksums"][1] == channel_checksum(H)


def test_checksums_shared_across_powers():
    a, b = power_sweep(tiny(num_slots=2), [MAXSINR_DROP], [0.0, 30.0])
    assert a.metadata["channel_checksums"] == b.metadata["channel_checksums"]


def test_aggregates_reproduce_from_records(result):
    for s in result.schemes.values():
        assert abs(s.mean_sum_rate - np.mean(s.slot_utilities)) <= 1e-12
        for t, u in enumerate(s.slot_utilities):
            assert abs(u - sum(s.user_rates[t])) <= 1e-12 * max(1.0, u)


def test_slot_records_match_rate_module(result):
    sc = result.scenario
    dep = sample_deployment(sc)
    H = sample_slot_channels(2, dep.cache, sc.cluster_cfg, *sc.geometries())
    ctx = SlotContext(H, sc.powers_w, sc.noise.power_w)
    for s in result.schemes.values():
        streams = [st if a != UNSERVED else sc.streams_per_ue for st, a in zip(s.streams[2], s.activations[2])]
        u = ctx.throughputs(ActivationVector(s.activations[2]), streams).utility
        assert u == pytest.approx(s.slot_utilities[2], rel=1e-12)


def test_capacity_audit(result):
    for s in result.schemes.values():
        for act, streams in zip(s.activations, s.streams):
            assert feasible(act, streams, result.scenario.capacities)


def test_tfa_dominates_lb_fi_per_slot(result):
    tfa, lb = result.schemes[TFA], result.schemes[LB_FI]
    assert all(a >= b - 1e-9 for a, b in zip(tfa.slot_utilities, lb.slot_utilities))


def test_single_slot_means():
    r = run_experiment(tiny(num_slots=1), [TFA])
    s = r.schemes[TFA]
    assert s.mean_sum_rate == s.slot_utilities[0]
    assert np.array_equal(s.mean_user_rates, s.user_rates[0])
    assert s.ci95 == 0.0


def test_single_point_sweep_equals_run():
    sc = tiny(num_slots=2)
    (a,) = power_sweep(sc, [MAXSINR_DROP], [sc.tx_power_dbm])
    b = run_experiment(sc, [MAXSINR_DROP])
    assert a.to_dict() == b.to_dict()


def test_unknown_scheme_rejected():
    with pytest.raises(ValueError, match="unknown schemes"):
        run_experiment(tiny(), ["BOGUS"])


def test_errors_carry_context():
    sc = tiny(streams_per_bs=1, streams_per_ue=1, num_ues=4)
    with pytest.raises(ValueError):
        run_experiment(sc, [LB_FI])
    with pytest.raises(RuntimeError, match="scheme TFA, slot 0"):
        run_experiment(sc, [TFA])


def test_empty_scheme_set_gives_header_only():
    r = run_experiment(tiny(num_slots=1), [])
    assert csv_files([r])["sweep_summary.csv"] == "power_dbm,scheme,mean_sum_rate_bpshz,mean_sum_rate_bps,ci95\n"


def test_rerun_is_byte_identical(tmp_path):
    sc = tiny(num_slots=2)
    emit_results(run_experiment(sc), tmp_path / "a")
    emit_results(run_experiment(sc), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(str(f).endswith(".csv") for f in files)
    for f in files:
        if f.name != "timing.txt":
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_json_reload_reproduces_csv(tmp_path, result):
    emit_results(result, tmp_path)
    again = load_results(tmp_path / "result.json")
    for rel, text in csv_files(again).items():
        assert (tmp_path / rel).read_text() == text


def test_dump_load_round_trip(result, tmp_path):
    path = tmp_path / "r.json"
    path.write_text(dump_results([result]))
    (back,) = load_results(path)
    assert isinstance(back, ExperimentResult)
    assert back.to_dict() == json.loads(json.dumps(result.to_dict()))


def test_scenario_round_trip():
    sc = tiny(ue_placement="congested", congested_count=2)
    assert Scenario.from_dict(sc.to_dict()) == sc
    assert Scenario.from_dict(yaml.safe_load(yaml.safe_dump(sc.to_dict()))) == sc


def test_scenario_accepts_yaml_exponent_strings():
    sc = Scenario.from_dict(yaml.safe_load("carrier_freq: 73.0e9\nnum_slots: 5\n"))
    assert sc.carrier_freq == 73e9


@pytest.mark.parametrize(
    "kw",
    [
        dict(num_ues=0),
        dict(ue_placement="ring"),
        dict(ue_placement="explicit"),
        dict(bs_positions=[[400.0, 10.0]]),
        dict(streams_per_ue=5),
        dict(num_slots=0),
    ],
)
def test_scenario_validation(kw):
    with pytest.raises(ValueError):
        tiny(**kw)


def test_unknown_config_key():
    with pytest.raises(ValueError, match="unknown scenario keys"):
        Scenario.from_dict({"num_uees": 3})


def test_congested_placement():
    sc = Scenario(ue_placement="congested", num_slots=1)
    dep = sample_deployment(sc)
    d = np.linalg.norm(dep.ue_positions[:5, :2] - np.array(sc.bs_positions[0]), axis=1)
    assert np.all(d <= sc.congested_radius + 1e-9)


def test_explicit_placement():
    pos = [[10.0, 10.0], [20.0, 30.0]]
    dep = sample_deployment(tiny(num_ues=2, ue_placement="explicit", ue_positions=pos))
    assert np.allclose(dep.ue_positions, [[10, 10, 1.5], [20, 30, 1.5]])


# -- CLI ---------------------------------------------------------------------------------


def test_cli_run_and_sweep(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(tiny(num_slots=1).to_dict()))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "association_coeffs_TFA.csv").exists()
    rc = main(["sweep", "--config", str(cfg), "--powers", "0,10", "--schemes", "TFA", "--out", str(tmp_path / "sw")])
    assert rc == 0
    rows = (tmp_path / "sw" / "sweep_summary.csv").read_text().splitlines()
    assert len(rows) == 3
    assert (tmp_path / "sw" / "power_10.0dBm" / "slot_utilities_TFA.csv").exists()


def test_cli_flags_override_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(tiny(num_slots=1).to_dict()))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--num-slots", "2", "--schemes", "LB_FI", "--out", str(out)]) == 0
    assert yaml.safe_load((out / "config.resolved").read_text())["num_slots"] == 2


def test_cli_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bogus_key: 1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) != 0
    assert "unknown scenario keys" in capsys.readouterr().err


def test_cli_oracle_check(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(tiny(num_slots=1).to_dict()))
    out = tmp_path / "oc.csv"
    assert main(["oracle-check", "--config", str(cfg), "--trials", "2", "--out", str(out)]) == 0
    assert "exact optimum in" in capsys.readouterr().out
    assert len(out.read_text().splitlines()) == 3


def test_cli_channel_stats(capsys):
    assert main(["channel-stats", "--draws", "200"]) == 0
    assert "p_LoS" in capsys.readouterr().out


def test_all_schemes_constant():
    assert ALL_SCHEMES == ("TFA", "MAXSINR_DROP", "MAXSINR_SHARE_DROP", "LB_FI")
