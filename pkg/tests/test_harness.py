import json

import numpy as np
import pytest

from memsnoop import cli, harness
from memsnoop.dram import AddressMap
from memsnoop.harness import ExperimentSpec, MetricsRow, StageError, make_spec, run_experiment


def test_report_of_no_rows_is_header_only():
    text, table = harness.report([])
    assert table.splitlines() == [",".join(MetricsRow.columns())]
    assert text.splitlines()[0].split() == MetricsRow.columns()


def test_spec_json_round_trip(tmp_path):
    spec = make_spec("memcached-sweep", "SQ+PR", ways=128, seed=3)
    assert ExperimentSpec.from_dict(json.loads(spec.to_json())) == spec
    p = tmp_path / "s.json"
    p.write_text(spec.to_json())
    assert ExperimentSpec.load(p) == spec


def test_spec_from_profile_key():
    d = {"profile": "hunspell", "setting": "SQ", "ways": 16}
    assert ExperimentSpec.from_dict(d) == make_spec("hunspell", "SQ", ways=16)


def test_unknown_setting_rejected():
    with pytest.raises(ValueError):
        make_spec("hunspell", "BOGUS")


def test_reruns_byte_identical(tmp_path):
    a = run_experiment(make_spec("memcached", "SQ", output=str(tmp_path / "a")))
    b = run_experiment(make_spec("memcached", "SQ", output=str(tmp_path / "b")))
    assert harness.results_json(a) == harness.results_json(b)
    for name in ("results.json", "commands.log", "mapping.log", "metrics.csv", "report.txt"):
        fa = (tmp_path / "a" / a.spec.label / name).read_bytes()
        fb = (tmp_path / "b" / b.spec.label / name).read_bytes()
        assert fa == fb, name


def test_one_way_cache_is_near_lossless():
    r = run_experiment(make_spec("hunspell", "None", ways=1, prefetch="off"))
    assert r.row.recovery >= 0.99


def test_settings_ordered():
    rows = [run_experiment(make_spec("memcached-sweep", s, ways=64)).row for s in ("None", "SQ", "SQ+PR")]
    rec = [r.recovery for r in rows]
    assert rec[0] <= rec[1] <= rec[2]
    norm = harness.normalize(rows)
    assert norm[0].normalized_time == 1.0
    assert all(r.normalized_time >= 1.0 for r in norm[1:])


def test_stage_error_names_stage(tmp_path):
    with pytest.raises(StageError) as e:
        run_experiment(make_spec("hunspell", "None", document=str(tmp_path / "missing.txt")))
    assert e.value.stage == "victim"
    with pytest.raises(StageError) as e:
        run_experiment(make_spec("memcached", "None", address_map=str(tmp_path / "nomap.txt")))
    assert e.value.stage == "dram"


def test_cli_infer_map(tmp_path, capsys):
    amap = AddressMap.default()
    rng = np.random.default_rng(0)
    with open(tmp_path / "probes.csv", "w") as fh:
        fh.write("# pa,rank,bg,bank,row,col\n")
        for pa in (rng.integers(0, 1 << 27, 200) << 6).tolist():
            fh.write(f"{pa:#x}," + ",".join(map(str, amap.to_dram(pa))) + "\n")
    assert cli.main(["infer-map", str(tmp_path / "probes.csv"), "-o", str(tmp_path / "map.txt")]) == 0
    assert AddressMap.load(tmp_path / "map.txt") == amap


def test_cli_run_oracle_decode(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--profile", "memcached", "--setting", "SQ", "-o", str(out)]) == 0
    assert "kv-queries-SQ-W72" in capsys.readouterr().out
    run_dir = out / "kv-queries-SQ-W72"
    saved = json.loads((run_dir / "results.json").read_text())
    assert cli.main(["oracle", "--profile", "memcached", "--file", str(tmp_path / "orc.txt")]) == 0
    dec = tmp_path / "dec"
    assert cli.main(["decode", str(run_dir / "commands.log"), "--mapping", str(run_dir / "mapping.log"),
                     "--oracle", str(tmp_path / "orc.txt"), "-o", str(dec)]) == 0
    head = (dec / "trace.csv").read_text().splitlines()
    assert head[0] == "cycle,RW,va" and len(head) > 1000
    body = json.loads((dec / "results.json").read_text())
    assert len(body["tokens"]) > 0.5 * saved["metrics"]["occurrences"]


def test_cli_spec_file_and_bad_input(tmp_path, capsys):
    spec = make_spec("memcached-sweep", "SQ", ways=256)
    (tmp_path / "s.json").write_text(spec.to_json())
    assert cli.main(["run", str(tmp_path / "s.json")]) == 0
    assert "W256" in capsys.readouterr().out
    assert cli.main(["decode", str(tmp_path / "nothing.log"), "--mapping", str(tmp_path / "m")]) == 2


@pytest.mark.parametrize("profile,setting", [("hunspell", "SQ"), ("hunspell-sweep", "SQ+PR")])
def test_anchor_lands_on_first_lookup(profile, setting):
    r = run_experiment(make_spec(profile, setting, ways=64))
    m = r.machine
    first = np.flatnonzero((m.label >= 0) & ~m.is_write & r.run.critical.mask(m.truth_va))[0]
    src = r.trace.source[~r.trace.is_write].tolist()
    assert first in src and src.index(first) <= 2
