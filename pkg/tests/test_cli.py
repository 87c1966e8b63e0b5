from __future__ import annotations

import json
import subprocess
import sys

import pytest

from blobtr.cli import (CHECKS, SCHEMA, compare_golden, compute_system, deserialize_system, emit_golden, main,
                        parse_job, run_job, serialize_system)
from blobtr.errors import CapOutOfRange, ConfigError, GoldenMismatch, ParseError, UnknownCheckName
from blobtr.rational import to_q

AIRY = {"curve": {"preset": "airy"}, "blobs": {"kind": "trivial"},
        "caps": {"hbar_order": 2, "n_max": 3, "jet_order": 5, "t_degree": 4, "base_point": "1"},
        "checks": ["oracle-crosscheck", "determinantal", "hirota"]}
NEGATIVE = {"B": [[1, 1, "1"], [2, 2, "3"], [1, 2, 2], [2, 1, 2]],
            "caps": {"hbar_order": 0, "n_max": 2, "base_point": "0"}, "checks": ["determinantal"]}


def job(obj, **changes):
    d = json.loads(json.dumps(obj))
    d.update(changes)
    return parse_job(json.dumps(d))


def write(tmp_path, obj, name="job.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def test_minimal_airy_job():
    spec = parse_job('{"curve": {"preset": "airy"}}')
    assert spec.curve.locations == (0,)
    assert spec.checks == [] and spec.base_point == 1


def test_rationals_parse_exactly():
    spec = parse_job('{"curve": {"preset": "airy"}, "caps": {"base_point": "3/2"}}')
    assert spec.base_point == to_q("3/2")


def test_parse_errors_are_located():
    with pytest.raises(ParseError) as err:
        parse_job('{"curve":\n  {"preset": }}')
    assert (err.value.line, err.value.column) == (2, 14)


def test_unknown_check_name():
    with pytest.raises(UnknownCheckName):
        parse_job('{"checks": ["determinental"]}')


@pytest.mark.parametrize("caps", [{"hbar_order": 99}, {"n_max": 0}, {"jet_order": "6"}])
def test_caps_are_validated(caps):
    with pytest.raises(CapOutOfRange):
        parse_job(json.dumps({"caps": caps}))


def test_unknown_cap_or_blob_kind():
    with pytest.raises(ConfigError):
        parse_job('{"caps": {"hbar": 2}}')
    with pytest.raises(ConfigError):
        parse_job('{"blobs": {"kind": "random"}}')


def test_check_names_are_complete():
    assert len(CHECKS) == 10


def test_headline_run_passes():
    rep = run_job(job(AIRY))
    assert rep["schema"] == SCHEMA and rep["status"] == "pass"
    assert [c["name"] for c in rep["checks"]] == AIRY["checks"]
    assert all(c["status"] == "pass" for c in rep["checks"])


def test_negative_control_fails_with_location():
    rep = run_job(job(NEGATIVE))
    assert rep["status"] == "fail"
    fail = rep["checks"][0]["first_failure"]
    assert fail["n"] == 2 and fail["monomial"]


def test_empty_check_list():
    rep = run_job(job(AIRY, checks=[]))
    assert rep["status"] == "pass" and rep["checks"] == []


def test_engine_errors_become_failed_checks():
    # base point 0 is a pole of every Airy differential
    rep = run_job(job(AIRY, caps={"hbar_order": 1, "base_point": "0"}, checks=["determinantal"]))
    assert rep["status"] == "fail" and rep["checks"][0]["error"] == "IrregularBasepoint"


def test_tensor_blobs_and_theta_blobs():
    tens = {"curve": {"preset": "airy"}, "caps": {"hbar_order": 2, "n_max": 2},
            "blobs": {"kind": "tensors", "entries": [{"indices": ["h1"], "hbar_degree": 1, "value": "1/2"}]},
            "checks": ["b-independence", "recursion-crosscheck"]}
    assert run_job(parse_job(json.dumps(tens)))["status"] == "pass"
    theta = {"curve": {"preset": "airy"}, "caps": {"hbar_order": 1, "n_max": 2, "t_degree": 3, "jet_order": 4},
             "blobs": {"kind": "theta", "variables": 2, "exp_linear": ["1", "-1/2"],
                       "eta": [{"h1": "1"}, {"h2": "1"}]},
             "checks": ["determinantal", "hirota"]}
    assert run_job(parse_job(json.dumps(theta)))["status"] == "pass"


def test_golden_round_trip(tmp_path):
    spec = job(AIRY)
    system = compute_system(spec)
    assert deserialize_system(serialize_system(system)) == system
    path = str(tmp_path / "g.json")
    emit_golden(spec, path)
    assert compare_golden(spec, path)["status"] == "pass"
    data = json.loads(open(path).read())
    for ent in data["entries"]:
        if ent["indices"] == ["p0^2", "p0^2", "p0^2"]:
            ent["value"] = "-1/3"
    open(path, "w").write(json.dumps(data))
    with pytest.raises(GoldenMismatch) as err:
        compare_golden(spec, path)
    assert "-1/3" in str(err.value)


def test_exit_codes(tmp_path, capsys):
    assert main(["verify", "--job", write(tmp_path, AIRY)]) == 0
    assert main(["verify", "--job", write(tmp_path, NEGATIVE, "neg.json")]) == 1
    assert main(["verify", "--job", write(tmp_path, {"checks": ["nope"]}, "bad.json")]) == 2
    assert main(["verify", "--job", str(tmp_path / "missing.json")]) == 2
    golden = str(tmp_path / "g.json")
    assert main(["golden", "write", "--job", write(tmp_path, AIRY), golden]) == 0
    assert main(["golden", "check", "--job", write(tmp_path, AIRY), golden]) == 0
    capsys.readouterr()


def test_reports_are_deterministic_across_threads(tmp_path):
    path = write(tmp_path, dict(AIRY, checks=["determinantal", "hirota", "symmetry", "nkp"]))
    outs = []
    for threads in ("1", "2", "1"):
        rep = tmp_path / f"r{threads}{len(outs)}.json"
        assert main(["verify", "--job", path, "--threads", threads, "--report", str(rep)]) == 0
        outs.append(rep.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "blobtr", "compute", "--job", write(tmp_path, AIRY)],
                         capture_output=True, text=True, check=True)
    assert json.loads(res.stdout)["schema"] == "blobtr.system/1"
