import json
import os

from canalpi import cli

CHEAP = "rejected-gains"


def test_list_names_all_six(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    for name in ("homogeneous-branch1", "rejected-gains", "friction-slope-branch1",
                 "branch2-gains", "iss-sinusoid", "feedforward-tracking"):
        assert name in out
    assert len(cli.bundled_scenarios()) == 6


def test_describe_known_and_unknown(capsys):
    assert cli.main(["describe", "iss-sinusoid"]) == 0
    out = capsys.readouterr().out.lower()
    assert "inflow" in out and "time-varying" in out.replace("slowly varying", "time-varying")
    assert cli.main(["describe", "nope"]) == cli.EXIT_PARSE


def test_malformed_config_exits_parse(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "name": "bad", "channel": {"L": -5.0},
        "controller": {"k_p": 1.0, "k_I": 0.1, "h_c": 2.0},
    }))
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_PARSE


def test_not_json_exits_parse(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_PARSE


def test_all_bundles_pass(bundle_results):
    results, _ = bundle_results
    for name, res in results.items():
        assert res.exit_code == cli.EXIT_OK, (name, res.messages)
        assert all(a["passed"] for a in res.assertions), (name, res.assertions)


def test_bundle_artifacts_written(bundle_results):
    _, out = bundle_results
    d = out / "friction-slope-branch1"
    for fname in ("manifest.json", "steady.csv", "equilibrium.csv", "certificate.json",
                  "certificate_arrays.csv", "fields.csv", "trajectory.csv", "norms.csv"):
        assert (d / fname).exists(), fname
    manifest = json.loads((d / "manifest.json").read_text())
    # every numeric parameter affecting results is in the manifest
    assert manifest["channel"]["k"] == 0.1
    assert manifest["controller"]["k_p"] == 1.0
    assert manifest["grid_n"] == 401
    assert "sigma" in manifest["analysis"]
    assert "timestamp" in manifest
    ff = out / "feedforward-tracking"
    assert (ff / "target_trajectory.csv").exists()


def test_run_determinism_byte_identical(tmp_path):
    codes = []
    for sub in ("a", "b"):
        codes.append(cli.main(["run", CHEAP, "--out", str(tmp_path / sub)]))
    assert codes == [0, 0]
    fa = (tmp_path / "a" / CHEAP / "trajectory.csv").read_bytes()
    fb = (tmp_path / "b" / CHEAP / "trajectory.csv").read_bytes()
    assert fa == fb
    sa = (tmp_path / "a" / CHEAP / "steady.csv").read_bytes()
    sb = (tmp_path / "b" / CHEAP / "steady.csv").read_bytes()
    assert sa == sb


def test_overrides_flip_assertion(tmp_path):
    # rejected-gains expects an invalid certificate; making the gains valid
    # must trip the assertion -> exit 5
    code = cli.main(["run", CHEAP, "--out", str(tmp_path / "o"),
                     "--set", "controller.k_p=1.0"])
    assert code == cli.EXIT_ASSERT


def test_regime_failure_exits_3(tmp_path):
    code = cli.main(["run", CHEAP, "--out", str(tmp_path / "o"),
                     "--set", "channel.h_max=1.0"])
    assert code == cli.EXIT_REGIME


def test_nonpositive_inflow_exits_parse(tmp_path):
    code = cli.main(["run", CHEAP, "--out", str(tmp_path / "o"),
                     "--set", 'inflow={"variant": "sinusoid", "q": 2.0, "amplitude": 3.0, "omega": 1.0}'])
    assert code == cli.EXIT_PARSE


def test_certify_verb(tmp_path):
    assert cli.main(["certify", "homogeneous-branch1", "--out", str(tmp_path / "a")]) == 0
    # expected-valid certificate forced invalid -> exit 4
    code = cli.main(["certify", "homogeneous-branch1", "--out", str(tmp_path / "b"),
                     "--set", "controller.k_p=-2.0"])
    assert code == cli.EXIT_CERT


def test_parallel_running(tmp_path):
    spec = json.loads(open(os.path.join(cli._SCENARIO_DIR, f"{CHEAP}.json")).read())
    a = dict(spec, name="par-a", outputs="par-a")
    b = dict(spec, name="par-b", outputs="par-b")
    pa = tmp_path / "a.json"
    pb = tmp_path / "b.json"
    pa.write_text(json.dumps(a))
    pb.write_text(json.dumps(b))
    code = cli.main(["run", str(pa), str(pb), "--parallel", "--out", str(tmp_path / "o")])
    assert code == 0
    assert (tmp_path / "o" / "par-a" / "manifest.json").exists()
    assert (tmp_path / "o" / "par-b" / "manifest.json").exists()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CANALPI_OUTPUT_ROOT", str(tmp_path / "envroot"))
    assert cli.main(["run", CHEAP]) == 0
    assert (tmp_path / "envroot" / CHEAP / "manifest.json").exists()
