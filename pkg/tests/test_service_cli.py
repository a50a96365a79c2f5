import json
import warnings

import pytest

from helpers import MOCKENV, copy_mockenv
from parityfuzz import __version__
from parityfuzz.campaign import load_findings
from parityfuzz.cli import EXIT_CLEAN, EXIT_ERROR, EXIT_FINDINGS, main
from parityfuzz.rulegen import load_catalog
from parityfuzz.service.app import app

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient


@pytest.fixture(scope="module")
def client():
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


@pytest.fixture(scope="module")
def campaign_state(tmp_path_factory):
    env = copy_mockenv(tmp_path_factory.mktemp("svc"))
    assert main(["fuzz", "--config", str(env / "campaign.json"), "--iterations", "200"]) == EXIT_FINDINGS
    return env, env / "state"


# ---------------------------------------------------------------- service


def test_health(client):
    assert client.get("/health").json() == {"status": "ok", "version": __version__}


def test_error_clarity_endpoint(client):
    clear = client.post("/classify/error-clarity", json={"stderr": "ParserError: Expected ';'\n --> a.sol:2:11:"})
    crash = client.post("/classify/error-clarity", json={"stderr": "thread 'main' panicked at src/x.rs:1:1"})
    assert clear.json() == {"clear_error": True} and crash.json() == {"clear_error": False}


def test_decode_endpoint(client):
    word = "00" * 31 + "02"
    r = client.post("/decode", json={"encoding": "abi", "types": ["uint256"], "data_hex": "0x" + word})
    assert r.status_code == 200
    assert r.json()["value"] == {"kind": "Tuple", "items": [{"kind": "UInt", "value": "2"}]}
    b = client.post("/decode", json={"encoding": "borsh", "types": ["uint8"], "data_hex": "02"})
    assert b.json()["value"]["items"][0]["value"] == "2"


def test_decode_rejects_truncated(client):
    r = client.post("/decode", json={"encoding": "abi", "types": ["uint256"], "data_hex": "00ff"})
    assert r.status_code == 422 and "error" in r.json()


def test_decode_validates_request(client):
    assert client.post("/decode", json={"encoding": "rlp", "types": [], "data_hex": ""}).status_code == 422


def test_campaign_endpoint_with_inline_config(client, tmp_path):
    env = copy_mockenv(tmp_path)
    cfg = json.loads((env / "campaign.json").read_text())
    cfg["base_dir"] = str(env)
    r = client.post("/campaigns", json={"config": cfg, "iterations": 30, "state_dir": str(tmp_path / "st")})
    assert r.status_code == 200
    body = r.json()
    assert body["iterations"] == 30 and body["state_dir"] == str(tmp_path / "st")
    summary = client.get("/campaigns/summary", params={"state": str(tmp_path / "st")}).json()
    assert summary == body


def test_campaign_endpoint_bad_config(client, tmp_path):
    r = client.post("/campaigns", json={"config": {"seed": 1, "corpus_dir": str(tmp_path / "none"), "catalog_path": "x"}})
    assert r.status_code == 400 and r.json()["error"] == "ConfigError"
    assert client.post("/campaigns", json={}).status_code == 400
    assert client.post("/campaigns", json={"config_path": "x", "iterations": -1}).status_code == 422


def test_campaign_missing_fixture_is_infra_error(client, tmp_path):
    env = copy_mockenv(tmp_path)
    for p in (env / "fixtures" / "mutate").iterdir():
        p.unlink()
    r = client.post("/campaigns", json={"config_path": str(env / "campaign.json"), "iterations": 20})
    assert r.status_code == 502 and r.json()["error"] == "FixtureMissing"


def test_report_and_replay_endpoints(client, campaign_state):
    _, state = campaign_state
    md = client.get("/report", params={"state": str(state)}).json()
    assert md["format"] == "md" and md["findings"] == 3
    js = client.get("/report", params={"state": str(state), "format": "json"}).json()
    assert len(js["document"].splitlines()) == 3
    assert client.get("/report", params={"state": str(state), "format": "xml"}).status_code == 422
    rec = load_findings(state)[0]
    r = client.post("/replay", json={"finding_id": rec.id, "state_dir": str(state)}).json()
    assert r["reproduced"] is True and r["flaky"] is False


def test_replay_unknown_finding_is_404(client, campaign_state):
    _, state = campaign_state
    r = client.post("/replay", json={"finding_id": "nope", "state_dir": str(state)})
    assert r.status_code == 404 and r.json()["error"] == "MissingArtifact"


def test_gen_rules_endpoint(client, tmp_path):
    body = {
        "sources": [str(MOCKENV / "compiler_src")],
        "out": str(tmp_path / "cat.json"),
        "explicit_only": True,
        "llm": {"kind": "mock", "fixtures": str(MOCKENV / "fixtures")},
    }
    r = client.post("/rules/generate", json=body).json()
    assert r["rules"] == len(load_catalog(tmp_path / "cat.json").rules) > 0


def test_gen_rules_requires_sources(client, tmp_path):
    assert client.post("/rules/generate", json={"sources": [], "out": str(tmp_path / "c.json")}).status_code == 422


# ---------------------------------------------------------------- CLI


def test_cli_fuzz_reports_findings(tmp_path, capsys):
    env = copy_mockenv(tmp_path)
    assert main(["fuzz", "--config", str(env / "campaign.json"), "--state", str(tmp_path / "s")]) == EXIT_FINDINGS
    out = capsys.readouterr().out
    assert "200 iterations" in out and "3 unique findings" in out


def test_cli_report(campaign_state, capsys):
    _, state = campaign_state
    assert main(["report", "--state", str(state)]) == EXIT_FINDINGS
    assert "# Inconsistency report" in capsys.readouterr().out
    assert main(["report", "--state", str(state), "--format", "json"]) == EXIT_FINDINGS
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_cli_replay(campaign_state, capsys):
    _, state = campaign_state
    rec = load_findings(state)[0]
    assert main(["replay", rec.id, "--state", str(state)]) == EXIT_CLEAN
    assert "reproduced" in capsys.readouterr().out


def test_cli_replay_flaky_exit(campaign_state, tmp_path, capsys):
    env, state = campaign_state
    rec = next(r for r in load_findings(state) if r.other.name == "revive")
    reg = json.loads((env / "registry.json").read_text())
    for t in reg["toolchains"]:
        t.get("mock", {})["rules"] = []
    (tmp_path / "tame.json").write_text(json.dumps(reg))
    assert main(["replay", rec.id, "--state", str(state), "--registry", str(tmp_path / "tame.json")]) == EXIT_FINDINGS
    assert "FLAKY" in capsys.readouterr().out


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["report", "--state", str(tmp_path)]) == EXIT_ERROR
    assert "MissingArtifact" in capsys.readouterr().err
    assert main(["fuzz", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR
    assert main(["replay", "x", "--state", str(tmp_path)]) == EXIT_ERROR


def test_cli_zero_iterations_is_clean(tmp_path, capsys):
    env = copy_mockenv(tmp_path)
    assert main(["fuzz", "--config", str(env / "campaign.json"), "--iterations", "0", "--state", str(tmp_path / "s")]) == EXIT_CLEAN
    assert (tmp_path / "s" / "meta.json").exists()


def test_cli_seed_override_changes_run(tmp_path):
    env = copy_mockenv(tmp_path)
    cfg = str(env / "campaign.json")
    main(["fuzz", "--config", cfg, "--iterations", "30", "--state", str(tmp_path / "a")])
    main(["fuzz", "--config", cfg, "--iterations", "30", "--state", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "events.jsonl").read_bytes() != (tmp_path / "b" / "events.jsonl").read_bytes()


def test_cli_gen_rules_matches_committed_catalog(tmp_path, capsys):
    out = tmp_path / "catalog.json"
    rc = main(["gen-rules", "--source", str(MOCKENV / "compiler_src"), "--fixtures", str(MOCKENV / "fixtures"), "--out", str(out)])
    assert rc == EXIT_CLEAN
    assert load_catalog(out) == load_catalog(MOCKENV / "catalog.json")
    assert "13 rules" in capsys.readouterr().out


def test_cli_unreachable_server(capsys):
    assert main(["--server", "http://127.0.0.1:9", "report", "--state", "x"]) == EXIT_ERROR
    assert "cannot reach server" in capsys.readouterr().err


def test_cli_requires_command():
    with pytest.raises(SystemExit):
        main([])
