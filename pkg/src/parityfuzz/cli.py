"""Command-line client.

Talks to a running service when ``--server`` (or ``$PARITYFUZZ_SERVER``)
is given, otherwise drives the same app in-process. Exit codes: 0 clean,
1 findings present (or a replay that did not reproduce), 2 configuration
or infrastructure error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Optional

import httpx

EXIT_CLEAN, EXIT_FINDINGS, EXIT_ERROR = 0, 1, 2
ENV_SERVER = "PARITYFUZZ_SERVER"


class ClientError(RuntimeError):
    pass


def _client(server: Optional[str]):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette warns about its own httpx transport on import
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _call(client, method: str, path: str, **kw) -> dict:
    try:
        r = client.request(method, path, **kw)
    except httpx.HTTPError as e:
        raise ClientError(f"cannot reach server: {e}") from e
    try:
        body = r.json()
    except ValueError:
        body = {"error": "HTTP", "detail": r.text}
    if r.status_code >= 400:
        if isinstance(body, dict) and "error" in body:
            raise ClientError(f"{body['error']}: {body.get('detail', '')}")
        raise ClientError(f"HTTP {r.status_code}: {body}")
    return body


def _abs(p: Optional[str]) -> Optional[str]:
    return str(Path(p).resolve()) if p else p


def cmd_gen_rules(client, args) -> int:
    if args.llm_config:
        llm = json.loads(Path(args.llm_config).read_text(encoding="utf-8"))
    elif args.fixtures:
        llm = {"kind": "mock", "fixtures": _abs(args.fixtures)}
    else:
        llm = None
    body = {
        "sources": [_abs(s) for s in args.source],
        "out": _abs(args.out),
        "explicit_only": args.explicit_only,
        "llm": llm,
        "context_lines": args.context_lines,
    }
    res = _call(client, "POST", "/rules/generate", json=body)
    print(f"wrote {res['catalog']}: {res['features']} features, {res['conditions']} conditions, {res['rules']} rules")
    for w in res.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_CLEAN


def cmd_fuzz(client, args) -> int:
    body = {
        "config_path": _abs(args.config),
        "iterations": args.iterations,
        "seed": args.seed,
        "state_dir": _abs(args.state),
        "policy_checkpoint": _abs(args.policy_checkpoint),
    }
    res = _call(client, "POST", "/campaigns", json=body)
    print(
        f"{res['iterations']} iterations, {res['variants']} variants, "
        f"{res['findings']} unique findings ({res['filtered']} filtered) in {res['state_dir']}"
    )
    return EXIT_FINDINGS if res["findings"] else EXIT_CLEAN


def cmd_replay(client, args) -> int:
    body = {"finding_id": args.finding_id, "state_dir": _abs(args.state), "registry": _abs(args.registry)}
    res = _call(client, "POST", "/replay", json=body)
    verdict = "reproduced" if res["reproduced"] else "FLAKY"
    print(f"{res['finding_id']}: expected {res['expected']}, observed {res['observed'] or 'none'}: {verdict}")
    return EXIT_CLEAN if res["reproduced"] else EXIT_FINDINGS


def cmd_report(client, args) -> int:
    res = _call(client, "GET", "/report", params={"state": _abs(args.state), "format": args.format})
    sys.stdout.write(res["document"])
    return EXIT_FINDINGS if res["findings"] else EXIT_CLEAN


def cmd_serve(_client, args) -> int:
    import uvicorn

    uvicorn.run("parityfuzz.service.app:app", host=args.host, port=args.port, log_level=args.log_level)
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parityfuzz", description="Differential fuzzing of Solidity compilers.")
    p.add_argument("--server", default=os.environ.get(ENV_SERVER), help="service URL; in-process when omitted")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-rules", help="build a mutation-rule catalog from compiler sources")
    g.add_argument("--source", action="append", required=True, help="compiler/executor source root (repeatable)")
    g.add_argument("--out", required=True)
    g.add_argument("--explicit-only", action="store_true", help="skip model-assisted implicit boundary scanning")
    g.add_argument("--fixtures", help="mock model fixture directory")
    g.add_argument("--llm-config", help="JSON adapter config file")
    g.add_argument("--context-lines", type=int, default=15)
    g.set_defaults(func=cmd_gen_rules)

    f = sub.add_parser("fuzz", help="run a campaign")
    f.add_argument("--config", required=True)
    f.add_argument("--iterations", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--state", help="state directory (overrides the config)")
    f.add_argument("--policy-checkpoint", help="resume bandit weights from this checkpoint")
    f.set_defaults(func=cmd_fuzz)

    r = sub.add_parser("replay", help="re-run a stored finding")
    r.add_argument("finding_id")
    r.add_argument("--state", default="parityfuzz-state")
    r.add_argument("--registry", help="toolchain registry (defaults to the one the campaign used)")
    r.set_defaults(func=cmd_replay)

    rp = sub.add_parser("report", help="print findings")
    rp.add_argument("--state", required=True)
    rp.add_argument("--format", choices=("json", "md"), default="md")
    rp.set_defaults(func=cmd_report)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--log-level", default="info")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    client = None if args.command == "serve" else _client(args.server)
    try:
        return args.func(client, args)
    except ClientError as e:
        print(f"parityfuzz: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as e:
        print(f"parityfuzz: {e}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        if client is not None:
            client.close()


if __name__ == "__main__":
    sys.exit(main())
