"""Compiler/executor adapters.

Real toolchains run as subprocesses driven by argv templates from a JSON
registry. Mock toolchains are in-process and scripted, so whole
campaigns can run without any compiler installed.
"""

from __future__ import annotations

import glob
import hashlib
import json
import logging
import os
import re
import shutil
import signal
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from . import codec, solidity
from .types import (
    CompileOutcome,
    CompileStatus,
    Entry,
    ExecOutcome,
    ExecStatus,
    InconsistencyClass,
    SeedProgram,
    ToolchainId,
    Tuple,
)

log = logging.getLogger(__name__)

ENV_REGISTRY = "PARITYFUZZ_TOOLCHAINS"
DEFAULT_COMPILE_TIMEOUT_MS = 2000
DEFAULT_EXEC_TIMEOUT_MS = 10000
KILL_GRACE_S = 0.5

ALL_CLASSES = frozenset(InconsistencyClass)
COMPILE_CLASSES = frozenset({InconsistencyClass.EMI, InconsistencyClass.CSI})


class AdapterError(RuntimeError):
    """Harness/infrastructure failure, distinct from a compile or run failure."""


class PreconditionError(RuntimeError):
    pass


class ScriptError(ValueError):
    pass


# --------------------------------------------------------------------------
# error clarity
# --------------------------------------------------------------------------

# "error: ...", "Error: ...", "error[E0425]: ...", and solc's "<Category>Error: ..."
_ERROR_LEAD = re.compile(r"^\s*(?:[A-Za-z]*)error(?:\[[^\]]*\])?(?:\s*:|\b)", re.IGNORECASE)
_LOCATION = re.compile(
    r"-->\s*\S+?:\d+(?::\d+)?"
    r"|[\w./\\\-]+\.\w+:\d+"
    r"|\bline\s+\d+",
    re.IGNORECASE,
)


def _error_lead(line: str) -> bool:
    return _ERROR_LEAD.match(line) is not None


def classify_error_clarity(stderr: str) -> bool:
    """True iff some error message leads with an error keyword and names a location.

    A message is the error line plus the continuation lines that follow it
    up to the next error line, so solc's two-line ``TypeError: ...`` /
    ``--> a.sol:3:5:`` layout counts as one message.
    """
    lines = stderr.splitlines()
    for i, line in enumerate(lines):
        if not _error_lead(line):
            continue
        block = [line]
        for nxt in lines[i + 1 :]:
            if _error_lead(nxt):
                break
            block.append(nxt)
        if _LOCATION.search("\n".join(block)):
            return True
    return False


# --------------------------------------------------------------------------
# specs and registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ToolchainSpec:
    id: ToolchainId
    compile_cmd: tuple = ()
    exec_cmd: Optional[tuple] = None
    output_encoding: str = "abi"
    supports: Optional[frozenset] = None  # None: inferred from whether an executor is configured
    compile_timeout_ms: int = DEFAULT_COMPILE_TIMEOUT_MS
    exec_timeout_ms: int = DEFAULT_EXEC_TIMEOUT_MS
    exec_enabled: bool = True
    exec_input: str = "bytecode"  # or "source": harness takes the .sol file
    artifact_globs: tuple = ("*.bin",)
    abi_glob: Optional[str] = "*.abi"
    emits_bytecode: bool = True
    revert_markers: tuple = ()
    address_width: int = codec.DEFAULT_ADDRESS_WIDTH
    max_parallel: int = 4
    mock: Optional[dict] = None

    def __post_init__(self):
        if self.supports is None:
            object.__setattr__(self, "supports", ALL_CLASSES if self.can_execute else COMPILE_CLASSES)
        object.__setattr__(self, "supports", frozenset(InconsistencyClass(c) for c in self.supports))
        object.__setattr__(self, "compile_cmd", tuple(self.compile_cmd))
        if self.exec_cmd is not None:
            object.__setattr__(self, "exec_cmd", tuple(self.exec_cmd))
        if self.output_encoding not in ("abi", "borsh", "none"):
            raise ValueError(f"bad output_encoding {self.output_encoding!r}")
        if not self.can_execute and not self.supports <= COMPILE_CLASSES:
            raise ValueError(f"{self.id.name}: no executor, so only EMI/CSI can be supported")
        if not self.supports:
            raise ValueError(f"{self.id.name}: supports must be non-empty")

    @property
    def can_execute(self) -> bool:
        if self.mock is not None:
            return self.exec_enabled
        return self.exec_cmd is not None and self.exec_enabled

    @property
    def name(self) -> str:
        return self.id.name

    @classmethod
    def from_json(cls, d: dict) -> "ToolchainSpec":
        d = dict(d)
        ident = ToolchainId(d.pop("name"), d.pop("version", ""))
        timeouts = d.pop("timeout_ms", {})
        kw = {}
        if "compile" in timeouts:
            kw["compile_timeout_ms"] = int(timeouts["compile"])
        if "execute" in timeouts:
            kw["exec_timeout_ms"] = int(timeouts["execute"])
        for key in ("compile_cmd", "exec_cmd", "artifact_globs", "revert_markers", "supports"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(id=ident, **kw, **d)

    def to_json(self) -> dict:
        return {
            "name": self.id.name,
            "version": self.id.version,
            "compile_cmd": list(self.compile_cmd),
            "exec_cmd": list(self.exec_cmd) if self.exec_cmd is not None else None,
            "output_encoding": self.output_encoding,
            "supports": sorted(c.value for c in self.supports),
            "timeout_ms": {"compile": self.compile_timeout_ms, "execute": self.exec_timeout_ms},
            "exec_enabled": self.exec_enabled,
            "exec_input": self.exec_input,
            "artifact_globs": list(self.artifact_globs),
            "abi_glob": self.abi_glob,
            "emits_bytecode": self.emits_bytecode,
            "revert_markers": list(self.revert_markers),
            "address_width": self.address_width,
            "max_parallel": self.max_parallel,
            "mock": self.mock,
        }


class Toolchain:
    """Base adapter: compile a program, run the result."""

    def __init__(self, spec: ToolchainSpec):
        self.spec = spec
        self._sem = threading.BoundedSemaphore(max(1, spec.max_parallel))

    @property
    def id(self) -> ToolchainId:
        return self.spec.id

    @property
    def name(self) -> str:
        return self.spec.id.name

    def compile(self, program: Union[SeedProgram, str], workdir: Optional[Path] = None) -> CompileOutcome:
        raise NotImplementedError

    def execute(
        self, outcome: CompileOutcome, entry: Entry, program: Union[SeedProgram, str], workdir: Optional[Path] = None
    ) -> ExecOutcome:
        raise NotImplementedError

    def _check_exec_pre(self, outcome: CompileOutcome):
        if not outcome.ok:
            raise PreconditionError(f"{self.name}: execute() called on a failed compile")
        if not self.spec.can_execute:
            raise PreconditionError(f"{self.name}: execution not available")


def _source_of(program) -> str:
    return program.source if isinstance(program, SeedProgram) else program


def _fill(argv, **slots) -> list:
    out = []
    for a in argv:
        for k, v in slots.items():
            a = a.replace("{" + k + "}", str(v))
        out.append(a)
    return out


def _run(argv, cwd, timeout_ms):
    """Run argv; returns (returncode | None on timeout, stdout, stderr, ms)."""
    t0 = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv, cwd=cwd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, start_new_session=True
        )
    except (FileNotFoundError, PermissionError) as e:
        raise AdapterError(f"cannot start {argv[0]!r}: {e}") from e
    try:
        out, err = proc.communicate(timeout=timeout_ms / 1000)
        rc = proc.returncode
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        try:
            out, err = proc.communicate(timeout=KILL_GRACE_S)
        except subprocess.TimeoutExpired:
            proc.kill()
            out, err = b"", b""
        rc = None
    ms = int((time.monotonic() - t0) * 1000)
    return rc, out.decode("utf-8", "replace"), err.decode("utf-8", "replace"), ms


class SubprocessToolchain(Toolchain):
    """Drives an external compiler binary and execution harness.

    Each call gets a fresh workspace. When the caller passes ``workdir``
    it owns the directory (the campaign keeps it for reproduction);
    otherwise a temporary directory is created and removed afterwards.
    """

    def compile(self, program, workdir=None) -> CompileOutcome:
        src = _source_of(program)
        own = workdir is None
        wd = Path(tempfile.mkdtemp(prefix=f"pf-{self.name}-")) if own else Path(workdir)
        wd.mkdir(parents=True, exist_ok=True)
        try:
            with self._sem:
                return self._compile_in(src, wd, getattr(program, "entry", None))
        except OSError as e:
            raise AdapterError(f"{self.name}: workspace error: {e}") from e
        finally:
            if own:
                shutil.rmtree(wd, ignore_errors=True)

    def _compile_in(self, src: str, wd: Path, entry: Optional[Entry]) -> CompileOutcome:
        inp = wd / "program.sol"
        outdir = wd / "out"
        outdir.mkdir(exist_ok=True)
        inp.write_text(src, encoding="utf-8")
        argv = _fill(self.spec.compile_cmd, input=inp, outdir=outdir)
        rc, out, err, ms = _run(argv, wd, self.spec.compile_timeout_ms)
        stderr = err if err.strip() else out
        if rc is None:
            return CompileOutcome(self.id, CompileStatus.TIMEOUT, stderr=stderr, duration_ms=ms)
        if rc < 0:
            return CompileOutcome(self.id, CompileStatus.CRASH, stderr=stderr, duration_ms=ms)
        if rc != 0:
            return CompileOutcome(
                self.id, CompileStatus.FAILURE, stderr=stderr, clear_error=classify_error_clarity(stderr), duration_ms=ms
            )
        if not self.spec.emits_bytecode:
            # check-only frontends: stand in a digest of the accepted source
            digest = hashlib.sha256(src.encode()).digest()
            return CompileOutcome(self.id, CompileStatus.SUCCESS, bytecode=digest, stderr=stderr, duration_ms=ms)
        bytecode = _find_artifact(outdir, self.spec.artifact_globs, entry)
        if not bytecode:
            msg = stderr + ("\n" if stderr else "") + "no bytecode artifact produced"
            return CompileOutcome(self.id, CompileStatus.FAILURE, stderr=msg, clear_error=False, duration_ms=ms)
        abi = None
        if self.spec.abi_glob:
            abi_bytes = _find_artifact(outdir, (self.spec.abi_glob,), entry)
            abi = abi_bytes.decode("utf-8", "replace") if abi_bytes else None
        return CompileOutcome(self.id, CompileStatus.SUCCESS, bytecode=bytecode, stderr=stderr, duration_ms=ms, abi=abi)

    def execute(self, outcome, entry, program, workdir=None) -> ExecOutcome:
        self._check_exec_pre(outcome)
        own = workdir is None
        wd = Path(tempfile.mkdtemp(prefix=f"pf-{self.name}-x-")) if own else Path(workdir)
        wd.mkdir(parents=True, exist_ok=True)
        try:
            with self._sem:
                return self._exec_in(outcome, entry, _source_of(program), wd)
        except OSError as e:
            raise AdapterError(f"{self.name}: workspace error: {e}") from e
        finally:
            if own:
                shutil.rmtree(wd, ignore_errors=True)

    def _exec_in(self, outcome, entry, src, wd: Path) -> ExecOutcome:
        if self.spec.exec_input == "source":
            target = wd / "program.sol"
            target.write_text(src, encoding="utf-8")
        else:
            target = wd / "bytecode.bin"
            target.write_bytes(outcome.bytecode)
        argv = _fill(self.spec.exec_cmd, bytecode_or_source=target, contract=entry.contract, function=entry.function)
        rc, out, err, ms = _run(argv, wd, self.spec.exec_timeout_ms)
        if rc is None:
            return ExecOutcome(self.id, ExecStatus.TIMEOUT, stderr=err, duration_ms=ms)
        combined = out + "\n" + err
        if any(m in combined for m in self.spec.revert_markers):
            return ExecOutcome(self.id, ExecStatus.REVERT, stderr=err or out, duration_ms=ms)
        if rc == 0:
            raw = _parse_return_data(out)
            if raw is not None:
                return ExecOutcome(self.id, ExecStatus.SUCCESS, raw_output=raw, stderr=err, duration_ms=ms)
        return ExecOutcome(self.id, ExecStatus.FAILURE, stderr=err or out, duration_ms=ms)


def _find_artifact(outdir: Path, patterns, entry: Optional[Entry]) -> Optional[bytes]:
    hits = []
    for pat in patterns:
        hits.extend(sorted(glob.glob(str(outdir / "**" / pat), recursive=True)))
    if entry is not None:
        preferred = [h for h in hits if Path(h).stem == entry.contract]
        hits = preferred + [h for h in hits if h not in preferred]
    for h in hits:
        data = Path(h).read_bytes()
        if data.strip():
            return data
    return None


_HEX_LINE = re.compile(r"^(?:0x)?([0-9a-fA-F]*)$")


def _parse_return_data(stdout: str) -> Optional[bytes]:
    """Harness protocol: the last non-empty stdout line is the return data in hex."""
    lines = [ln.strip() for ln in stdout.splitlines() if ln.strip()]
    if not lines:
        return None
    m = _HEX_LINE.match(lines[-1])
    if not m or len(m.group(1)) % 2:
        return None
    return bytes.fromhex(m.group(1))


# --------------------------------------------------------------------------
# mock toolchains
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Rule:
    label: str
    pattern: re.Pattern
    compile: Optional[dict]
    execute: Optional[dict]


_COMPILE_KEYS = {"status", "stderr", "duration_ms", "clear_error"}
_EXEC_KEYS = {"status", "returns", "raw_hex", "stderr", "duration_ms"}


def _check_template(tpl: Optional[dict], keys: set, statuses, where: str) -> Optional[dict]:
    if tpl is None:
        return None
    if not isinstance(tpl, dict):
        raise ScriptError(f"{where}: template must be an object")
    extra = set(tpl) - keys
    if extra:
        raise ScriptError(f"{where}: unknown keys {sorted(extra)}")
    status = tpl.get("status", "success")
    if status not in statuses:
        raise ScriptError(f"{where}: bad status {status!r}")
    returns = tpl.get("returns")
    if returns is not None and returns != "zero":
        if not isinstance(returns, list):
            raise ScriptError(f"{where}: returns must be 'zero' or a list of [type, value]")
        try:
            for ty, val in returns:
                codec.coerce_value(codec.parse_abi_type(ty), val)
        except (ValueError, TypeError) as e:
            raise ScriptError(f"{where}: bad returns entry: {e}") from e
    return dict(tpl)


@dataclass
class BehaviorScript:
    """Ordered predicate -> outcome-template rules plus a default.

    The first rule whose pattern matches the source wins. A rule that
    leaves out a phase (compile or execute) falls through to the default
    for that phase. The default is either explicit templates or
    ``{"mirror": "<toolchain>"}``, which replays another mock's behavior.
    """

    rules: list = field(default_factory=list)
    default: dict = field(default_factory=lambda: {"compile": {"status": "success"}, "execute": {"returns": "zero"}})

    @classmethod
    def from_json(cls, d: dict) -> "BehaviorScript":
        if not isinstance(d, dict):
            raise ScriptError("script must be an object")
        rules = []
        for i, r in enumerate(d.get("rules", [])):
            where = f"rule {i}"
            match = r.get("match") or {}
            if "substring" in match:
                pat = re.compile(re.escape(match["substring"]))
            elif "regex" in match:
                try:
                    pat = re.compile(match["regex"], re.MULTILINE)
                except re.error as e:
                    raise ScriptError(f"{where}: bad regex: {e}") from e
            else:
                raise ScriptError(f"{where}: match needs 'substring' or 'regex'")
            rules.append(
                _Rule(
                    label=r.get("label", f"rule{i}"),
                    pattern=pat,
                    compile=_check_template(r.get("compile"), _COMPILE_KEYS, [s.value for s in CompileStatus], where),
                    execute=_check_template(r.get("execute"), _EXEC_KEYS, [s.value for s in ExecStatus], where),
                )
            )
        default = d.get("default", {"compile": {"status": "success"}, "execute": {"returns": "zero"}})
        if "mirror" not in default:
            default = {
                "compile": _check_template(default.get("compile", {}), _COMPILE_KEYS, [s.value for s in CompileStatus], "default"),
                "execute": _check_template(default.get("execute", {}), _EXEC_KEYS, [s.value for s in ExecStatus], "default"),
            }
        return cls(rules=rules, default=default)


class MockToolchain(Toolchain):
    """Scripted in-process toolchain. Deterministic: same source, same outcome."""

    def __init__(self, spec: ToolchainSpec, script: Optional[BehaviorScript] = None):
        super().__init__(spec)
        self.script = script or BehaviorScript.from_json(spec.mock or {})
        self.mirror_of: Optional[MockToolchain] = None

    @property
    def mirror_name(self) -> Optional[str]:
        return self.script.default.get("mirror")

    def _template(self, src: str, phase: str) -> dict:
        for r in self.script.rules:
            tpl = getattr(r, phase)
            if tpl is not None and r.pattern.search(src):
                return tpl
        if self.mirror_name:
            if self.mirror_of is None:
                raise ScriptError(f"{self.name}: mirror target {self.mirror_name!r} not bound")
            return self.mirror_of._template(src, phase)
        return self.script.default.get(phase) or {}

    def compile(self, program, workdir=None) -> CompileOutcome:
        src = _source_of(program)
        tpl = self._template(src, "compile")
        status = CompileStatus(tpl.get("status", "success"))
        ms = int(tpl.get("duration_ms", 0))
        stderr = tpl.get("stderr", "")
        if ms > self.spec.compile_timeout_ms:
            return CompileOutcome(self.id, CompileStatus.TIMEOUT, stderr=stderr, duration_ms=self.spec.compile_timeout_ms)
        if status is CompileStatus.SUCCESS:
            if not src.strip():
                return CompileOutcome(self.id, CompileStatus.FAILURE, stderr="Error: empty source", duration_ms=ms)
            code = b"\x60\x80" + hashlib.sha256(src.encode()).digest()
            return CompileOutcome(
                self.id, status, bytecode=code, stderr=stderr, duration_ms=ms, abi=solidity.abi_from_source(src)
            )
        clear = tpl.get("clear_error")
        if clear is None:
            clear = classify_error_clarity(stderr) if status is CompileStatus.FAILURE else False
        return CompileOutcome(self.id, status, stderr=stderr, clear_error=bool(clear), duration_ms=ms)

    def execute(self, outcome, entry, program, workdir=None) -> ExecOutcome:
        self._check_exec_pre(outcome)
        src = _source_of(program)
        tpl = self._template(src, "execute")
        status = ExecStatus(tpl.get("status", "success"))
        ms = int(tpl.get("duration_ms", 0))
        stderr = tpl.get("stderr", "")
        if ms > self.spec.exec_timeout_ms:
            return ExecOutcome(self.id, ExecStatus.TIMEOUT, stderr=stderr, duration_ms=self.spec.exec_timeout_ms)
        if status is not ExecStatus.SUCCESS:
            return ExecOutcome(self.id, status, stderr=stderr, duration_ms=ms)
        if "raw_hex" in tpl:
            raw = bytes.fromhex(tpl["raw_hex"].removeprefix("0x"))
        else:
            raw = self._encode_returns(tpl.get("returns", "zero"), entry, src)
        return ExecOutcome(self.id, status, raw_output=raw, stderr=stderr, duration_ms=ms)

    def _encode_returns(self, returns, entry: Entry, src: str) -> bytes:
        if returns == "zero":
            try:
                types = codec.infer_types(solidity.abi_from_source(src), entry)
            except (codec.MetadataError, codec.UnsupportedType):
                return b""
            value = Tuple(tuple(codec.zero_value(t) for t in types))
        else:
            types = [codec.parse_abi_type(ty) for ty, _ in returns]
            value = Tuple(tuple(codec.coerce_value(t, v) for t, (_, v) in zip(types, returns)))
        if self.spec.output_encoding == "none":
            return b""
        return codec.encode_for(value, types, self.spec.output_encoding, self.spec.address_width)


def mock_toolchain(script: Union[BehaviorScript, dict], name: str = "mock:tc", **spec_kw) -> MockToolchain:
    """Build a mock adapter directly from a behavior script."""
    if isinstance(script, dict):
        script = BehaviorScript.from_json(script)
    spec = ToolchainSpec(id=ToolchainId(name), mock={}, **spec_kw)
    return MockToolchain(spec, script)


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------


def default_registry_path() -> Path:
    return Path(str(resources.files("parityfuzz") / "data" / "toolchains.json"))


def load_specs(path: Optional[Union[str, Path]] = None) -> list:
    if path is None:
        path = os.environ.get(ENV_REGISTRY) or default_registry_path()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = doc["toolchains"] if isinstance(doc, dict) else doc
    return [ToolchainSpec.from_json(e) for e in entries]


def build_adapters(specs) -> dict:
    """Instantiate adapters by name and bind mock mirror targets."""
    adapters = {}
    for s in specs:
        if s.name in adapters:
            raise ValueError(f"duplicate toolchain {s.name!r} in registry")
        adapters[s.name] = MockToolchain(s) if s.mock is not None else SubprocessToolchain(s)
    for a in adapters.values():
        if isinstance(a, MockToolchain) and a.mirror_name:
            target = adapters.get(a.mirror_name)
            if not isinstance(target, MockToolchain):
                raise ScriptError(f"{a.name}: mirror target {a.mirror_name!r} is not a mock toolchain")
            a.mirror_of = target
    return adapters


def load_registry(path: Optional[Union[str, Path]] = None) -> dict:
    return build_adapters(load_specs(path))
