"""Adapters around external EDA tools, plus hermetic mock substitutes.

Real runs shell out to a lint command (verilator in lint-only mode by
default) and a make-based cocotb test flow, always confined to one unit
directory and always under a deadline. Mock runners keep the test suite
and offline end-to-end runs independent of any installed toolchain: they
serve canned reports, per-component scripted failures, or fixtures read
from ``mock_<stage>.json`` files in the unit directory.
"""

from __future__ import annotations

import json
import re
import shlex
import shutil
import subprocess
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

from .errors import ResultsFormatError, ResultsMissingError, ToolMissingError
from .genbackend import check_workspace_relative

INTEGRATION_DIR = "integration"


@dataclass(frozen=True)
class Workspace:
    """Run workspace: one directory per component plus an integration area."""

    root: Path

    def component_dir(self, name: str) -> Path:
        return self.root / "components" / name

    def integration_dir(self) -> Path:
        return self.root / INTEGRATION_DIR

    def dir_for(self, unit: str, integration: bool = False) -> Path:
        return self.integration_dir() if integration else self.component_dir(unit)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    file: str = ""
    line: int | None = None
    tool_code: str | None = None
    message: str = ""

    def __post_init__(self):
        if self.severity == "error" and not self.message:
            raise ValueError("error diagnostics must carry a message")

    def to_json(self) -> dict:
        return {
            "severity": self.severity,
            "file": self.file,
            "line": self.line,
            "tool_code": self.tool_code,
            "message": self.message,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Diagnostic":
        return cls(
            severity=doc["severity"],
            file=doc.get("file", ""),
            line=doc.get("line"),
            tool_code=doc.get("tool_code"),
            message=doc.get("message", ""),
        )


@dataclass(frozen=True)
class LintReport:
    passed: bool
    diagnostics: tuple[Diagnostic, ...]
    raw_log: str = ""

    def __post_init__(self):
        has_errors = any(d.severity == "error" for d in self.diagnostics)
        if self.passed == has_errors:
            raise ValueError("LintReport.passed must equal 'no error diagnostics'")

    @classmethod
    def from_diagnostics(cls, diagnostics, raw_log: str = "") -> "LintReport":
        diags = tuple(diagnostics)
        return cls(
            passed=not any(d.severity == "error" for d in diags),
            diagnostics=diags,
            raw_log=raw_log,
        )

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "diagnostics": [d.to_json() for d in self.diagnostics],
            "raw_log": self.raw_log,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LintReport":
        return cls.from_diagnostics(
            [Diagnostic.from_json(d) for d in doc.get("diagnostics", [])],
            raw_log=doc.get("raw_log", ""),
        )


@dataclass(frozen=True)
class TestReport:
    passed: bool
    tests_run: int
    failures: tuple[tuple[str, str], ...]
    raw_log: str = ""

    def __post_init__(self):
        expected = not self.failures and self.tests_run >= 1
        if self.passed != expected:
            raise ValueError("TestReport.passed must equal 'no failures and tests_run >= 1'")

    @classmethod
    def make(cls, tests_run: int, failures, raw_log: str = "") -> "TestReport":
        fails = tuple((str(n), str(m)) for n, m in failures)
        return cls(passed=not fails and tests_run >= 1, tests_run=tests_run,
                   failures=fails, raw_log=raw_log)

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "tests_run": self.tests_run,
            "failures": [list(f) for f in self.failures],
            "raw_log": self.raw_log,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TestReport":
        return cls.make(doc.get("tests_run", 0), doc.get("failures", []),
                        raw_log=doc.get("raw_log", ""))


# --- file materialization ----------------------------------------------------

def materialize(files, ws: Workspace, component: str, *, integration: bool = False) -> list[Path]:
    """Write generated files atomically, archiving any prior versions.

    Each overwrite of an existing file first copies it into the unit's
    ``attempts/`` directory under a monotonically numbered name, so the
    full revision history of every file survives the self-correction loop.
    """
    target_dir = ws.dir_for(component, integration)
    target_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for rel_path, content in files:
        check_workspace_relative(rel_path)
        dest = target_dir / rel_path
        dest.parent.mkdir(parents=True, exist_ok=True)
        if dest.exists():
            _archive(target_dir, rel_path, dest)
        tmp = dest.parent / f".{dest.name}.tmp"
        tmp.write_text(content)
        tmp.replace(dest)
        written.append(dest)
    return written


def _archive(unit_dir: Path, rel_path: str, live: Path) -> None:
    attempts = unit_dir / "attempts"
    attempts.mkdir(exist_ok=True)
    slug = rel_path.replace("/", "__")
    n = 1 + sum(1 for _ in attempts.glob(f"{slug}.*"))
    shutil.copyfile(live, attempts / f"{slug}.{n}")


def attempt_history(ws: Workspace, component: str, rel_path: str, *,
                    integration: bool = False) -> list[str]:
    """Archived contents of one file, oldest first."""
    attempts = ws.dir_for(component, integration) / "attempts"
    slug = rel_path.replace("/", "__")
    if not attempts.is_dir():
        return []
    files = sorted(attempts.glob(f"{slug}.*"), key=lambda p: int(p.suffix[1:]))
    return [p.read_text() for p in files]


def read_workspace_file(ws: Workspace, component: str, rel_path: str, *,
                        integration: bool = False) -> str:
    check_workspace_relative(rel_path)
    path = ws.dir_for(component, integration) / rel_path
    if not path.is_file():
        raise FileNotFoundError(path)
    return path.read_text()


# --- log parsing ---------------------------------------------------------------

_LINT_LINE_RE = re.compile(
    r"^%(Error|Warning)(?:-([A-Za-z0-9_]+))?:\s*"
    r"(?:([^\s:]+):(\d+):(?:\d+:)?\s*)?(.*)$"
)


def parse_lint_log(log: str) -> list[Diagnostic]:
    """Extract %Error/%Warning lines from a verilator-style log.

    Total: unmatched lines are ignored and an empty log parses to nothing.
    """
    diags: list[Diagnostic] = []
    for line in log.splitlines():
        m = _LINT_LINE_RE.match(line.strip())
        if not m:
            continue
        severity, code, file, lineno, message = m.groups()
        diags.append(
            Diagnostic(
                severity=severity.lower(),
                file=file or "",
                line=int(lineno) if lineno else None,
                tool_code=code,
                message=message.strip() or line.strip(),
            )
        )
    return diags


def parse_test_results(results: str) -> TestReport:
    """Parse a JUnit-style results file (testsuite/testcase/failure)."""
    try:
        root = ET.fromstring(results)
    except ET.ParseError as exc:
        raise ResultsFormatError(f"unparseable results file: {exc}") from exc
    cases = root.iter("testcase")
    tests_run = 0
    failures: list[tuple[str, str]] = []
    for case in cases:
        tests_run += 1
        name = case.get("name", f"case{tests_run}")
        for kind in ("failure", "error"):
            for failure in case.findall(kind):
                msg = failure.get("message") or (failure.text or "").strip() or kind
                failures.append((name, msg))
    return TestReport.make(tests_run, failures, raw_log=results)


# --- runners -------------------------------------------------------------------

@dataclass
class ToolConfig:
    lint_cmd: str = "verilator --lint-only -Wall {files}"
    test_cmd: str = "make"
    results_file: str = "results.xml"
    lint_timeout: float = 60.0
    test_timeout: float = 300.0
    log_tail_lines: int = 200


class SubprocessToolRunner:
    """Runs the configured external commands inside the unit directory."""

    def __init__(self, config: ToolConfig | None = None):
        self.config = config or ToolConfig()

    def _run(self, cmd: str, cwd: Path, timeout: float, log_name: str) -> tuple[int | None, str]:
        argv = shlex.split(cmd)
        try:
            proc = subprocess.run(
                argv, cwd=cwd, capture_output=True, text=True, timeout=timeout
            )
            output = proc.stdout + proc.stderr
            code = proc.returncode
        except FileNotFoundError:
            raise ToolMissingError(argv[0]) from None
        except subprocess.TimeoutExpired as exc:
            output = ((exc.stdout or b"").decode(errors="replace")
                      + (exc.stderr or b"").decode(errors="replace")
                      + f"\n[killed after {timeout}s timeout]")
            code = None
        (cwd / log_name).write_text(output)
        return code, output

    def lint(self, component: str, cwd: Path, files: list[str]) -> LintReport:
        cmd = self.config.lint_cmd.format(files=" ".join(files), top=component, dir=str(cwd))
        code, output = self._run(cmd, cwd, self.config.lint_timeout, "lint.log")
        diags = parse_lint_log(output)
        if code is None:
            diags.append(Diagnostic("error", message=f"lint timed out after {self.config.lint_timeout}s"))
        elif code != 0 and not any(d.severity == "error" for d in diags):
            diags.append(Diagnostic("error", message=f"lint exited with status {code}"))
        return LintReport.from_diagnostics(diags, raw_log=output)

    def unit_test(self, component: str, cwd: Path) -> TestReport:
        cmd = self.config.test_cmd.format(files="", top=component, dir=str(cwd))
        code, output = self._run(cmd, cwd, self.config.test_timeout, "test.log")
        if code is None:
            return TestReport.make(1, [(component, f"test run timed out after {self.config.test_timeout}s")],
                                   raw_log=output)
        results_path = cwd / self.config.results_file
        if not results_path.is_file():
            raise ResultsMissingError(
                f"test run produced no {self.config.results_file} in {cwd}"
            )
        report = parse_test_results(results_path.read_text())
        tail = "\n".join(output.splitlines()[-self.config.log_tail_lines:])
        return TestReport.make(report.tests_run, report.failures, raw_log=tail)

    def system_trace(self, component: str, cwd: Path, expected: Path, out: Path) -> Path:
        cmd = self.config.test_cmd.format(files="", top=component, dir=str(cwd))
        self._run(cmd, cwd, self.config.test_timeout, "test.log")
        if not out.is_file():
            raise ResultsMissingError(f"system run produced no trace file {out}")
        return out


def _load_mock_fixture(cwd: Path, stage: str) -> dict | None:
    path = cwd / f"mock_{stage}.json"
    if path.is_file():
        return json.loads(path.read_text())
    return None


@dataclass
class MockToolRunner:
    """Offline runner: canned verdicts, scripted failures, or file fixtures.

    ``fail_lint`` / ``fail_test`` name components whose stage always fails;
    a ``mock_lint.json`` or ``mock_test.json`` in the unit directory takes
    precedence over the defaults. ``sysverify_mutate`` perturbs one DUT
    trace value to exercise the divergence path.
    """

    mode: str = "always_pass"  # or "always_fail"
    fail_lint: frozenset = frozenset()
    fail_test: frozenset = frozenset()
    sysverify_mutate: bool = False

    def lint(self, component: str, cwd: Path, files: list[str]) -> LintReport:
        fixture = _load_mock_fixture(cwd, "lint")
        if fixture is not None:
            return LintReport.from_json(fixture)
        if self.mode == "always_fail" or component in self.fail_lint:
            diag = Diagnostic("error", file=files[0] if files else "",
                              line=1, message="mock lint failure")
            return LintReport.from_diagnostics([diag], raw_log="%Error: mock lint failure")
        return LintReport.from_diagnostics([], raw_log="mock lint: clean")

    def unit_test(self, component: str, cwd: Path) -> TestReport:
        fixture = _load_mock_fixture(cwd, "test")
        if fixture is not None:
            return TestReport.from_json(fixture)
        if self.mode == "always_fail" or component in self.fail_test:
            return TestReport.make(1, [(f"{component}_test", "mock assertion failure")],
                                   raw_log="mock test: failed")
        return TestReport.make(1, [], raw_log="mock test: passed")

    def system_trace(self, component: str, cwd: Path, expected: Path, out: Path) -> Path:
        text = expected.read_text()
        if self.sysverify_mutate:
            text = _mutate_trace(text)
        out.write_text(text)
        return out


def _mutate_trace(text: str) -> str:
    lines = text.splitlines()
    if len(lines) > 1:
        cells = lines[1].split(",")
        # flip the low bit of the last field on the first data row
        flipped = int(cells[-1], 16) ^ 1
        cells[-1] = f"{flipped:0{len(cells[-1])}X}"
        lines[1] = ",".join(cells)
    return "\n".join(lines) + "\n"
