"""Experiment results and their CSV / JSON serializations.

CSV layout: leading ``#`` lines carry the tool version, the seed and the
resolved config as ``# config <key> = <value>``; then a header
``experiment,N,n,statistic,estimate,stderr,ci_lo,ci_hi,verdict`` and one row
per grid cell. Floats use 17 significant digits, lines end with LF, and
nothing time-dependent is written. Wall-clock data goes to the JSON summary
under ``metadata`` only.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .. import __version__

COLUMNS = ("experiment", "N", "n", "statistic", "estimate", "stderr", "ci_lo", "ci_hi", "verdict")
PASS, FAIL, INFO = "PASS", "FAIL", "INFO"


def fmt_float(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


@dataclass
class Row:
    experiment: str
    N: Optional[int]
    n: Optional[int]
    statistic: str
    estimate: float
    stderr: Optional[float] = None
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    verdict: str = INFO

    def cells(self) -> list[str]:
        return [
            self.experiment,
            "" if self.N is None else str(int(self.N)),
            "" if self.n is None else str(int(self.n)),
            self.statistic,
            fmt_float(self.estimate),
            fmt_float(self.stderr),
            fmt_float(self.ci_lo),
            fmt_float(self.ci_hi),
            self.verdict,
        ]


@dataclass
class Verdict:
    """Outcome of one named check; ``claim`` says which property it tests."""

    check: str
    claim: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    name: str
    config: dict
    seed: int
    rows: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add_row(self, statistic, estimate, stderr=None, ci=(None, None), N=None, n=None, verdict=INFO) -> Row:
        row = Row(self.name, N, n, statistic, float(estimate),
                  None if stderr is None else float(stderr),
                  None if ci[0] is None else float(ci[0]),
                  None if ci[1] is None else float(ci[1]), verdict)
        self.rows.append(row)
        return row

    def add_verdict(self, check: str, claim: str, passed: bool, detail: str = "") -> bool:
        self.verdicts.append(Verdict(check, claim, bool(passed), detail))
        return bool(passed)

    def verdict(self, check: str) -> Verdict:
        for v in self.verdicts:
            if v.check == check:
                return v
        raise KeyError(check)

    # --- serialization ---------------------------------------------------

    def header_lines(self) -> list[str]:
        lines = [f"# enkf1d {__version__}", f"# experiment {self.name}", f"# seed {self.seed}"]
        lines += [f"# config {k} = {v}" for k, v in sorted(self.config.items())]
        return lines

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        for line in self.header_lines():
            buf.write(line + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows:
            w.writerow(row.cells())
        return buf.getvalue()

    def to_summary(self) -> dict:
        return dict(
            tool="enkf1d", version=__version__, experiment=self.name, seed=self.seed,
            config=dict(sorted(self.config.items())), passed=self.passed,
            verdicts=[asdict(v) for v in self.verdicts], metadata=self.metadata,
        )

    def write(self, directory, stem: Optional[str] = None) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        csv_path = directory / f"{stem}.csv"
        json_path = directory / f"{stem}.json"
        with open(csv_path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())
        with open(json_path, "w", newline="\n", encoding="utf-8") as fh:
            json.dump(self.to_summary(), fh, indent=2, sort_keys=False)
            fh.write("\n")
        return csv_path, json_path


def read_summary(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_csv_rows(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def embedded_config(path) -> dict:
    """Resolved config (as strings) stored in a result CSV or JSON file."""
    path = Path(path)
    if path.suffix == ".json":
        return {k: str(v) for k, v in read_summary(path)["config"].items()}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            if ln.startswith("# config "):
                key, _, value = ln[len("# config "):].rstrip("\n").partition(" = ")
                out[key] = value
    return out
