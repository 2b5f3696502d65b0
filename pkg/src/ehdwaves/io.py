"""Configuration parsing and dataset persistence.

Configs are INI-style ``key = value`` files with sections.  Outputs are CSV
tables plus JSON sidecars; every float is written with 17 significant digits
so a reload reproduces the in-memory values exactly.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .params import WaveParams

__all__ = [
    "ConfigError",
    "RunConfig",
    "validate_config",
    "load_config",
    "fmt",
    "dumps_json",
    "write_json",
    "read_json",
    "write_csv",
    "read_csv",
    "BranchDataset",
    "branch_columns",
]


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# ---------------------------------------------------------------------------
# float formatting
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """Text form of a scalar; floats get 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        text = f"{x:.17g}"
        # keep floats distinguishable from ints on reload
        return text if any(c in text for c in ".e") else text + ".0"
    return str(x)


def _to_json(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_to_json(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_to_json(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _to_json(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return json.dumps(fmt(x))
        return fmt(x)
    return json.dumps(str(obj))


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with 17-digit floats; non-finite floats become strings."""
    return _to_json(obj, indent, 0) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _float(lo=None, hi=None, lo_open=False, nonzero=False):
    def conv(text):
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ValueError(f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        if nonzero and v == 0:
            raise ValueError("must be nonzero")
        return v
    return conv


def _int(lo=None, even=False):
    def conv(text):
        v = int(text)
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        if even and v % 2:
            raise ValueError("must be even")
        return v
    return conv


def _list(item):
    def conv(text):
        parts = [t.strip() for t in re.split(r"[,\s]+", text.strip()) if t.strip()]
        return [item(t) for t in parts]
    return conv


def _choice(*opts):
    def conv(text):
        t = text.strip().lower()
        if t not in opts:
            raise ValueError(f"must be one of {', '.join(opts)}")
        return t
    return conv


def _pairs(text):
    out = []
    for chunk in re.split(r"[;\s]+", text.strip()):
        if not chunk:
            continue
        a, b = chunk.split(":")
        a, b = int(a), int(b)
        if a < 1 or b < 1 or a == b:
            raise ValueError(f"bad mode pair {chunk!r}")
        out.append((a, b))
    return out


def _nonzero_list(text):
    vals = _list(_float())(text)
    if any(v == 0 for v in vals):
        raise ValueError("gamma grid must exclude 0")
    return vals


SCHEMA = {
    "physics": {
        "g": (_float(0, lo_open=True), 1.0),
        "sigma": (_float(0), 1.0),
        "gamma": (_float(), 0.0),
        "eps0": (_float(0, lo_open=True), 1.0),
        "e0": (_float(), 0.0),
    },
    "numerics": {
        "M": (_int(8, even=True), 64),
        "N": (_int(8), 48),
        "nmodes": (_int(1), None),
        "newton_tol": (_float(0, lo_open=True), 1e-10),
        "max_step": (_float(0, lo_open=True), 1e-2),
        "ds0": (_float(0, lo_open=True), 1e-3),
        "smax": (_float(0), 0.05),
        "kmax": (_int(1), 3),
    },
    "dispersion": {
        "k_values": (_list(_int(1)), [1, 2, 3]),
        "lambda_min": (_float(), -3.0),
        "lambda_max": (_float(), 3.0),
        "lambda_points": (_int(1), 61),
    },
    "branch": {
        "k": (_int(1), 1),
        "sign": (_choice("plus", "minus"), "plus"),
        "direction": (_int(-1), 0),
    },
    "stability": {
        "samples": (_int(1), 10),
        "width": (_float(0, lo_open=True), 0.05),
        "branch_smax": (_float(0), 1e-2),
        "s_values": (_list(_float()), [2e-3, 5e-3, 1e-2]),
    },
    "resonance": {
        "pairs": (_pairs, [(2, 1), (1, 2), (3, 1)]),
        "gamma_values": (_nonzero_list, [0.5, 1.0, 1.5, 2.0]),
    },
    "secondary": {
        "k": (_int(1), 2),
        "l": (_int(1), 1),
        "delta": (_float(), 1e-2),
        "delta_ladder": (_list(_float()), [1e-3, 1e-2, -1e-3, -1e-2]),
        "smax": (_float(0, lo_open=True), 1e-2),
    },
    "sweep": {
        "k_values": (_list(_int(1)), [1, 2]),
        "signs": (_list(_choice("plus", "minus")), ["plus", "minus"]),
        "e0_values": (_list(_float()), [0.0]),
        "gamma_values": (_list(_float()), [0.0]),
    },
    "run": {
        "seed": (_int(0), 0),
        "out": (str, None),
    },
}

# fields a resumed run may change without invalidating existing rows
EXTENDABLE = {("numerics", "smax")}


@dataclass
class RunConfig:
    params: WaveParams
    values: dict
    warnings: list = field(default_factory=list)
    source: str | None = None

    def __getitem__(self, key):
        section, name = key
        return self.values[section][name]

    def section(self, name) -> dict:
        return self.values[name]

    @property
    def M(self) -> int:
        return self.values["numerics"]["M"]

    @property
    def N(self) -> int:
        return self.values["numerics"]["N"]

    @property
    def nmodes(self) -> int:
        n = self.values["numerics"]["nmodes"]
        return n if n is not None else self.M // 4

    @property
    def tol(self) -> float:
        return self.values["numerics"]["newton_tol"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def canonical(self, *, exclude=()) -> dict:
        out = {}
        for sec, vals in self.values.items():
            out[sec] = {k: v for k, v in vals.items() if (sec, k) not in exclude and not (sec == "run" and k == "out")}
        return out

    def digest(self, *, exclude=()) -> str:
        text = json.dumps(self.canonical(exclude=exclude), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def config_hash(self) -> str:
        return self.digest()

    @property
    def dataset_key(self) -> str:
        return self.digest(exclude=EXTENDABLE)[:12]

    def with_physics(self, **changes) -> "RunConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        vals["physics"].update(changes)
        return RunConfig(WaveParams(**vals["physics"]), vals, list(self.warnings), self.source)


def _line_index(text):
    """Map (section, key) to 1-based line numbers."""
    idx, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            idx[(section, None)] = n
            continue
        m = re.match(r"([^=:]+)[=:]", s)
        if m:
            idx[(section, m.group(1).strip().lower())] = n
    return idx


def validate_config(text: str, *, source: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config, filling defaults; raises ConfigError listing every problem."""
    where = source or "<config>"
    errors, warnings = [], []
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError([f"{where}: {exc}".replace("\n", " ")]) from exc
    schema_lower = {sec: {k.lower(): (k, spec) for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    values = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in parser.sections():
        secl = sec.lower()
        if secl not in schema_lower:
            warnings.append(f"{where}:{lines.get((secl, None), '?')}: unknown section [{sec}] ignored")
            continue
        for key, raw in parser.items(sec):
            line = lines.get((secl, key), "?")
            if key not in schema_lower[secl]:
                warnings.append(f"{where}:{line}: unknown key '{key}' in [{sec}] ignored")
                continue
            name, (conv, _) = schema_lower[secl][key]
            try:
                values[secl][name] = conv(raw)
            except (ValueError, TypeError) as exc:
                errors.append(f"{where}:{line}: [{secl}] {name} = {raw!r}: {exc}")
    for (sec, name), val in (overrides or {}).items():
        values[sec][name] = val
    num = values["numerics"]
    if num["nmodes"] is not None and num["nmodes"] > num["M"] // 2 - 1:
        errors.append(f"{where}:{lines.get(('numerics', 'nmodes'), '?')}: [numerics] nmodes must be <= M/2 - 1")
    d = values["dispersion"]
    if d["lambda_min"] > d["lambda_max"]:
        errors.append(f"{where}:{lines.get(('dispersion', 'lambda_max'), '?')}: [dispersion] lambda_max < lambda_min")
    if values["secondary"]["k"] == values["secondary"]["l"]:
        errors.append(f"{where}:{lines.get(('secondary', 'l'), '?')}: [secondary] l must differ from k")
    if errors:
        raise ConfigError(errors)
    params = WaveParams(**values["physics"])
    return RunConfig(params, values, warnings, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config: {exc.strerror}"]) from exc
    return validate_config(text, source=str(path))


# ---------------------------------------------------------------------------
# branch datasets
# ---------------------------------------------------------------------------

def branch_columns(nmodes: int) -> list[str]:
    return (["s", "lambda", "q0", "residual_norm", "tracked_eigenvalue", "label"]
            + [f"eta_{j}" for j in range(1, nmodes + 1)])


@dataclass
class BranchDataset:
    """Tabulated branch: one row per point, ordered by arclength."""

    meta: dict
    rows: list

    @classmethod
    def from_branch(cls, branch, labels, meta) -> "BranchDataset":
        """Rows from a Branch; ``labels=None`` marks every point unclassified."""
        rows = []
        for i, pt in enumerate(branch.points):
            lab = "unclassified" if labels is None else labels[i].label.value
            rows.append([pt.s, pt.state.lam, pt.state.q0, pt.residual_norm, pt.tracked_eigenvalue,
                         lab, *pt.state.eta.coeffs])
        return cls(dict(meta), rows)

    @property
    def nmodes(self) -> int:
        return int(self.meta["nmodes"])

    def write(self, directory, stem: str = "branch"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_csv(directory / f"{stem}.csv", branch_columns(self.nmodes), self.rows)
        write_json(directory / f"{stem}.meta.json", self.meta)

    @classmethod
    def read(cls, directory, stem: str = "branch") -> "BranchDataset":
        directory = Path(directory)
        meta = read_json(directory / f"{stem}.meta.json")
        header, raw = read_csv(directory / f"{stem}.csv")
        rows = []
        for r in raw:
            vals = [float(x) for x in r[:5]] + [r[5]] + [float(x) for x in r[6:]]
            rows.append(vals)
        return cls(meta, rows)

    def column(self, name) -> np.ndarray:
        j = branch_columns(self.nmodes).index(name)
        return np.array([r[j] for r in self.rows])

    def coefficients(self) -> np.ndarray:
        return np.array([r[6:] for r in self.rows], dtype=float)


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
