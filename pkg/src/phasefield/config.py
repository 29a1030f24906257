"""Flat ``key = value`` run configuration.

One pair per line; ``#`` starts a comment.  Lists are comma separated.
Required keys: ``equation``, ``scheme``, ``epsilon``, ``k``, ``nx``, ``ny``
and one of ``steps`` or ``t_end`` (``steps`` may be omitted when ``k`` is an
explicit list).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigurationError
from . import steppers_ac, steppers_ch

EQUATIONS = ("allen-cahn", "cahn-hilliard")
INITIAL_KINDS = ("circle", "random", "file")
REQUIRED = ("equation", "scheme", "epsilon", "k", "nx", "ny")


@dataclass(frozen=True)
class RunConfig:
    equation: str
    scheme: str
    epsilon: float
    k: tuple
    nx: int
    ny: int
    steps: int
    domain: tuple = (-1.0, -1.0, 1.0, 1.0)
    S: float = 1.0
    delta: float | None = None
    initial: str = "circle"
    radius: float = 0.6
    center: tuple = (0.0, 0.0)
    seed: int = 0
    amplitude: float = 0.1
    init_file: str | None = None
    output: str = "output"
    snapshot_times: tuple = ()
    newton_tol: float = 1e-10
    lbfgs_tol: float = 1e-8
    linear_solver: str = "auto"
    bench_levels: tuple = (8, 16, 32, 64, 128)
    bench_tol: float = 1e-8

    def to_dict(self) -> dict:
        return asdict(self)

    def with_value(self, key: str, text: str) -> "RunConfig":
        """Copy with one key replaced, parsed from its text form."""
        values = {f.name: _format(getattr(self, f.name)) for f in fields(self)}
        values[key] = text
        return parse_config("\n".join(f"{k} = {v}" for k, v in values.items() if v != ""))

    def step_sizes(self) -> list[float]:
        return [self.k[min(i, len(self.k) - 1)] for i in range(self.steps)]


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _floats(text, n=None):
    vals = tuple(float(t) for t in text.split(",") if t.strip())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers")
    return vals


_CONVERTERS = {
    "equation": str.strip,
    "scheme": lambda s: s.strip().lower(),
    "epsilon": float,
    "k": _floats,
    "nx": int,
    "ny": int,
    "steps": int,
    "t_end": float,
    "domain": lambda s: _floats(s, 4),
    "S": float,
    "delta": float,
    "initial": str.strip,
    "radius": float,
    "center": lambda s: _floats(s, 2),
    "seed": int,
    "amplitude": float,
    "init_file": str.strip,
    "output": str.strip,
    "snapshot_times": _floats,
    "newton_tol": float,
    "lbfgs_tol": float,
    "linear_solver": str.strip,
    "bench_levels": lambda s: tuple(int(t) for t in s.split(",") if t.strip()),
    "bench_tol": float,
}


def parse_config(text: str) -> RunConfig:
    values, where = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _CONVERTERS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONVERTERS[key](val)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: key {key!r}: {exc}") from None
        where[key] = lineno

    missing = [k for k in REQUIRED if k not in values]
    if "steps" not in values and "t_end" not in values and not (
        "k" in values and len(values["k"]) > 1
    ):
        missing.append("steps (or t_end)")
    if missing:
        raise ConfigurationError("missing required keys: " + ", ".join(missing))

    def bad(key, msg):
        line = f"line {where[key]}: " if key in where else ""
        raise ConfigurationError(f"{line}key {key!r}: {msg}")

    if values["equation"] not in EQUATIONS:
        bad("equation", f"must be one of {EQUATIONS}")
    schemes = steppers_ac.SCHEMES if values["equation"] == "allen-cahn" else steppers_ch.SCHEMES
    if values["scheme"] not in schemes:
        bad("scheme", f"not a {values['equation']} scheme; choose from {schemes}")
    for key in ("epsilon", "radius", "amplitude", "newton_tol", "lbfgs_tol", "S",
                "t_end", "bench_tol"):
        if key in values and not values[key] > 0:
            bad(key, "must be positive")
    if not values["k"] or any(not v > 0 for v in values["k"]):
        bad("k", "time steps must be positive")
    for key in ("nx", "ny"):
        if values[key] < 1:
            bad(key, "must be >= 1")
    if "delta" in values and values["delta"] < 0:
        bad("delta", "must be nonnegative")
    if values.get("initial", "circle") not in INITIAL_KINDS:
        bad("initial", f"must be one of {INITIAL_KINDS}")
    if values.get("initial") == "file" and "init_file" not in values:
        bad("initial", "initial = file needs init_file")
    if values.get("linear_solver", "auto") not in ("auto", "direct", "cg", "pcg"):
        bad("linear_solver", "must be auto, direct, cg or pcg")
    if "domain" in values:
        x0, y0, x1, y1 = values["domain"]
        if not (x1 > x0 and y1 > y0):
            bad("domain", "need x0 < x1 and y0 < y1")

    if "steps" in values:
        if values["steps"] < 0:
            bad("steps", "must be nonnegative")
    elif "t_end" in values:
        t_end, ks = values.pop("t_end"), values["k"]
        total, n = 0.0, 0
        while total < t_end * (1 - 1e-12):
            total += ks[min(n, len(ks) - 1)]
            n += 1
        values["steps"] = n
    else:
        values["steps"] = len(values["k"])
    values.pop("t_end", None)
    return RunConfig(**values)
