"""Config-driven experiment runner.

An experiment is a plain ``key = value`` file::

    command = gap-prob
    law = pareto(alpha=0.5, scale=1)
    t = 1, 10, 100
    K = 10
    replicas = 100000

Command-line flags override file values.  Every CSV starts with the
resolved spec as ``# key = value`` comments; stripping the ``# `` prefix
from that block gives a config that reproduces the file.  ``out`` and
``workers`` are not echoed because they do not affect the content.

Exit codes: 0 success, 2 config error, 3 resource error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import ast
import math
import sys
from dataclasses import dataclass

from . import analysis, distributions, engine, renewal
from .distributions import ConditionParams, Empirical, Exponential, OscillatingEps, ParetoType
from .harris import OracleLimitError
from .tables import format_value, render_csv

__all__ = ["ConfigError", "ExperimentSpec", "parse_config", "run_command", "main", "COMMANDS"]

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_IO = 0, 2, 3, 4

LAWS = {
    "pareto": ParetoType,
    "exponential": Exponential,
    "oscillating": OscillatingEps,
    "empirical": Empirical,
}
# separate keys accepted when ``law`` names a family without arguments
LAW_PARAMS = {
    "pareto": ("alpha", "scale"),
    "exponential": ("rate",),
    "oscillating": ("alpha", "beta", "breakpoints"),
    "empirical": ("points",),
}
LAW_KEYS = sorted({k for ks in LAW_PARAMS.values() for k in ks})


class ConfigError(ValueError):
    pass


class _Required:
    def __repr__(self):
        return "required"


REQUIRED = _Required()


@dataclass(frozen=True)
class Key:
    name: str
    kind: str            # int, float, bool, str, law, floats, ints
    default: object = REQUIRED
    check: tuple = ()    # (predicate, description)
    doc: str = ""


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit(x):
    return 0 < x < 1


def _all(pred):
    return lambda xs: all(pred(x) for x in xs)


def _increasing(xs):
    return len(xs) > 0 and all(b > a for a, b in zip(xs, xs[1:]))


POSITIVE = (_pos, "must be > 0")
NONNEG = (_nonneg, "must be >= 0")
UNIT = (_unit, "must lie in (0, 1)")
AT_LEAST_ONE = (lambda x: x >= 1, "must be >= 1")

COMMON = [
    Key("command", "str", doc="experiment to run"),
    Key("law", "law", doc="interarrival law, e.g. pareto(alpha=0.5, scale=1)"),
    Key("seed", "int", 0, NONNEG, "master seed"),
]
PROCESS = [
    Key("lam", "float", REQUIRED, NONNEG, "infection rate"),
    Key("L", "int", REQUIRED, NONNEG, "window half-width (one-sided: [0, L])"),
    Key("initial", "ints", (0,), doc="initially infected sites"),
    Key("one_sided", "bool", False, doc="arrows x -> x+1 only"),
]


def _replicas(n):
    return Key("replicas", "int", n, AT_LEAST_ONE, "independent replicas")


COMMANDS = {
    "simulate": [
        *PROCESS, Key("T", "float", REQUIRED, POSITIVE, "time horizon"), _replicas(100),
        Key("origin_above", "float", 0.0, NONNEG, "condition the origin's first interarrival on (c, inf); 0 = off"),
        Key("detail", "bool", False, doc="one row per replica instead of a summary row"),
    ],
    "survival-curve": [
        *PROCESS, Key("horizons", "floats", REQUIRED, (_increasing, "must be strictly increasing")),
        _replicas(1000),
        Key("origin_above", "float", 0.0, NONNEG, "condition the origin's first interarrival on (c, inf); 0 = off"),
    ],
    "lambda-scan": [
        *[k for k in PROCESS if k.name != "lam"],
        Key("lambdas", "floats", REQUIRED, (_increasing, "must be strictly increasing")),
        Key("T", "float", REQUIRED, POSITIVE, "time horizon"), _replicas(1000),
    ],
    "lambda-upper": [
        *[k for k in PROCESS if k.name != "lam"],
        Key("T", "float", REQUIRED, POSITIVE, "time horizon"),
        Key("threshold", "float", 0.5, UNIT, "survival fraction to reach"),
        Key("bracket", "floats", REQUIRED, (lambda b: len(b) == 2 and 0 <= b[0] < b[1],
                                            "must be two rates 0 <= low < high")),
        Key("tol", "float", 0.01, POSITIVE, "bisection stops at this bracket width"),
        _replicas(200),
    ],
    "gap-prob": [
        Key("t", "floats", REQUIRED, (_all(_pos), "must be > 0")),
        Key("K", "float", 10.0, (lambda k: k > 1, "must be > 1")),
        _replicas(100000),
    ],
    "count-tail": [
        Key("t", "floats", REQUIRED, (_all(lambda t: t >= 10), "must be >= 10")),
        Key("eps3", "float", 0.5, UNIT),
        _replicas(100000),
    ],
    "quiet-interval": [
        Key("start", "float", REQUIRED, NONNEG, "left end of the search interval"),
        Key("length", "float", REQUIRED, (lambda x: x >= 10, "must be >= 10")),
        Key("eps3", "float", 0.5, UNIT),
        _replicas(100000),
        Key("validation_replicas", "int", 0, NONNEG, "fresh streams for validation; 0 = replicas"),
    ],
    "coupling": [
        Key("V0", "float", 10.0, AT_LEAST_ONE),
        Key("t", "ints", REQUIRED, (_all(lambda t: t >= 1), "must be >= 1")),
        Key("n", "ints", (), doc="exponents for the partial-sum tail rows"),
        Key("max_steps", "int", 10 ** 8, AT_LEAST_ONE),
        _replicas(10000),
    ],
    "far-gap": [
        Key("s", "floats", REQUIRED, (_all(lambda s: s >= 2), "must be >= 2")),
        Key("gap_exponent", "float", 0.1, UNIT),
        _replicas(100000),
    ],
    "levels": [
        Key("lam", "float", REQUIRED, NONNEG, "infection rate"),
        Key("t0", "float", REQUIRED, (lambda x: x > 1, "must be > 1")),
        Key("gamma", "float", 0.1, UNIT),
        Key("i_max", "int", 8, AT_LEAST_ONE),
        Key("log_base", "str", "e", (lambda b: b in analysis.LOGS, "must be e or 2")),
        Key("sites", "int", 10 ** 6, AT_LEAST_ONE, "one-sided site window"),
        _replicas(1000),
    ],
    "conditions": [
        Key("grid", "floats", REQUIRED, (_all(_pos), "must be > 0")),
        *[Key(f, "int" if f == "r2" else "float", getattr(ConditionParams(), f))
          for f in ("M1", "eps1", "t0", "M2", "eps2", "r2", "M3", "eps3")],
    ],
}
RUNTIME = [
    Key("out", "str", "-", doc="output path; - for stdout"),
    Key("workers", "int", 1, AT_LEAST_ONE, "processes for simulation batches"),
]


def keys_for(command: str) -> list:
    return COMMON + COMMANDS[command] + RUNTIME


@dataclass
class ExperimentSpec:
    command: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def law(self):
        return self.values["law"]

    def header(self) -> list:
        """``(key, text)`` pairs for every content-affecting key, in schema order."""
        out = []
        for key in COMMON + COMMANDS[self.command]:
            out.append((key.name, _render(key, self.values[key.name])))
        return out

    def config_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.header())


# -- parsing ----------------------------------------------------------------------

def _render(key: Key, value) -> str:
    if key.kind == "law":
        return value.expr()
    if key.kind == "bool":
        return "true" if value else "false"
    if key.kind in ("floats", "ints"):
        return ", ".join(format_value(v) for v in value)
    return format_value(value)


def _number(text: str, kind: str):
    if kind == "int":
        v = float(text) if any(c in text for c in ".eE") else int(text)
        if isinstance(v, float):
            if not v.is_integer():
                raise ValueError(f"{text!r} is not an integer")
            v = int(v)
        return v
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"{text!r} is not finite")
    return v


def _literal(node):
    value = ast.literal_eval(node)
    if isinstance(value, list):
        value = tuple(value)
    return value


def parse_law(text: str):
    """``pareto(alpha=0.5, scale=1)`` style expression to a law object."""
    try:
        node = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise ValueError(f"cannot parse law expression {text!r}") from exc
    if isinstance(node, ast.Name):
        node = ast.Call(func=node, args=[], keywords=[])
    if not (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)):
        raise ValueError(f"law must look like name(key=value, ...) (got {text!r})")
    name = node.func.id
    if name not in LAWS:
        raise ValueError(f"unknown law {name!r}; choose from {', '.join(LAWS)}")
    try:
        args = [_literal(a) for a in node.args]
        kwargs = {k.arg: _literal(k.value) for k in node.keywords}
    except ValueError as exc:
        raise ValueError(f"law arguments must be literals ({text!r})") from exc
    unknown = set(kwargs) - set(LAW_PARAMS[name])
    if unknown:
        raise ValueError(f"{name} has no parameter {sorted(unknown)[0]!r}; "
                         f"expected {', '.join(LAW_PARAMS[name])}")
    try:
        return LAWS[name](*args, **kwargs)
    except TypeError as exc:
        raise ValueError(f"bad arguments for {name}: {exc}") from exc


def _convert(key: Key, text: str):
    text = text.strip()
    if key.kind == "str":
        return text
    if key.kind == "law":
        return parse_law(text)
    if key.kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{text!r} is not a boolean")
    if key.kind in ("floats", "ints"):
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(_number(p.strip(), key.kind[:-1]) for p in parts)
    return _number(text, key.kind)


def _split_lines(text: str, origin: str):
    """``(key, value, where)`` triples from config text."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin} line {lineno}: expected 'key = value' (got {raw.strip()!r})")
        key, value = line.split("=", 1)
        # a law expression contains '=' itself; only the first one separates the key
        yield key.strip(), value.strip(), f"{origin} line {lineno}"


def parse_config(text: str = "", overrides=(), origin: str = "config") -> ExperimentSpec:
    """Validate config text plus ``(key, value, where)`` overrides into a spec.

    Later entries win, so overrides listed after the file take precedence.
    """
    raw: dict = {}
    for key, value, where in list(_split_lines(text, origin)) + list(overrides):
        if not key:
            raise ConfigError(f"{where}: empty key")
        raw[key] = (value, where)

    if "command" not in raw:
        raise ConfigError("missing required key 'command'")
    command, where = raw["command"]
    if command not in COMMANDS:
        raise ConfigError(f"{where}: unknown command {command!r}; choose from {', '.join(COMMANDS)}")

    schema = {k.name: k for k in keys_for(command)}
    law_family = None
    if "law" in raw:
        head = raw["law"][0].strip()
        if head in LAW_PARAMS:
            law_family = head
    allowed_law_keys = set(LAW_PARAMS[law_family]) if law_family else set()
    for key, (_, where) in raw.items():
        if key not in schema and key not in allowed_law_keys:
            raise ConfigError(f"{where}: unknown key {key!r} for command {command!r}")

    values = {}
    for name, key in schema.items():
        if name not in raw:
            if key.default is REQUIRED:
                raise ConfigError(f"missing required key {name!r} for command {command!r}")
            values[name] = key.default
            continue
        text, where = raw[name]
        if name == "law" and law_family:
            values[name] = _law_from_keys(law_family, raw, where)
            continue
        try:
            value = _convert(key, text)
        except ValueError as exc:
            raise ConfigError(f"{where}: {name} = {text}: {exc}") from None
        if key.check and not key.check[0](value):
            raise ConfigError(f"{where}: {name} = {text}: {name} {key.check[1]}")
        values[name] = value
    return ExperimentSpec(command, values)


def _law_from_keys(family: str, raw: dict, law_where: str):
    kwargs = {}
    for p in LAW_PARAMS[family]:
        if p in raw:
            text, where = raw[p]
            try:
                node = ast.parse(text, mode="eval").body
                kwargs[p] = _literal(node)
            except (SyntaxError, ValueError):
                raise ConfigError(f"{where}: {p} = {text}: not a literal") from None
    try:
        return LAWS[family](**kwargs)
    except (TypeError, ValueError) as exc:
        bad = next((p for p in kwargs if p in str(exc)), None)
        where = raw[bad][1] if bad else law_where
        shown = f"{bad} = {raw[bad][0]}" if bad else f"law = {family}"
        raise ConfigError(f"{where}: {shown}: {exc}") from None


# -- running ----------------------------------------------------------------------

def _sim_config(spec: ExperimentSpec, **changes) -> engine.SimConfig:
    v = spec.values
    base = dict(law=v["law"], lam=v.get("lam", 0.0), L=v["L"], T=v.get("T", 1.0),
                initial=tuple(v["initial"]), replicas=v["replicas"], seed=v["seed"],
                one_sided=v["one_sided"])
    base.update(changes)
    return engine.SimConfig(**base)


def _run_simulate(spec):
    cfg = _sim_config(spec)
    c = spec["origin_above"]
    batch = engine.conditioned_origin_batch(cfg, c, spec["workers"], keep_outcomes=spec["detail"])
    if spec["detail"]:
        rows = [o.row() for o in batch.outcomes]
        s = batch.survival
        return engine.REPLICA_COLUMNS, rows, [("survival_frac", s.p), ("ci_low", s.ci_low),
                                              ("ci_high", s.ci_high)]
    return engine.SUMMARY_COLUMNS, [batch.row()], []


def _run_survival_curve(spec):
    horizons = spec["horizons"]
    cfg = _sim_config(spec, T=horizons[-1])
    c = spec["origin_above"]
    curve = analysis.survival_curve(cfg, horizons, spec["workers"], first_above=c if c > 0 else None)
    return analysis.CURVE_COLUMNS, list(curve.rows()), []


def _run_lambda_scan(spec):
    lambdas = spec["lambdas"]
    scan = analysis.lambda_scan(_sim_config(spec, lam=lambdas[-1]), lambdas, spec["workers"])
    cols = ("lambda",) + analysis.CURVE_COLUMNS[1:]
    return cols, list(scan.rows()), []


def _run_lambda_upper(spec):
    lo, hi = spec["bracket"]
    res = analysis.estimate_lambda_c_upper(_sim_config(spec, lam=hi), spec["threshold"],
                                           (lo, hi), spec["tol"], spec["workers"])
    return analysis.LAMBDA_UPPER_COLUMNS, [res.row()], []


def _run_gap_prob(spec):
    rows = [renewal.estimate_gap_probability(spec.law, t, spec["K"], spec["replicas"],
                                             spec["seed"]).row() for t in spec["t"]]
    return renewal.ESTIMATE_COLUMNS, rows, []


def _run_count_tail(spec):
    rows = []
    for t in spec["t"]:
        est = renewal.estimate_count_tail(spec.law, t, spec["eps3"], spec["replicas"], spec["seed"])
        rows.append(est.row() + (est.extra["cutoff"], est.extra["bound"]))
    return renewal.ESTIMATE_COLUMNS + ("cutoff", "bound"), rows, []


def _run_quiet_interval(spec):
    q = renewal.find_quiet_subinterval(spec.law, spec["start"], spec["length"], spec["eps3"],
                                       spec["replicas"], spec["seed"],
                                       spec["validation_replicas"] or None)
    return renewal.QUIET_COLUMNS, [q.row()], [("candidates", q.candidates)]


def _run_coupling(spec):
    table = renewal.estimate_coupling_tails(spec.law, spec["V0"], spec["t"], spec["n"],
                                            spec["replicas"], spec["seed"], spec["max_steps"])
    results = [("interval_low", table.interval[0]), ("interval_high", table.interval[1]),
               ("K_emp", table.K_emp)]
    return renewal.COUPLING_COLUMNS, list(table.rows()), results


def _run_far_gap(spec):
    table = renewal.estimate_far_gap(spec.law, spec["s"], spec["gap_exponent"], spec["replicas"],
                                     spec["seed"])
    return renewal.FAR_GAP_COLUMNS, list(table.rows()), [("decay_exponent", table.decay_exponent)]


def _run_levels(spec):
    table = analysis.estimate_bad_event_rates(spec.law, spec["lam"], spec["t0"], spec["gamma"],
                                              spec["i_max"], spec["replicas"], spec["seed"],
                                              spec["log_base"], spec["sites"])
    results = [("sum_p_bad", table.total), ("spearman", table.spearman),
               ("window_exhausted", table.exhausted)]
    return analysis.BAD_EVENT_COLUMNS, list(table.rows()), results


def _run_conditions(spec):
    params = ConditionParams(**{f: spec[f] for f in ("M1", "eps1", "t0", "M2", "eps2", "r2",
                                                     "M3", "eps3")})
    reports = distributions.check_conditions(spec.law, params, spec["grid"])
    rows = [r for rep in reports.values() for r in rep.rows()]
    results = [(f"verdict_{c}", rep.verdict) for c, rep in reports.items()]
    return ("condition", "point", "lhs", "rhs", "margin", "pass"), rows, results


RUNNERS = {
    "simulate": _run_simulate,
    "survival-curve": _run_survival_curve,
    "lambda-scan": _run_lambda_scan,
    "lambda-upper": _run_lambda_upper,
    "gap-prob": _run_gap_prob,
    "count-tail": _run_count_tail,
    "quiet-interval": _run_quiet_interval,
    "coupling": _run_coupling,
    "far-gap": _run_far_gap,
    "levels": _run_levels,
    "conditions": _run_conditions,
}


def render(spec: ExperimentSpec) -> str:
    """Run the experiment and return the CSV text."""
    columns, rows, results = RUNNERS[spec.command](spec)
    return render_csv(spec.header(), columns, rows, results)


def run_command(spec: ExperimentSpec, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        text = render(spec)
    except (renewal.CouplingTruncated, analysis.WindowExhausted, OracleLimitError,
            MemoryError) as exc:
        print(f"rcplab: {spec.command}: {exc}", file=stderr)
        return EXIT_RESOURCE
    except ValueError as exc:
        print(f"rcplab: {spec.command}: invalid parameters: {exc}", file=stderr)
        return EXIT_CONFIG
    out = spec["out"]
    try:
        if out == "-":
            stdout.write(text)
        else:
            with open(out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except OSError as exc:
        print(f"rcplab: cannot write {out}: {exc}", file=stderr)
        return EXIT_IO
    return EXIT_OK


def _usage_keys() -> str:
    lines = ["commands and keys (default in brackets):"]
    for cmd, keys in COMMANDS.items():
        lines.append(f"  {cmd}")
        for k in keys:
            d = "required" if k.default is REQUIRED else _render(k, k.default) if k.kind != "law" else ""
            lines.append(f"    {k.name} [{d}]" + (f"  {k.doc}" if k.doc else ""))
    lines.append("  every command: law [required], seed [0], out [-], workers [1]")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rcplab", description="Monte Carlo experiments for the renewal contact process.",
        epilog=_usage_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", nargs="?", help="overrides 'command' from the config")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", metavar="N")
    p.add_argument("--replicas", metavar="N")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--workers", metavar="N")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="sets")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    text = ""
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"rcplab: cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_IO
    overrides = []
    if args.command:
        overrides.append(("command", args.command, "command line"))
    for item in args.sets:
        if "=" not in item:
            print(f"rcplab: --set {item}: expected KEY=VALUE", file=sys.stderr)
            return EXIT_CONFIG
        k, v = item.split("=", 1)
        overrides.append((k.strip(), v.strip(), f"--set {k.strip()}"))
    for flag in ("seed", "replicas", "out", "workers"):
        value = getattr(args, flag)
        if value is not None:
            overrides.append((flag, value, f"--{flag}"))
    try:
        spec = parse_config(text, overrides, origin=args.config or "config")
    except ConfigError as exc:
        if "unknown command" in str(exc) or "missing required key 'command'" in str(exc):
            parser.print_usage(sys.stderr)
        print(f"rcplab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_command(spec)


if __name__ == "__main__":
    sys.exit(main())
