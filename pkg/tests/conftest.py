import csv
import io

import numpy as np

from rcplab.distributions import Exponential, ParetoType
from rcplab.harris import HarrisSystem, dump_events
from rcplab.streams import derive_rng


def random_system(case: int, max_sites: int = 6, max_horizon: float = 10.0,
                  lams=(0.5, 2.0), tag: str = "case"):
    """A small random system plus a random source/target pair, from one case id."""
    rng = derive_rng(12345, tag, case)
    n_sites = int(rng.integers(1, max_sites + 1))
    lo = int(rng.integers(-3, 1))
    window = (lo, lo + n_sites - 1)
    horizon = float(rng.uniform(1.0, max_horizon))
    lam = float(rng.choice(lams))
    law = Exponential(1.0) if rng.random() < 0.5 else ParetoType(0.5, 0.5)
    one_sided = bool(rng.random() < 0.3)
    system = HarrisSystem(law, lam, window, horizon, one_sided, seed=case, replica=0)
    x = int(rng.integers(window[0], window[1] + 1))
    y = int(rng.integers(window[0], window[1] + 1))
    s, t = sorted(rng.uniform(0.0, horizon, 2))
    if rng.random() < 0.2:
        s = 0.0
    return system, (x, float(s)), (y, float(t))


def load_events(system, t_max=None):
    """Deaths per site and arrows per edge, read back from the CSV dump."""
    buf = io.StringIO()
    dump_events(system, buf, t_max)
    buf.seek(0)
    deaths, arrows = {}, {}
    for row in csv.DictReader(buf):
        t = float(row["time"])
        if row["kind"] == "death":
            deaths.setdefault(int(row["site"]), []).append(t)
        else:
            arrows.setdefault((int(row["site"]), int(row["target"])), []).append(t)
    return deaths, arrows


def validate_certificate(system, cert, source, target) -> bool:
    """Re-check a path certificate against the dumped events."""
    deaths, arrows = load_events(system)
    steps = list(cert.steps)
    if steps[0] != source or cert.terminal != target[1] or steps[-1][0] != target[0]:
        return False
    times = [t for _, t in steps] + [cert.terminal]
    jumps = times[1:-1]
    if any(b <= a for a, b in zip(jumps, jumps[1:])):
        return False
    if jumps and not source[1] < jumps[0] <= jumps[-1] < target[1]:
        return False
    for i, (x, t_in) in enumerate(steps):
        t_out = times[i + 1]
        if t_out < t_in:
            return False
        d = np.asarray(deaths.get(x, []))
        if np.any((d >= t_in) & (d <= t_out)):
            return False
        if i + 1 < len(steps):
            y = steps[i + 1][0]
            if abs(y - x) != 1 or t_out not in arrows.get((x, y), []):
                return False
    return True


ACCEPTANCE_LINES = []


def record_criterion(number: int, ok: bool, text: str) -> str:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {text}"
    ACCEPTANCE_LINES.append((number, line))
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
