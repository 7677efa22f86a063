"""The ergoloop command line: configured runs with written, audited reports.

Each subcommand resolves its flags (and an optional flat config file)
into one ExperimentConfig, runs a library pipeline under a fixed seed,
and writes three artifacts next to each other under the output
directory: a JSON report with the verdicts, a CSV series with the
per-step numbers, and rendered PNG figures.  A run is a pure function
of its configuration: the seed fixes every randomized choice, so a
rerun reproduces the report values bit for bit (wall time is recorded
but exempt).

Exit codes: 0 when every rule check passes, 2 when the run completes
but a verdict fails, 1 for usage or runtime errors.  Everything happens
in a single process; the ERGOLOOP_THREADS environment variable caps the
numeric library thread pools.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .averaging import (
    CoveringResponse,
    OperatorChain,
    contraction_constant,
    flatten_sup_traced,
    sublevel_bounds_check,
)
from .construct import (
    ProductSet,
    _as_rationality,
    conjugation_identity_defect,
    conjugated_orbit_coverage,
    conjugator_for_minimality,
    conjugator_for_unique_ergodicity,
    ergodic_average_sups,
    fiberwise_center,
    first_small_ergodic_average,
    loop_certificate,
    loop_integral_recheck,
    small_integral_loop,
)
from .covering import CoveringFamily, global_covering, grid_covering_oracle, verify_covering
from .dynamics import SkewProduct, furstenberg_loop, trivial_loop
from .errors import ConfigError, ErgoloopError, InvalidFieldError
from .hofer import NormalizedHamiltonian, loop_length
from .phase import IRRATIONALS, ScalarField, TorusGrid, TrigPoly, scale_field, sup_norm
from .report import (
    RuleCheck,
    RunReport,
    heatmap_figure,
    jsonable,
    line_figure,
    write_csv_series,
    write_json_report,
)
from .shortening import normalized_length_sequence

_COMMANDS = ("demo", "shorten", "average", "cover", "construct", "diagnose")
_SCENARIOS = ("furstenberg", "identity")
_ORACLES = ("orbit", "assembled")

_INT_KEYS = frozenset(
    ("res_t", "res_y1", "res_y2", "budget", "n_max", "n_fields", "cells", "spread", "seed")
)
_FLOAT_KEYS = frozenset(("eps", "target"))
_STR_KEYS = frozenset(
    ("scenario", "alpha", "beta", "oracle", "rationality", "out_dir", "verify_only")
)

# resolution/knob defaults tuned per command; flags and config files override
_COMMAND_DEFAULTS = {
    "average": {"res_y1": 32, "res_y2": 32},
    "cover": {"res_y1": 32, "res_y2": 32},
    "construct": {"res_t": 1024, "res_y1": 8, "res_y2": 8},
    "diagnose": {"res_t": 32, "res_y1": 16, "res_y2": 16, "rationality": "1/4"},
}


def _resolve_angle(spec, name: str) -> float:
    """A named catalog rotation or an exact rational p/q, as a float."""
    txt = str(spec).strip()
    if txt in IRRATIONALS:
        return float(IRRATIONALS[txt])
    if "/" in txt:
        try:
            return float(Fraction(txt))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{name}: malformed rational {txt!r}")
    names = ", ".join(sorted(IRRATIONALS))
    raise ConfigError(f"{name} must be one of {names} or a rational p/q, got {txt!r}")


def _parse_rational(spec) -> Fraction:
    txt = str(spec).strip()
    if "." in txt:  # 0.333 would silently become 333/1000; insist on p/q
        raise ConfigError(f"rationality must be an exact p/q, got {txt!r}")
    try:
        return _as_rationality(txt)
    except InvalidFieldError as exc:
        raise ConfigError(f"rationality: {exc}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved run parameters; construction validates every knob."""

    command: str
    scenario: str = "furstenberg"
    res_t: int = 64
    res_y1: int = 64
    res_y2: int = 64
    alpha: str = "golden"
    beta: str = "sqrt2m1"
    eps: float = 0.1
    target: float = 0.05
    budget: int = 100000
    n_max: int = 1000
    n_fields: int = 3
    oracle: str = "orbit"
    spread: int = 1
    cells: int = 12
    rationality: str = "1/3"
    seed: int = 20260825
    out_dir: str = "runs"
    verify_only: str = ""

    def __post_init__(self):
        if self.command not in _COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.scenario not in _SCENARIOS:
            raise ConfigError(
                f"scenario must be one of {', '.join(_SCENARIOS)}, got {self.scenario!r}"
            )
        if self.oracle not in _ORACLES:
            raise ConfigError(
                f"oracle must be one of {', '.join(_ORACLES)}, got {self.oracle!r}"
            )
        for name in ("res_t", "res_y1", "res_y2", "budget", "n_max",
                     "n_fields", "cells", "spread"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        for name in ("eps", "target"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be a number")
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
            object.__setattr__(self, name, value)
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        _resolve_angle(self.alpha, "alpha")
        _resolve_angle(self.beta, "beta")
        _parse_rational(self.rationality)

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


# ---------------------------------------------------------------------------
# Argument and config-file parsing


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so the caller owns the exit code."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(sub):
    sub.add_argument("--config", metavar="FILE",
                     help="flat 'key = value' file; command-line flags override it")
    sub.add_argument("--out", dest="out_dir", metavar="DIR",
                     help="directory for the report, series, and figures (default: runs)")
    sub.add_argument("--seed", type=int,
                     help="64-bit seed fixing every randomized choice")
    sub.add_argument("--res-t", type=int, help="time-circle resolution")
    sub.add_argument("--res-y1", type=int, help="first torus-factor resolution")
    sub.add_argument("--res-y2", type=int, help="second torus-factor resolution")
    sub.add_argument("--alpha", help="base rotation: golden, sqrt2m1, or a rational p/q")
    sub.add_argument("--beta", help="fiber rotation: golden, sqrt2m1, or a rational p/q")
    sub.add_argument("--eps", type=float, help="smallness threshold for constructions")
    sub.add_argument("--target", type=float, help="sup-norm target for flattening")
    sub.add_argument("--budget", type=int,
                     help="iteration cap for searches and recursions")


_LENGTH_COLUMNS = (
    "CSV columns: N (iterate count), ell_N (normalized loop length of the\n"
    "N-fold composite), oracle_bound (exact single-harmonic envelope at N)."
)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ergoloop",
        description="Strictly ergodic skew products: audited experiment runs.",
    )
    subparsers = parser.add_subparsers(
        dest="command", metavar="command", required=True, parser_class=_Parser
    )

    def add_command(name, description, epilog):
        sub = subparsers.add_parser(
            name,
            description=description,
            epilog=epilog,
            argument_default=argparse.SUPPRESS,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        _add_common(sub)
        return sub

    demo = add_command(
        "demo",
        "Catalog tour: normalized loop lengths along a skew-product iteration, "
        "checked against the exact envelope.",
        _LENGTH_COLUMNS,
    )
    demo.add_argument(
        "scenario", nargs="?", choices=_SCENARIOS,
        help="furstenberg: catalog rotation pair, lengths decay; "
             "identity: control system, lengths stay put",
    )
    demo.add_argument("--N", dest="n_max", type=int, help="largest iterate count")

    shorten = add_command(
        "shorten",
        "Birkhoff-sum shortening for the configured rotation pair.",
        _LENGTH_COLUMNS,
    )
    shorten.add_argument("--N", dest="n_max", type=int, help="largest iterate count")

    average = add_command(
        "average",
        "Flatten random zero-mean fields below the target sup norm by "
        "covering-certified averaging.",
        "CSV columns: field (index of the random target), side (plus or minus\n"
        "flattening pass), i (recursion step), m_i (running maximum before\n"
        "step i), contraction_bound (certified ceiling m*(1 - m/c) + 1e-10 of\n"
        "the step that produced m_i; the first row of a pass echoes m_0).",
    )
    average.add_argument("--fields", dest="n_fields", type=int,
                         help="how many random target fields to flatten")
    average.add_argument("--oracle", choices=_ORACLES,
                         help="covering oracle style answering each step")
    average.add_argument("--spread", type=int,
                         help="chart count r for the assembled oracle")

    cover = add_command(
        "cover",
        "Build a covering family for a random cell set and certify the "
        "visit-count inequality in exact integers.",
        "CSV columns: cell (flat y-cell id), visits (weighted times the family\n"
        "covers the cell), required (least visit count the integer certificate\n"
        "needs at every cell).",
    )
    cover.add_argument("--cells", type=int, help="size of the random covered set A")
    cover.add_argument("--spread", type=int, help="chart count r of the assembly")
    cover.add_argument("--verify-only", dest="verify_only", metavar="FIXTURE",
                       help="skip building; re-verify a family fixture JSON file")

    construct = add_command(
        "construct",
        "Build the small-integral loop for the centered traveling wave and "
        "audit its certificates on the refined grid.",
        "CSV columns: i (time interval index), interval_term (sup of the\n"
        "averaged contribution J_i), term_bound (eps/(3M)), interval_drift\n"
        "(worst in-interval field drift), drift_bound (eps/9).",
    )
    construct.add_argument("--rationality", help="exact loop period p/q")

    diagnose = add_command(
        "diagnose",
        "Certify minimality (orbit coverage from a quarter-size window) and "
        "vanishing ergodic averages for the conjugated shift.",
        "CSV columns: n (ergodic average horizon), g_sup (sup norm of the\n"
        "n-th ergodic average of the conjugated field).",
    )
    diagnose.add_argument("--rationality", help="exact conjugator period p/q")

    return parser


def _read_config_file(path) -> dict:
    """Flat 'key = value' lines: '#' comments, known keys only, typed."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: {key} expects an integer, got {value!r}")
        elif key in _FLOAT_KEYS:
            try:
                values[key] = float(value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: {key} expects a number, got {value!r}")
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def parse_config(argv) -> ExperimentConfig:
    """Flags layered over the config file layered over per-command defaults."""
    parser = build_parser()
    namespace = parser.parse_args(argv)
    given = vars(namespace)
    command = given.pop("command")
    config_path = given.pop("config", None)
    merged = {
        f.name: f.default
        for f in dataclasses.fields(ExperimentConfig)
        if f.name != "command"
    }
    merged.update(_COMMAND_DEFAULTS.get(command, {}))
    if config_path:
        merged.update(_read_config_file(config_path))
    merged.update(given)
    return ExperimentConfig(command=command, **merged)


# ---------------------------------------------------------------------------
# Runners: each returns (metrics, checks, artifacts)


def _cosine_hamiltonian(grid: TorusGrid) -> NormalizedHamiltonian:
    poly = TrigPoly.cosine(3, (0, 0, 1))
    return NormalizedHamiltonian(ScalarField.from_closed_form(grid, poly, "S1xY"))


def _decade_ladder(n_max: int):
    """1-2-5 ladder up to and including n_max."""
    ns = []
    base = 1
    while base <= n_max:
        for mult in (1, 2, 5):
            value = base * mult
            if value <= n_max:
                ns.append(value)
        base *= 10
    if ns[-1] != n_max:
        ns.append(n_max)
    return ns


def _run_lengths(config: ExperimentConfig, rng, out: Path, scenario: str):
    grid = TorusGrid(config.res_t, (config.res_y1, config.res_y2))
    H = _cosine_hamiltonian(grid)
    alpha = _resolve_angle(config.alpha, "alpha")
    if scenario == "identity":
        loop = trivial_loop()
    else:
        loop = furstenberg_loop(_resolve_angle(config.beta, "beta"))
    system = SkewProduct(alpha, loop)
    Ns = _decade_ladder(config.n_max)
    trace = normalized_length_sequence(H, system, Ns)
    lengths = trace.lengths
    bounds = trace.oracle_bounds
    L = loop_length(H)

    checks = [
        RuleCheck.compare(
            "length-under-oracle-envelope", float((lengths - bounds).max()), "<=", 1e-9
        )
    ]
    if scenario == "identity":
        checks.append(
            RuleCheck.compare(
                "identity-length-constancy", float(np.abs(lengths - L).max()), "==", 0.0
            )
        )
    else:
        checks.append(
            RuleCheck.compare(
                "oracle-envelope-agreement",
                float(np.abs(lengths - bounds).max()),
                "<=",
                1e-9,
            )
        )

    name = config.command
    csv_path = write_csv_series(
        out / f"{name}-series.csv",
        ("N", "ell_N", "oracle_bound"),
        zip(trace.Ns, lengths, bounds),
    )
    fig_path = line_figure(
        out / f"{name}-lengths.png",
        trace.Ns,
        {"ell_N": lengths, "oracle_bound": bounds},
        title=f"normalized loop lengths ({scenario})",
        xlabel="N",
        ylabel="length per iterate",
        logy=scenario != "identity",
    )
    metrics = {
        "scenario": scenario,
        "Ns": list(trace.Ns),
        "lengths": lengths,
        "oracle_bounds": bounds,
        "terminal_length": float(lengths[-1]),
        "generator_length": L,
    }
    artifacts = {"series_csv": str(csv_path), "lengths_png": str(fig_path)}
    return metrics, checks, artifacts


def _run_demo(config, rng, out):
    return _run_lengths(config, rng, out, config.scenario)


def _run_shorten(config, rng, out):
    return _run_lengths(config, rng, out, "furstenberg")


def _random_zero_mean_field(grid: TorusGrid, rng) -> ScalarField:
    values = rng.uniform(-1.0, 1.0, size=grid.res_y)
    values -= values.mean()
    peak = float(np.abs(values).max())
    if peak > 1.0:
        values /= peak
    values -= values.mean()  # keep the mean at zero after rescaling
    return ScalarField(grid, values, "Y")


def _replay_bound_audits(f: ScalarField, trace):
    """Re-audit the sublevel mass and visit floors along a finished trace."""
    audits = []
    cur = f
    for op, (c1, c2) in zip(trace.operators, trace.constants):
        audits.append(sublevel_bounds_check(cur, CoveringResponse(op, c1, c2)))
        cur = op.apply(cur)
    return audits


def _trace_rows(field_idx: int, side: str, trace):
    rows = [(field_idx, side, 0, trace.m[0], trace.m[0])]
    for i in range(1, len(trace.m)):
        prev = trace.m[i - 1]
        c_step = contraction_constant(*trace.constants[i - 1])
        rows.append(
            (field_idx, side, i, trace.m[i], prev * (1.0 - prev / c_step) + 1e-10)
        )
    return rows


def _run_average(config, rng, out):
    grid = TorusGrid(2, (config.res_y1, config.res_y2))
    oracle = grid_covering_oracle(grid, style=config.oracle, r=config.spread)
    rows = []
    step_margins = []
    mass_margins = []
    visit_margins = []
    finals = []
    ratios = []
    per_field = []
    m_curves = []
    for k in range(config.n_fields):
        f = _random_zero_mean_field(grid, rng)
        chain, plus, minus = flatten_sup_traced(
            f, oracle, config.target, max_iter=config.budget, check_bounds=True
        )
        final = sup_norm(chain.apply(f))
        finals.append(final)
        minus_source = scale_field(OperatorChain(plus.operators).apply(f), -1.0)
        for side, trace, source in (("plus", plus, f), ("minus", minus, minus_source)):
            side_rows = _trace_rows(k, side, trace)
            rows.extend(side_rows)
            step_margins.extend(row[3] - row[4] for row in side_rows[1:])
            for audit in _replay_bound_audits(source, trace):
                if not audit.skipped:
                    mass_margins.append(audit.mass_ratio - audit.mass_bound)
                    visit_margins.append(audit.visit_ratio - audit.visit_bound)
        steps = (len(plus.m) - 1) + (len(minus.m) - 1)
        c_worst = max(
            (c for c in (plus.c, minus.c) if math.isfinite(c)), default=math.inf
        )
        if steps and math.isfinite(c_worst):
            ratios.append(steps / math.ceil(3.0 * c_worst / config.target))
        per_field.append(
            {
                "final_sup": final,
                "steps_plus": len(plus.m) - 1,
                "steps_minus": len(minus.m) - 1,
                "largest_c": None if math.isinf(c_worst) else c_worst,
                "m_plus": list(plus.m),
                "m_minus": list(minus.m),
            }
        )
        m_curves.append(plus.m)

    checks = [
        RuleCheck.compare(
            "contraction-step-ceiling", max(step_margins, default=0.0), "<=", 0.0
        ),
        RuleCheck.compare(
            "flattened-sup-under-target", max(finals), "<", config.target
        ),
        RuleCheck.compare(
            "iteration-count-within-guarantee", max(ratios, default=0.0), "<=", 1.0
        ),
        RuleCheck.compare(
            "sublevel-mass-floor", min(mass_margins, default=0.0), ">=", -1e-12
        ),
        RuleCheck.compare(
            "visit-count-floor", min(visit_margins, default=0.0), ">=", -1e-12
        ),
    ]

    csv_path = write_csv_series(
        out / "average-series.csv",
        ("field", "side", "i", "m_i", "contraction_bound"),
        rows,
    )
    width = max(len(m) for m in m_curves)
    curves = {}
    for k, m in enumerate(m_curves):
        padded = np.full(width, np.nan)
        padded[: len(m)] = m
        curves[f"field {k}"] = padded
    fig_path = line_figure(
        out / "average-trace.png",
        np.arange(width),
        curves,
        title="running maxima under averaging",
        xlabel="step",
        ylabel="max before step",
        logy=True,
    )
    metrics = {
        "oracle": config.oracle,
        "fields": per_field,
        "worst_final_sup": max(finals),
    }
    artifacts = {"series_csv": str(csv_path), "trace_png": str(fig_path)}
    return metrics, checks, artifacts


def _independent_recount(members, weights, n_cells: int):
    """Visit counts recomputed with plain integer loops, no array ops."""
    counts = [0] * int(n_cells)
    for member, weight in zip(members, weights):
        w = int(weight)
        for cell in np.asarray(member).tolist():
            counts[int(cell)] += w
    return counts


def _family_checks(family: CoveringFamily, a_cells, c1: int, c2: int):
    verdict = verify_covering(family, a_cells, c1, c2)
    counts = family.counting_function()
    denominator = c1 * a_cells.size + c2 * family.n_cells
    required = -(-family.size * a_cells.size // denominator)
    recount = _independent_recount(family.members, family.weights, family.n_cells)
    mismatches = sum(
        1 for got, want in zip(recount, counts.tolist()) if got != want
    )
    checks = [
        RuleCheck.compare(
            "covering-integer-certificate", verdict.lhs, ">=", verdict.rhs
        ),
        RuleCheck.compare("covering-visit-floor", verdict.nu_min, ">=", required),
        RuleCheck.compare("visit-recount-agreement", mismatches, "==", 0),
    ]
    return verdict, counts, required, checks


def _run_cover(config, rng, out):
    if config.verify_only:
        return _run_cover_verify(config, out)
    grid = TorusGrid(2, (config.res_y1, config.res_y2))
    n_cells = grid.n_y_cells
    if config.cells > n_cells:
        raise InvalidFieldError(
            f"cells = {config.cells} exceeds the {n_cells}-cell grid"
        )
    a_cells = np.sort(rng.choice(n_cells, size=config.cells, replace=False))
    assembled = global_covering(grid, a_cells, r=config.spread)
    family = assembled.family
    verdict, counts, required, checks = _family_checks(
        family, a_cells, assembled.c1, assembled.c2
    )

    fixture = {
        "n_cells": n_cells,
        "a_cells": a_cells,
        "c1": assembled.c1,
        "c2": assembled.c2,
        "weights": list(family.weights),
        "members": list(family.members),
    }
    fixture_path = out / "cover-family.json"
    fixture_path.write_text(
        json.dumps(jsonable(fixture), sort_keys=True), encoding="utf-8"
    )

    csv_path = write_csv_series(
        out / "cover-series.csv",
        ("cell", "visits", "required"),
        ((cell, int(counts[cell]), required) for cell in range(n_cells)),
    )
    fig_path = heatmap_figure(
        out / "cover-visits.png",
        counts.reshape(grid.res_y),
        title="family visit counts",
    )
    metrics = {
        "covered_set_size": int(a_cells.size),
        "family_members": len(family.members),
        "family_size": family.size,
        "nu_min": verdict.nu_min,
        "worst_cell": verdict.worst_cell,
        "required_visits": required,
        "c1": assembled.c1,
        "c2": assembled.c2,
        "charts": assembled.n_charts,
    }
    artifacts = {
        "series_csv": str(csv_path),
        "visits_png": str(fig_path),
        "family_fixture": str(fixture_path),
    }
    return metrics, checks, artifacts


def _run_cover_verify(config, out):
    path = Path(config.verify_only)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidFieldError(f"cannot read fixture: {exc}")
    except json.JSONDecodeError as exc:
        raise InvalidFieldError(f"malformed fixture {path}: {exc}")
    missing = {"n_cells", "a_cells", "c1", "c2", "members", "weights"} - set(data)
    if missing:
        raise InvalidFieldError(f"fixture missing keys: {', '.join(sorted(missing))}")
    family = CoveringFamily(
        int(data["n_cells"]), tuple(data["members"]), tuple(data["weights"])
    )
    a_cells = np.asarray(data["a_cells"], dtype=np.int64).reshape(-1)
    verdict, counts, required, checks = _family_checks(
        family, a_cells, int(data["c1"]), int(data["c2"])
    )
    csv_path = write_csv_series(
        out / "cover-series.csv",
        ("cell", "visits", "required"),
        ((cell, int(counts[cell]), required) for cell in range(family.n_cells)),
    )
    metrics = {
        "fixture": str(path),
        "covered_set_size": int(a_cells.size),
        "family_members": len(family.members),
        "family_size": family.size,
        "nu_min": verdict.nu_min,
        "worst_cell": verdict.worst_cell,
        "required_visits": required,
    }
    artifacts = {"series_csv": str(csv_path)}
    return metrics, checks, artifacts


def _run_construct(config, rng, out):
    grid = TorusGrid(config.res_t, (config.res_y1, config.res_y2))
    wave = TrigPoly.cosine(3, (1, 0, 1))
    F = fiberwise_center(ScalarField.from_closed_form(grid, wave, "S1xY"))
    r = _parse_rational(config.rationality)
    loop = small_integral_loop(F, config.eps, r)
    cert = loop_certificate(F, loop)
    recheck = loop_integral_recheck(F, loop)

    m_rep = loop.repetition
    res = cert.res_t
    pieces = loop.sample_pieces(res)
    period_shift = res * r.numerator // r.denominator
    mism = int((pieces != np.roll(pieces, -period_shift)).sum())
    profile_sup = float(np.abs(cert.integral_profile).max())
    dual_gap = float(np.abs(cert.integral_profile - recheck).max())
    term_bound = config.eps / (3.0 * m_rep)
    drift_bound = config.eps / 9.0

    checks = [
        RuleCheck.compare("loop-integral-profile-under-eps", profile_sup, "<", config.eps),
        RuleCheck.compare(
            "interval-terms-under-third-share", float(cert.interval_terms.max()),
            "<", term_bound,
        ),
        RuleCheck.compare(
            "interval-drift-under-ninth", float(cert.interval_drift.max()),
            "<", drift_bound,
        ),
        RuleCheck.compare("rational-periodicity-exact", mism, "==", 0),
        RuleCheck.compare("dual-route-quadrature-agreement", dual_gap, "<=", 1e-12),
    ]

    csv_path = write_csv_series(
        out / "construct-series.csv",
        ("i", "interval_term", "term_bound", "interval_drift", "drift_bound"),
        (
            (i, float(cert.interval_terms[i]), term_bound,
             float(cert.interval_drift[i]), drift_bound)
            for i in range(m_rep)
        ),
    )
    profile_png = heatmap_figure(
        out / "construct-profile.png",
        np.abs(cert.integral_profile),
        title="fiber integrals after the loop",
    )
    intervals_png = line_figure(
        out / "construct-intervals.png",
        np.arange(m_rep),
        {
            "interval_term": cert.interval_terms,
            "interval_drift": cert.interval_drift,
        },
        title="per-interval contributions and drift",
        xlabel="interval",
        ylabel="sup",
        logy=True,
    )
    metrics = {
        "rationality": str(r),
        "repetition": m_rep,
        "loop_pieces": loop.base.n_pieces,
        "refined_res_t": res,
        "profile_sup": profile_sup,
        "dual_route_gap": dual_gap,
        "worst_interval_term": float(cert.interval_terms.max()),
        "worst_interval_drift": float(cert.interval_drift.max()),
    }
    artifacts = {
        "series_csv": str(csv_path),
        "profile_png": str(profile_png),
        "intervals_png": str(intervals_png),
    }
    return metrics, checks, artifacts


def _run_diagnose(config, rng, out):
    grid = TorusGrid(config.res_t, (config.res_y1, config.res_y2))
    r = _parse_rational(config.rationality)
    alpha = _resolve_angle(config.alpha, "alpha")
    n1, n2 = grid.res_y

    # case 1: orbit coverage from a quarter-size window
    band = np.arange(n1 * n2).reshape(n1, n2)[: max(1, n1 // 2)].reshape(-1)
    window = ProductSet(grid, 0, max(1, grid.res_t // 2), band)
    conj = conjugator_for_minimality(window, r, alpha=alpha)
    steps = conjugated_orbit_coverage(conj, window, cap=config.budget)
    commutation = conj.commutation_defect()
    probe = rng.uniform(0.0, 1.0, size=(24, 3))
    identity_defect = conjugation_identity_defect(conj, probe, 16)

    # case 2: ergodic averages of the catalog cosine under a second conjugation
    F = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 0, 1)), "S1xY")
    conj2 = conjugator_for_unique_ergodicity(
        F, config.eps, r, alpha=alpha, cap=config.budget
    )
    n_star, g_sup = first_small_ergodic_average(F, conj2, config.eps, cap=config.budget)
    sups = ergodic_average_sups(F, conj2, n_star)
    fiber_sup = float(np.abs(loop_integral_recheck(F, conj2.loop)).max())

    checks = [
        RuleCheck.compare("orbit-covers-grid-within-cap", steps, "<=", config.budget),
        RuleCheck.compare("loop-commutes-with-rational-shift", commutation, "==", 0),
        RuleCheck.compare("conjugation-identity-exact", identity_defect, "==", 0),
        RuleCheck.compare("ergodic-average-under-eps", g_sup, "<", config.eps),
        RuleCheck.compare(
            "fiber-integral-under-half-eps", fiber_sup, "<", 0.5 * config.eps
        ),
    ]

    csv_path = write_csv_series(
        out / "diagnose-series.csv",
        ("n", "g_sup"),
        ((n + 1, float(sups[n])) for n in range(n_star)),
    )
    fig_path = line_figure(
        out / "diagnose-averages.png",
        np.arange(1, n_star + 1),
        {"g_sup": sups},
        title="ergodic averages of the conjugated field",
        xlabel="n",
        ylabel="sup norm",
        logy=True,
    )
    metrics = {
        "rationality": str(r),
        "window_cells": int(band.size),
        "window_t_count": int(window.t_count),
        "coverage_steps": steps,
        "commutation_defect": commutation,
        "identity_defect": identity_defect,
        "first_small_N": n_star,
        "first_small_sup": g_sup,
        "fiber_integral_sup": fiber_sup,
    }
    artifacts = {"series_csv": str(csv_path), "averages_png": str(fig_path)}
    return metrics, checks, artifacts


_RUNNERS = {
    "demo": _run_demo,
    "shorten": _run_shorten,
    "average": _run_average,
    "cover": _run_cover,
    "construct": _run_construct,
    "diagnose": _run_diagnose,
}


def report_path(config: ExperimentConfig) -> Path:
    return Path(config.out_dir) / f"{config.command}-report.json"


def run(config: ExperimentConfig) -> RunReport:
    """Execute one configured run and write its report, series, and figures."""
    start = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    metrics, checks, artifacts = _RUNNERS[config.command](config, rng, out)
    report = RunReport(
        command=config.command,
        config=config.echo(),
        metrics=metrics,
        checks=tuple(checks),
        artifacts=artifacts,
        wall_time_s=time.perf_counter() - start,
    )
    write_json_report(report, report_path(config))
    return report


def _apply_thread_cap():
    raw = os.environ.get("ERGOLOOP_THREADS", "").strip()
    if not raw:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"ERGOLOOP_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ConfigError(f"ERGOLOOP_THREADS must be at least 1, got {cap}")
    threadpool_limits(limits=cap)
    return cap


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        _apply_thread_cap()
        config = parse_config(argv)
    except ConfigError as exc:
        print(build_parser().format_usage(), end="", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        report = run(config)
    except (ErgoloopError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for line in report.summary_lines():
        print(line)
    print(f"report: {report_path(config)}")
    for label, path in sorted(report.artifacts.items()):
        print(f"{label}: {path}")
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
