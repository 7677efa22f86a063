"""Birkhoff-sum shortening and the geodesic-iteration break.

Iterating a skew product T against a zero-mean generator H produces the
sums F_N = sum_{k<N} H o T^k, whose normalized lengths (1/N) length(F_N)
bound the per-iterate norm of the composite loop class.  Strict
ergodicity drives them to zero; the identity system keeps them constant;
and for a single invariant trig monomial the geometric sum gives the
exact envelope, which we attach as an oracle bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SequentialSystem, SkewProduct, birkhoff_field_sum
from .errors import (
    InvalidFieldError,
    ShorteningSearchError,
    UnderdeterminedSequenceError,
)
from .hofer import FlowBackedLoop, NormalizedHamiltonian, loop_length
from .phase import ScalarField, TorusTranslation


@dataclass(frozen=True)
class ShorteningTrace:
    """Normalized lengths along a Birkhoff iteration, with optional
    analytic envelope; construction re-checks the envelope inequality."""

    Ns: tuple
    lengths: np.ndarray
    oracle_bounds: np.ndarray | None = None

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=float)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "Ns", tuple(int(n) for n in self.Ns))
        if lengths.shape != (len(self.Ns),):
            raise InvalidFieldError("one length per N required")
        if np.any(lengths < 0):
            raise InvalidFieldError("lengths must be non-negative")
        if self.oracle_bounds is not None:
            bounds = np.asarray(self.oracle_bounds, dtype=float)
            object.__setattr__(self, "oracle_bounds", bounds)
            if np.any(lengths > bounds + 1e-9):
                worst = float((lengths - bounds).max())
                raise InvalidFieldError(
                    f"length exceeds its oracle bound by {worst:.3e}"
                )


def birkhoff_hamiltonian(
    H: NormalizedHamiltonian, T: SkewProduct, n: int
) -> NormalizedHamiltonian:
    """F_n = sum_{k<n} H o T^k as a normalized Hamiltonian."""
    if n < 1:
        raise InvalidFieldError("need at least one summand")
    if abs(float(H.field.samples.mean())) > 1e-10:
        raise InvalidFieldError("summand must have zero global mean")
    F = birkhoff_field_sum(H.field, T, n)
    if F.closed_form is not None:
        return NormalizedHamiltonian(F)
    samples = F.samples
    means = samples.mean(axis=(1, 2))
    defect = float(np.abs(means).max())
    if defect > 1e-10:
        raise InvalidFieldError(
            f"fiber means drifted to {defect:.3e} across the Birkhoff sum"
        )
    return NormalizedHamiltonian(
        ScalarField(F.grid, samples - means[:, None, None], "S1xY"),
        fiber_mean_defect=defect,
    )


def _monomial_envelope(H: NormalizedHamiltonian, T: SkewProduct, Ns):
    """|c sin(pi N delta)/sin(pi delta)|/N when H is one T-invariant
    harmonic with per-step phase delta; None otherwise."""
    poly = H.poly
    if poly is None or poly.n_terms != 1:
        return None
    (k, c), = poly.terms.items()
    if k[1] == 0 and k[2] == 0:
        return None
    aff = T.affine()
    if aff is None:
        return None
    lin, off = aff
    if tuple(int(v) for v in (lin.T @ np.asarray(k))) != tuple(k):
        return None
    delta = float(np.dot(np.asarray(k, dtype=float), off))
    amp = abs(c)
    out = np.empty(len(Ns))
    for i, n in enumerate(Ns):
        if delta % 1.0 == 0.0:
            out[i] = amp  # aligned phases: the sum is n copies
        else:
            out[i] = (
                amp
                * abs(math.sin(math.pi * n * delta))
                / (n * abs(math.sin(math.pi * delta)))
            )
    return out


def normalized_length_sequence(
    H: NormalizedHamiltonian, T: SkewProduct, Ns
) -> ShorteningTrace:
    """ell_N = (1/N) length(F_N) for each N, plus the monomial envelope."""
    Ns = [int(n) for n in Ns]
    if any(n < 1 for n in Ns) or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise InvalidFieldError("Ns must be increasing positive integers")
    lengths = np.empty(len(Ns))
    for i, n in enumerate(Ns):
        lengths[i] = loop_length(birkhoff_hamiltonian(H, T, n)) / n
    return ShorteningTrace(tuple(Ns), lengths, _monomial_envelope(H, T, Ns))


def sequential_birkhoff_hamiltonian(
    H: NormalizedHamiltonian, S: SequentialSystem, n: int
) -> NormalizedHamiltonian:
    """sum_{i<n} H o T^(i) for a time-dependent composition T^(i)."""
    if not S.decomposed:
        raise UnderdeterminedSequenceError(
            "underdetermined sequence: need conjugators and a base loop"
        )
    if n < 1:
        raise InvalidFieldError("need at least one summand")
    if n - 1 > S.n_steps:
        raise InvalidFieldError(f"system provides {S.n_steps} steps, need {n - 1}")
    grid = H.grid
    cur = grid.sty_mesh()
    acc = H.field.evaluate(cur).copy()
    for i in range(n - 1):
        cur = S.step_apply(i, cur)
        acc += H.field.evaluate(cur)
    means = acc.mean(axis=(1, 2))
    defect = float(np.abs(means).max())
    if defect > 1e-10:
        raise InvalidFieldError(
            f"fiber means drifted to {defect:.3e} across the sequential sum"
        )
    return NormalizedHamiltonian(
        ScalarField(grid, acc - means[:, None, None], "S1xY"),
        fiber_mean_defect=defect,
    )


# ---------------------------------------------------------------------------
# Breaking minimal-geodesic iterates


@dataclass(frozen=True)
class GeodesicBreak:
    """Conjugator choice with its shortening certificate.

    a_profile and b_profile are sampled over the same grid times; the
    t = 0 entries are exact cell arithmetic (every loop starts at the
    identity, and conjugators are grid translations).  conjugators[i]
    is the net translation applied to copy i+1; the first is the
    identity.
    """

    conjugators: tuple
    a0: float
    b0: float
    a_profile: np.ndarray
    b_profile: np.ndarray
    system: SequentialSystem
    evaluations: int = 0


def break_minimal_geodesic(
    H: NormalizedHamiltonian, n: int, search_budget: int | None = None
) -> GeodesicBreak:
    """Pick torus translations g_i making max_y |F_n(0, y)| < n max_y |H(0, y)|.

    Greedy: each copy's t = 0 slice is shifted to fight the running
    maximum; candidates are all grid translations, spent against the
    budget.  The base loop is frozen at t = 0 (every loop starts at the
    identity), so the t = 0 certificate is exact sample arithmetic.
    """
    if n < 2:
        raise InvalidFieldError("need at least two copies to shorten")
    grid = H.grid
    slice0 = H.field.samples[0]
    if float(slice0.max() - slice0.min()) == 0.0:
        raise InvalidFieldError(
            "fiber at t = 0 is constant; no strict gain is possible"
        )
    loop = H.analytic_loop
    if loop is None:
        if not H.can_flow():
            raise InvalidFieldError("loop of H unavailable: no flow data")
        loop = FlowBackedLoop(H)
    n1, n2 = grid.res_y
    n_cells = n1 * n2
    budget = n_cells * (n - 1) if search_budget is None else int(search_budget)

    # profile of the copy translated by (d1, d2)/n: sample (i, j) reads
    # slice0 at (i + d1, j + d2), a negative-index roll
    rolls = np.empty((n_cells, n1, n2))
    for d1 in range(n1):
        for d2 in range(n2):
            rolls[d1 * n2 + d2] = np.roll(slice0, (-d1, -d2), axis=(0, 1))

    running = slice0.copy()
    nets = [(0, 0)]
    spent = 0
    for _ in range(1, n):
        k = min(n_cells, budget - spent)
        if k <= 0:
            # budget gone: the copy still lands, riding the last net shift
            last = nets[-1]
            running = running + rolls[last[0] * n2 + last[1]]
            nets.append(last)
            continue
        scores = np.abs(running + rolls[:k]).max(axis=(1, 2))
        pick = int(np.argmin(scores))
        spent += k
        running = running + rolls[pick]
        nets.append((pick // n2, pick % n2))

    a0 = float(np.abs(running).max())
    b0 = float(n * np.abs(slice0).max())
    if not a0 < b0:
        raise ShorteningSearchError(
            f"no shortening found: a(0) = {a0:.6g} vs b(0) = {b0:.6g}"
        )

    conjugators = [TorusTranslation(grid, (0, 0))]
    steps = []
    for prev, cur in zip(nets, nets[1:]):
        inc = TorusTranslation(grid, (cur[0] - prev[0], cur[1] - prev[1]))
        steps.append(inc)
        conjugators.append(TorusTranslation(grid, cur))
    system = SequentialSystem([0.0] * (n - 1), conjugators=steps, loop=loop)

    F = sequential_birkhoff_hamiltonian(H, system, n)
    a_profile = np.abs(F.field.samples).max(axis=(1, 2))
    b_profile = n * np.abs(H.field.samples).max(axis=(1, 2))
    return GeodesicBreak(
        tuple(conjugators), a0, b0, a_profile, b_profile, system, spent
    )
