"""Cubical lattice combinatorics and constructive covering families.

Two worlds meet here.  The flat world (integer lattice cells of a
cubical partition) carries the geometric machinery: decompositions into
nice subpartitions whose 16-fold dilates stay disjoint, and transport
plans that relocate cubes along corridors while fixing every cell
outside their declared support.  The grid world (torus cells of a
TorusGrid) carries the assembled covering families: weighted families
of cell subsets, each realized by an exact cell permutation, whose
counting function is bounded below by certified integer constants.
The assembled families feed the averaging module as covering oracles;
``verify_covering`` rechecks every claim as an exact integer
inequality with no floating point in the loop.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .averaging import AveragingOperator, CoveringResponse
from .errors import (
    CorridorBlockedError,
    CoveringBoundError,
    InvalidFieldError,
    TransportHypothesisError,
)
from .phase import CellPermutation, TorusGrid, TorusTranslation

# Residue classes per axis for nice subpartitions.  Centers of two cubes
# in one class differ by at least 17 pitches in sup norm, so their
# 16-fold dilates (reach 8 pitches each) are separated by a full pitch.
NICE_AXIS_CLASSES = 17

ENUMERATION_CAP = 10**5


def nice_class_count(dim: int = 2) -> int:
    return NICE_AXIS_CLASSES**dim


# ---------------------------------------------------------------------------
# Flat world: cubical partitions, polyhedra, nice subpartitions


@dataclass(frozen=True)
class CubicalPartition:
    """Decomposition of the plane into equal closed cubes on a lattice.

    The cube with index (i, j) spans origin + [i, i+1] x [j, j+1] times
    pitch; cube volume is pitch**dim.
    """

    dim: int = 2
    pitch: float = 1.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.dim != 2:
            raise InvalidFieldError("only planar partitions are supported")
        if not self.pitch > 0:
            raise InvalidFieldError("pitch must be positive")

    @property
    def cube_measure(self):
        return self.pitch**self.dim

    def center(self, cell):
        return tuple(
            self.origin[ax] + (cell[ax] + 0.5) * self.pitch for ax in range(self.dim)
        )

    def dilate_box(self, cell, factor=1.0):
        """Axis intervals of factor*Q: same center, side factor*pitch."""
        half = 0.5 * factor * self.pitch
        c = self.center(cell)
        return tuple((c[ax] - half, c[ax] + half) for ax in range(self.dim))


def _boxes_disjoint(box_a, box_b):
    """Closed boxes are disjoint iff they separate along some axis."""
    for (a_lo, a_hi), (b_lo, b_hi) in zip(box_a, box_b):
        if a_hi < b_lo or b_hi < a_lo:
            return True
    return False


def _box_contains(outer, inner, strict=False):
    for (o_lo, o_hi), (i_lo, i_hi) in zip(outer, inner):
        if strict:
            if not (o_lo < i_lo and i_hi < o_hi):
                return False
        elif not (o_lo <= i_lo and i_hi <= o_hi):
            return False
    return True


@dataclass(frozen=True, eq=False)
class CubicalPolyhedron:
    """Union of cubes of one partition, stored as an index set."""

    partition: CubicalPartition
    cells: frozenset

    def __post_init__(self):
        object.__setattr__(
            self, "cells", frozenset(tuple(int(x) for x in c) for c in self.cells)
        )

    @property
    def measure(self):
        return len(self.cells) * self.partition.cube_measure

    @property
    def n_cubes(self):
        return len(self.cells)


@dataclass(frozen=True, eq=False)
class NiceSubpartition:
    """Cubes so sparse that even their 16-fold dilates stay disjoint."""

    partition: CubicalPartition
    cells: frozenset

    def __post_init__(self):
        cells = frozenset(tuple(int(x) for x in c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        ordered = sorted(cells)
        for idx, c1 in enumerate(ordered):
            for c2 in ordered[idx + 1 :]:
                if not _boxes_disjoint(
                    self.partition.dilate_box(c1), self.partition.dilate_box(c2)
                ):
                    raise InvalidFieldError("subpartition cubes must be disjoint")
                if not _boxes_disjoint(
                    self.partition.dilate_box(c1, 16.0),
                    self.partition.dilate_box(c2, 16.0),
                ):
                    raise InvalidFieldError("16-fold dilates must be disjoint")


def decompose_nice_subpartitions(partition: CubicalPartition, region_cells):
    """Split a finite cube set into 17**dim nice classes by residues.

    Returns all classes (including empty ones) in row-major residue
    order, so the class count is the universal constant for this
    dimension regardless of the region.
    """
    q = NICE_AXIS_CLASSES
    buckets = {}
    for cell in region_cells:
        cell = (int(cell[0]), int(cell[1]))
        buckets.setdefault((cell[0] % q, cell[1] % q), []).append(cell)
    classes = []
    for r1 in range(q):
        for r2 in range(q):
            classes.append(
                NiceSubpartition(partition, frozenset(buckets.get((r1, r2), ())))
            )
    return classes


# ---------------------------------------------------------------------------
# Flat world: transport plans


@dataclass(frozen=True)
class CubeMove:
    """One cube relocation; path runs from source to target inclusive."""

    source: tuple
    target: tuple
    kind: str  # "identity" | "near" | "corridor"
    path: tuple


def _move_mapping(move: CubeMove):
    """Cycle permutation realizing the move: the source cube jumps to the
    target and the corridor cells shift back one step."""
    path = move.path
    if len(path) <= 1:
        return {}
    mapping = {path[0]: path[-1]}
    for t in range(1, len(path)):
        mapping[path[t]] = path[t - 1]
    return mapping


def _grid_dilate(cell, radius=1):
    """Cells whose cubes meet the (2*radius+2)-fold dilate: a block."""
    c1, c2 = cell
    return {
        (c1 + d1, c2 + d2)
        for d1 in range(-radius, radius + 1)
        for d2 in range(-radius, radius + 1)
    }


def _trace_back(parent, goal):
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return tuple(reversed(path))


def _bfs(start, goal, allowed):
    if start == goal:
        return (start,)
    if start not in allowed or goal not in allowed:
        return None
    parent = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for step in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (cell[0] + step[0], cell[1] + step[1])
            if nxt in parent or nxt not in allowed:
                continue
            parent[nxt] = cell
            if nxt == goal:
                return _trace_back(parent, goal)
            queue.append(nxt)
    return None


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """One composed relocation: every listed cube lands on its target.

    The mapping is the sparse permutation (identity off its keys); the
    blocked region is the union of one-cell dilate blocks around all
    plan cubes, which every corridor of the other moves must avoid.
    """

    partition: CubicalPartition
    window: frozenset
    moves: tuple
    blocked: frozenset
    mapping: dict

    def __post_init__(self):
        cubes = set()
        for move in self.moves:
            cubes.add(move.source)
            cubes.add(move.target)
        for move in self.moves:
            others = cubes - {move.source, move.target}
            if set(move.path) & others:
                raise InvalidFieldError("corridor crosses another cube of the plan")
        values = set(self.mapping.values())
        if len(values) != len(self.mapping):
            raise InvalidFieldError("plan mapping is not a bijection")
        for move in self.moves:
            if self.apply_cell(move.source) != move.target:
                raise InvalidFieldError("composed plan misses a cube target")

    def apply_cell(self, cell):
        return self.mapping.get(cell, cell)

    def image_of(self, cells):
        return {self.apply_cell(c) for c in cells}

    @property
    def support(self):
        return frozenset(k for k, v in self.mapping.items() if k != v)


def _compose_move_mappings(moves):
    """Apply the moves in listed order; each fixes the other cubes, so
    every source still lands exactly on its target."""
    mapping = {}
    keys = set()
    for move in moves:
        keys.update(move.path)
    stages = [_move_mapping(m) for m in moves]
    for x in keys:
        y = x
        for stage in stages:
            y = stage.get(y, y)
        if y != x:
            mapping[x] = y
    return mapping


def _build_plan(partition, window, pairs):
    """Plan moving source->target for each pair, corridors avoiding all
    other plan cubes (with a one-cell margin)."""
    cubes = set()
    for s, t in pairs:
        cubes.add(s)
        cubes.add(t)
    blocked_all = set()
    for c in cubes:
        blocked_all |= _grid_dilate(c, 1)
    moves = []
    for source, target in pairs:
        if source == target:
            moves.append(CubeMove(source, target, "identity", (source,)))
            continue
        others = cubes - {source, target}
        z_j = set()
        for c in others:
            z_j |= _grid_dilate(c, 1)
        near = max(abs(source[0] - target[0]), abs(source[1] - target[1])) <= 4
        path = None
        if near:
            # stay inside the intersection of the two 16-fold dilates
            hull = {
                c
                for c in window
                if max(abs(c[0] - source[0]), abs(c[1] - source[1])) <= 7
                and max(abs(c[0] - target[0]), abs(c[1] - target[1])) <= 7
            }
            path = _bfs(source, target, hull - z_j)
        if path is None:
            path = _bfs(source, target, set(window) - z_j)
            near = False
        if path is None:
            raise CorridorBlockedError("transport blocked")
        moves.append(CubeMove(source, target, "near" if near else "corridor", path))
    mapping = _compose_move_mappings(moves)
    return TransportPlan(
        partition, frozenset(window), tuple(moves), frozenset(blocked_all), mapping
    )


def single_transport_plan(partition, window, a_cells, b_cells):
    """One plan carrying enough of A onto all of B, hypothesis-free.

    Cells of B already inside A keep identity moves; the rest are fed
    from the nearest unused A-cells that are not themselves targets.
    """
    a_set = {tuple(map(int, c)) for c in a_cells}
    b_list = sorted(tuple(map(int, c)) for c in b_cells)
    b_set = set(b_list)
    pool = sorted(a_set - b_set)
    pairs = []
    used = set()
    for b in b_list:
        if b in a_set:
            pairs.append((b, b))
            continue
        best = None
        for cand in pool:
            if cand in used:
                continue
            d = max(abs(cand[0] - b[0]), abs(cand[1] - b[1]))
            if best is None or d < best[0]:
                best = (d, cand)
        if best is None:
            raise TransportHypothesisError("not enough source cubes in A")
        used.add(best[1])
        pairs.append((best[1], b))
    return _build_plan(partition, window, pairs)


def transport_cover(a_poly: CubicalPolyhedron, b_poly: CubicalPolyhedron, window):
    """Carry a small set B into copies of a much larger set A.

    Splits both sets into nice classes, draws all sources from the
    heaviest class of A, and emits one plan per non-empty class of B;
    the union of the plan images of A then contains B.  The measure
    hypothesis guarantees the source surplus.
    """
    if a_poly.partition != b_poly.partition:
        raise InvalidFieldError("A and B must share a partition")
    partition = a_poly.partition
    window = {tuple(map(int, c)) for c in window}
    if not (a_poly.cells <= window and b_poly.cells <= window):
        raise InvalidFieldError("A and B must lie inside the window")
    c_const = nice_class_count(partition.dim)
    if len(a_poly.cells) <= 2 * c_const * len(b_poly.cells):
        raise TransportHypothesisError("hypothesis mu(A) > 2C mu(B) fails")
    if b_poly.cells <= a_poly.cells:
        pairs = [(b, b) for b in sorted(b_poly.cells)]
        return [_build_plan(partition, window, pairs)]
    a_classes = decompose_nice_subpartitions(partition, a_poly.cells)
    b_classes = decompose_nice_subpartitions(partition, b_poly.cells)
    heaviest = max(a_classes, key=lambda cls: len(cls.cells))
    plans = []
    for b_class in b_classes:
        if not b_class.cells:
            continue
        targets = sorted(b_class.cells)
        pool = sorted(heaviest.cells - set(targets))
        pairs = []
        used = set()
        for b in targets:
            if b in a_poly.cells:
                pairs.append((b, b))
                continue
            best = None
            for cand in pool:
                if cand in used:
                    continue
                d = max(abs(cand[0] - b[0]), abs(cand[1] - b[1]))
                if best is None or d < best[0]:
                    best = (d, cand)
            if best is None:
                raise TransportHypothesisError("not enough source cubes in A")
            used.add(best[1])
            pairs.append((best[1], b))
        plans.append(_build_plan(partition, window, pairs))
    covered = set()
    for plan in plans:
        covered |= plan.image_of(a_poly.cells)
    if not b_poly.cells <= covered:
        raise CoveringBoundError("transport plans fail to cover B")
    return plans


# ---------------------------------------------------------------------------
# Combinatorial subset families (flat or grid cells by enumeration)


@dataclass(frozen=True, eq=False)
class SubsetFamily:
    """All fixed-size subsets of an ordered cell list, maybe implicit.

    When the binomial count exceeds the enumeration cap the members stay
    implicit; the counting function is still exact, because each cell
    lies in comb(m-1, s-1) of the comb(m, s) subsets.
    """

    cell_order: tuple
    subset_size: int
    members: tuple | None

    @property
    def size(self):
        if self.members is not None:
            return len(self.members)
        return math.comb(len(self.cell_order), self.subset_size)

    @property
    def explicit(self):
        return self.members is not None

    def counting_function(self):
        """Exact per-cell member count, aligned with cell_order."""
        m = len(self.cell_order)
        if self.members is None:
            return np.full(m, math.comb(m - 1, self.subset_size - 1), dtype=object)
        index = {c: i for i, c in enumerate(self.cell_order)}
        counts = np.zeros(m, dtype=np.int64)
        for member in self.members:
            for cell in member:
                counts[index[cell]] += 1
        return counts

    def sample_members(self, count, seed=0):
        rng = np.random.default_rng(seed)
        m = len(self.cell_order)
        out = []
        for _ in range(count):
            picks = rng.choice(m, size=self.subset_size, replace=False)
            out.append(frozenset(self.cell_order[i] for i in picks))
        return out


def subset_covering_family(x_prime: CubicalPolyhedron, a: float, k: int,
                           cap: int = ENUMERATION_CAP) -> SubsetFamily:
    """Family of all (k-1)-cube subpolyhedra of X'.

    The partition pitch must satisfy cube volume = a/k, so members sit
    just below the target measure a; every cell of X' then lies in the
    same fraction (k-1)/m of members, which is the covering ratio.
    """
    if k < 4:
        raise InvalidFieldError("k below threshold")
    if not 0 < a <= x_prime.measure:
        raise InvalidFieldError("target measure must lie in (0, mu(X')]")
    if abs(x_prime.partition.cube_measure - a / k) > 1e-9 * (a / k):
        raise InvalidFieldError("partition cube volume must equal a/k")
    order = tuple(sorted(x_prime.cells))
    m = len(order)
    s = k - 1
    if s > m:
        raise InvalidFieldError("subset size exceeds the polyhedron")
    if math.comb(m, s) <= cap:
        from itertools import combinations

        members = tuple(frozenset(c) for c in combinations(order, s))
        return SubsetFamily(order, s, members)
    return SubsetFamily(order, s, None)


# ---------------------------------------------------------------------------
# Grid world: explicit weighted covering families on a torus grid


@dataclass(frozen=True, eq=False)
class CoveringFamily:
    """Weighted family of cell subsets of a torus grid (flat cell ids)."""

    n_cells: int
    members: tuple
    weights: tuple = None

    def __post_init__(self):
        members = tuple(
            np.asarray(m, dtype=np.int64).reshape(-1) for m in self.members
        )
        if not members:
            raise InvalidFieldError("covering family needs at least one member")
        if self.weights is None:
            weights = (1,) * len(members)
        else:
            weights = tuple(int(w) for w in self.weights)
        if len(weights) != len(members) or any(w <= 0 for w in weights):
            raise InvalidFieldError("weights must be positive, one per member")
        for m in members:
            if m.size and (m.min() < 0 or m.max() >= self.n_cells):
                raise InvalidFieldError("member cell out of range")
            if np.unique(m).size != m.size:
                raise InvalidFieldError("member cells must be distinct")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self):
        return sum(self.weights)

    def counting_function(self):
        counts = np.zeros(self.n_cells, dtype=np.int64)
        for member, w in zip(self.members, self.weights):
            counts[member] += w
        return counts


@dataclass(frozen=True)
class CoveringVerdict:
    passed: bool
    nu_min: int
    worst_cell: int
    family_size: int
    lhs: int
    rhs: int


def verify_covering(family: CoveringFamily, a_cells, c1, c2,
                    region=None, total=None) -> CoveringVerdict:
    """Exact integer check of the covering inequality.

    Clears denominators: with N = family size, |A| the covered set size
    and |Y| the total cell count, the claim nu/N >= |A|/(c1|A| + c2|Y|)
    becomes nu_min*(c1*|A| + c2*|Y|) >= N*|A|, checked in exact integer
    arithmetic over every cell of the region (default: everywhere).
    """
    if int(c1) != c1 or int(c2) != c2:
        raise InvalidFieldError("covering constants must be integers here")
    c1, c2 = int(c1), int(c2)
    a_cells = np.asarray(a_cells, dtype=np.int64).reshape(-1)
    counts = family.counting_function()
    if region is None:
        region = np.arange(family.n_cells)
    else:
        region = np.asarray(region, dtype=np.int64).reshape(-1)
    n_total = family.n_cells if total is None else int(total)
    local = counts[region]
    arg = int(np.argmin(local))
    nu_min = int(local[arg])
    worst = int(region[arg])
    lhs = nu_min * (c1 * a_cells.size + c2 * n_total)
    rhs = family.size * a_cells.size
    return CoveringVerdict(lhs >= rhs, nu_min, worst, family.size, lhs, rhs)


# ---------------------------------------------------------------------------
# Grid world: assembled coverings (local chart and global torus)


def set_swap_permutation(grid: TorusGrid, src_cells, dst_cells) -> CellPermutation:
    """Bijection carrying src onto dst (sorted pairing), sending the
    displaced cells back and fixing everything else."""
    src = np.unique(np.asarray(src_cells, dtype=np.int64))
    dst = np.unique(np.asarray(dst_cells, dtype=np.int64))
    if src.size != dst.size:
        raise InvalidFieldError("swap needs equal cell counts")
    perm = np.arange(grid.n_y_cells, dtype=np.int64)
    perm[src] = dst
    back_src = np.setdiff1d(dst, src, assume_unique=True)
    back_dst = np.setdiff1d(src, dst, assume_unique=True)
    perm[back_src] = back_dst
    return CellPermutation(grid, perm)


@dataclass(frozen=True, eq=False)
class AssembledCovering:
    """A covering family together with the transforms realizing it.

    members[i] is exactly the image of the covered set under maps[i]
    (weights aligned); (c1, c2) are the certified integer constants.
    maps is None when the family was assembled for verification only.
    """

    grid: TorusGrid
    family: CoveringFamily
    maps: tuple | None
    c1: int
    c2: int
    n_charts: int

    def operator(self) -> AveragingOperator:
        if self.maps is None:
            raise InvalidFieldError("assembled without maps")
        return AveragingOperator(self.grid, self.maps, self.family.weights)

    def response(self) -> CoveringResponse:
        return CoveringResponse(self.operator(), self.c1, self.c2)


def _chart_windows(order, s):
    """Positions of the s-cell cyclic windows in an ordered chart."""
    n = order.size
    offsets = (np.arange(n)[:, None] + np.arange(s)[None, :]) % n
    return order[offsets]


def local_covering(grid: TorusGrid, x_cells, a_cells, build_maps=True) -> AssembledCovering:
    """Covering of one chart X by transforms of A with constants (C, 2).

    The family has one member per cyclic window of size |A| in the
    chart's cell order (each realized by a swap-then-rotate cell
    permutation carrying A exactly onto the window), plus the covered
    set itself repeated C*|A| times via the identity, mirroring the
    product structure M = N + C*N' of the two-stage assembly.
    """
    order = np.unique(np.asarray(x_cells, dtype=np.int64))
    a_sorted = np.unique(np.asarray(a_cells, dtype=np.int64))
    if a_sorted.size == 0:
        raise InvalidFieldError("covered set must be non-empty")
    if not np.isin(a_sorted, order).all():
        raise InvalidFieldError("covered set must lie inside the chart")
    n_x = order.size
    s = a_sorted.size
    c_const = nice_class_count()
    w0 = order[:s]
    windows = _chart_windows(order, s)
    members = [windows[j] for j in range(n_x)]
    weights = [1] * n_x
    members.append(a_sorted)
    weights.append(c_const * s)
    family = CoveringFamily(grid.n_y_cells, tuple(members), tuple(weights))
    maps = None
    if build_maps:
        base_swap = set_swap_permutation(grid, a_sorted, w0)
        built = []
        identity = np.arange(grid.n_y_cells, dtype=np.int64)
        for j in range(n_x):
            rot = identity.copy()
            rot[order] = order[(np.arange(n_x) + j) % n_x]
            built.append(CellPermutation(grid, rot[base_swap.perm]))
        built.append(TorusTranslation(grid, (0, 0)))
        maps = tuple(built)
    return AssembledCovering(grid, family, maps, c_const, 2, 1)


def default_charts(grid: TorusGrid, r: int):
    """r horizontal bands of equal cell count."""
    n1, n2 = grid.res_y
    if r < 1 or n1 % r != 0:
        raise InvalidFieldError("chart count must divide the first resolution")
    rows = n1 // r
    cells = np.arange(grid.n_y_cells, dtype=np.int64).reshape(n1, n2)
    return [cells[i * rows : (i + 1) * rows].reshape(-1) for i in range(r)]


def _balanced_spread_targets(grid, charts, a_sorted):
    """Target set meeting every chart in a near-equal share of A.

    Prefers keeping cells of A in their own chart, so the spreading
    permutation moves as few cells as possible.
    """
    a = a_sorted.size
    r = len(charts)
    quotas = [a // r + (1 if i < a % r else 0) for i in range(r)]
    a_set = set(a_sorted.tolist())
    keep = []
    surplus = []
    deficits = []
    for chart, quota in zip(charts, quotas):
        own = [c for c in chart.tolist() if c in a_set]
        keep.extend(own[:quota])
        surplus.extend(own[quota:])
        if len(own) < quota:
            free = [c for c in chart.tolist() if c not in a_set]
            deficits.append((quota - len(own), free))
    targets = list(keep)
    for need, free in deficits:
        if need > len(free):
            raise InvalidFieldError("chart too small to absorb its share of A")
        targets.extend(free[:need])
    return np.sort(np.asarray(targets, dtype=np.int64))


def global_covering(grid: TorusGrid, a_cells, r: int = 1, charts=None,
                    build_maps=True) -> AssembledCovering:
    """Covering of the whole grid by transforms of A, constants (r*C, 4r).

    A balanced spreading permutation first gives every chart its share
    of A; each chart then contributes a local family built from half its
    share, and the spreading transform itself carries the identity
    copies.  All chart families have equal size by construction, so no
    padding is needed and the assembled family size is |Y| + r*C*s with
    s the per-chart half-share.
    """
    a_sorted = np.unique(np.asarray(a_cells, dtype=np.int64))
    if a_sorted.size == 0:
        raise InvalidFieldError("covered set must be non-empty")
    if charts is None:
        charts = default_charts(grid, r)
    else:
        charts = [np.unique(np.asarray(c, dtype=np.int64)) for c in charts]
        r = len(charts)
        sizes = {c.size for c in charts}
        stacked = np.sort(np.concatenate(charts))
        if len(sizes) != 1 or not np.array_equal(stacked, np.arange(grid.n_y_cells)):
            raise InvalidFieldError("charts must partition the grid into equal parts")
    a = a_sorted.size
    if a < r:
        raise InvalidFieldError("spreading needs at least one cell of A per chart")
    c_const = nice_class_count()
    s = -(-a // (2 * r))  # ceil(a / 2r)
    targets = _balanced_spread_targets(grid, charts, a_sorted)
    if np.array_equal(targets, a_sorted):
        spread = None
        spread_perm = np.arange(grid.n_y_cells, dtype=np.int64)
    else:
        spread = set_swap_permutation(grid, a_sorted, targets)
        spread_perm = spread.perm
    a_prime = targets
    members = []
    weights = []
    maps = [] if build_maps else None
    identity = np.arange(grid.n_y_cells, dtype=np.int64)
    for chart in charts:
        order = np.sort(chart)
        in_chart = a_prime[np.isin(a_prime, order)]
        if in_chart.size < s:
            raise InvalidFieldError("spreading left a chart short of cells")
        a_i = in_chart[:s]
        w0 = order[:s]
        base_swap = set_swap_permutation(grid, a_i, w0)
        chart_pos = np.arange(order.size)
        image_base = base_swap.perm[a_prime]
        pos = np.full(grid.n_y_cells, -1, dtype=np.int64)
        pos[order] = chart_pos
        inside = pos[image_base] >= 0
        full = base_swap.perm if spread is None else base_swap.perm[spread_perm]
        for j in range(order.size):
            img = image_base.copy()
            img[inside] = order[(pos[image_base[inside]] + j) % order.size]
            members.append(np.sort(img))
            weights.append(1)
            if build_maps:
                rot = identity.copy()
                rot[order] = order[(chart_pos + j) % order.size]
                maps.append(CellPermutation(grid, rot[full]))
    members.append(a_prime)
    weights.append(r * c_const * s)
    if build_maps:
        if spread is None:
            maps.append(TorusTranslation(grid, (0, 0)))
        else:
            maps.append(spread)
        maps = tuple(maps)
    family = CoveringFamily(grid.n_y_cells, tuple(members), tuple(weights))
    return AssembledCovering(grid, family, maps, r * c_const, 4 * r, r)


# hold the members of global/local families to their maps: image check
def assembled_members_match_maps(assembled: AssembledCovering, a_cells) -> bool:
    """Recount members as actual map images of the covered set."""
    if assembled.maps is None:
        raise InvalidFieldError("assembled without maps")
    a_sorted = np.unique(np.asarray(a_cells, dtype=np.int64))
    for member, g in zip(assembled.family.members, assembled.maps):
        image = np.sort(g.apply_cells(a_sorted))
        if not np.array_equal(image, np.sort(member)):
            return False
    return True


# ---------------------------------------------------------------------------
# Covering oracles for the averaging recursion


def orbit_covering(grid: TorusGrid, a_cells) -> AssembledCovering:
    """The full translate family: every cell is visited exactly |A| times,
    which meets the covering inequality with constants (0, 1) exactly."""
    a_sorted = np.unique(np.asarray(a_cells, dtype=np.int64))
    if a_sorted.size == 0:
        raise InvalidFieldError("covered set must be non-empty")
    n1, n2 = grid.res_y
    i, j = np.divmod(a_sorted, n2)
    members = []
    maps = []
    for d1 in range(n1):
        for d2 in range(n2):
            members.append(np.sort(((i + d1) % n1) * n2 + (j + d2) % n2))
            maps.append(TorusTranslation(grid, (d1, d2)))
    family = CoveringFamily(grid.n_y_cells, tuple(members))
    return AssembledCovering(grid, family, tuple(maps), 0, 1, 1)


def grid_covering_oracle(grid: TorusGrid, style: str = "orbit", r: int = 1):
    """Covering oracle for the flattening recursion.

    "orbit" answers every request with the full translate family
    (constants (0, 1): one application averages a zero-mean field to
    its global mean).  "assembled" rebuilds the chart-based family for
    each sublevel set and reports the pipeline constants (r*C, 4r),
    which makes the recursion take its certified many small steps.
    """
    if style == "orbit":
        n1, n2 = grid.res_y
        maps = tuple(
            TorusTranslation(grid, (d1, d2)) for d1 in range(n1) for d2 in range(n2)
        )
        op = AveragingOperator(grid, maps)

        def oracle(mask):
            return CoveringResponse(op, 0.0, 1.0)

        return oracle
    if style == "assembled":

        def oracle(mask):
            cells = np.flatnonzero(np.asarray(mask, dtype=bool).reshape(-1))
            return global_covering(grid, cells, r=r).response()

        return oracle
    raise InvalidFieldError(f"unknown oracle style {style!r}")
