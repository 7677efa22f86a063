"""ergoloop: strictly ergodic skew products and loop-length calculus on torus grids.

The package is organized by pipeline stage:

- ``phase``      grids, sampled fields, the trig closed-form catalog, cell maps
- ``dynamics``   skew products, sequential systems, Birkhoff diagnostics
- ``hofer``      normalized Hamiltonians, flows, loop composition and length
- ``shortening`` Birkhoff-sum loops, decay traces, geodesic breaking
- ``averaging``  averaging operators and the max-flattening recursion
- ``covering``   cubical partitions, transport plans, covering families
- ``construct``  loop constructions certifying averaging and conjugation claims
- ``cli``        the ``ergoloop`` command-line front end
"""

from .phase import (
    GOLDEN,
    SQRT2M1,
    IRRATIONALS,
    CircleCoord,
    TorusGrid,
    TrigPoly,
    ScalarField,
    CellPermutation,
    TorusTranslation,
    SmoothMap,
    field_mean,
    normalize_zero_mean,
    sup_norm,
    time_sup_integral,
    fiber_sup_profile,
    wrap01,
)
from .errors import (
    ErgoloopError,
    InvalidFieldError,
    GridTooCoarseError,
    CoveringBoundError,
    TransportHypothesisError,
    ShorteningSearchError,
    ConfigError,
)
from .dynamics import (
    SkewProduct,
    SequentialSystem,
    trivial_loop,
    furstenberg_loop,
    birkhoff_field_sum,
)
from .hofer import (
    NormalizedHamiltonian,
    LoopFlow,
    loop_length,
    compose_loops,
    invert_loop,
    shear_hamiltonian,
    coupled_hamiltonian,
    cosine_shear_hamiltonian,
    catalog_pair,
)
from .shortening import (
    ShorteningTrace,
    GeodesicBreak,
    normalized_length_sequence,
    break_minimal_geodesic,
)
from .averaging import (
    AveragingOperator,
    OperatorChain,
    CoveringResponse,
    contraction_constant,
    sublevel_bounds_check,
    flatten_max,
    flatten_sup,
    flatten_sup_traced,
)
from .covering import (
    CubicalPartition,
    CubicalPolyhedron,
    TransportPlan,
    CoveringFamily,
    transport_cover,
    verify_covering,
    local_covering,
    global_covering,
    orbit_covering,
    grid_covering_oracle,
)
from .construct import (
    PeriodicLoop,
    ConjugatedShift,
    ProductSet,
    fiberwise_center,
    small_integral_loop,
    loop_certificate,
    loop_integral_recheck,
    conjugator_for_minimality,
    conjugator_for_unique_ergodicity,
    conjugated_orbit_coverage,
    first_small_ergodic_average,
)
from .report import RuleCheck, RunReport, write_json_report, write_csv_series

__all__ = [
    "GOLDEN",
    "SQRT2M1",
    "IRRATIONALS",
    "CircleCoord",
    "TorusGrid",
    "TrigPoly",
    "ScalarField",
    "CellPermutation",
    "TorusTranslation",
    "SmoothMap",
    "field_mean",
    "normalize_zero_mean",
    "sup_norm",
    "time_sup_integral",
    "fiber_sup_profile",
    "wrap01",
    "ErgoloopError",
    "InvalidFieldError",
    "GridTooCoarseError",
    "CoveringBoundError",
    "TransportHypothesisError",
    "ShorteningSearchError",
    "ConfigError",
    "SkewProduct",
    "SequentialSystem",
    "trivial_loop",
    "furstenberg_loop",
    "birkhoff_field_sum",
    "NormalizedHamiltonian",
    "LoopFlow",
    "loop_length",
    "compose_loops",
    "invert_loop",
    "shear_hamiltonian",
    "coupled_hamiltonian",
    "cosine_shear_hamiltonian",
    "catalog_pair",
    "ShorteningTrace",
    "GeodesicBreak",
    "normalized_length_sequence",
    "break_minimal_geodesic",
    "AveragingOperator",
    "OperatorChain",
    "CoveringResponse",
    "contraction_constant",
    "sublevel_bounds_check",
    "flatten_max",
    "flatten_sup",
    "flatten_sup_traced",
    "CubicalPartition",
    "CubicalPolyhedron",
    "TransportPlan",
    "CoveringFamily",
    "transport_cover",
    "verify_covering",
    "local_covering",
    "global_covering",
    "orbit_covering",
    "grid_covering_oracle",
    "PeriodicLoop",
    "ConjugatedShift",
    "ProductSet",
    "fiberwise_center",
    "small_integral_loop",
    "loop_certificate",
    "loop_integral_recheck",
    "conjugator_for_minimality",
    "conjugator_for_unique_ergodicity",
    "conjugated_orbit_coverage",
    "first_small_ergodic_average",
    "RuleCheck",
    "RunReport",
    "write_json_report",
    "write_csv_series",
]

__version__ = "0.1.0"
