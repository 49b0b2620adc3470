"""Range-cover index structures (1D-Tree, c-DAG) and level-difference analysis."""

__version__ = "0.1.0"

from .analytics import (
    BoundReport,
    EntropyReport,
    FitResult,
    corollary_bounds,
    expected_fp_ratio,
    expected_level_difference,
    fit_closest_theoretical,
    fp_ratio_lower_bound,
    l2_distance,
    level_difference_bound,
    shannon_entropy,
    theoretical_ldd,
)
from .core import (
    DagConfig,
    Dataset,
    Interval,
    LevelDifferenceDistribution,
    NodeRecord,
    QueryRange,
    kappa_of,
)
from .structures import (
    IndexStructure,
    SearchResult,
    build_cdag,
    build_structure,
    build_tree,
    level_histogram,
    payload_size,
    src_search,
)

__all__ = [
    "BoundReport",
    "DagConfig",
    "Dataset",
    "EntropyReport",
    "FitResult",
    "IndexStructure",
    "Interval",
    "LevelDifferenceDistribution",
    "NodeRecord",
    "QueryRange",
    "SearchResult",
    "build_cdag",
    "build_structure",
    "build_tree",
    "corollary_bounds",
    "expected_fp_ratio",
    "expected_level_difference",
    "fit_closest_theoretical",
    "fp_ratio_lower_bound",
    "kappa_of",
    "l2_distance",
    "level_difference_bound",
    "level_histogram",
    "payload_size",
    "shannon_entropy",
    "src_search",
    "theoretical_ldd",
]
