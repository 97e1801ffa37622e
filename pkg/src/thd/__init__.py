"""Topological hierarchical decomposition of tabular data.

MAPPER networks are built over a filter lens at increasing resolution; a
group splits whenever its network falls apart into at least two large
connected components, and each piece is decomposed again.
"""

__version__ = "0.1.0"

from .data import DataError, Dataset, Group, Schema, analysis_matrix, ingest_csv, read_csv
from .engine import ThdParams, ThdTree, run_thd, trace_point_path, tree_statistics
from .mapper import CoverParams, TopologicalNetwork, build_network, mapper
from .report import explain_individual, export_network, export_tree, import_tree, summarize_split
from .stats import compare_groups, hypergeometric_tail, ks_statistic
from .classifier import evaluate, fit_predict

__all__ = [
    "CoverParams",
    "DataError",
    "Dataset",
    "Group",
    "Schema",
    "ThdParams",
    "ThdTree",
    "TopologicalNetwork",
    "analysis_matrix",
    "build_network",
    "compare_groups",
    "evaluate",
    "explain_individual",
    "export_network",
    "export_tree",
    "fit_predict",
    "hypergeometric_tail",
    "import_tree",
    "ingest_csv",
    "ks_statistic",
    "mapper",
    "read_csv",
    "run_thd",
    "summarize_split",
    "trace_point_path",
    "tree_statistics",
]
