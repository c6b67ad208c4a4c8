"""Region graphs from geography and from signals."""
from .dtw import dtw_distance_matrix, dtw_exact, dtw_path, fastdtw, fastdtw_path
from .signals import spline_effect_distance, svd_reduce
from .smooth import SmoothGraphResult, learn_smooth_graph
from .weighted import (
    WeightedGraph,
    distances_to_graph,
    fuse_graphs,
    gaussian_threshold_graph,
    geo_kernel_graph,
    identity_graph,
    is_connected,
    minimal_connectivity_threshold,
    read_dense_csv,
    read_edge_list,
    write_dense_csv,
    write_edge_list,
)

__all__ = [
    "WeightedGraph",
    "SmoothGraphResult",
    "distances_to_graph",
    "dtw_distance_matrix",
    "dtw_exact",
    "dtw_path",
    "fastdtw",
    "fastdtw_path",
    "fuse_graphs",
    "gaussian_threshold_graph",
    "geo_kernel_graph",
    "identity_graph",
    "is_connected",
    "learn_smooth_graph",
    "minimal_connectivity_threshold",
    "read_dense_csv",
    "read_edge_list",
    "spline_effect_distance",
    "svd_reduce",
    "write_dense_csv",
    "write_edge_list",
]
