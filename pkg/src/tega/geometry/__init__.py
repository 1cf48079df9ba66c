from tega.geometry.bpa import ball_pivot_mesh, default_radii
from tega.geometry.cloud import (
    PointCloud,
    TriangleMesh,
    deduplicate,
    edge_use_counts,
    estimate_normals,
    mean_nn_distance,
    normalize_point_cloud,
    read_point_cloud,
    undirected_edges,
    write_point_cloud,
)

__all__ = [
    "PointCloud",
    "TriangleMesh",
    "ball_pivot_mesh",
    "deduplicate",
    "default_radii",
    "edge_use_counts",
    "estimate_normals",
    "mean_nn_distance",
    "normalize_point_cloud",
    "read_point_cloud",
    "undirected_edges",
    "write_point_cloud",
]
