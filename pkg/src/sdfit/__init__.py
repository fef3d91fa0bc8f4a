"""Neural implicit surface fitting for unoriented point clouds.

The package trains a small MLP so that its zero-level set passes through an
input point cloud, supports four loss families (igr, siren, neural-pull,
diffcd), extracts meshes/contours from the fitted field, and scores shapes
with Chamfer-style metrics.

Submodules are imported lazily so the command-line entry point can pin
BLAS thread counts before numpy is first loaded.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "fields",
    "clouds",
    "sampling",
    "losses",
    "meshing",
    "metrics",
    "training",
    "analysis",
    "demos",
    "config",
    "estimator",
    "cli",
)

# Re-exported names -> owning submodule.
_API = {
    "FieldConfig": "fields",
    "FieldParams": "fields",
    "MlpField": "fields",
    "AnalyticSdf": "fields",
    "BoundingBox": "fields",
    "init_geometric": "fields",
    "PointCloud": "clouds",
    "load_cloud": "clouds",
    "SamplingConfig": "sampling",
    "normalize_cloud": "sampling",
    "LossConfig": "losses",
    "TriangleMesh": "meshing",
    "Contour2D": "meshing",
    "marching_cubes": "meshing",
    "marching_squares": "meshing",
    "chamfer": "metrics",
    "chamfer_squared": "metrics",
    "chamfer_angle": "metrics",
    "TrainConfig": "training",
    "fit": "training",
    "SurfaceReconstructor": "estimator",
}


def __getattr__(name):
    import importlib

    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _API:
        module = importlib.import_module(f".{_API[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_SUBMODULES) | set(_API))
