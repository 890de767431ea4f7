"""Origin-destination matrix estimation from link traffic counts.

The package bundles a synthetic grid-traffic data generator (ground truth
comes from simulated trips, so both observable matrices derive from the same
route set), a bidirectional encoder-decoder regressor whose two directions
share a cosine-based feature-matching gate, the evaluation metrics, and a
CLI that ties generation, training, evaluation, and export into reproducible
runs.
"""

from .errors import ConfigError, DataError, TrainingError, UndefinedMetricError
from .estimator import CGameRegressor, TrainConfig, fit_model
from .evalkit import (
    MetricsReport,
    accuracy,
    evaluate,
    evaluate_many,
    export_curve,
    export_heatmap,
    hotspot_recall,
    mae,
    r2,
    rmse,
    var_score,
    write_report,
)
from .matcher import (
    GraphMatcher,
    apply_matcher,
    gate_vector,
    matcher_candidates,
    matcher_step,
    matcher_value_refresh,
    retention_order,
)
from .model import (
    CGameModel,
    ModelDims,
    load_model,
    predict_counts,
    predict_od,
    save_model,
)
from .netgen import (
    RoadNetwork,
    Route,
    RouteDictionary,
    TripTable,
    build_grid,
    build_route_dictionary,
    enumerate_routes,
    sample_demand,
)
from .simkit import (
    Dataset,
    SimConfig,
    TimedRoute,
    TravelTimeModel,
    accumulate_counts,
    accumulate_od,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulate_item,
    timestamp_route,
)

__version__ = "0.1.0"

__all__ = [
    "CGameModel",
    "CGameRegressor",
    "ConfigError",
    "DataError",
    "Dataset",
    "GraphMatcher",
    "MetricsReport",
    "ModelDims",
    "RoadNetwork",
    "Route",
    "RouteDictionary",
    "SimConfig",
    "TimedRoute",
    "TrainConfig",
    "TrainingError",
    "TravelTimeModel",
    "TripTable",
    "UndefinedMetricError",
    "accumulate_counts",
    "accumulate_od",
    "accuracy",
    "apply_matcher",
    "build_grid",
    "build_route_dictionary",
    "enumerate_routes",
    "evaluate",
    "evaluate_many",
    "export_curve",
    "export_heatmap",
    "fit_model",
    "gate_vector",
    "generate_dataset",
    "hotspot_recall",
    "load_dataset",
    "load_model",
    "mae",
    "matcher_candidates",
    "matcher_step",
    "matcher_value_refresh",
    "predict_counts",
    "predict_od",
    "r2",
    "retention_order",
    "rmse",
    "sample_demand",
    "save_dataset",
    "save_model",
    "simulate_item",
    "timestamp_route",
    "var_score",
    "write_report",
]
