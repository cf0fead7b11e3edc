"""Asymmetric routing instances from city base maps plus a neural constructive solver."""

from . import autodiff, baselines, envs, geo, ingest, instances, model, train
from .autodiff import ParamStore, Tensor, grad_check, load_params, save_params
from .envs import route_cost
from .geo import (BBox, BaseMap, GeoPoint, angle_matrix, bbox_for_area, haversine,
                  normalize_basemap, read_basemap, write_basemap)
from .ingest import OsrmEndpoint, SynthConfig, osrm_table_fetch, synth_basemap
from .instances import (RoutingInstance, gen_features, make_instance,
                        sample_indices_cluster, sample_indices_uniform,
                        subsample_matrices)
from .model import ModelConfig, Trajectory, encode, init_params, rollout
from .train import TrainConfig, augment_x8, pomo_advantage, reinforce_loss, train as train_policy

__version__ = "0.1.0"

__all__ = [
    "autodiff", "baselines", "envs", "geo", "ingest", "instances", "model", "train",
    "ParamStore", "Tensor", "grad_check", "load_params", "save_params",
    "route_cost",
    "BBox", "BaseMap", "GeoPoint", "angle_matrix", "bbox_for_area", "haversine",
    "normalize_basemap", "read_basemap", "write_basemap",
    "OsrmEndpoint", "SynthConfig", "osrm_table_fetch", "synth_basemap",
    "RoutingInstance", "gen_features", "make_instance",
    "sample_indices_cluster", "sample_indices_uniform", "subsample_matrices",
    "ModelConfig", "Trajectory", "encode", "init_params", "rollout",
    "TrainConfig", "augment_x8", "pomo_advantage", "reinforce_loss", "train_policy",
]
