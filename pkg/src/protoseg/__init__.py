"""Prototype/coefficient point-cloud instance segmentation at desk scale."""

from .config import DEFAULT_SEED, ModelConfig, RunConfig
from .data import PointCloud, SynthConfig, generate_scene, read_cloud, write_cloud
from .model import ProtoSeg, infer, load_model, save_model

__all__ = [
    "DEFAULT_SEED",
    "ModelConfig",
    "PointCloud",
    "ProtoSeg",
    "RunConfig",
    "SynthConfig",
    "generate_scene",
    "infer",
    "load_model",
    "read_cloud",
    "save_model",
    "write_cloud",
]
