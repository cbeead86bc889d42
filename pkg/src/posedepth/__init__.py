"""Toy-scale pose and depth learning with confidence-aware feature flow and gated positional injection."""

from .config import ConfigError, RunConfig
from .feature_flow import AffinityVolume, FlowField, affinity_volume, caffe_forward, confidence, soft_argmax_flow
from .geometry import CameraIntrinsics, PointCloud, PoseSE3, backproject, warp_reference
from .injector import PoseNet
from .networks import DepthNet
from .tensor import Tensor, gradient_check, precision

__all__ = [
    "AffinityVolume", "CameraIntrinsics", "ConfigError", "DepthNet", "FlowField", "PointCloud", "PoseNet",
    "PoseSE3", "RunConfig", "Tensor", "affinity_volume", "backproject", "caffe_forward", "confidence",
    "gradient_check", "precision", "soft_argmax_flow", "warp_reference",
]
