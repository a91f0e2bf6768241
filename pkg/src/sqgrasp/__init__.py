"""Superquadric shape recovery and antipodal grasp synthesis for single-view tabletop point clouds."""

from .cloud import PointCloud, load_pcd, save_pcd
from .errors import SqGraspError
from .fit import FitOptions, FitResult, fit_lm, radial_error
from .grasp import GraspCandidate, GripperSpec, synthesize
from .mirror import ObjectPoseEstimate, complete_all, estimate_pose, mirror_cloud
from .scene import PlaneModel, cluster_objects, fit_table_plane
from .sq_core import RigidPose, Superquadric

__version__ = "0.1.0"

__all__ = [
    "FitOptions",
    "FitResult",
    "GraspCandidate",
    "GripperSpec",
    "ObjectPoseEstimate",
    "PlaneModel",
    "PointCloud",
    "RigidPose",
    "SqGraspError",
    "Superquadric",
    "cluster_objects",
    "complete_all",
    "estimate_pose",
    "fit_lm",
    "fit_table_plane",
    "load_pcd",
    "mirror_cloud",
    "radial_error",
    "save_pcd",
    "synthesize",
]
