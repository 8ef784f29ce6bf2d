"""Text-conditioned diffusion for skeletal pose sequences."""

from .denoiser import DenoiserConfig, TextPoseDenoiser, Vocabulary
from .diffusion import SamplerConfig, forward_noise, make_timestep_subsequence, sample
from .losses import bone_loss, joint_loss, total_loss
from .schedule import NoiseSchedule, cosine_schedule
from .skeleton import PoseSequence, SkeletonTopology, bone_orientations, body_bones, default_topology

__version__ = "0.1.0"

__all__ = [
    "DenoiserConfig",
    "TextPoseDenoiser",
    "Vocabulary",
    "SamplerConfig",
    "forward_noise",
    "make_timestep_subsequence",
    "sample",
    "bone_loss",
    "joint_loss",
    "total_loss",
    "NoiseSchedule",
    "cosine_schedule",
    "PoseSequence",
    "SkeletonTopology",
    "bone_orientations",
    "body_bones",
    "default_topology",
]
