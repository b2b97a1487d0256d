"""Unsupervised learning of convolutional filter banks from video.

Filters evolve under damped second-order (or gradient-flow) dynamics
driven by a potential that rewards motion invariance of the feature maps
along the optical flow.
"""

from .action import (PotentialBreakdown, PotentialConfig, decorrelation_term, evaluate_action,
                     motion_term, regularization_term, total_potential)
from .dynamics import (AgentState, IntegratorConfig, TrainMetrics, kinetic_energy,
                       linearized_solution, load_checkpoint, run_training, save_checkpoint,
                       step_gradient_flow, step_second_order)
from .flow import (FlowField, brightness_constancy_residual, estimate_flow, flow_affine,
                   flow_rotation, flow_translation, load_flow, save_flow)
from .retina import (FeatureStack, FilterBank, activate, activation_derivative, features,
                     interior_mask, material_derivative, preactivations, spatial_gradient)
from .video import (BlurSchedule, NightSchedule, VideoClip, apply_schedules, blur_sigma_at,
                    gaussian_blur, gen_rotating, gen_translating, high_freq_energy, load_clip,
                    save_clip)

__version__ = "0.1.0"
