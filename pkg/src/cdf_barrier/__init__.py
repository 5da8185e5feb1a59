"""Configuration-space distance barriers for planar arms.

Planning: bubble-graph exploration over a configuration distance field (CDF)
barrier with convex piecewise-Bezier refinement. Control: governor-tracked PD
with CBF-QP and distributionally robust CBF-QP safety filters driven by
point-cloud sensing.
"""

from .kinematics import ArmModel, forward_kinematics, arm_sdf, inverse_kinematics_2link, two_link_arm

__all__ = [
    "ArmModel",
    "forward_kinematics",
    "arm_sdf",
    "inverse_kinematics_2link",
    "two_link_arm",
]
