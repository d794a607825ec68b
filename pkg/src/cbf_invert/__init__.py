"""Safety-filtered multi-agent navigation with constraint inference from filtered actions."""

import logging

from .constraints import CbfParams, FormationConstraint, QuadraticBarrier, VelocityBound
from .dynamics import AgentState, DynamicsParams, JointState

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"

__all__ = ["AgentState", "CbfParams", "DynamicsParams", "FormationConstraint", "JointState",
           "QuadraticBarrier", "VelocityBound"]
