"""Maximum stable delay of planar bi-modal hybrid automata."""

from .errors import MsdError
from .hybrid import BimodalAutomaton, DelayPolicy, HybridTrajectory, simulate
from .models import BouncingBallParams, bouncing_ball, bouncing_ball_affine
from .ode import IntegratorSettings, VectorField
from .poincare import PoincareCurve, default_curve, h2_star, hpcmap

__version__ = "0.1.0"
