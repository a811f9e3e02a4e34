"""Multi-point blow-up solutions of the L²-critical focusing NLS on bounded domains."""

from .ground_state import GroundState, solve_ground_state
from .profile import BubbleConfig, Profile
from .spectral import DomainSpec, Field

__version__ = "0.1.0"

__all__ = ["__version__", "DomainSpec", "Field", "GroundState", "solve_ground_state", "BubbleConfig", "Profile"]
