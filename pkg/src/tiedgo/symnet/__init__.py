from .layers import Conv2D, Dense, ShapeError
from .network import (
    ConfigError,
    InvalidTargetError,
    Network,
    NoLegalMoveError,
    backward,
    forward,
    masked_softmax,
    set_tying,
)
from .orbits import OrbitMap, UnsupportedShapeError, build_orbit_map_conv, build_orbit_map_dense

__all__ = [
    "Conv2D", "Dense", "ShapeError", "ConfigError", "InvalidTargetError", "Network",
    "NoLegalMoveError", "backward", "forward", "masked_softmax", "set_tying", "OrbitMap",
    "UnsupportedShapeError", "build_orbit_map_conv", "build_orbit_map_dense",
]
