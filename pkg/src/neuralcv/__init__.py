"""Neural control variates for walk-on-spheres PDE estimators."""

from .geometry import PROBLEMS, ProblemSpec, registry_lookup
from .networks import ARCHS, RECOMMENDED, AntiderivativeNet, make_net, make_recommended
from .poly import PolyModel, make_poly
from .transforms import DomainTransform
from .wos import WalkConfig, WalkResult, wos_cv_both, wos_cv_circle, wos_cv_disk, wos_cv_sphere3d, wos_plain

__all__ = [
    "PROBLEMS", "ProblemSpec", "registry_lookup", "ARCHS", "RECOMMENDED", "AntiderivativeNet", "make_net",
    "make_recommended",
    "PolyModel", "make_poly", "DomainTransform", "WalkConfig", "WalkResult",
    "wos_plain", "wos_cv_circle", "wos_cv_disk", "wos_cv_both", "wos_cv_sphere3d",
]
__version__ = "0.1.0"
