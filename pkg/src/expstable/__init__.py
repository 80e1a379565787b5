"""Simulation and statistical checks for exp-1-stable random measures on the line."""

from .bbm import BbmParams, BbmSnapshot, extremal_process, martingale_trace, simulate
from .decorations import BUILTIN_DPPP, REGISTRY, make_decoration
from .functional import BATTERY, agreement_table, estimate_cumulant, eval_cumulant_formula, homogeneity_check
from .measure import PointConfiguration, TestFunction, Window, indicator, rightmost, translate, triangle
from .normalize import CanonicalPair, canonicalize, verify_equivalence
from .sampler import DpppSpec, Shifted, Superposed, intensity_estimate, intensity_scan, sample_gumbel_ppp
from .stability import StabilityReport, check_stability, check_superposition_shift

__version__ = "0.1.0"
