"""
Runtime settings for neckflow.

Values come from the environment (a local .env file is honoured) with
numerical defaults suitable for desk-scale runs.
"""

import os
import logging

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)


def _float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning(f"Ignoring non-numeric {name}={raw!r}, using {default}")
        return default


OUTPUT_DIR = os.getenv("NECKFLOW_OUTPUT_DIR", "./neckflow_out")
LOG_LEVEL = os.getenv("NECKFLOW_LOG_LEVEL", "INFO")

# Integration spans are capped here; e^rho coefficients turn stiff past it.
RHO_MAX = _float("NECKFLOW_RHO_MAX", 6.0)

EXACT_TOL = 1e-12
QUADRATURE_TOL = 1e-8
FLATNESS_TOL = _float("NECKFLOW_FLATNESS_TOL", 1e-6)
CONSISTENCY_TOL = 1e-8
CENTER_TOL = 1e-10
SPLIT_GAP = 1e-6
DIVERGENCE_LIMIT = _float("NECKFLOW_DIVERGENCE_LIMIT", 1e6)
CONTRACTION_TOL = 1e-10
COKERNEL_THRESHOLD = 1e-8
COLLAR_FACTOR = _float("NECKFLOW_COLLAR_FACTOR", 4.0)
BAD_POINT_MARGIN = 0.05
COMPATIBILITY_TOL = 1e-6

SIGNIFICANT_DIGITS = 17


def output_dir(override: str = None) -> str:
    """CLI --out wins over NECKFLOW_OUTPUT_DIR."""
    return override or os.getenv("NECKFLOW_OUTPUT_DIR", OUTPUT_DIR)
