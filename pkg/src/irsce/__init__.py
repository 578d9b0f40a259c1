"""Cascaded IRS channel estimation with always-ON training.

Submodules:

* :mod:`irsce.model`: dimensions, angular-domain channel generator, covariance algebra
* :mod:`irsce.protocol`: pilots, phase plans, training simulation and preprocessing
* :mod:`irsce.estimator`: MAP alternating-optimisation estimator
* :mod:`irsce.phase_opt`: steering-vector design by SCA
* :mod:`irsce.onoff`: selected on-off baseline
* :mod:`irsce.harness`: seeded NMSE sweeps and CSV output
"""

from .estimator import EstimatorConfig, estimate, nmse
from .model import SystemDims

__version__ = "0.1.0"

__all__ = ["EstimatorConfig", "SystemDims", "estimate", "nmse", "__version__"]
