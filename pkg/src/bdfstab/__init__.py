"""BDF1-BDF3 time stepping of semiconvex gradient flows with certified Lyapunov audits."""

from .constants import BETA3, alpha, lambda_barrier, regime, threshold_table, two_beta
from .integrator import SchemeConfig, Trajectory, bootstrap, order_study, run
from .lyapunov import budget_check, descent_audit, omega_diagnostics
from .objective import build
from .quadform import decompose, default_beta, maximize_f, optimal_decomposition

__version__ = "0.1.0"

__all__ = [
    "BETA3", "alpha", "two_beta", "lambda_barrier", "regime", "threshold_table",
    "SchemeConfig", "Trajectory", "bootstrap", "run", "order_study",
    "descent_audit", "budget_check", "omega_diagnostics",
    "build", "decompose", "default_beta", "maximize_f", "optimal_decomposition",
]
