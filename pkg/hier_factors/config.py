"""Configurations for hier_factors."""
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Final, Optional, Tuple

import platformdirs

from .errors import ConfigurationError

C_MAX_RULES: Final[Dict[str, int]] = {
    "sim": 4,
    "real": 6,
}


class Configuration:
    """Filesystem configuration for hier_factors."""

    LEDGER_NAME: Final[str] = "ledger.db"

    def __init__(
        self,
        app_name: str = "hier-factors",
        app_author: str = "hier-factors",
        dir_output: Path = None,
        dir_logs: Path = None,
        ledger_name: str = None,
    ) -> None:
        if dir_output is None:
            dir_output = platformdirs.user_data_dir(app_name, app_author)
        if dir_logs is None:
            dir_logs = platformdirs.user_log_dir(app_name, app_author)
        if ledger_name is None:
            ledger_name = self.LEDGER_NAME

        self.dir_output = Path(dir_output)
        self.dir_logs = Path(dir_logs)
        self.ledger_name = ledger_name


@dataclass(frozen=True)
class SolverOptions:
    """Budget of the box-constrained quasi-Newton inner solver."""

    ftol: float = 1e-9
    gtol: float = 1e-6
    max_iterations: int = 2000

    def __post_init__(self) -> None:
        if self.ftol <= 0 or self.gtol <= 0:
            raise ConfigurationError("Solver tolerances must be positive.")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1.")


@dataclass(frozen=True)
class ALMConfig:
    """Tuning of the augmented Lagrangian partition search."""

    c_theta: float = 0.25
    c_sigma: float = 10.0
    delta1: float = 0.01
    delta2: float = 0.01
    max_iterations: int = 100
    max_restarts: int = 5
    num_starts: int = 100
    min_valid_solutions: int = 50
    initial_penalty: float = 1.0
    tau: float = 10.0
    inner_gtol: float = 1e-7
    inner_gtol_early: float = 1e-5
    early_iterations: int = 3
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        if not 0 < self.c_theta < 1:
            raise ConfigurationError(f"c_theta must lie in (0, 1), got {self.c_theta}.")
        if self.c_sigma <= 1:
            raise ConfigurationError(f"c_sigma must exceed 1, got {self.c_sigma}.")
        for name in ("delta1", "delta2", "initial_penalty", "tau"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive.")
        if self.inner_gtol <= 0 or self.inner_gtol_early <= 0:
            raise ConfigurationError("Inner tolerances must be positive.")
        if self.max_iterations < 1 or self.num_starts < 1:
            raise ConfigurationError("max_iterations and num_starts must be at least 1.")
        if self.max_restarts < 0 or self.min_valid_solutions < 1:
            raise ConfigurationError("max_restarts >= 0 and min_valid_solutions >= 1.")


@dataclass(frozen=True)
class ICBConfig:
    """Tuning of the information-criterion child search."""

    c_max_rule: str = "sim"
    d_max: int = 6
    tau: float = 10.0
    alm: ALMConfig = field(default_factory=ALMConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        if self.c_max_rule not in C_MAX_RULES:
            raise ConfigurationError(
                f"Unknown c_max rule {self.c_max_rule!r}; use one of {sorted(C_MAX_RULES)}."
            )
        if self.d_max < 1:
            raise ConfigurationError("d_max must be at least 1.")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive.")

    def to_dict(self) -> Dict[str, Any]:
        """Plain-dict echo for output files."""
        return asdict(self)


def c_max_for(size: int, rule: str = "sim") -> int:
    """Upper bound on the number of child factors of a factor with ``size`` variables."""
    if size <= 6:
        return 0
    return min(C_MAX_RULES[rule], size // 3)


def hyperparam_schedule(layer: int, size: int, config: ICBConfig) -> Tuple[int, int]:
    """Return ``(c_max, d)`` for learning the children of a factor at ``layer``.

    ``layer`` is the index of the layer being learned (2 for the children of
    the general factor). ``d`` is ``min(size, d_max + 2 - layer)``; when that
    drops below one no child candidates are searched.
    """
    if layer < 2:
        raise ConfigurationError(f"Layer index must be at least 2, got {layer}.")
    d = min(size, config.d_max + 2 - layer)
    if d < 1:
        return 0, 0
    return c_max_for(size, config.c_max_rule), d


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation was asked to do."""

    mode: str
    seed: int = 0
    input_path: Optional[str] = None
    input_kind: str = "covariance"
    n_obs: Optional[int] = None
    tree_path: Optional[str] = None
    loadings_path: Optional[str] = None
    output_dir: Optional[str] = None
    ridge: float = 0.0
    n_jobs: int = 1
    divisor: str = "n"
    center: bool = True
    settings: Tuple[Tuple[int, int], ...] = ()
    reps: int = 5
    shape: str = "four-layer"
    truth_mode: str = "fixed"
    oracle: bool = False
    icb: ICBConfig = field(default_factory=ICBConfig)

    def __post_init__(self) -> None:
        if self.mode in ("fit", "confirm") and self.input_kind == "covariance":
            if self.n_obs is None:
                raise ConfigurationError("Covariance input requires an explicit sample size --n.")
        if self.ridge < 0 or not math.isfinite(self.ridge):
            raise ConfigurationError("Ridge epsilon must be a finite nonnegative number.")
        if self.n_jobs < 1:
            raise ConfigurationError("Parallelism degree must be at least 1.")

    def to_dict(self) -> Dict[str, Any]:
        """Plain-dict echo for output files."""
        return asdict(self)
