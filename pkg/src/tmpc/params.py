"""Vehicle, tire and soft-constraint parameter sets.

Defaults reproduce the ultra-light off-road vehicle used for the reference
trials (mass 969 kg, 2.713 m wheelbase).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .errors import ConfigError

G = 9.81


@dataclass(frozen=True)
class VehicleParams:
    M: float = 969.0
    J_xx: float = 280.9
    J_yy: float = 692.1
    J_zz: float = 810.7
    L_f: float = 1.565
    L_r: float = 1.148
    e: float = 1.280
    h: float = 0.380
    R: float = 0.291
    k_f: float = 4.2e4
    k_r: float = 5.8e4
    b_f: float = 3.1e3
    b_r: float = 4.3e3
    delta_max: float = 0.639
    delta_rate_max: float = 1.0
    g: float = G

    def __post_init__(self):
        bad = [f.name for f in dataclasses.fields(self)
               if not (math.isfinite(getattr(self, f.name)) and getattr(self, f.name) > 0)]
        if bad:
            raise ConfigError("vehicle parameters must be positive and finite",
                              [f"{name}={getattr(self, name)!r}" for name in bad])
        if self.delta_max >= math.pi / 2:
            raise ConfigError("vehicle parameters invalid", ["delta_max must be < pi/2"])

    @property
    def wheelbase(self) -> float:
        return self.L_f + self.L_r

    def replace(self, **changes) -> "VehicleParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TireParams:
    """Sigmoid tire: cornering stiffness ``C`` [1/rad], friction ceiling ``mu``."""

    C: float = 6.1
    mu: float = 0.6

    def __post_init__(self):
        problems = []
        if not (self.C > 0 and math.isfinite(self.C)):
            problems.append(f"C={self.C!r} must be > 0")
        if not (0 < self.mu <= 2):
            problems.append(f"mu={self.mu!r} must lie in (0, 2]")
        if problems:
            raise ConfigError("tire parameters invalid", problems)


# Tire fits used for the simulated and the physical trials.
SIM_TIRES = TireParams(C=6.1, mu=0.6)
FIELD_TIRES = TireParams(C=1.7, mu=0.4)


@dataclass(frozen=True)
class SoftConstraintParams:
    epsilon: float
    sigma: float = 1e6

    def __post_init__(self):
        if not (self.epsilon > 0 and self.sigma > 0):
            raise ConfigError("soft constraint invalid",
                              [f"epsilon={self.epsilon!r}, sigma={self.sigma!r} must be > 0"])


@dataclass(frozen=True)
class ConstraintConfig:
    """Soft-constraint configuration shared by both formulations.

    ``a_by_bar`` is the empirical critical lateral acceleration and
    ``esm_nominal`` the flat-ground energy stability margin; both normalize the
    rollover constraints so cost starts at ``safety_factor`` of the margin.
    ``esm_nominal=None`` means "derive from the vehicle".
    """

    a_by_bar: float = 5.0
    esm_nominal: float | None = None
    eps_dist: float = 0.25
    sigma: float = 1e6
    safety_factor: float = 0.10
    enable_distance: bool = True
    enable_rollover: bool = True

    def __post_init__(self):
        problems = []
        if not self.a_by_bar > 0:
            problems.append(f"a_by_bar={self.a_by_bar!r} must be > 0")
        if self.esm_nominal is not None and not self.esm_nominal > 0:
            problems.append(f"esm_nominal={self.esm_nominal!r} must be > 0")
        if not self.eps_dist > 0:
            problems.append(f"eps_dist={self.eps_dist!r} must be > 0")
        if not self.sigma > 0:
            problems.append(f"sigma={self.sigma!r} must be > 0")
        if not 0 < self.safety_factor < 1:
            problems.append(f"safety_factor={self.safety_factor!r} must lie in (0, 1)")
        if problems:
            raise ConfigError("constraint configuration invalid", problems)

    def replace(self, **changes) -> "ConstraintConfig":
        return dataclasses.replace(self, **changes)
