"""Third-order (flux-decay) synchronous generator on an infinite bus.

Explicit-Euler discrete model with state x = (delta, omega, Eq_prime):

    delta^+ = delta + dt * (omega - omega_s)
    omega^+ = omega + (dt/M) * (u - D*(omega - omega_s) - P_e)
    Eq^+    = Eq + (dt/Tdo_prime) * (E_fd - kappa*Eq + mu*cos(delta))

with P_e = gamma * Eq * sin(delta), M = 2H/omega_s, gamma = V_inf/X_sum,
kappa = (Xd + Xe)/X_sum, mu = (Xd - Xd_prime)*V_inf/X_sum and
X_sum = Xd_prime + Xe.  The mechanical input u is the single control.
Measured outputs are y = (omega - omega_s, P_e).

All step/output functions accept a single state of shape (3,) or a batch
of shape (n, 3) and broadcast accordingly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "GeneratorParams",
    "OperatingRegion",
    "Trajectory",
    "step",
    "output",
    "compute_equilibrium",
    "in_region",
    "simulate",
    "save_trajectory_csv",
]


@dataclass(frozen=True)
class GeneratorParams:
    """Machine, network and discretization constants.

    omega_max of the operating region is kept separate (see OperatingRegion);
    everything here is a physical or numerical constant of the model itself.
    """

    omega_s: float = 377.0      # synchronous speed [rad/s]
    H: float = 3.5              # inertia constant [s]
    D: float = 0.0              # damping coefficient
    Tdo_prime: float = 6.0      # d-axis transient open-circuit time constant [s]
    Xd: float = 1.8             # d-axis synchronous reactance
    Xd_prime: float = 0.3       # d-axis transient reactance
    Xe: float = 0.1             # external line reactance
    V_inf: float = 1.0          # infinite-bus voltage magnitude
    E_fd: float = 2.0           # constant field voltage
    dt: float = 0.0025          # integration step [s]

    def __post_init__(self) -> None:
        for name in ("H", "Tdo_prime", "V_inf", "omega_s"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"GeneratorParams.{name} must be positive")
        if self.Xd_prime + self.Xe <= 0.0:
            raise ValueError("GeneratorParams: X_sum = Xd_prime + Xe must be positive")
        if not (0.0 < self.dt <= 0.005):
            raise ValueError("GeneratorParams.dt must lie in (0, 0.005]")
        # discrete-time sanity: the Euler factors must not flip sign
        if self.alpha_d * self.D >= 2.0:
            raise ValueError("GeneratorParams: alpha_d * D >= 2 (unstable discretization)")
        if self.alpha_q * self.kappa >= 2.0:
            raise ValueError("GeneratorParams: alpha_q * kappa >= 2 (unstable discretization)")

    # -- derived shorthands ------------------------------------------------

    @property
    def M(self) -> float:
        return 2.0 * self.H / self.omega_s

    @property
    def X_sum(self) -> float:
        return self.Xd_prime + self.Xe

    @property
    def gamma(self) -> float:
        return self.V_inf / self.X_sum

    @property
    def kappa(self) -> float:
        return (self.Xd + self.Xe) / self.X_sum

    @property
    def mu(self) -> float:
        return (self.Xd - self.Xd_prime) * self.V_inf / self.X_sum

    @property
    def alpha_d(self) -> float:
        return self.dt / self.M

    @property
    def alpha_q(self) -> float:
        return self.dt / self.Tdo_prime

    def with_dt(self, dt: float) -> "GeneratorParams":
        return replace(self, dt=dt)


@dataclass(frozen=True)
class OperatingRegion:
    """Box of admissible states and inputs around the operating point.

    The state box is |delta - delta_s| <= delta_max, |omega - omega_s| <=
    omega_max, Eq_min <= Eq_prime <= Eq_max; the input box is
    [u_min, u_max].  omega_max is used verbatim (no unit rescaling) both as
    the region half-width and inside the certificate offset constant.
    """

    delta_s: float = 0.4        # operating angle [rad]
    delta_max: float = 0.5      # angle half-width [rad]
    omega_max: float = 0.02     # speed-deviation half-width
    Eq_min: float = 0.6
    Eq_max: float = 1.2
    u_min: float = 0.0
    u_max: float = 1.5

    def __post_init__(self) -> None:
        if self.delta_max <= 0.0 or self.omega_max <= 0.0:
            raise ValueError("OperatingRegion: delta_max and omega_max must be positive")
        if not (0.0 < self.Eq_min < self.Eq_max):
            raise ValueError("OperatingRegion: need 0 < Eq_min < Eq_max")
        if self.u_min >= self.u_max:
            raise ValueError("OperatingRegion: need u_min < u_max")
        if abs(self.delta_s) + self.delta_max >= math.pi / 2.0:
            # keeps sin monotone over the angle box (grid diameter search relies on it)
            raise ValueError("OperatingRegion: |delta_s| + delta_max must stay below pi/2")

    def state_bounds(self, omega_s: float) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.delta_s - self.delta_max, omega_s - self.omega_max, self.Eq_min])
        hi = np.array([self.delta_s + self.delta_max, omega_s + self.omega_max, self.Eq_max])
        return lo, hi


@dataclass
class Trajectory:
    """One simulated or measured input/output record.

    u has shape (N,), y has shape (N, 2) with y[k] measured at the state the
    input u[k] acts on.  For simulated records x holds all N+1 states and
    lifted_x0 may cache an initial lifted vector; measured-only records leave
    x as None.
    """

    u: np.ndarray
    y: np.ndarray
    dt: float
    x: Optional[np.ndarray] = None
    lifted_x0: Optional[np.ndarray] = None
    first_exit_index: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        self.u = np.atleast_1d(np.asarray(self.u, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape[0] != self.u.shape[0]:
            raise ValueError("Trajectory: u and y must have the same number of samples")

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    @property
    def x0(self) -> Optional[np.ndarray]:
        return None if self.x is None else self.x[0]


# -- core maps ------------------------------------------------------------


def step(x: np.ndarray, u, p: GeneratorParams) -> np.ndarray:
    """One explicit-Euler step; x shape (3,) or (n, 3), u scalar or (n,)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    delta = x[..., 0]
    omega = x[..., 1]
    eq = x[..., 2]
    p_e = p.gamma * eq * np.sin(delta)
    delta_next = delta + p.dt * (omega - p.omega_s)
    omega_next = omega + p.alpha_d * (u - p.D * (omega - p.omega_s) - p_e)
    eq_next = eq + p.alpha_q * (p.E_fd - p.kappa * eq + p.mu * np.cos(delta))
    return np.stack([delta_next, omega_next, eq_next], axis=-1)


def output(x: np.ndarray, p: GeneratorParams) -> np.ndarray:
    """Measured outputs y = (omega - omega_s, P_e); shape (2,) or (n, 2)."""
    x = np.asarray(x, dtype=float)
    omega_tilde = x[..., 1] - p.omega_s
    p_e = p.gamma * x[..., 2] * np.sin(x[..., 0])
    return np.stack([omega_tilde, p_e], axis=-1)


def compute_equilibrium(delta_s: float, p: GeneratorParams) -> tuple[np.ndarray, float]:
    """Steady state (x_s, u_s) at angle delta_s.

    Solves the flux equation for Eq and picks the mechanical input that
    balances electrical power: Eq_s = (E_fd + mu*cos(delta_s)) / kappa,
    u_s = gamma * Eq_s * sin(delta_s).
    """
    if not abs(delta_s) < math.pi / 2.0:
        raise ValueError("compute_equilibrium: |delta_s| must be below pi/2")
    eq_s = (p.E_fd + p.mu * math.cos(delta_s)) / p.kappa
    u_s = p.gamma * eq_s * np.sin(delta_s)
    x_s = np.array([delta_s, p.omega_s, eq_s])
    residual = np.max(np.abs(step(x_s, u_s, p) - x_s))
    if residual >= 1e-12:
        raise RuntimeError(f"compute_equilibrium: fixed-point residual {residual:.3e} too large")
    return x_s, float(u_s)


def in_region(x: np.ndarray, r: OperatingRegion, p: GeneratorParams, u=None) -> np.ndarray:
    """Boolean box membership for states (and inputs when given)."""
    x = np.asarray(x, dtype=float)
    lo, hi = r.state_bounds(p.omega_s)
    ok = np.all((x >= lo) & (x <= hi), axis=-1)
    if u is not None:
        u = np.asarray(u, dtype=float)
        ok = ok & (u >= r.u_min) & (u <= r.u_max)
    return ok


def simulate(
    x0: np.ndarray,
    u_seq: np.ndarray,
    p: GeneratorParams,
    region: Optional[OperatingRegion] = None,
) -> Trajectory:
    """Roll the model forward under an input sequence.

    Returns a Trajectory with all N+1 states; when a region is given,
    first_exit_index records the first step k at which (x_k, u_k) (or the
    final state) leaves the box, without truncating the simulation.
    Raises on non-finite states, naming the offending step.
    """
    u_seq = np.atleast_1d(np.asarray(u_seq, dtype=float))
    n = u_seq.shape[0]
    xs = np.empty((n + 1, 3))
    xs[0] = np.asarray(x0, dtype=float)
    for k in range(n):
        xs[k + 1] = step(xs[k], u_seq[k], p)
        if not np.all(np.isfinite(xs[k + 1])):
            raise RuntimeError(f"simulate: non-finite state at step {k + 1}")
    first_exit: Optional[int] = None
    if region is not None:
        ok = in_region(xs[:-1], region, p, u_seq)
        ok = np.append(ok, in_region(xs[-1], region, p))
        bad = np.flatnonzero(~ok)
        if bad.size:
            first_exit = int(bad[0])
    return Trajectory(
        u=u_seq,
        y=output(xs[:-1], p),
        dt=p.dt,
        x=xs,
        first_exit_index=first_exit,
    )


def save_trajectory_csv(traj: Trajectory, path, p: GeneratorParams) -> None:
    """Write (k, delta, omega, Eq_prime, u, omega_tilde, P_e) rows.

    Requires states; the final row (no input applied) leaves u blank.
    """
    if traj.x is None:
        raise ValueError("save_trajectory_csv: trajectory has no stored states")
    y_all = output(traj.x, p)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "delta", "omega", "Eq_prime", "u", "omega_tilde", "P_e"])
        for k in range(traj.x.shape[0]):
            u_val = repr(float(traj.u[k])) if k < traj.n_samples else ""
            writer.writerow(
                [k, repr(float(traj.x[k, 0])), repr(float(traj.x[k, 1])),
                 repr(float(traj.x[k, 2])), u_val,
                 repr(float(y_all[k, 0])), repr(float(y_all[k, 1]))]
            )
