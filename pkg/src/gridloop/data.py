"""Offline data handling: Hankel matrices, excitation checks, libraries.

Two data sources feed the predictive controller and its analysis:

* plant libraries -- seeded open-loop simulations of the generator, with
  optional rejection-resampling of trajectories that leave the operating
  box;
* nominal libraries -- trajectories of the lifted linear model propagated
  without residuals, in deviation coordinates (ubar, ybar, zbar0).  These
  are the exact-case reference for the trajectory-representation results.

A length-N vector sequence x yields the depth-L Hankel matrix of shape
(dim*L, N-L+1) whose column j stacks the window (x_j, ..., x_{j+L-1}).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .koopman import EmbeddingMatrices, Equilibrium, lift
from .plant import GeneratorParams, OperatingRegion, Trajectory, output, simulate

__all__ = [
    "ExcitationConfig",
    "TrajectoryLibrary",
    "hankel",
    "pe_check",
    "collect_library",
    "nominal_library",
    "lifted_excitation_check",
    "assemble_Hd",
    "representation_test",
    "save_library",
]


def hankel(seq: np.ndarray, depth: int) -> np.ndarray:
    """Sliding-window (block-Hankel) matrix of a vector sequence.

    seq has shape (N,) or (N, dim); the result has shape
    (dim*depth, N-depth+1) with column j equal to the stacked window
    seq[j], ..., seq[j+depth-1].
    """
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    n = seq.shape[0]
    if depth < 1:
        raise ValueError("hankel: depth must be at least 1")
    if depth > n:
        raise ValueError(f"hankel: depth {depth} exceeds sequence length {n}")
    cols = n - depth + 1
    return np.vstack([seq[i:i + cols].T for i in range(depth)])


def pe_check(u: np.ndarray, order: int, tol: float = 1e-9) -> tuple[bool, int]:
    """Persistent excitation of a given order: full row rank of H_order(u).

    Returns (ok, rank); rank counts singular values above tol * largest.
    """
    H = hankel(u, order)
    s = np.linalg.svd(H, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False, 0
    rank = int(np.sum(s >= tol * s[0]))
    return rank == H.shape[0], rank


@dataclass(frozen=True)
class ExcitationConfig:
    """Random open-loop excitation around the steady input.

    Inputs are drawn uniformly from [u_s - amplitude, u_s + amplitude]
    (clipped to the input box), held for `hold` steps.  Initial states are
    uniform over the operating box shrunk by init_fraction per axis, or by
    explicit per-axis half-widths when init_halfwidths is given.
    enforce_region keeps the rejection-resampling of trajectories that
    leave the box; disable it to collect informative data when the box is
    dynamically thin (the in-region fraction is then only reported).
    """

    amplitude: float = 0.2
    hold: int = 1
    init_fraction: float = 0.8
    init_halfwidths: Optional[tuple[float, float, float]] = None
    enforce_region: bool = True
    max_reject_rate: float = 0.9

    def __post_init__(self) -> None:
        if self.amplitude < 0.0:
            raise ValueError("ExcitationConfig.amplitude must be nonnegative")
        if self.hold < 1:
            raise ValueError("ExcitationConfig.hold must be at least 1")
        if not (0.0 <= self.init_fraction <= 1.0):
            raise ValueError("ExcitationConfig.init_fraction must lie in [0, 1]")


@dataclass
class TrajectoryLibrary:
    """A set of equal-length trajectories plus collection metadata."""

    trajectories: list
    L_traj: int
    seed: int
    mode: str                      # "plant" (absolute data) or "nominal" (deviation data)
    rejection_count: int = 0
    in_region_fraction: float = 1.0

    @property
    def size(self) -> int:
        return len(self.trajectories)

    @property
    def m(self) -> int:
        return 1

    def input_matrix(self) -> np.ndarray:
        """Stacked input sequences, one column per trajectory (m*L_traj, l)."""
        return np.stack([t.u for t in self.trajectories], axis=1)

    def lifted_x0_matrix(self) -> np.ndarray:
        cols = []
        for t in self.trajectories:
            if t.lifted_x0 is None:
                raise ValueError(
                    "library has no lifted initial states; collect with states "
                    "(simulation mode) to run excitation checks"
                )
            cols.append(t.lifted_x0)
        return np.stack(cols, axis=1)


def _draw_inputs(rng: np.random.Generator, u_s: float, r: OperatingRegion,
                 exc: ExcitationConfig, n: int) -> np.ndarray:
    n_blocks = -(-n // exc.hold)
    vals = u_s + exc.amplitude * rng.uniform(-1.0, 1.0, n_blocks)
    u = np.repeat(vals, exc.hold)[:n]
    return np.clip(u, r.u_min, r.u_max)


def _init_halfwidths(r: OperatingRegion, exc: ExcitationConfig) -> np.ndarray:
    if exc.init_halfwidths is not None:
        return np.asarray(exc.init_halfwidths, dtype=float)
    return exc.init_fraction * np.array([
        r.delta_max, r.omega_max, 0.5 * (r.Eq_max - r.Eq_min)])


def collect_library(
    p: GeneratorParams,
    r: OperatingRegion,
    exc: ExcitationConfig,
    l: int,
    L_traj: int,
    seed: int,
    eq: Equilibrium,
) -> TrajectoryLibrary:
    """Simulate l open-loop generator trajectories of L_traj samples each.

    With enforce_region on, trajectories leaving the box are rejected and
    resampled; collection aborts once the rejection rate exceeds
    max_reject_rate (after a minimal number of attempts).  Deterministic
    for a fixed seed.
    """
    half = _init_halfwidths(r, exc)
    x_mid = np.array([r.delta_s, p.omega_s, 0.5 * (r.Eq_min + r.Eq_max)])
    streams = np.random.SeedSequence(seed).spawn(1)[0]
    rng = np.random.default_rng(streams)

    trajectories: list[Trajectory] = []
    rejected = 0
    attempts = 0
    in_region_steps = 0
    total_steps = 0
    while len(trajectories) < l:
        attempts += 1
        x0 = x_mid + half * rng.uniform(-1.0, 1.0, 3)
        u = _draw_inputs(rng, eq.u_s, r, exc, L_traj)
        traj = simulate(x0, u, p, region=r)
        traj.seed = seed
        traj.lifted_x0 = lift(x0, p)
        if exc.enforce_region and traj.first_exit_index is not None:
            rejected += 1
            if attempts >= max(20, 2 * l) and rejected / attempts > exc.max_reject_rate:
                raise RuntimeError(
                    f"collect_library: rejection rate {rejected}/{attempts} exceeds "
                    f"{exc.max_reject_rate:.0%}; excitation or region settings are "
                    "dynamically inconsistent"
                )
            continue
        exit_k = traj.first_exit_index
        in_region_steps += L_traj if exit_k is None else exit_k
        total_steps += L_traj
        trajectories.append(traj)
    return TrajectoryLibrary(
        trajectories=trajectories,
        L_traj=L_traj,
        seed=seed,
        mode="plant",
        rejection_count=rejected,
        in_region_fraction=(in_region_steps / total_steps) if total_steps else 1.0,
    )


def simulate_nominal(E: EmbeddingMatrices, zbar0: np.ndarray, ubar: np.ndarray) -> np.ndarray:
    """Propagate the residual-free lifted model; returns ybar (N, p)."""
    ubar = np.atleast_1d(np.asarray(ubar, dtype=float))
    z = np.asarray(zbar0, dtype=float).copy()
    ys = np.empty((ubar.shape[0], E.p))
    for k, uk in enumerate(ubar):
        ys[k] = E.C @ z + E.D[:, 0] * uk
        z = E.A @ z + E.B[:, 0] * uk
    return ys


def nominal_library(
    E: EmbeddingMatrices,
    eq: Equilibrium,
    p: GeneratorParams,
    r: OperatingRegion,
    l: int,
    L_traj: int,
    seed: int,
    amplitude: float = 0.2,
    init_fraction: float = 0.8,
) -> TrajectoryLibrary:
    """Library of residual-free lifted-model trajectories (deviation data).

    Initial lifted states come from lifting states sampled over the
    (shrunk) operating box, so the initial-state block spans all lifted
    directions; inputs are uniform deviations in [-amplitude, amplitude].
    """
    rng = np.random.default_rng(seed)
    half = init_fraction * np.array([r.delta_max, r.omega_max, 0.5 * (r.Eq_max - r.Eq_min)])
    x_mid = np.array([r.delta_s, p.omega_s, 0.5 * (r.Eq_min + r.Eq_max)])
    trajectories = []
    for _ in range(l):
        x0 = x_mid + half * rng.uniform(-1.0, 1.0, 3)
        zbar0 = lift(x0, p) - eq.z_s
        ubar = amplitude * rng.uniform(-1.0, 1.0, L_traj)
        ybar = simulate_nominal(E, zbar0, ubar)
        trajectories.append(Trajectory(u=ubar, y=ybar, dt=p.dt, lifted_x0=zbar0, seed=seed))
    return TrajectoryLibrary(trajectories=trajectories, L_traj=L_traj, seed=seed, mode="nominal")


@dataclass(frozen=True)
class ExcitationCheck:
    ok: bool
    rank: int
    required: int
    shape_ok: bool


def lifted_excitation_check(lib: TrajectoryLibrary, tol: float = 1e-9) -> ExcitationCheck:
    """Full row rank of inputs stacked with initial lifted states.

    The checked matrix has one column per trajectory: the whole input
    sequence (m*L_traj rows) over the initial lifted vector (7 rows).
    Fewer than m*L_traj + 7 trajectories cannot pass (rank deficient by
    shape); the check then reports ok=False without error.
    """
    U = lib.input_matrix()
    Z0 = lib.lifted_x0_matrix()
    HK = np.vstack([U, Z0])
    required = HK.shape[0]
    if lib.size < required:
        return ExcitationCheck(ok=False, rank=min(lib.size, required),
                               required=required, shape_ok=False)
    s = np.linalg.svd(HK, compute_uv=False)
    rank = 0 if s.size == 0 or s[0] == 0.0 else int(np.sum(s >= tol * s[0]))
    return ExcitationCheck(ok=(rank == required), rank=rank, required=required, shape_ok=True)


def assemble_Hd(
    source,
    T_ini: int,
    N_f: int,
) -> np.ndarray:
    """Stacked past/future data matrix col(U_P, Y_P, U_F, Y_F).

    source is either a TrajectoryLibrary (one column per trajectory, using
    the first T_ini + N_f samples of each) or a single Trajectory (sliding
    windows; the same row layout as partitioning a depth-(T_ini+N_f)
    Hankel matrix of u and y).
    """
    L = T_ini + N_f
    if isinstance(source, TrajectoryLibrary):
        cols = []
        for t in source.trajectories:
            if t.n_samples < L:
                raise ValueError(
                    f"assemble_Hd: trajectory has {t.n_samples} samples, needs {L}")
            u, y = t.u[:L], t.y[:L]
            cols.append(np.concatenate(
                [u[:T_ini].ravel(), y[:T_ini].ravel(), u[T_ini:].ravel(), y[T_ini:].ravel()]))
        return np.stack(cols, axis=1)
    t = source
    Hu = hankel(t.u, L)
    Hy = hankel(t.y, L)
    m = 1 if t.u.ndim == 1 else t.u.shape[1]
    p_dim = t.y.shape[1]
    return np.vstack([Hu[:m * T_ini], Hy[:p_dim * T_ini],
                      Hu[m * T_ini:], Hy[p_dim * T_ini:]])


def representation_test(
    H_d: np.ndarray,
    u_ini: np.ndarray,
    y_ini: np.ndarray,
    u_f: np.ndarray,
    y_f: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Least-squares residual of representing a trajectory in the data span.

    Returns (||H_d g - b||_2, g) for the stacked target
    b = col(u_ini, y_ini, u_f, y_f); a residual near zero means the
    trajectory lies in the image of the data matrix.
    """
    b = np.concatenate([np.ravel(u_ini), np.ravel(y_ini), np.ravel(u_f), np.ravel(y_f)])
    if H_d.shape[0] != b.size:
        raise ValueError(
            f"representation_test: H_d has {H_d.shape[0]} rows, target has {b.size}")
    g, *_ = np.linalg.lstsq(H_d, b, rcond=None)
    return float(np.linalg.norm(H_d @ g - b)), g


def save_library(lib: TrajectoryLibrary, out_dir) -> None:
    """One CSV per trajectory plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, t in enumerate(lib.trajectories):
        name = f"traj_{i:04d}.csv"
        names.append(name)
        with open(out / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "u", "y1", "y2"])
            for k in range(t.n_samples):
                writer.writerow([k, repr(float(t.u[k])),
                                 repr(float(t.y[k, 0])), repr(float(t.y[k, 1]))])
    manifest = {
        "mode": lib.mode,
        "size": lib.size,
        "L_traj": lib.L_traj,
        "seed": lib.seed,
        "rejection_count": lib.rejection_count,
        "in_region_fraction": lib.in_region_fraction,
        "files": names,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
