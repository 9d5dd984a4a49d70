"""Linear embedding of the generator with a certified residual bound.

The state is lifted to z = Phi(x) = (delta, omega_tilde, Eq, sin delta,
cos delta, Eq*sin delta, Eq*cos delta) with omega_tilde = omega - omega_s.
Around an equilibrium (x_s, u_s) the lifted deviation zbar = z - z_s evolves
as

    zbar^+ = A zbar + B ubar + e,      ybar = C zbar,

where (A, B, C, D) are sparse constant matrices determined by the model
constants and e is the lifting residual.  error_constants produces a
certificate (eps_A, eps_B, eps_C, c0) such that

    ||e||_2 <= eps_A * ||zbar||_2 + eps_B * |ubar| + c0

for every state/input pair in the operating box, plus per-component budget
constants used as a stricter diagnostic.  certify checks the inequality on
a seeded sample sweep plus all box corners.

ctrl_obs_ranks and minimal_realization expose how much of the 7-dimensional
embedding is actually reachable/observable from the scalar input and the
two outputs (a Kalman-style staircase reduction via orthogonal projections).
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .plant import GeneratorParams, OperatingRegion, compute_equilibrium, in_region, step

__all__ = [
    "Z_DIM",
    "EmbeddingMatrices",
    "Equilibrium",
    "ErrorCertificate",
    "CertReport",
    "MinimalRealization",
    "lift",
    "build_embedding",
    "make_equilibrium",
    "error_constants",
    "residual",
    "certify",
    "ctrl_obs_ranks",
    "minimal_realization",
    "markov_parameters",
]

Z_DIM = 7


def lift(x: np.ndarray, p: GeneratorParams) -> np.ndarray:
    """Phi(x): shape (7,) for a single state, (n, 7) for a batch."""
    x = np.asarray(x, dtype=float)
    delta = x[..., 0]
    omega_tilde = x[..., 1] - p.omega_s
    eq = x[..., 2]
    s, c = np.sin(delta), np.cos(delta)
    return np.stack([delta, omega_tilde, eq, s, c, eq * s, eq * c], axis=-1)


@dataclass(frozen=True)
class EmbeddingMatrices:
    """Constant (A, B, C, D) of the lifted linear model."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def n_z(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Equilibrium:
    """Centering data: steady state, its lift and its output."""

    x_s: np.ndarray
    u_s: float
    z_s: np.ndarray
    y_s: np.ndarray


def make_equilibrium(delta_s: float, p: GeneratorParams) -> Equilibrium:
    x_s, u_s = compute_equilibrium(delta_s, p)
    z_s = lift(x_s, p)
    y_s = np.array([0.0, p.gamma * x_s[2] * np.sin(x_s[0])])
    return Equilibrium(x_s=x_s, u_s=u_s, z_s=z_s, y_s=y_s)


def build_embedding(p: GeneratorParams) -> EmbeddingMatrices:
    """Assemble the sparse lifted-dynamics matrices from the model constants."""
    a_d, a_q = p.alpha_d, p.alpha_q
    A = np.zeros((Z_DIM, Z_DIM))
    A[0, 0] = 1.0
    A[0, 1] = p.dt
    A[1, 1] = 1.0 - a_d * p.D
    A[1, 5] = -a_d * p.gamma
    A[2, 2] = 1.0 - a_q * p.kappa
    A[2, 4] = a_q * p.mu    # flux is driven by cos(delta), the 5th lifted coordinate
    A[3, 3] = 1.0
    A[4, 4] = 1.0
    A[5, 5] = 1.0 - a_q * p.kappa
    A[6, 6] = 1.0 - a_q * p.kappa
    B = np.zeros((Z_DIM, 1))
    B[1, 0] = a_d
    C = np.zeros((2, Z_DIM))
    C[0, 1] = 1.0
    C[1, 5] = p.gamma
    D = np.zeros((2, 1))
    return EmbeddingMatrices(A=A, B=B, C=C, D=D)


@dataclass(frozen=True)
class ErrorCertificate:
    """Residual bound constants over a given operating box.

    Aggregate bound: ||e||_2 <= eps_A*||zbar|| + eps_B*|ubar| + c0.
    c4..c7 / c4p..c7p are the per-component budgets
    |e_i| <= c_i*||zbar|| + c_ip*theta_bar^2 for i in {4,5,6,7}.
    """

    eps_A: float
    eps_B: float
    eps_C: float
    c0: float
    theta_bar: float
    c4: float
    c5: float
    c6: float
    c7: float
    c4p: float
    c5p: float
    c6p: float
    c7p: float

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in (
            "eps_A", "eps_B", "eps_C", "c0", "theta_bar",
            "c4", "c5", "c6", "c7", "c4p", "c5p", "c6p", "c7p")}


def error_constants(p: GeneratorParams, r: OperatingRegion) -> ErrorCertificate:
    """Certificate constants from the model constants and box half-widths.

    theta_bar = dt * omega_max uses the configured omega_max verbatim.
    """
    theta_bar = p.dt * r.omega_max
    c4 = c5 = p.dt
    c4p = c5p = 1.0
    c6 = c7 = p.alpha_q * p.mu * (1.0 + r.Eq_max) + p.alpha_q * p.E_fd + r.Eq_max * p.dt
    c6p = c7p = r.Eq_max
    eps_A = 2.0 * p.dt + c6 + c7
    c0 = (2.0 + 2.0 * r.Eq_max) * theta_bar**2
    return ErrorCertificate(
        eps_A=eps_A, eps_B=0.0, eps_C=0.0, c0=c0, theta_bar=theta_bar,
        c4=c4, c5=c5, c6=c6, c7=c7, c4p=c4p, c5p=c5p, c6p=c6p, c7p=c7p,
    )


def residual(
    x: np.ndarray,
    u,
    p: GeneratorParams,
    E: EmbeddingMatrices,
    eq: Equilibrium,
) -> np.ndarray:
    """Lifting residual e = zbar^+ - A zbar - B ubar; shape (7,) or (n, 7)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    zbar = lift(x, p) - eq.z_s
    zbar_next = lift(step(x, u, p), p) - eq.z_s
    ubar = u - eq.u_s
    return zbar_next - zbar @ E.A.T - ubar[..., None] * E.B[:, 0]


@dataclass
class CertReport:
    """Outcome of a residual certification sweep."""

    n_samples: int
    n_corners: int
    seed: int
    violations: int
    component_violations: dict
    max_slack: float
    worst_norm_ratio: float
    worst_state: list
    worst_input: float
    mean_norm_ratio: float
    ratio_histogram: dict
    certificate: dict
    passed: bool

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2, default=float)


def _box_corners(r: OperatingRegion, p: GeneratorParams) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = r.state_bounds(p.omega_s)
    states, inputs = [], []
    for bits in itertools.product((0, 1), repeat=4):
        x = np.array([lo[0] if bits[0] == 0 else hi[0],
                      lo[1] if bits[1] == 0 else hi[1],
                      lo[2] if bits[2] == 0 else hi[2]])
        states.append(x)
        inputs.append(r.u_min if bits[3] == 0 else r.u_max)
    return np.array(states), np.array(inputs)


def certify(
    p: GeneratorParams,
    r: OperatingRegion,
    n_samples: int,
    seed: int,
    E: Optional[EmbeddingMatrices] = None,
    eq: Optional[Equilibrium] = None,
    cert: Optional[ErrorCertificate] = None,
    csv_path=None,
) -> CertReport:
    """Check the residual bound on seeded uniform samples plus all box corners.

    A sample violates when ||e||_2 > eps_A*||zbar|| + eps_B*|ubar| + c0.
    Component checks: |e_1..3| <= 1e-12 and the c_i/c_ip budgets for e_4..7.
    """
    E = E if E is not None else build_embedding(p)
    eq = eq if eq is not None else make_equilibrium(r.delta_s, p)
    cert = cert if cert is not None else error_constants(p, r)

    rng = np.random.default_rng(seed)
    lo, hi = r.state_bounds(p.omega_s)
    xs = rng.uniform(lo, hi, size=(n_samples, 3))
    us = rng.uniform(r.u_min, r.u_max, size=n_samples)
    cx, cu = _box_corners(r, p)
    xs = np.vstack([xs, cx])
    us = np.concatenate([us, cu])
    if not bool(np.all(in_region(xs, r, p, us))):
        raise AssertionError("certify: sampler produced an out-of-region point (internal bug)")

    e = residual(xs, us, p, E, eq)
    zbar_norm = np.linalg.norm(lift(xs, p) - eq.z_s, axis=-1)
    e_norm = np.linalg.norm(e, axis=-1)
    bound = cert.eps_A * zbar_norm + cert.eps_B * np.abs(us - eq.u_s) + cert.c0
    slack = e_norm - bound
    ratios = e_norm / bound

    comp = {}
    comp["e1_e3"] = int(np.sum(np.max(np.abs(e[:, :3]), axis=-1) > 1e-12))
    tb2 = cert.theta_bar**2
    comp["e4"] = int(np.sum(np.abs(e[:, 3]) > cert.c4 * zbar_norm + cert.c4p * tb2))
    comp["e5"] = int(np.sum(np.abs(e[:, 4]) > cert.c5 * zbar_norm + cert.c5p * tb2))
    comp["e6"] = int(np.sum(np.abs(e[:, 5]) > cert.c6 * zbar_norm + cert.c6p * tb2))
    comp["e7"] = int(np.sum(np.abs(e[:, 6]) > cert.c7 * zbar_norm + cert.c7p * tb2))

    worst = int(np.argmax(slack))
    hist_counts, hist_edges = np.histogram(ratios, bins=10, range=(0.0, 1.0))
    report = CertReport(
        n_samples=n_samples,
        n_corners=cx.shape[0],
        seed=seed,
        violations=int(np.sum(slack > 0.0)),
        component_violations=comp,
        max_slack=float(np.max(slack)),
        worst_norm_ratio=float(ratios[worst]),
        worst_state=[float(v) for v in xs[worst]],
        worst_input=float(us[worst]),
        mean_norm_ratio=float(np.mean(ratios)),
        ratio_histogram={
            "edges": [float(v) for v in hist_edges],
            "counts": [int(v) for v in hist_counts],
        },
        certificate=cert.as_dict(),
        passed=bool(np.sum(slack > 0.0) == 0 and all(v == 0 for v in comp.values())),
    )
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["zbar_norm", "e_norm", "bound"])
            for zn, en, bd in zip(zbar_norm, e_norm, bound):
                writer.writerow([repr(float(zn)), repr(float(en)), repr(float(bd))])
    return report


# -- structure: ranks and minimal realization -------------------------------


def _rank_with_guard(s: np.ndarray, tol: float, what: str, band: float = 10.0) -> int:
    """Rank from singular values with an ambiguity band around the cut."""
    if s.size == 0 or s[0] == 0.0:
        return 0
    cut = tol * s[0]
    ambiguous = np.sum((s > cut / band) & (s < cut * band))
    if ambiguous:
        raise ValueError(
            f"{what}: {int(ambiguous)} singular value(s) within a factor {band} of the "
            f"rank cut {cut:.3e}; adjust tol to make the rank decision unambiguous"
        )
    return int(np.sum(s >= cut))


def _ctrb(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _obsv(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def ctrl_obs_ranks(E: EmbeddingMatrices, tol: float = 1e-9) -> tuple[int, int]:
    """Numerical ranks of the controllability and observability matrices."""
    s_c = np.linalg.svd(_ctrb(E.A, E.B), compute_uv=False)
    s_o = np.linalg.svd(_obsv(E.A, E.C), compute_uv=False)
    rank_c = _rank_with_guard(s_c, tol, "controllability rank")
    rank_o = _rank_with_guard(s_o, tol, "observability rank")
    return rank_c, rank_o


@dataclass(frozen=True)
class MinimalRealization:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    n_eff: int
    rank_ctrb: int
    rank_obsv: int


def markov_parameters(A: np.ndarray, B: np.ndarray, C: np.ndarray, D: np.ndarray,
                      n_steps: int) -> np.ndarray:
    """Impulse-response sequence [D, CB, CAB, ...]; shape (n_steps+1, p, m)."""
    p_dim, m_dim = C.shape[0], B.shape[1]
    out = np.zeros((n_steps + 1, p_dim, m_dim))
    out[0] = D
    X = B.copy()
    for k in range(1, n_steps + 1):
        out[k] = C @ X
        X = A @ X
    return out


def minimal_realization(E: EmbeddingMatrices, tol: float = 1e-9) -> MinimalRealization:
    """Kalman staircase reduction to the reachable-and-observable part.

    Two orthogonal projections: first onto the reachable subspace (an
    A-invariant subspace containing range(B)), then onto the row space of
    the reduced observability matrix.  Both preserve the impulse response
    exactly; a defensive internal check verifies the first 50 Markov
    parameters to 1e-8.
    """
    A, B, C, D = E.A, E.B, E.C, E.D
    rank_c, rank_o = ctrl_obs_ranks(E, tol)

    ctrb = _ctrb(A, B)
    u_c, s_c, _ = np.linalg.svd(ctrb, full_matrices=False)
    r_c = _rank_with_guard(s_c, tol, "controllability rank")
    Vc = u_c[:, :r_c]
    A_c = Vc.T @ A @ Vc
    B_c = Vc.T @ B
    C_c = C @ Vc

    if r_c == 0:
        A_m = np.zeros((0, 0))
        B_m = np.zeros((0, B.shape[1]))
        C_m = np.zeros((C.shape[0], 0))
        n_eff = 0
    else:
        obs = _obsv(A_c, C_c)
        _, s_o, vt_o = np.linalg.svd(obs, full_matrices=False)
        r_o = _rank_with_guard(s_o, tol, "reduced observability rank")
        W = vt_o[:r_o].T
        A_m = W.T @ A_c @ W
        B_m = W.T @ B_c
        C_m = C_c @ W
        n_eff = r_o

    got = markov_parameters(A_m, B_m, C_m, D, 50)
    want = markov_parameters(A, B, C, D, 50)
    err = float(np.max(np.abs(got - want))) if want.size else 0.0
    if err > 1e-8:
        raise RuntimeError(
            f"minimal_realization: Markov parameters diverge by {err:.3e} (> 1e-8); "
            "rank tolerance is likely misjudged for this system"
        )
    return MinimalRealization(A=A_m, B=B_m, C=C_m, D=D, n_eff=n_eff,
                              rank_ctrb=rank_c, rank_obsv=rank_o)
