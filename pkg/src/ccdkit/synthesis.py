"""Mixed-sensitivity generalized plant and H-infinity controller synthesis.

The synthesis problem: given plant G and shaping weights, find a
stabilizing K minimizing the infinity norm of the weighted stack
[W_S S; W_KS KS; W_T T].  The solver runs a gamma bisection where each
candidate level is tested through the standard pair of indefinite
algebraic Riccati equations (state-feedback and estimation side) plus
the spectral-radius coupling condition; the central controller is
reconstructed at the smallest feasible level.  Feedthrough from the
exogenous input to the performance outputs (the weights here are
biproper) is handled by the general-case formulas, so no loop-shifting
approximation is involved.

Every returned controller is re-verified a posteriori: internal
stability of the actual closed loop and an independently recomputed
stack norm, so a result can be trusted without re-deriving solver
internals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .lti import (
    ClosedLoopSet,
    StateSpaceModel,
    feedback_interconnect,
)

__all__ = [
    "GeneralizedPlant",
    "SynthesisResult",
    "SynthesisError",
    "InfeasibleError",
    "RiccatiError",
    "UnstableSystemError",
    "assemble_generalized_plant",
    "lft_lower",
    "weighted_closed_loop_stack",
    "care_stabilizing",
    "hinf_norm",
    "synthesize",
]


class SynthesisError(Exception):
    """Synthesis failed for a structural or numerical reason."""


class InfeasibleError(SynthesisError):
    """No stabilizing controller exists within the requested gamma range."""


class RiccatiError(SynthesisError):
    """No stabilizing Riccati solution at the tested gamma level."""


class UnstableSystemError(Exception):
    """Operation requires a stable system (e.g. the infinity norm)."""


# ---------------------------------------------------------------------------
# Generalized plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneralizedPlant:
    """Partitioned open-loop system for standard-problem synthesis.

    Inputs are [w; u] (exogenous, control), outputs [z; y] (performance,
    measured).  ``components`` keeps the plant and weights used by
    :func:`assemble_generalized_plant` so results can be verified through
    an independent reconstruction of the weighted stack.
    """

    realization: StateSpaceModel
    n_w: int
    n_u: int
    n_z: int
    n_y: int
    components: Optional[tuple] = None  # (g, ws, wks, wt)

    def __post_init__(self):
        r = self.realization
        if self.n_w + self.n_u != r.n_inputs or self.n_z + self.n_y != r.n_outputs:
            raise ValueError("partition sizes do not match the realization")

    def blocks(self):
        """(A, B1, B2, C1, C2, D11, D12, D21, D22)."""
        r = self.realization
        m1, m2, p1 = self.n_w, self.n_u, self.n_z
        b1, b2 = r.b[:, :m1], r.b[:, m1:]
        c1, c2 = r.c[:p1, :], r.c[p1:, :]
        d11, d12 = r.d[:p1, :m1], r.d[:p1, m1:]
        d21, d22 = r.d[p1:, :m1], r.d[p1:, m1:]
        return r.a, b1, b2, c1, c2, d11, d12, d21, d22


@dataclass(frozen=True)
class SynthesisResult:
    """Verified outcome of a gamma iteration.

    ``gamma`` is the certified closed-loop bound, ``stack_norm`` the
    independently recomputed norm of the weighted stack, and
    ``closed_loop`` holds S/KS/T realizations of the verified loop.
    """

    controller: StateSpaceModel
    gamma: float
    stack_norm: float
    internally_stable: bool
    closed_loop: Optional[ClosedLoopSet] = None


def assemble_generalized_plant(
    g: StateSpaceModel,
    ws: StateSpaceModel,
    wks: StateSpaceModel,
    wt: StateSpaceModel,
) -> GeneralizedPlant:
    """Stack plant and weights into the standard synthesis form.

    Exogenous input is the reference r, control input u; performance
    outputs are z1 = W_S e, z2 = W_KS u, z3 = W_T y with e = r - y and
    y = G u; the measured output is e.  Closing e -> u through any K
    makes r -> [z1; z2; z3] equal the weighted stack.
    """
    p, m = g.n_outputs, g.n_inputs
    if ws.n_inputs != p or ws.n_outputs != p:
        raise ValueError(f"ws must be {p}x{p}")
    if wks.n_inputs != m or wks.n_outputs != m:
        raise ValueError(f"wks must be {m}x{m}")
    if wt.n_inputs != p or wt.n_outputs != p:
        raise ValueError(f"wt must be {p}x{p}")

    ag, bg, cg, dg = g.a, g.b, g.c, g.d
    ng, ns, nk, nt = g.n_states, ws.n_states, wks.n_states, wt.n_states

    a = np.block([
        [ag, np.zeros((ng, ns + nk + nt))],
        [-ws.b @ cg, ws.a, np.zeros((ns, nk + nt))],
        [np.zeros((nk, ng + ns)), wks.a, np.zeros((nk, nt))],
        [wt.b @ cg, np.zeros((nt, ns + nk)), wt.a],
    ])
    b1 = np.vstack([np.zeros((ng, p)), ws.b, np.zeros((nk + nt, p))])
    b2 = np.vstack([bg, -ws.b @ dg, wks.b, wt.b @ dg])
    c1 = np.block([
        [-ws.d @ cg, ws.c, np.zeros((p, nk + nt))],
        [np.zeros((m, ng + ns)), wks.c, np.zeros((m, nt))],
        [wt.d @ cg, np.zeros((p, ns + nk)), wt.c],
    ])
    c2 = np.hstack([-cg, np.zeros((p, ns + nk + nt))])
    d11 = np.vstack([ws.d, np.zeros((m + p, p))])
    d12 = np.vstack([-ws.d @ dg, wks.d, wt.d @ dg])
    d21 = np.eye(p)
    d22 = -dg

    realization = StateSpaceModel(
        a,
        np.hstack([b1, b2]),
        np.vstack([c1, c2]),
        np.block([[d11, d12], [d21, d22]]),
    )
    return GeneralizedPlant(
        realization=realization,
        n_w=p,
        n_u=m,
        n_z=2 * p + m,
        n_y=p,
        components=(g, ws, wks, wt),
    )


def lft_lower(p: GeneralizedPlant, k: StateSpaceModel) -> StateSpaceModel:
    """Close the measurement/control loop of P with K; returns w -> z."""
    a, b1, b2, c1, c2, d11, d12, d21, d22 = p.blocks()
    ak, bk, ck, dk = k.a, k.b, k.c, k.d
    n, nk = a.shape[0], k.n_states
    loop = np.eye(p.n_u) - dk @ d22
    if np.linalg.cond(loop) > 1e12:
        raise SynthesisError("ill-posed interconnection: I - Dk D22 singular")
    m_inv = np.linalg.inv(loop)

    # u = m_inv (Ck xk + Dk C2 x + Dk D21 w)
    u_x = m_inv @ dk @ c2
    u_xk = m_inv @ ck
    u_w = m_inv @ dk @ d21
    y_x = c2 + d22 @ u_x
    y_xk = d22 @ u_xk
    y_w = d21 + d22 @ u_w

    a_cl = np.block([
        [a + b2 @ u_x, b2 @ u_xk],
        [bk @ y_x, ak + bk @ y_xk],
    ])
    b_cl = np.vstack([b1 + b2 @ u_w, bk @ y_w])
    c_cl = np.hstack([c1 + d12 @ u_x, d12 @ u_xk])
    d_cl = d11 + d12 @ u_w
    return StateSpaceModel(a_cl, b_cl, c_cl, d_cl)


def weighted_closed_loop_stack(
    g: StateSpaceModel,
    k: StateSpaceModel,
    ws: StateSpaceModel,
    wks: StateSpaceModel,
    wt: StateSpaceModel,
) -> StateSpaceModel:
    """Realization of [W_S S; W_KS KS; W_T T] from r, sharing loop states."""
    cl = feedback_interconnect(g, k)
    a_cl, b_cl = cl.s.a, cl.s.b
    n_cl = a_cl.shape[0]
    ns, nk, nt = ws.n_states, wks.n_states, wt.n_states

    a = np.block([
        [a_cl, np.zeros((n_cl, ns + nk + nt))],
        [ws.b @ cl.s.c, ws.a, np.zeros((ns, nk + nt))],
        [wks.b @ cl.ks.c, np.zeros((nk, ns)), wks.a, np.zeros((nk, nt))],
        [wt.b @ cl.t.c, np.zeros((nt, ns + nk)), wt.a],
    ])
    b = np.vstack([b_cl, ws.b @ cl.s.d, wks.b @ cl.ks.d, wt.b @ cl.t.d])
    c = np.block([
        [ws.d @ cl.s.c, ws.c, np.zeros((ws.n_outputs, nk + nt))],
        [wks.d @ cl.ks.c, np.zeros((wks.n_outputs, ns)), wks.c,
         np.zeros((wks.n_outputs, nt))],
        [wt.d @ cl.t.c, np.zeros((wt.n_outputs, ns + nk)), wt.c],
    ])
    d = np.vstack([ws.d @ cl.s.d, wks.d @ cl.ks.d, wt.d @ cl.t.d])
    return StateSpaceModel(a, b, c, d)


# ---------------------------------------------------------------------------
# Riccati machinery
# ---------------------------------------------------------------------------

_AXIS_TOL = 1e-8


def care_stabilizing(a, b, q, r, s=None) -> np.ndarray:
    """Stabilizing solution of A'X + XA + Q - (XB+S) R^-1 (B'X+S') = 0.

    R may be indefinite (as in the game-type Riccati equations of the
    gamma iteration) but must be nonsingular.  The solution comes from
    the stable invariant subspace of the associated Hamiltonian,
    computed through a balanced, ordered real Schur form.

    Raises
    ------
    RiccatiError
        If the Hamiltonian has eigenvalues on the imaginary axis, the
        stable subspace has the wrong dimension, or the subspace is not
        complementary (X1 singular).
    """
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    q = np.atleast_2d(np.asarray(q, float))
    n = a.shape[0]
    if s is None:
        s = np.zeros((n, b.shape[1]))
    s = np.atleast_2d(np.asarray(s, float))

    try:
        rinv_st = linalg.solve(r, s.T, assume_a="sym")
        rinv_bt = linalg.solve(r, b.T, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise RiccatiError("R block is singular") from exc
    a_sh = a - b @ rinv_st
    ham = np.block([
        [a_sh, -b @ rinv_bt],
        [-(q - s @ rinv_st), -a_sh.T],
    ])
    if not np.all(np.isfinite(ham)):
        raise RiccatiError("non-finite Hamiltonian (R nearly singular)")

    ham_b, transform = linalg.matrix_balance(ham, permute=True)
    eigs = linalg.eigvals(ham_b)
    # Reject levels whose Hamiltonian touches the imaginary axis.
    if np.any(np.abs(eigs.real) <= _AXIS_TOL * (1.0 + np.abs(eigs.imag))):
        raise RiccatiError("Hamiltonian eigenvalue on the imaginary axis")

    tt, zz, sdim = linalg.schur(ham_b, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError(f"stable subspace has dimension {sdim}, expected {n}")
    basis = transform @ zz[:, :n]
    x1, x2 = basis[:n, :], basis[n:, :]
    if np.linalg.cond(x1) > 1e12:
        raise RiccatiError("stable subspace is not complementary (X1 singular)")
    x = linalg.solve(x1.T, x2.T).T
    return 0.5 * (x + x.T)


def _smax(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def hinf_norm(sys: StateSpaceModel, tol: float = 1e-6) -> float:
    """H-infinity norm via bisection on Hamiltonian imaginary-axis tests.

    The level gamma lies below the norm exactly when the associated
    Hamiltonian has purely imaginary eigenvalues; bisection squeezes the
    bracket until its relative width is below ``tol``.

    Raises
    ------
    UnstableSystemError
        If the realization is not asymptotically stable (norm undefined).
    """
    if not sys.is_stable(0.0):
        raise UnstableSystemError("H-infinity norm requires a stable system")
    a, b, c, d = sys.a, sys.b, sys.c, sys.d
    n = sys.n_states
    d_gain = _smax(d)
    if n == 0:
        return d_gain

    poles = linalg.eigvals(a)
    probe_w = {0.0}
    for lam in poles:
        if abs(lam.imag) > 0:
            probe_w.add(abs(lam.imag))
        probe_w.add(abs(lam))
    lo = d_gain
    for w in probe_w:
        lo = max(lo, _smax(sys.at(1j * w)))
    if lo == 0.0:
        return 0.0

    def has_crossing(gamma: float) -> bool:
        if gamma <= d_gain * (1.0 + 1e-12):
            return True
        r = d.T @ d - gamma**2 * np.eye(d.shape[1])
        s = d @ d.T - gamma**2 * np.eye(d.shape[0])
        brc = linalg.solve(r, d.T @ c)
        ham = np.block([
            [a - b @ brc, -gamma * b @ linalg.solve(r, b.T)],
            [gamma * c.T @ linalg.solve(s, c), -(a - b @ brc).T],
        ])
        ham_b, _ = linalg.matrix_balance(ham, permute=True)
        eigs = linalg.eigvals(ham_b)
        return bool(np.any(np.abs(eigs.real) <= _AXIS_TOL * (1.0 + np.abs(eigs.imag))))

    hi = lo * (1.0 + 1e-6)
    for _ in range(200):
        if not has_crossing(hi):
            break
        lo = hi
        hi *= 2.0
    else:
        raise SynthesisError("H-infinity norm upper bound search failed")

    while hi - lo > tol * lo:
        mid = np.sqrt(lo * hi)
        if has_crossing(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Gamma iteration
# ---------------------------------------------------------------------------

class _NormalizedProblem:
    """Scaled standard problem with D12 = [0; I], D21 = [0 I], D22 = 0.

    Unitary transforms on z and w leave the closed-loop norm unchanged;
    the control/measurement scalings and the D22 loop shift are undone
    when the controller is mapped back to original coordinates.
    """

    def __init__(self, p: GeneralizedPlant, a_shift: float = 0.0):
        a, b1, b2, c1, c2, d11, d12, d21, d22 = p.blocks()
        self.m1, self.m2 = p.n_w, p.n_u
        self.p1, self.p2 = p.n_z, p.n_y
        if self.p1 < self.m2 or self.m1 < self.p2:
            raise SynthesisError("need n_z >= n_u and n_w >= n_y")
        a = a - a_shift * np.eye(a.shape[0])

        u12, s12, v12t = np.linalg.svd(d12)
        if s12.size < self.m2 or s12[-1] <= 1e-9 * max(s12[0], 1.0):
            raise SynthesisError("D12 must have full column rank")
        u21, s21, v21t = np.linalg.svd(d21)
        if s21.size < self.p2 or s21[-1] <= 1e-9 * max(s21[0], 1.0):
            raise SynthesisError("D21 must have full row rank")

        # Rows of U12' reordered so the I-block of D12 sits at the bottom.
        perm_z = np.r_[np.arange(self.m2, self.p1), np.arange(self.m2)]
        tz = u12.T[perm_z, :]
        # Columns of V21 reordered so the I-block of D21 sits at the right.
        perm_w = np.r_[np.arange(self.p2, self.m1), np.arange(self.p2)]
        tw = v21t.T[:, perm_w]

        self.tu = v12t.T @ np.diag(1.0 / s12)   # u = tu @ u_normalized
        self.ty = np.diag(1.0 / s21) @ u21.T    # y_normalized = ty @ y

        self.a = a
        self.b1 = b1 @ tw
        self.b2 = b2 @ self.tu
        self.c1 = tz @ c1
        self.c2 = self.ty @ c2
        self.d11 = tz @ d11 @ tw
        self.d22 = self.ty @ d22 @ self.tu
        self.n = a.shape[0]

        k, l = self.p1 - self.m2, self.m1 - self.p2
        self.d1111 = self.d11[:k, :l]
        self.d1112 = self.d11[:k, l:]
        self.d1121 = self.d11[k:, :l]
        self.d1122 = self.d11[k:, l:]
        self.gamma_level = max(
            _smax(self.d11[:k, :]), _smax(self.d11[:, :l])
        )

    def riccati_pair(self, gamma: float):
        """Stabilizing (X, Y) at this level, or RiccatiError."""
        g2 = gamma**2
        b = np.hstack([self.b1, self.b2])
        c = np.vstack([self.c1, self.c2])
        d1dot = np.hstack([self.d11, np.vstack([
            np.zeros((self.p1 - self.m2, self.m2)), np.eye(self.m2)
        ])])
        ddot1 = np.vstack([self.d11, np.hstack([
            np.zeros((self.p2, self.m1 - self.p2)), np.eye(self.p2)
        ])])
        r = d1dot.T @ d1dot
        r[:self.m1, :self.m1] -= g2 * np.eye(self.m1)
        rt = ddot1 @ ddot1.T
        rt[:self.p1, :self.p1] -= g2 * np.eye(self.p1)

        x = care_stabilizing(self.a, b, self.c1.T @ self.c1, r,
                             s=self.c1.T @ d1dot)
        y = care_stabilizing(self.a.T, c.T, self.b1 @ self.b1.T, rt,
                             s=self.b1 @ ddot1.T)
        return x, y, b, c, d1dot, ddot1, r, rt

    def feasible(self, gamma: float) -> bool:
        if gamma <= self.gamma_level * (1.0 + 1e-12):
            return False
        try:
            x, y, *_ = self.riccati_pair(gamma)
        except RiccatiError:
            return False
        psd_tol = 1e-8
        if np.min(linalg.eigvalsh(x)) < -psd_tol * max(1.0, _smax(x)):
            return False
        if np.min(linalg.eigvalsh(y)) < -psd_tol * max(1.0, _smax(y)):
            return False
        rho = np.max(np.abs(linalg.eigvals(x @ y)))
        return bool(rho < gamma**2)

    def central_controller(self, gamma: float) -> StateSpaceModel:
        """Central controller at a feasible level, in original coordinates."""
        g2 = gamma**2
        x, y, b, c, d1dot, ddot1, r, rt = self.riccati_pair(gamma)

        f = -linalg.solve(r, d1dot.T @ self.c1 + b.T @ x, assume_a="sym")
        h = -linalg.solve(rt, (self.b1 @ ddot1.T + y @ c.T).T, assume_a="sym").T
        f12 = f[self.m1 - self.p2:self.m1, :]
        f2 = f[self.m1:, :]
        h12 = h[:, self.p1 - self.m2:self.p1]
        h2 = h[:, self.p1:]

        z = np.linalg.inv(np.eye(self.n) - y @ x / g2)

        k_dim, l_dim = self.p1 - self.m2, self.m1 - self.p2
        inv_row = np.linalg.inv(g2 * np.eye(k_dim) - self.d1111 @ self.d1111.T)
        inv_col = np.linalg.inv(g2 * np.eye(l_dim) - self.d1111.T @ self.d1111)
        d11_hat = -self.d1121 @ self.d1111.T @ inv_row @ self.d1112 - self.d1122
        rhs12 = np.eye(self.m2) - self.d1121 @ inv_col @ self.d1121.T
        rhs21 = np.eye(self.p2) - self.d1112.T @ inv_row @ self.d1112
        try:
            d12_hat = linalg.cholesky(rhs12, lower=True)
            d21_hat = linalg.cholesky(rhs21, lower=False)
        except linalg.LinAlgError as exc:
            raise RiccatiError("controller feedthrough factorization failed") from exc

        b2_hat = z @ (self.b2 + h12) @ d12_hat
        c2_hat = -d21_hat @ (self.c2 + f12)
        b1_hat = -z @ h2 + b2_hat @ linalg.solve(d12_hat, d11_hat)
        c1_hat = f2 + d11_hat @ linalg.solve(d21_hat, c2_hat)
        a_hat = (self.a + b @ f
                 + b1_hat @ linalg.solve(d21_hat, c2_hat))

        ak, bk, ck, dk = a_hat, b1_hat, c1_hat, d11_hat
        # Undo the D22 loop shift: the design assumed y_norm without the
        # direct u feedthrough.
        if _smax(self.d22) > 0.0:
            loop = np.eye(self.m2) + dk @ self.d22
            m_inv = np.linalg.inv(loop)
            ak = ak - bk @ self.d22 @ m_inv @ ck
            bk = bk @ (np.eye(self.p2) - self.d22 @ m_inv @ dk)
            ck = m_inv @ ck
            dk = m_inv @ dk
        # Undo control/measurement scalings.
        return StateSpaceModel(ak, bk @ self.ty, self.tu @ ck,
                               self.tu @ dk @ self.ty)


def _verify(p: GeneralizedPlant, k: StateSpaceModel, norm_tol: float):
    """(internally_stable, stack_norm, closed_loop) on the true plant."""
    if p.components is not None:
        g, ws, wks, wt = p.components
        cl = feedback_interconnect(g, k)
        stable = cl.s.is_stable(0.0)
        stack = weighted_closed_loop_stack(g, k, ws, wks, wt)
    else:
        cl = None
        stack = lft_lower(p, k)
        stable = stack.is_stable(0.0)
    if not stable:
        return False, np.inf, cl
    return True, hinf_norm(stack, tol=norm_tol), cl


def synthesize(
    p: GeneralizedPlant,
    gamma_range: tuple = (1e-3, 1e6),
    tol_gamma: float = 1e-3,
    eps_reg: float = 1e-9,
) -> SynthesisResult:
    """Gamma iteration for the smallest verified closed-loop bound.

    Bisects (geometrically) over ``gamma_range``; each level's
    feasibility is decided by the Riccati pair, positive
    semidefiniteness and the spectral-radius coupling.  The controller
    reconstructed at the final level is verified against the unshifted
    plant: internal stability plus an independently recomputed stack
    norm within ``tol_gamma`` of gamma.  Marginally stable plants
    (rigid-body modes) are shifted by ``eps_reg`` -- enlarged when the
    plant's frequency scale would swamp a 1e-9 shift -- for the Riccati
    solves only.

    Raises
    ------
    InfeasibleError
        If no stabilizing controller exists at the top of gamma_range.
    SynthesisError
        If verification cannot be completed (numerical failure).
    """
    lo, hi = float(gamma_range[0]), float(gamma_range[1])
    if not (0.0 < lo < hi):
        raise ValueError("gamma_range must satisfy 0 < lower < upper")

    a = p.realization.a
    eigs = linalg.eigvals(a)
    scale = max(1.0, float(np.max(np.abs(eigs)))) if a.size else 1.0
    marginal = a.size and bool(np.max(eigs.real) > -1e-7 * scale)
    shift = max(eps_reg, 1e-6 * scale) if marginal else 0.0

    prob = _NormalizedProblem(p, a_shift=shift)
    if prob.gamma_level >= hi:
        raise InfeasibleError(
            f"gamma upper bound {hi} is below the feedthrough level "
            f"{prob.gamma_level}"
        )
    lo = max(lo, prob.gamma_level * (1.0 + 1e-9))

    if not prob.feasible(hi):
        raise InfeasibleError(f"no stabilizing controller at gamma = {hi}")
    if not prob.feasible(lo):
        while hi - lo > tol_gamma * lo:
            mid = np.sqrt(lo * hi)
            if prob.feasible(mid):
                hi = mid
            else:
                lo = mid
    else:
        hi = lo

    norm_tol = min(1e-6, 0.1 * tol_gamma)
    gamma = hi
    for _ in range(40):
        try:
            controller = prob.central_controller(gamma)
            stable, stack_norm, cl = _verify(p, controller, norm_tol)
        except (RiccatiError, linalg.LinAlgError):
            stable, stack_norm, cl = False, np.inf, None
        if stable and stack_norm <= gamma * (1.0 + tol_gamma):
            return SynthesisResult(
                controller=controller,
                gamma=float(gamma),
                stack_norm=float(stack_norm),
                internally_stable=True,
                closed_loop=cl,
            )
        gamma *= 1.0 + 5.0 * tol_gamma
    raise SynthesisError(
        "controller verification failed to converge during gamma escalation"
    )
