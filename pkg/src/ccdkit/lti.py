"""Minimal continuous-time LTI state-space algebra.

Everything downstream (weight construction, generalized-plant assembly,
synthesis, closed-loop analysis) works on the :class:`StateSpaceModel`
defined here.  Models are immutable after construction and all operations
are pure functions, so they can be evaluated concurrently without locking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "StateSpaceModel",
    "FrequencyResponse",
    "ClosedLoopSet",
    "LtiError",
    "SingularMassError",
    "AlgebraicLoopError",
    "FrequencyEvaluationError",
    "series",
    "parallel",
    "vcat",
    "diag_repeat",
    "feedback_interconnect",
    "frequency_response",
    "transmission_zeros",
    "default_grid",
]


class LtiError(Exception):
    """Base class for LTI algebra failures."""


class SingularMassError(LtiError):
    """Mass matrix is singular; the second-order model cannot be lifted."""


class AlgebraicLoopError(LtiError):
    """I + D_G D_K is singular; the feedback loop is ill-posed."""


class FrequencyEvaluationError(LtiError):
    """jwI - A is singular at a requested grid frequency."""


def _as_matrix(m, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous-time realization ``xdot = A x + B u``, ``y = C x + D u``.

    Parameters
    ----------
    a, b, c, d : array_like
        Real matrices with consistent dimensions (n x n, n x m, p x n,
        p x m).  ``d`` may be omitted and defaults to zeros.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        a = _as_matrix(self.a, "a")
        b = _as_matrix(self.b, "b")
        c = _as_matrix(self.c, "c")
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"a must be square, got {a.shape}")
        n = a.shape[0]
        if b.shape[0] != n:
            raise ValueError(f"b has {b.shape[0]} rows, expected {n}")
        if c.shape[1] != n:
            raise ValueError(f"c has {c.shape[1]} cols, expected {n}")
        if self.d is None:
            d = np.zeros((c.shape[0], b.shape[1]))
            d.setflags(write=False)
        else:
            d = _as_matrix(self.d, "d")
        if d.shape != (c.shape[0], b.shape[1]):
            raise ValueError(
                f"d has shape {d.shape}, expected {(c.shape[0], b.shape[1])}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

    # -- shape helpers ----------------------------------------------------
    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]

    def poles(self) -> np.ndarray:
        if self.n_states == 0:
            return np.empty(0, dtype=complex)
        return linalg.eigvals(self.a)

    def is_stable(self, eps_stab: float = 0.0) -> bool:
        """True if every pole has real part < -eps_stab."""
        if self.n_states == 0:
            return True
        return bool(np.max(self.poles().real) < -eps_stab)

    def at(self, s: complex) -> np.ndarray:
        """Transfer matrix C (sI - A)^-1 B + D at a single complex point."""
        if self.n_states == 0:
            return self.d.astype(complex)
        resolvent = s * np.eye(self.n_states) - self.a
        try:
            x = np.linalg.solve(resolvent, self.b)
        except np.linalg.LinAlgError as exc:
            raise FrequencyEvaluationError(f"sI - A singular at s={s}") from exc
        return self.c @ x + self.d

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "d": self.d.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "StateSpaceModel":
        return cls(data["a"], data["b"], data["c"], data["d"])

    @classmethod
    def from_json(cls, text: str) -> "StateSpaceModel":
        return cls.from_dict(json.loads(text))

    @classmethod
    def static_gain(cls, d) -> "StateSpaceModel":
        """Memoryless system y = D u."""
        d = np.atleast_2d(np.asarray(d, dtype=float))
        p, m = d.shape
        return cls(np.zeros((0, 0)), np.zeros((0, m)), np.zeros((p, 0)), d)


@dataclass(frozen=True)
class FrequencyResponse:
    """Sampled frequency response: values[k] = G(j * frequencies[k]).

    ``frequencies`` are angular (rad/s), strictly increasing and positive;
    ``values`` has shape (n_freq, p, m).
    """

    frequencies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.frequencies, dtype=float).copy()
        v = np.asarray(self.values, dtype=complex).copy()
        if w.ndim != 1:
            raise ValueError("frequencies must be 1-D")
        if np.any(w <= 0.0) or np.any(np.diff(w) <= 0.0):
            raise ValueError("frequencies must be strictly increasing and positive")
        if v.ndim != 3 or v.shape[0] != w.shape[0]:
            raise ValueError("values must have shape (n_freq, p, m)")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "values", v)

    def sigma_max(self) -> np.ndarray:
        """Largest singular value at each frequency."""
        return np.linalg.svd(self.values, compute_uv=False)[:, 0]

    def magnitude(self) -> np.ndarray:
        """Entrywise magnitudes, shape (n_freq, p, m)."""
        return np.abs(self.values)


@dataclass(frozen=True)
class ClosedLoopSet:
    """Sensitivity set of a unity-feedback loop: S, KS and T realizations."""

    s: StateSpaceModel
    ks: StateSpaceModel
    t: StateSpaceModel


def frequency_response(sys: StateSpaceModel, freqs) -> FrequencyResponse:
    """Evaluate C (jwI - A)^-1 B + D on a frequency grid.

    Parameters
    ----------
    sys : StateSpaceModel
    freqs : array_like
        Angular frequencies in rad/s, strictly increasing and positive.

    Raises
    ------
    FrequencyEvaluationError
        If jwI - A is singular at some grid point (undamped pole exactly
        on the grid); the offending frequency is named in the message.
    """
    w = np.asarray(freqs, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("freqs must be a non-empty 1-D array")
    if np.any(w <= 0.0) or np.any(np.diff(w) <= 0.0):
        raise ValueError("freqs must be strictly increasing and positive")
    values = _response_values(sys, w)
    return FrequencyResponse(w, values)


def _response_values(sys: StateSpaceModel, w: np.ndarray) -> np.ndarray:
    """Batched resolvent evaluation; w may be any positive 1-D array."""
    n, p, m = sys.n_states, sys.n_outputs, sys.n_inputs
    if n == 0:
        return np.broadcast_to(sys.d.astype(complex), (w.size, p, m)).copy()
    eye = np.eye(n)
    lhs = 1j * w[:, None, None] * eye - sys.a
    try:
        x = np.linalg.solve(lhs, np.broadcast_to(sys.b.astype(complex), (w.size, n, m)))
    except np.linalg.LinAlgError:
        # Redo scalar-wise to identify the offending frequency.
        for wk in w:
            try:
                np.linalg.solve(1j * wk * eye - sys.a, sys.b.astype(complex))
            except np.linalg.LinAlgError as exc:
                raise FrequencyEvaluationError(
                    f"jwI - A singular at w={wk} rad/s"
                ) from exc
        raise
    return sys.c @ x + sys.d


def sigma_max_at(sys: StateSpaceModel, w: float) -> float:
    """Largest singular value of sys(jw) at a single frequency."""
    return float(np.linalg.svd(sys.at(1j * w), compute_uv=False)[0])


def series(first: StateSpaceModel, second: StateSpaceModel) -> StateSpaceModel:
    """Cascade u -> first -> second -> y, i.e. second(s) * first(s)."""
    if second.n_inputs != first.n_outputs:
        raise ValueError(
            f"series: second expects {second.n_inputs} inputs, "
            f"first provides {first.n_outputs} outputs"
        )
    a1, b1, c1, d1 = first.a, first.b, first.c, first.d
    a2, b2, c2, d2 = second.a, second.b, second.c, second.d
    n1, n2 = first.n_states, second.n_states
    a = np.block([
        [a1, np.zeros((n1, n2))],
        [b2 @ c1, a2],
    ])
    b = np.vstack([b1, b2 @ d1])
    c = np.hstack([d2 @ c1, c2])
    return StateSpaceModel(a, b, c, d2 @ d1)


def parallel(g1: StateSpaceModel, g2: StateSpaceModel) -> StateSpaceModel:
    """Sum of two systems sharing input and output dimensions."""
    if (g1.n_inputs, g1.n_outputs) != (g2.n_inputs, g2.n_outputs):
        raise ValueError("parallel: systems must share I/O dimensions")
    n1, n2 = g1.n_states, g2.n_states
    a = np.block([
        [g1.a, np.zeros((n1, n2))],
        [np.zeros((n2, n1)), g2.a],
    ])
    b = np.vstack([g1.b, g2.b])
    c = np.hstack([g1.c, g2.c])
    return StateSpaceModel(a, b, c, g1.d + g2.d)


def vcat(*systems: StateSpaceModel) -> StateSpaceModel:
    """Stack outputs of systems driven by a common input."""
    m = systems[0].n_inputs
    if any(g.n_inputs != m for g in systems):
        raise ValueError("vcat: all systems must share the input dimension")
    a = linalg.block_diag(*[g.a for g in systems])
    b = np.vstack([g.b for g in systems])
    c = linalg.block_diag(*[g.c for g in systems])
    d = np.vstack([g.d for g in systems])
    return StateSpaceModel(a, b, c, d)


def diag_repeat(sys: StateSpaceModel, copies: int) -> StateSpaceModel:
    """Block-diagonal repetition diag{sys, ..., sys} (`copies` times)."""
    if copies < 1:
        raise ValueError("copies must be >= 1")
    if copies == 1:
        return sys
    a = linalg.block_diag(*([sys.a] * copies))
    b = linalg.block_diag(*([sys.b] * copies))
    c = linalg.block_diag(*([sys.c] * copies))
    d = linalg.block_diag(*([sys.d] * copies))
    return StateSpaceModel(a, b, c, d)


def feedback_interconnect(g: StateSpaceModel, k: StateSpaceModel) -> ClosedLoopSet:
    """Close the unity-feedback loop u = K e, e = r - G u.

    Returns realizations of the sensitivity S = (I+GK)^-1, the control
    sensitivity KS = K (I+GK)^-1 and the complementary sensitivity
    T = GK (I+GK)^-1, all from reference r.  The three share the same
    closed-loop state [x_G; x_K].

    Raises
    ------
    AlgebraicLoopError
        If I + D_G D_K is singular.
    """
    if g.n_inputs != k.n_outputs or g.n_outputs != k.n_inputs:
        raise ValueError(
            f"feedback: G is {g.n_outputs}x{g.n_inputs}, "
            f"K is {k.n_outputs}x{k.n_inputs}; need K: m x p for G: p x m"
        )
    p = g.n_outputs
    loop_gain = np.eye(p) + g.d @ k.d
    # Guard against numerically near-singular loop feedthrough.
    if np.linalg.cond(loop_gain) > 1e12:
        raise AlgebraicLoopError("I + D_G D_K is singular (algebraic loop)")
    lam = np.linalg.inv(loop_gain)

    ag, bg, cg, dg = g.a, g.b, g.c, g.d
    ak, bk, ck, dk = k.a, k.b, k.c, k.d
    ng, nk = g.n_states, k.n_states

    # e = lam (r - Cg xg - Dg Ck xk);  u = Ck xk + Dk e
    a_cl = np.block([
        [ag - bg @ dk @ lam @ cg, bg @ ck - bg @ dk @ lam @ dg @ ck],
        [-bk @ lam @ cg, ak - bk @ lam @ dg @ ck],
    ])
    b_cl = np.vstack([bg @ dk @ lam, bk @ lam])

    c_s = np.hstack([-lam @ cg, -lam @ dg @ ck])
    d_s = lam
    c_u = np.hstack([-dk @ lam @ cg, ck - dk @ lam @ dg @ ck])
    d_u = dk @ lam
    c_t = -c_s
    d_t = np.eye(p) - lam

    return ClosedLoopSet(
        s=StateSpaceModel(a_cl, b_cl, c_s, d_s),
        ks=StateSpaceModel(a_cl, b_cl, c_u, d_u),
        t=StateSpaceModel(a_cl, b_cl, c_t, d_t),
    )


def transmission_zeros(sys: StateSpaceModel) -> np.ndarray:
    """Finite invariant zeros of (A, B, C, D) via the generalized pencil.

    Solves det([A - sI, B; C, D]) = 0 and discards infinite eigenvalues.
    Only square systems (p == m) are supported.
    """
    n, p, m = sys.n_states, sys.n_outputs, sys.n_inputs
    if p != m:
        raise ValueError("transmission_zeros requires a square system")
    big = np.block([
        [sys.a, sys.b],
        [sys.c, sys.d],
    ])
    weight = np.block([
        [np.eye(n), np.zeros((n, m))],
        [np.zeros((p, n)), np.zeros((p, m))],
    ])
    alpha, beta = linalg.eig(big, weight, right=False, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-10 * np.max(np.abs(alpha) + 1.0)
    return alpha[finite] / beta[finite]


def default_grid(w_lo: float, w_hi: float, points_per_decade: int = 400) -> np.ndarray:
    """Log-spaced grid; 400 pts/decade resolves zeta = 0.01 resonances."""
    if not (0.0 < w_lo < w_hi):
        raise ValueError("need 0 < w_lo < w_hi")
    decades = np.log10(w_hi / w_lo)
    n = max(2, int(np.ceil(decades * points_per_decade)) + 1)
    return np.logspace(np.log10(w_lo), np.log10(w_hi), n)
