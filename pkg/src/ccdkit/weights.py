"""Mixed-sensitivity weighting filters.

Three first-order shaping filters bound the closed-loop sensitivity S,
the control sensitivity KS and the complementary sensitivity T:

    W1(s) = (s/m_s + omega_s) / (s + omega_s * a_s)         (on S)
    W2(s) = c_k (s + omega_k) / (m_k (s + c_k * omega_k))   (on KS)
    W3(s) = (s + omega_t / a_l) / (a_u s + omega_t)         (on T)

For MIMO plants each filter is repeated on the diagonal, one copy per
channel.  All filters are stable and minimum-phase for valid parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lti import StateSpaceModel, diag_repeat

__all__ = ["FilterParams", "build_ws", "build_wks", "build_wt"]


@dataclass(frozen=True)
class FilterParams:
    """Parameter vector of the three weighting filters.

    Attributes
    ----------
    m_s : float
        Upper bound on the sensitivity peak (> 1).
    a_s : float
        Low-frequency sensitivity floor (0 < a_s < 1); |W1(0)| = 1/a_s.
    omega_s : float
        Sensitivity break frequency, rad/s.
    m_k : float
        Control-effort bound (plant-input units per unit error).
    omega_k : float
        Corner frequency up to which the effort bound applies, rad/s.
    c_k : float
        High-frequency rolloff ratio of the effort weight (> 1,
        typically 1e3 to 1e5).
    a_l : float
        Inverse low-frequency bound of the T weight.
    omega_t : float
        Complementary-sensitivity break frequency, rad/s.
    a_u : float
        High-frequency T rolloff (< 1, typically 1e-2 to 1e-4).
    channels : int
        Number of diagonal repetitions (plant I/O channels).
    """

    m_s: float = 2.0
    a_s: float = 1e-4
    omega_s: float = 2.0 * np.pi * 10.0
    m_k: float = 2e7
    omega_k: float = 2.0 * np.pi * 100.0
    c_k: float = 1e4
    a_l: float = 1.0
    omega_t: float = 2.0 * np.pi * 500.0
    a_u: float = 1e-2
    channels: int = 1

    def __post_init__(self):
        positive = {
            "m_s": self.m_s, "a_s": self.a_s, "omega_s": self.omega_s,
            "m_k": self.m_k, "omega_k": self.omega_k, "c_k": self.c_k,
            "a_l": self.a_l, "omega_t": self.omega_t, "a_u": self.a_u,
        }
        for name, value in positive.items():
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if self.m_s <= 1.0:
            raise ValueError("m_s must exceed 1")
        if self.a_s >= 1.0:
            raise ValueError("a_s must be < 1")
        if self.c_k <= 1.0:
            raise ValueError("c_k must exceed 1")
        if self.a_u >= 1.0:
            raise ValueError("a_u must be < 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")

    def with_break_frequencies(self, omega_s: float, omega_t: float) -> "FilterParams":
        """Copy with new (omega_s, omega_t); the inner loop's decision pair."""
        return replace(self, omega_s=float(omega_s), omega_t=float(omega_t))


def _first_order(b0: float, b1: float, a1: float) -> StateSpaceModel:
    """Realization of (b0 s + b1) / (s + a1)."""
    return StateSpaceModel([[-a1]], [[1.0]], [[b1 - b0 * a1]], [[b0]])


def build_ws(p: FilterParams) -> StateSpaceModel:
    """Sensitivity weight, diag{W1, ..., W1} with p.channels copies."""
    w1 = _first_order(1.0 / p.m_s, p.omega_s, p.omega_s * p.a_s)
    return diag_repeat(w1, p.channels)


def build_wks(p: FilterParams) -> StateSpaceModel:
    """Control-effort weight, diag{W2, ..., W2}."""
    w2 = _first_order(
        p.c_k / p.m_k, p.c_k * p.omega_k / p.m_k, p.c_k * p.omega_k
    )
    return diag_repeat(w2, p.channels)


def build_wt(p: FilterParams) -> StateSpaceModel:
    """Complementary-sensitivity weight, diag{W3, ..., W3}."""
    w3 = _first_order(
        1.0 / p.a_u, p.omega_t / (p.a_l * p.a_u), p.omega_t / p.a_u
    )
    return diag_repeat(w3, p.channels)
