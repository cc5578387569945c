"""Parametric case-study plants.

Two families are provided:

* a two-mass-spring-damper whose stiffness grows with the moving masses
  (``k = 2 m1^4 + 2 m2^4``), mimicking how structural resonances of a
  motion stage drop as the stage gets lighter;
* a modal pathway (ingest -> damp -> truncate) for externally supplied
  finite-element models, plus a bundled free-free lumped-chain surrogate
  that exercises the same pathway without an FE tool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import io as sio
from scipy import linalg

from .lti import SingularMassError, StateSpaceModel

__all__ = [
    "SecondOrderPlant",
    "TwoMassParams",
    "ModalModel",
    "ModalIngestError",
    "InsufficientModesError",
    "lift_second_order",
    "two_mass_plant",
    "equal_masses_for_resonance",
    "ingest_modal_model",
    "truncate_and_damp",
    "surrogate_chain_matrices",
    "surrogate_chain_family",
    "ParametricModalFamily",
]

DAMPING_RATIO_DEFAULT = 0.01


class ModalIngestError(Exception):
    """Malformed or inconsistent modal source data."""


class InsufficientModesError(Exception):
    """Model has fewer rigid or flexible modes than requested."""


@dataclass(frozen=True)
class SecondOrderPlant:
    """Parametric mechanical model M(th) xdd + D(th) xd + K(th) x = B u, y = C x.

    ``mass_fn``/``damp_fn``/``stiff_fn`` map a parameter vector to the
    system matrices; ``input_map``/``output_map`` are constant.  Analytic
    parameter derivatives may be supplied as callables returning one
    matrix per parameter; a central finite-difference fallback is used
    otherwise.
    """

    mass_fn: Callable[[np.ndarray], np.ndarray]
    damp_fn: Callable[[np.ndarray], np.ndarray]
    stiff_fn: Callable[[np.ndarray], np.ndarray]
    input_map: np.ndarray
    output_map: np.ndarray
    theta0: np.ndarray
    dmass_fn: Optional[Callable[[np.ndarray], list]] = None
    ddamp_fn: Optional[Callable[[np.ndarray], list]] = None
    dstiff_fn: Optional[Callable[[np.ndarray], list]] = None
    fd_rel_step: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "input_map", np.atleast_2d(np.asarray(self.input_map, float)))
        object.__setattr__(self, "output_map", np.atleast_2d(np.asarray(self.output_map, float)))
        object.__setattr__(self, "theta0", np.asarray(self.theta0, float).ravel())

    @property
    def n_params(self) -> int:
        return self.theta0.size

    def matrices(self, theta=None):
        th = self.theta0 if theta is None else np.asarray(theta, float).ravel()
        return self.mass_fn(th), self.damp_fn(th), self.stiff_fn(th)

    def lift(self, theta=None) -> StateSpaceModel:
        m, d, k = self.matrices(theta)
        return _lift(m, d, k, self.input_map, self.output_map)

    def response(self, omegas, theta=None) -> np.ndarray:
        """Direct second-order evaluation C (-w^2 M + jw D + K)^-1 B."""
        m, d, k = self.matrices(theta)
        w = np.atleast_1d(np.asarray(omegas, float))
        out = np.empty((w.size, self.output_map.shape[0], self.input_map.shape[1]), complex)
        for i, wi in enumerate(w):
            lam = -wi**2 * m + 1j * wi * d + k
            out[i] = self.output_map @ np.linalg.solve(lam, self.input_map)
        return out

    def matrix_derivatives(self, theta=None):
        """(dM, dD, dK) lists, one matrix per parameter."""
        th = self.theta0 if theta is None else np.asarray(theta, float).ravel()
        if self.dmass_fn and self.ddamp_fn and self.dstiff_fn:
            return self.dmass_fn(th), self.ddamp_fn(th), self.dstiff_fn(th)
        dm, dd, dk = [], [], []
        for i in range(th.size):
            h = self.fd_rel_step * max(1.0, abs(th[i]))
            up, dn = th.copy(), th.copy()
            up[i] += h
            dn[i] -= h
            dm.append((self.mass_fn(up) - self.mass_fn(dn)) / (2 * h))
            dd.append((self.damp_fn(up) - self.damp_fn(dn)) / (2 * h))
            dk.append((self.stiff_fn(up) - self.stiff_fn(dn)) / (2 * h))
        return dm, dd, dk

    def dg_dtheta(self, omega: float, theta=None) -> list:
        """Frequency-domain parameter derivatives dG(jw)/dth_i.

        Uses d(L^-1) = -L^-1 dL L^-1 with L = -w^2 M + jw D + K; B and C
        are parameter-independent.
        """
        th = self.theta0 if theta is None else np.asarray(theta, float).ravel()
        m, d, k = self.matrices(th)
        dm, dd, dk = self.matrix_derivatives(th)
        lam = -omega**2 * m + 1j * omega * d + k
        linv_b = np.linalg.solve(lam, self.input_map)
        c_linv = np.linalg.solve(lam.T, self.output_map.T).T
        grads = []
        for i in range(th.size):
            dlam = -omega**2 * dm[i] + 1j * omega * dd[i] + dk[i]
            grads.append(-c_linv @ dlam @ linv_b)
        return grads


def _lift(m, d, k, b0, c0) -> StateSpaceModel:
    m = np.atleast_2d(np.asarray(m, float))
    d = np.atleast_2d(np.asarray(d, float))
    k = np.atleast_2d(np.asarray(k, float))
    b0 = np.atleast_2d(np.asarray(b0, float))
    c0 = np.atleast_2d(np.asarray(c0, float))
    n = m.shape[0]
    if np.linalg.cond(m) > 1e14:
        raise SingularMassError("mass matrix is singular")
    minv_k = np.linalg.solve(m, k)
    minv_d = np.linalg.solve(m, d)
    minv_b = np.linalg.solve(m, b0)
    a = np.block([
        [np.zeros((n, n)), np.eye(n)],
        [-minv_k, -minv_d],
    ])
    b = np.vstack([np.zeros_like(minv_b), minv_b])
    c = np.hstack([c0, np.zeros_like(c0)])
    return StateSpaceModel(a, b, c)


def lift_second_order(plant: SecondOrderPlant, theta=None) -> StateSpaceModel:
    """First-order companion realization [x; xdot] of a second-order plant.

    Raises
    ------
    SingularMassError
        If M(theta) is singular.
    """
    return plant.lift(theta)


@dataclass(frozen=True)
class TwoMassParams:
    """Moving masses of the two-mass case study, kg."""

    m1: float
    m2: float

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0:
            raise ValueError("masses must be positive")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.m1, self.m2])


_COUPLE = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _two_mass_k(th):
    return 2.0 * th[0] ** 4 + 2.0 * th[1] ** 4


def _two_mass_b(th, zeta):
    k = _two_mass_k(th)
    m_eff = th[0] * th[1] / (th[0] + th[1])
    return 2.0 * zeta * np.sqrt(k * m_eff)


def two_mass_plant(p: TwoMassParams, zeta: float = DAMPING_RATIO_DEFAULT) -> SecondOrderPlant:
    """Two moving masses joined by a spring-damper; force on m1, measure x1.

    The stiffness follows ``k = 2 m1^4 + 2 m2^4`` so that the flexible
    resonance drops as the masses shrink; the damper value keeps the
    flexible mode at a constant damping ratio (default 0.01).  Analytic
    parameter derivatives of M, D and K are attached.
    """

    def mass(th):
        return np.diag([th[0], th[1]])

    def stiff(th):
        return _two_mass_k(th) * _COUPLE

    def damp(th):
        return _two_mass_b(th, zeta) * _COUPLE

    def dmass(th):
        return [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]

    def dstiff(th):
        return [8.0 * th[0] ** 3 * _COUPLE, 8.0 * th[1] ** 3 * _COUPLE]

    def ddamp(th):
        k = _two_mass_k(th)
        m_eff = th[0] * th[1] / (th[0] + th[1])
        dk = [8.0 * th[0] ** 3, 8.0 * th[1] ** 3]
        dme = [
            (th[1] / (th[0] + th[1])) ** 2,
            (th[0] / (th[0] + th[1])) ** 2,
        ]
        root = np.sqrt(k * m_eff)
        return [
            zeta * (dk[i] * m_eff + k * dme[i]) / root * _COUPLE
            for i in range(2)
        ]

    return SecondOrderPlant(
        mass_fn=mass,
        damp_fn=damp,
        stiff_fn=stiff,
        input_map=[[1.0], [0.0]],
        output_map=[[1.0, 0.0]],
        theta0=p.theta,
        dmass_fn=dmass,
        ddamp_fn=ddamp,
        dstiff_fn=dstiff,
    )


def equal_masses_for_resonance(freq_hz: float) -> float:
    """Equal-mass value placing the flexible resonance at ``freq_hz``.

    For m1 = m2 = m the flexible mode satisfies w^2 = k (1/m1 + 1/m2)
    = 8 m^3 with k = 4 m^4, so m = (w^2 / 8)^(1/3).
    """
    w = 2.0 * np.pi * freq_hz
    return float((w**2 / 8.0) ** (1.0 / 3.0))


# ---------------------------------------------------------------------------
# Modal pathway
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModalModel:
    """Mass-normalized modal model: frequencies, shapes projected on I/O.

    ``modal_freqs`` is nondecreasing with zero entries for rigid-body
    modes; ``input_shapes`` has one row per mode (Phi^T B), and
    ``output_shapes`` one column per mode (C Phi).
    """

    modal_freqs: np.ndarray
    damping_ratios: np.ndarray
    input_shapes: np.ndarray
    output_shapes: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.modal_freqs, float).ravel()
        z = np.asarray(self.damping_ratios, float).ravel()
        b = np.atleast_2d(np.asarray(self.input_shapes, float))
        c = np.atleast_2d(np.asarray(self.output_shapes, float))
        if np.any(np.diff(w) < 0):
            raise ModalIngestError("modal frequencies must be nondecreasing")
        if np.any(w < 0):
            raise ModalIngestError("modal frequencies must be nonnegative")
        if z.size != w.size or np.any(z < 0) or np.any(z >= 1):
            raise ModalIngestError("damping ratios must be in [0, 1), one per mode")
        if b.shape[0] != w.size or c.shape[1] != w.size:
            raise ModalIngestError("input/output shape counts must match mode count")
        for name, arr in (("modal_freqs", w), ("damping_ratios", z),
                          ("input_shapes", b), ("output_shapes", c)):
            arr.setflags(write=False)
        object.__setattr__(self, "modal_freqs", w)
        object.__setattr__(self, "damping_ratios", z)
        object.__setattr__(self, "input_shapes", b)
        object.__setattr__(self, "output_shapes", c)

    @property
    def n_modes(self) -> int:
        return self.modal_freqs.size

    @property
    def n_rigid(self) -> int:
        return int(np.count_nonzero(self.modal_freqs == 0.0))

    def to_dict(self) -> dict:
        return {
            "modal_freqs_hz": (self.modal_freqs / (2.0 * np.pi)).tolist(),
            "damping_ratios": self.damping_ratios.tolist(),
            "b_modal": self.input_shapes.tolist(),
            "c_modal": self.output_shapes.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModalModel":
        try:
            freqs = 2.0 * np.pi * np.asarray(data["modal_freqs_hz"], float)
            return cls(freqs, data["damping_ratios"], data["b_modal"], data["c_modal"])
        except KeyError as exc:
            raise ModalIngestError(f"modal JSON missing key {exc}") from exc


_RIGID_TOL = 1e-9


def ingest_modal_model(source) -> ModalModel:
    """Load a modal model from files or raw structural matrices.

    Parameters
    ----------
    source
        One of:

        * path to a modal JSON file with keys ``modal_freqs_hz``,
          ``damping_ratios``, ``b_modal``, ``c_modal``;
        * dict with paths ``{"mass": M.mtx, "stiffness": K.mtx,
          "b": B.json, "c": C.json}`` (Matrix Market for M/K, dense
          JSON arrays for B/C);
        * dict with in-memory arrays under the same keys.

    Raw matrices are diagonalized through the symmetric generalized
    eigenproblem; mode shapes are mass-normalized, ordered by frequency
    and sign-fixed so ingestion is deterministic.  Eigenvalues below a
    relative tolerance are treated as rigid-body modes (frequency 0).
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ModalIngestError(f"modal file not found: {path}")
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModalIngestError(f"malformed modal JSON: {path}") from exc
        return ModalModel.from_dict(data)

    if not isinstance(source, dict):
        raise ModalIngestError("source must be a path or a dict of matrices/paths")
    try:
        m_fe = _load_matrix(source["mass"], sio.mmread)
        k_fe = _load_matrix(source["stiffness"], sio.mmread)
        b_fe = _load_matrix(source["b"], _read_dense_json)
        c_fe = _load_matrix(source["c"], _read_dense_json)
    except KeyError as exc:
        raise ModalIngestError(f"raw source missing key {exc}") from exc
    return _ingest_raw(m_fe, k_fe, b_fe, c_fe)


def _load_matrix(entry, reader):
    if isinstance(entry, (str, Path)):
        path = Path(entry)
        if not path.exists():
            raise ModalIngestError(f"matrix file not found: {path}")
        loaded = reader(path)
        if hasattr(loaded, "toarray"):  # Matrix Market coordinate -> sparse
            loaded = loaded.toarray()
        return np.asarray(loaded, float)
    return np.asarray(entry, float)


def _read_dense_json(path):
    with open(path) as fh:
        return np.asarray(json.load(fh), float)


def _ingest_raw(m_fe, k_fe, b_fe, c_fe) -> ModalModel:
    m_fe = np.atleast_2d(np.asarray(m_fe, float))
    k_fe = np.atleast_2d(np.asarray(k_fe, float))
    b_fe = np.atleast_2d(np.asarray(b_fe, float))
    c_fe = np.atleast_2d(np.asarray(c_fe, float))
    n = m_fe.shape[0]
    sym_tol = 1e-8
    if not np.allclose(m_fe, m_fe.T, rtol=sym_tol, atol=sym_tol * np.abs(m_fe).max()):
        raise ModalIngestError("mass matrix is not symmetric")
    if not np.allclose(k_fe, k_fe.T, rtol=sym_tol, atol=sym_tol * max(np.abs(k_fe).max(), 1.0)):
        raise ModalIngestError("stiffness matrix is not symmetric")
    if np.any(linalg.eigvalsh(m_fe) <= 0):
        raise ModalIngestError("mass matrix must be positive definite")
    if b_fe.shape[0] != n or c_fe.shape[1] != n:
        raise ModalIngestError("B/C dimensions do not match the model order")

    evals, phi = linalg.eigh(k_fe, m_fe)  # ascending; Phi^T M Phi = I
    scale = max(evals.max(), 1.0)
    evals = np.where(evals < _RIGID_TOL * scale, 0.0, evals)
    if np.any(evals < 0):
        raise ModalIngestError("stiffness matrix is indefinite")
    # Deterministic mode-shape signs: largest-magnitude entry positive.
    for j in range(n):
        idx = int(np.argmax(np.abs(phi[:, j])))
        if phi[idx, j] < 0:
            phi[:, j] = -phi[:, j]
    freqs = np.sqrt(evals)
    return ModalModel(
        modal_freqs=freqs,
        damping_ratios=np.zeros(n),
        input_shapes=phi.T @ b_fe,
        output_shapes=c_fe @ phi,
    )


def truncate_and_damp(model: ModalModel, n_rigid: int, n_flex: int,
                      zeta: float = DAMPING_RATIO_DEFAULT) -> StateSpaceModel:
    """Keep the lowest n_rigid + n_flex modes and realize the damped model.

    Rigid-body modes stay undamped; each kept flexible mode receives the
    damping ratio ``zeta``.  In mass-normalized coordinates the kept
    model is qdd + diag(2 zeta_i w_i) qd + diag(w_i^2) q = B_m u.
    """
    if n_rigid < 0 or n_flex < 0 or n_rigid + n_flex < 1:
        raise ValueError("need n_rigid >= 0, n_flex >= 0, at least one mode")
    if model.n_rigid < n_rigid:
        raise InsufficientModesError(
            f"model has {model.n_rigid} rigid modes, {n_rigid} requested"
        )
    if model.n_modes - model.n_rigid < n_flex:
        raise InsufficientModesError(
            f"model has {model.n_modes - model.n_rigid} flexible modes, "
            f"{n_flex} requested"
        )
    keep = n_rigid + n_flex
    w = model.modal_freqs[:keep]
    zeta_vec = np.where(w > 0.0, zeta, 0.0)
    k_m = np.diag(w**2)
    d_m = np.diag(2.0 * zeta_vec * w)
    return _lift(np.eye(keep), d_m, k_m,
                 model.input_shapes[:keep, :], model.output_shapes[:, :keep])


# ---------------------------------------------------------------------------
# Bundled surrogate: free-free lumped chain through the modal pathway
# ---------------------------------------------------------------------------

# Coupling chosen so theta = (0.204, 0.204) kg puts the first flexible
# resonance of the uniform 5-mass chain at 250 Hz (rule-of-thumb anchor).
_CHAIN_COUPLING = None


def _chain_coupling() -> float:
    global _CHAIN_COUPLING
    if _CHAIN_COUPLING is None:
        m_ref = 0.204
        lam1 = 2.0 - 2.0 * np.cos(np.pi / 5.0)  # first flexible eigenvalue of K-pattern
        k_ref = (2.0 * np.pi * 250.0) ** 2 * m_ref / lam1
        _CHAIN_COUPLING = k_ref / (2.0 * m_ref**4)
    return _CHAIN_COUPLING


def surrogate_chain_matrices(theta) -> tuple:
    """Raw (M, K, B, C) of the 5-mass free-free chain at theta = (m_end, m_mid).

    End masses weigh ``m_end``, the three interior masses ``m_mid``; each
    of the four springs follows the quartic rule k_j = c (m_j^4 + m_j+1^4)
    so lighter designs get lower flexible resonances.  Force enters at
    mass 1 and position is measured there (collocated).
    """
    th = np.asarray(theta, float).ravel()
    if th.size != 2 or np.any(th <= 0):
        raise ValueError("theta must be two positive masses (m_end, m_mid)")
    m_end, m_mid = th
    masses = np.array([m_end, m_mid, m_mid, m_mid, m_end])
    c = _chain_coupling()
    springs = c * (masses[:-1] ** 4 + masses[1:] ** 4)
    k = np.zeros((5, 5))
    for j, kj in enumerate(springs):
        k[j, j] += kj
        k[j + 1, j + 1] += kj
        k[j, j + 1] -= kj
        k[j + 1, j] -= kj
    b = np.zeros((5, 1))
    b[0, 0] = 1.0
    cmat = np.zeros((1, 5))
    cmat[0, 0] = 1.0
    return np.diag(masses), k, b, cmat


@dataclass(frozen=True)
class ParametricModalFamily:
    """Plant family whose realizations come from the modal pathway.

    ``builder(theta)`` returns raw (M, K, B, C); every evaluation
    re-ingests, truncates to ``n_rigid + n_flex`` modes and applies the
    flexible damping ratio.  Frequency-domain parameter derivatives use
    central differences with re-ingestion, mirroring how an FE-backed
    design loop would be driven.
    """

    builder: Callable[[np.ndarray], tuple]
    theta0: np.ndarray
    n_rigid: int = 1
    n_flex: int = 4
    zeta: float = DAMPING_RATIO_DEFAULT
    fd_rel_step: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "theta0", np.asarray(self.theta0, float).ravel())

    @property
    def n_params(self) -> int:
        return self.theta0.size

    def modal(self, theta=None) -> ModalModel:
        th = self.theta0 if theta is None else np.asarray(theta, float).ravel()
        m, k, b, c = self.builder(th)
        return _ingest_raw(m, k, b, c)

    def lift(self, theta=None) -> StateSpaceModel:
        return truncate_and_damp(self.modal(theta), self.n_rigid, self.n_flex, self.zeta)

    def response(self, omegas, theta=None) -> np.ndarray:
        sys = self.lift(theta)
        w = np.atleast_1d(np.asarray(omegas, float))
        return np.stack([sys.at(1j * wi) for wi in w])

    def dg_dtheta(self, omega: float, theta=None) -> list:
        th = self.theta0 if theta is None else np.asarray(theta, float).ravel()
        grads = []
        for i in range(th.size):
            h = self.fd_rel_step * max(abs(th[i]), 1e-12)
            up, dn = th.copy(), th.copy()
            up[i] += h
            dn[i] -= h
            g_up = self.lift(up).at(1j * omega)
            g_dn = self.lift(dn).at(1j * omega)
            grads.append((g_up - g_dn) / (2 * h))
        return grads


def surrogate_chain_family(theta0=(0.204, 0.204), n_flex: int = 4,
                           zeta: float = DAMPING_RATIO_DEFAULT) -> ParametricModalFamily:
    """Bundled case-study surrogate: 1 rigid + up to 4 flexible modes."""
    return ParametricModalFamily(
        builder=surrogate_chain_matrices,
        theta0=np.asarray(theta0, float),
        n_rigid=1,
        n_flex=n_flex,
        zeta=zeta,
    )
