"""Solution transport across subintervals for complex spectral parameter rho.

The second-order pencil equation y'' + (rho^2 + rho p + q) y = 0 is reduced
to a first-order system and integrated subinterval by subinterval with an
adaptive embedded Runge-Kutta pair (DOP853) at per-step relative tolerance
1e-12 (configurable).  Integration restarts at every breakpoint and the jump
map is applied exactly there, never smeared into the mesh.

rho-derivative jets ride along as a variational system: the first jet solves

    u'' + (rho^2 + rho p + q) u + (2 rho + p) y = 0

with zero initial jet, the second jet adds 2 (2 rho + p) u + 2 y.  Jets are
capped at order 2; higher rho-derivatives belong to contour integration
(charfn), which doubles as an independent cross-check of the jets.

Everything here is entire in rho; no branch cuts are introduced.  All public
functions are pure functions of immutable inputs and safe to call from
parallel workers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .model import PencilProblem, JumpData, complex_to_json

__all__ = [
    "SolutionFrame",
    "JumpTransfer",
    "IntegrationFailure",
    "integrate_local",
    "apply_jump",
    "propagate",
    "lemma1_compose",
    "EndpointData",
    "endpoint_data",
    "decaying_frame",
    "decaying_endpoints",
    "DEFAULT_RTOL",
    "DEFAULT_ATOL",
    "MAX_JET_ORDER",
]

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-12
DEFAULT_ATOL = 1e-14
MAX_JET_ORDER = 2

# batch chunking: solve_ivp shares one adaptive mesh per call, so batches are
# grouped by comparable |rho| to keep step control honest and cheap
_CHUNK_CAP = 256


class IntegrationFailure(RuntimeError):
    """Adaptive step-size underflow or solver failure.

    Attributes
    ----------
    x : float
        Global position where integration broke down.
    """

    def __init__(self, message: str, x: float):
        super().__init__(message)
        self.x = x


@dataclass(frozen=True)
class SolutionFrame:
    """Value, slope, and optional rho-jet of one solution at one position.

    ``rho_jet[k-1]`` holds (d^k y / d rho^k, d^k y' / d rho^k) for k >= 1.
    """

    x: float
    value: complex
    slope: complex
    rho_jet: tuple[tuple[complex, complex], ...] = ()

    @property
    def jet_order(self) -> int:
        return len(self.rho_jet)

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "value": complex_to_json(self.value),
            "slope": complex_to_json(self.slope),
            "rho_jet": [
                [complex_to_json(v), complex_to_json(s)] for v, s in self.rho_jet
            ],
        }


@dataclass(frozen=True)
class JumpTransfer:
    """Jump map on (y, y') at one breakpoint, for one rho.

    The induced 2x2 matrix [[gamma, 0], [i rho eta' + eta, 1/gamma]] has
    determinant 1 for every admissible gamma.
    """

    gamma: complex
    eta_prime: complex
    eta: complex
    rho: complex

    @classmethod
    def from_jump(cls, jump: JumpData, rho: complex) -> "JumpTransfer":
        return cls(gamma=jump.gamma, eta_prime=jump.eta_prime, eta=jump.eta,
                   rho=complex(rho))

    @property
    def slope_kick(self) -> complex:
        """The coefficient i rho eta' + eta multiplying y(b-0) in the slope rule."""
        return 1j * self.rho * self.eta_prime + self.eta

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[self.gamma, 0.0], [self.slope_kick, 1.0 / self.gamma]], dtype=complex
        )


# ---------------------------------------------------------------------------
# batched integration core
# ---------------------------------------------------------------------------
#
# State tensor layout: Y[sol, level, comp, batch] with comp 0 = value,
# comp 1 = slope, level 0..jet_order.  Flattened C-order for solve_ivp.


def _integrate_chunk(p_fun, q_fun, length, rho, Y0, jet_order, rtol, atol, x_left):
    """Integrate the (jetted) system across one subinterval for one rho-chunk.

    Parameters are local: p_fun/q_fun take the local coordinate on
    [0, length].  Y0 has shape (n_sol, jet_order+1, 2, B).
    """
    n_sol, n_lvl, _, B = Y0.shape
    if B == 0:
        return Y0.copy()
    rho = np.asarray(rho)
    rho_sq = rho * rho

    def rhs(t, yf):
        Y = yf.reshape(n_sol, n_lvl, 2, B)
        pv = p_fun(t)
        qv = q_fun(t)
        w = rho_sq + rho * pv + qv
        out = np.empty_like(Y)
        out[:, :, 0, :] = Y[:, :, 1, :]
        acc = -w * Y[:, :, 0, :]
        if n_lvl >= 2:
            dw = 2.0 * rho + pv
            acc[:, 1, :] -= dw * Y[:, 0, 0, :]
            if n_lvl >= 3:
                acc[:, 2, :] -= 2.0 * dw * Y[:, 1, 0, :] + 2.0 * Y[:, 0, 0, :]
        out[:, :, 1, :] = acc
        return out.ravel()

    sol = solve_ivp(
        rhs,
        (0.0, float(length)),
        Y0.ravel(),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        dense_output=False,
    )
    if not sol.success:
        x_fail = x_left + (float(sol.t[-1]) if sol.t.size else 0.0)
        raise IntegrationFailure(
            f"integrator failed at x = {x_fail:.6g}: {sol.message}", x=x_fail
        )
    return sol.y[:, -1].reshape(n_sol, n_lvl, 2, B)


def _chunk_indices(rho: np.ndarray) -> list[np.ndarray]:
    """Group batch indices by comparable |rho| (octave bands, capped size)."""
    order = np.argsort(np.abs(rho), kind="stable")
    if order.size == 0:
        return []
    bands = np.floor(np.log2(np.maximum(np.abs(rho[order]), 4.0))).astype(int)
    groups: list[np.ndarray] = []
    start = 0
    for i in range(1, order.size + 1):
        if i == order.size or bands[i] != bands[start] or i - start >= _CHUNK_CAP:
            groups.append(order[start:i])
            start = i
    return groups


def _integrate_interval_batch(problem, k, rho, Y0, jet_order, rtol, atol,
                              length_override=None):
    """Batched local integration over subinterval k with |rho|-chunking."""
    bounds = problem.bounds
    length = float(problem.lengths[k]) if length_override is None \
        else float(length_override)
    iv = problem.intervals[k]
    p_fun = iv.p.as_callable(float(problem.lengths[k]))
    q_fun = iv.q.as_callable(float(problem.lengths[k]))
    out = np.empty_like(Y0)
    for idx in _chunk_indices(rho):
        out[..., idx] = _integrate_chunk(
            p_fun, q_fun, length, rho[idx], Y0[..., idx], jet_order,
            rtol, atol, x_left=float(bounds[k]),
        )
    return out


def _apply_jump_batch(Y, jump: JumpData, rho: np.ndarray) -> np.ndarray:
    """Exact jump map on the state tensor, including jet transport.

    Level-L slope rule is the rho-Leibniz expansion of the base rule: the
    kick coefficient i rho eta' + eta is linear in rho, so level L picks up
    the single extra term L * (i eta') * value_{L-1}.
    """
    n_sol, n_lvl, _, B = Y.shape
    out = np.empty_like(Y)
    kick = 1j * rho * jump.eta_prime + jump.eta
    inv_gamma = 1.0 / jump.gamma
    for L in range(n_lvl):
        out[:, L, 0, :] = jump.gamma * Y[:, L, 0, :]
        out[:, L, 1, :] = inv_gamma * Y[:, L, 1, :] + kick * Y[:, L, 0, :]
        if L >= 1:
            out[:, L, 1, :] += L * (1j * jump.eta_prime) * Y[:, L - 1, 0, :]
    return out


def _initial_state(problem, which, rho, jet_order):
    """Initial state tensor at x = 0 for the named solution(s)."""
    B = rho.size
    names = list(which)
    Y0 = np.zeros((len(names), jet_order + 1, 2, B), dtype=complex)
    for s, name in enumerate(names):
        if name == "C":
            Y0[s, 0, 0, :] = 1.0
        elif name == "S":
            Y0[s, 0, 1, :] = 1.0
        elif name == "phi":
            # phi = C + (i rho h' + h) S: phi(0) = 1, phi'(0) = i rho h' + h,
            # whose first rho-jet contributes i h' to the slope
            Y0[s, 0, 0, :] = 1.0
            Y0[s, 0, 1, :] = 1j * rho * problem.h_prime + problem.h
            if jet_order >= 1:
                Y0[s, 1, 1, :] = 1j * problem.h_prime
        else:
            raise ValueError(f"unknown solution name {name!r}")
    return Y0


def _propagate_batch(problem, which: Sequence[str], rho: np.ndarray,
                     jet_order: int, rtol: float, atol: float,
                     x_stop: float | None = None) -> np.ndarray:
    """Propagate the named solutions from 0 to x_stop (default T).

    Returns the state tensor (n_sol, jet_order+1, 2, B) at the stop point,
    jumps applied at every interior breakpoint crossed.
    """
    if not (0 <= jet_order <= MAX_JET_ORDER):
        raise ValueError(f"jet_order must be in [0, {MAX_JET_ORDER}]")
    rho = np.asarray(rho, dtype=complex)
    bounds = problem.bounds
    stop = problem.T if x_stop is None else float(x_stop)
    Y = _initial_state(problem, which, rho, jet_order)
    for k in range(problem.n_intervals):
        left, right = float(bounds[k]), float(bounds[k + 1])
        if stop <= left:
            break
        partial = stop < right
        Y = _integrate_interval_batch(
            problem, k, rho, Y, jet_order, rtol, atol,
            length_override=(stop - left) if partial else None,
        )
        # stopping exactly on a breakpoint yields the b - 0 frame: no jump
        if stop <= right:
            break
        if k < problem.n_intervals - 1:
            Y = _apply_jump_batch(Y, problem.jumps[k], rho)
    return Y


def _frame_from_state(x, col) -> SolutionFrame:
    """Build a SolutionFrame from one state column of shape (n_lvl, 2)."""
    n_lvl = col.shape[0]
    return SolutionFrame(
        x=float(x),
        value=complex(col[0, 0]),
        slope=complex(col[0, 1]),
        rho_jet=tuple(
            (complex(col[L, 0]), complex(col[L, 1])) for L in range(1, n_lvl)
        ),
    )


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def integrate_local(problem: PencilProblem, interval_index: int, rho: complex,
                    init: SolutionFrame, jet_order: int = 0,
                    rtol: float = DEFAULT_RTOL,
                    atol: float = DEFAULT_ATOL) -> SolutionFrame:
    """Integrate across one subinterval from an initial frame.

    Parameters
    ----------
    problem : PencilProblem
    interval_index : int
        Subinterval index k (0-based); integration runs from b_k to b_{k+1}.
    rho : complex
        Spectral parameter.
    init : SolutionFrame
        Frame at the left endpoint.  ``init.x`` must equal b_k.  Jets beyond
        those carried by ``init`` start at zero (the variational default).
    jet_order : int
        Number of rho-derivative levels to transport (0, 1, or 2).

    Returns
    -------
    SolutionFrame
        Frame at b_{k+1} - 0 (no jump applied).

    Raises
    ------
    IntegrationFailure
        On solver breakdown, carrying the offending global position.
    """
    if not 0 <= jet_order <= MAX_JET_ORDER:
        raise ValueError(f"jet_order must be in [0, {MAX_JET_ORDER}]")
    bounds = problem.bounds
    left = float(bounds[interval_index])
    if abs(init.x - left) > 1e-12 * max(1.0, problem.T):
        raise ValueError(
            f"init frame sits at x = {init.x}, expected subinterval start {left}"
        )
    rho_arr = np.array([complex(rho)])
    Y0 = np.zeros((1, jet_order + 1, 2, 1), dtype=complex)
    Y0[0, 0, 0, 0] = init.value
    Y0[0, 0, 1, 0] = init.slope
    for L, (jv, js) in enumerate(init.rho_jet[:jet_order], start=1):
        Y0[0, L, 0, 0] = jv
        Y0[0, L, 1, 0] = js
    Y = _integrate_interval_batch(problem, interval_index, rho_arr, Y0,
                                  jet_order, rtol, atol)
    return _frame_from_state(float(bounds[interval_index + 1]), Y[0, :, :, 0])


def apply_jump(frame: SolutionFrame, transfer: JumpTransfer) -> SolutionFrame:
    """Apply the jump map to a frame at a breakpoint.

    Base rule: y+ = gamma y-, y'+ = y'-/gamma + (i rho eta' + eta) y-.
    Jet levels follow the rho-differentiated rule; level L adds the term
    L * (i eta') * value_{L-1} to the slope.
    """
    kick = transfer.slope_kick
    values = [frame.value] + [v for v, _ in frame.rho_jet]
    slopes = [frame.slope] + [s for _, s in frame.rho_jet]
    new_vals = [transfer.gamma * v for v in values]
    new_slopes = []
    for L in range(len(slopes)):
        s = slopes[L] / transfer.gamma + kick * values[L]
        if L >= 1:
            s += L * 1j * transfer.eta_prime * values[L - 1]
        new_slopes.append(s)
    return SolutionFrame(
        x=frame.x,
        value=new_vals[0],
        slope=new_slopes[0],
        rho_jet=tuple(zip(new_vals[1:], new_slopes[1:])),
    )


def propagate(problem: PencilProblem, which: str, rho: complex,
              jet_order: int = 0, rtol: float = DEFAULT_RTOL,
              atol: float = DEFAULT_ATOL,
              x_stop: float | None = None) -> SolutionFrame:
    """Propagate a named solution (S, C, or phi) from 0 to T - 0.

    Alternates local integration and exact jump application across all
    subintervals; the result equals the transfer-relation composition of
    local fundamental solutions (see :func:`lemma1_compose`).

    Parameters
    ----------
    which : str
        "S" (S(0)=0, S'(0)=1), "C" (C(0)=1, C'(0)=0), or "phi"
        (phi(0)=1, phi'(0) = i rho h' + h).
    x_stop : float, optional
        Stop short of T at this position (used by diagnostics); jumps at
        breakpoints beyond x_stop are not applied, and stopping exactly on
        a breakpoint returns the one-sided frame at b - 0.
    """
    if which not in ("S", "C", "phi"):
        raise ValueError(f"which must be one of S, C, phi; got {which!r}")
    rho_arr = np.array([complex(rho)])
    Y = _propagate_batch(problem, [which], rho_arr, jet_order, rtol, atol,
                         x_stop=x_stop)
    x_end = problem.T if x_stop is None else float(x_stop)
    return _frame_from_state(x_end, Y[0, :, :, 0])


def lemma1_compose(left_frame: SolutionFrame, local_C: SolutionFrame,
                   local_S: SolutionFrame,
                   transfer: JumpTransfer) -> SolutionFrame:
    """Compose a frame across a breakpoint via the explicit transfer relation.

    Given y's frame at b_k - 0, the local fundamental frames C_{k+1}, S_{k+1}
    evaluated at the right end of the next subinterval, and the jump data,
    returns the frame at b_{k+1} - 0:

        y(b_{k+1} - 0)  = gamma y(b_k-0) C_{k+1} + gamma^{-1} y'(b_k-0) S_{k+1}
                          + (i rho eta' + eta) y(b_k-0) S_{k+1}

    and the same combination with C', S' for the slope.  Jet levels compose
    by the Leibniz rule in rho.  Must agree with apply_jump followed by
    integrate_local to integration tolerance.
    """
    jumped = apply_jump(left_frame, transfer)
    A = [jumped.value] + [v for v, _ in jumped.rho_jet]
    Bc = [jumped.slope] + [s for _, s in jumped.rho_jet]
    Cv = [local_C.value] + [v for v, _ in local_C.rho_jet]
    Cs = [local_C.slope] + [s for _, s in local_C.rho_jet]
    Sv = [local_S.value] + [v for v, _ in local_S.rho_jet]
    Ss = [local_S.slope] + [s for _, s in local_S.rho_jet]
    n_lvl = min(len(A), len(Cv), len(Sv))
    vals, slopes = [], []
    for L in range(n_lvl):
        v = sum(
            comb(L, j) * (A[j] * Cv[L - j] + Bc[j] * Sv[L - j]) for j in range(L + 1)
        )
        s = sum(
            comb(L, j) * (A[j] * Cs[L - j] + Bc[j] * Ss[L - j]) for j in range(L + 1)
        )
        vals.append(v)
        slopes.append(s)
    return SolutionFrame(
        x=local_C.x,
        value=vals[0],
        slope=slopes[0],
        rho_jet=tuple(zip(vals[1:], slopes[1:])),
    )


# ---------------------------------------------------------------------------
# backward transport of the decaying solution
# ---------------------------------------------------------------------------

def _apply_jump_inverse_batch(Y, jump: JumpData, rho: np.ndarray) -> np.ndarray:
    """Inverse jump map: right-limit frame to left-limit frame."""
    n_sol, n_lvl, _, B = Y.shape
    out = np.empty_like(Y)
    kick = 1j * rho * jump.eta_prime + jump.eta
    for L in range(n_lvl):
        out[:, L, 0, :] = Y[:, L, 0, :] / jump.gamma
        s = Y[:, L, 1, :] - kick * out[:, L, 0, :]
        if L >= 1:
            s -= L * (1j * jump.eta_prime) * out[:, L - 1, 0, :]
        out[:, L, 1, :] = jump.gamma * s
    return out


def _propagate_backward_batch(problem, rho: np.ndarray, jet_order: int,
                              rtol: float, atol: float,
                              x_stop: float = 0.0) -> np.ndarray:
    """Transport the terminal frame (0, 1) at x = T backward to x_stop.

    Returns the state tensor (1, jet_order+1, 2, B).  Stopping exactly on a
    breakpoint returns the left-limit (b - 0) frame, mirroring the forward
    convention.
    """
    if not (0 <= jet_order <= MAX_JET_ORDER):
        raise ValueError(f"jet_order must be in [0, {MAX_JET_ORDER}]")
    rho = np.asarray(rho, dtype=complex)
    bounds = problem.bounds
    stop = float(x_stop)
    Y = np.zeros((1, jet_order + 1, 2, rho.size), dtype=complex)
    Y[0, 0, 1, :] = 1.0
    for k in reversed(range(problem.n_intervals)):
        left, right = float(bounds[k]), float(bounds[k + 1])
        if stop >= right:
            break
        iv = problem.intervals[k]
        length = float(problem.lengths[k])
        p_fun = iv.p.as_callable(length)
        q_fun = iv.q.as_callable(length)
        t_target = max(stop - left, 0.0)
        for idx in _chunk_indices(rho):
            Y[..., idx] = _integrate_chunk_span(
                p_fun, q_fun, length, t_target, rho[idx], Y[..., idx],
                rtol, atol, x_left=left,
            )
        if stop > left:
            break
        if k > 0:
            # crossing b_k = bounds[k] leftward inverts jumps[k - 1]
            Y = _apply_jump_inverse_batch(Y, problem.jumps[k - 1], rho)
        if stop >= left:
            break
    return Y


def _integrate_chunk_span(p_fun, q_fun, t_from, t_to, rho, Y0, rtol, atol,
                          x_left):
    """Like _integrate_chunk but over an arbitrary (possibly reversed) span."""
    n_sol, n_lvl, _, B = Y0.shape
    if B == 0 or t_from == t_to:
        return Y0.copy()
    rho = np.asarray(rho)
    rho_sq = rho * rho

    def rhs(t, yf):
        Y = yf.reshape(n_sol, n_lvl, 2, B)
        pv = p_fun(t)
        qv = q_fun(t)
        w = rho_sq + rho * pv + qv
        out = np.empty_like(Y)
        out[:, :, 0, :] = Y[:, :, 1, :]
        acc = -w * Y[:, :, 0, :]
        if n_lvl >= 2:
            dw = 2.0 * rho + pv
            acc[:, 1, :] -= dw * Y[:, 0, 0, :]
            if n_lvl >= 3:
                acc[:, 2, :] -= 2.0 * dw * Y[:, 1, 0, :] + 2.0 * Y[:, 0, 0, :]
        out[:, :, 1, :] = acc
        return out.ravel()

    sol = solve_ivp(rhs, (float(t_from), float(t_to)), Y0.ravel(),
                    method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        x_fail = x_left + (float(sol.t[-1]) if sol.t.size else float(t_from))
        raise IntegrationFailure(
            f"integrator failed at x = {x_fail:.6g}: {sol.message}", x=x_fail
        )
    return sol.y[:, -1].reshape(n_sol, n_lvl, 2, B)


def decaying_frame(problem: PencilProblem, rho: complex, jet_order: int = 0,
                   x_stop: float = 0.0, rtol: float = DEFAULT_RTOL,
                   atol: float = DEFAULT_ATOL) -> SolutionFrame:
    """Frame at x_stop of the solution psi with psi(T) = 0, psi'(T) = 1.

    psi spans the direction that decays toward large Im(rho x); the
    normalized combination psi(x)/psi(0) equals Phi(x) = C + M S with
    Phi(0) = 1, and psi'(0)/psi(0) = M(rho).  Backward integration is the
    numerically stable way to reach Phi at large |Im rho|, where the
    forward combination C + M S cancels catastrophically.
    """
    rho_arr = np.array([complex(rho)])
    Y = _propagate_backward_batch(problem, rho_arr, jet_order, rtol, atol,
                                  x_stop=x_stop)
    return _frame_from_state(float(x_stop), Y[0, :, :, 0])


def decaying_endpoints(problem: PencilProblem, rho, jet_order: int = 0,
                       rtol: float = DEFAULT_RTOL,
                       atol: float = DEFAULT_ATOL):
    """Batched (psi(0), psi'(0)) arrays of shape (jet_order+1, B)."""
    rho = np.atleast_1d(np.asarray(rho, dtype=complex))
    Y = _propagate_backward_batch(problem, rho, jet_order, rtol, atol)
    return Y[0, :, 0, :], Y[0, :, 1, :]


# ---------------------------------------------------------------------------
# batched endpoint service (used by charfn)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EndpointData:
    """C and S frames at x = T for a batch of rho, with jets.

    Arrays have shape (jet_order + 1, B): level 0 is the solution itself,
    level k its k-th rho-derivative.
    """

    rho: np.ndarray
    C: np.ndarray
    Cp: np.ndarray
    S: np.ndarray
    Sp: np.ndarray

    @property
    def jet_order(self) -> int:
        return self.C.shape[0] - 1


def endpoint_data(problem: PencilProblem, rho, jet_order: int = 0,
                  rtol: float = DEFAULT_RTOL,
                  atol: float = DEFAULT_ATOL) -> EndpointData:
    """Batched C and S endpoint frames at x = T for an array of rho."""
    rho = np.atleast_1d(np.asarray(rho, dtype=complex))
    Y = _propagate_batch(problem, ["C", "S"], rho, jet_order, rtol, atol)
    return EndpointData(
        rho=rho,
        C=Y[0, :, 0, :],
        Cp=Y[0, :, 1, :],
        S=Y[1, :, 0, :],
        Sp=Y[1, :, 1, :],
    )
