"""Operator assembly and the Fredholm optimality system on [tau, T].

The input-to-state map is the block-lower-triangular operator

    (Lambda u)(t) = -int_tau^t K(t-s) u(s) ds,      K(t) = Z(t) A D,

discretized with the shared product-integration weights of the kernel table.
Adjoints are taken with respect to the trapezoid-weighted inner products, so
Lambda* is an exact transpose and the normal operator I + Lambda Lambda* is
symmetric positive definite in the weighted metric.  The optimal pair is

    v+ = (I + Lambda Lambda*)^-1 h,     u+ = -Lambda* v+,

equivalently u+ = -(I + Lambda* Lambda)^-1 Lambda* h on the control side;
both routes are kept and cross-checked.  apply_H goes through the decoupled
two-field system (phi driven causally by psi, psi anticausally by phi),
solved as one dense block system, and is verified against the direct SPD
factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .forward import (
    ControlSignal,
    StateSnapshot,
    Trajectory,
    gamma_field,
    response_field,
    solve_voc,
)
from .kernels import KernelTable, weight_matrix

__all__ = [
    "OperatorAssembly",
    "OptimalSolution",
    "get_assembly",
    "apply_Gamma",
    "apply_Lambda",
    "apply_Lambda_star",
    "build_h",
    "solve_optimal",
    "u_plus_control_side",
    "apply_H",
    "evaluate_cost",
    "value_function",
    "cost_gradient",
]

_CACHE_SIZE = 3


class OperatorAssembly:
    """Dense discretization of Lambda on [t_start, T] plus cached factorizations.

    Fields are stacked row-major as (node, mode) and controls as
    (node, channel).  wV / wU are the trapezoid node weights repeated per
    component; the scaled matrix B = sqrt(D_V) Lambda sqrt(D_U)^-1 makes the
    two normal systems I + B B^T (state side) and I + B^T B (control side)
    plainly symmetric.
    """

    def __init__(self, table: KernelTable, start: int):
        self.table = table
        self.start = start
        grid = table.grid
        self.m = grid.n_steps - start
        self.n = table.n_modes
        w = grid.segment_weights(start)
        self.node_w = w
        self.wV = np.repeat(w, self.n)
        self.wU = np.repeat(w, 2)
        self.empty = self.m == 0

        basis = table.basis
        lam_d = basis.eigenvalues[:, None] * basis.dmap_coeffs  # (n, 2)
        if self.empty:
            self.Lam = np.zeros((self.n, 2))
        else:
            blocks = np.empty((self.m + 1, self.n, self.m + 1, 2))
            for k in range(self.n):
                Wk = weight_matrix(table.alpha_Z[k], table.beta_Z[k], self.m)
                blocks[:, k, :, :] = -Wk[:, :, None] * lam_d[k][None, None, :]
            self.Lam = blocks.reshape((self.m + 1) * self.n, (self.m + 1) * 2)

        self._chol_state = None
        self._chol_control = None
        self._lu_block = None
        if not self.empty:
            self._sV = np.sqrt(self.wV)
            self._sU = np.sqrt(self.wU)
            self._B = (self._sV[:, None] * self.Lam) / self._sU[None, :]

    # -- elementary applications -------------------------------------------------

    def apply_Lambda(self, u: np.ndarray) -> np.ndarray:
        """u is (m+1, 2); returns the H-valued field (m+1, n)."""
        if self.empty:
            return np.zeros((1, self.n))
        return (self.Lam @ u.reshape(-1)).reshape(self.m + 1, self.n)

    def apply_Lambda_star(self, v: np.ndarray) -> np.ndarray:
        """Exact weighted transpose; v is (m+1, n), result (m+1, 2)."""
        if self.empty:
            return np.zeros((1, 2))
        y = self.Lam.T @ (self.wV * v.reshape(-1))
        return (y / self.wU).reshape(self.m + 1, 2)

    # -- factorizations ----------------------------------------------------------

    def _state_factor(self):
        if self._chol_state is None:
            A = np.eye((self.m + 1) * self.n) + self._B @ self._B.T
            self._chol_state = sla.cho_factor(A, lower=True)
        return self._chol_state

    def _control_factor(self):
        if self._chol_control is None:
            A = np.eye((self.m + 1) * 2) + self._B.T @ self._B
            self._chol_control = sla.cho_factor(A, lower=True)
        return self._chol_control

    def solve_normal_state(self, g: np.ndarray) -> np.ndarray:
        """(I + Lambda Lambda*)^-1 g by the SPD factorization; g is (m+1, n)."""
        if self.empty:
            return g.copy()
        rhs = self._sV * g.reshape(-1)
        sol = sla.cho_solve(self._state_factor(), rhs)
        return (sol / self._sV).reshape(self.m + 1, self.n)

    def solve_normal_control(self, r: np.ndarray) -> np.ndarray:
        """(I + Lambda* Lambda)^-1 r on control fields; r is (m+1, 2)."""
        if self.empty:
            return r.copy()
        rhs = self._sU * r.reshape(-1)
        sol = sla.cho_solve(self._control_factor(), rhs)
        return (sol / self._sU).reshape(self.m + 1, 2)

    def solve_decoupled(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Two-field route: phi = g - Lambda Lambda* phi via the block system.

        Solves [[I, -Lambda], [Lambda*, I]] (phi, psi) = (g, 0) by dense LU;
        eliminating psi recovers (I + Lambda Lambda*) phi = g.
        """
        if self.empty:
            return g.copy(), np.zeros((1, 2))
        nv = (self.m + 1) * self.n
        nu = (self.m + 1) * 2
        if self._lu_block is None:
            blk = np.zeros((nv + nu, nv + nu))
            blk[:nv, :nv] = np.eye(nv)
            blk[:nv, nv:] = -self.Lam
            blk[nv:, :nv] = (self.Lam.T * self.wV[None, :]) / self.wU[:, None]
            blk[nv:, nv:] = np.eye(nu)
            self._lu_block = sla.lu_factor(blk)
        rhs = np.concatenate([g.reshape(-1), np.zeros(nu)])
        sol = sla.lu_solve(self._lu_block, rhs)
        return sol[:nv].reshape(self.m + 1, self.n), sol[nv:].reshape(self.m + 1, 2)

    # -- weighted inner products ---------------------------------------------------

    def inner_V(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(self.wV * a.reshape(-1), b.reshape(-1)))

    def inner_U(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(self.wU * a.reshape(-1), b.reshape(-1)))


def get_assembly(table: KernelTable, start: int) -> OperatorAssembly:
    """Small keyed cache on the table; scans touch each start transiently."""
    cache = table._assembly_cache
    if start not in cache:
        if len(cache) >= _CACHE_SIZE:
            cache.pop(next(iter(cache)))
        cache[start] = OperatorAssembly(table, start)
    return cache[start]


# ----------------------------------------------------------------------------
# spec surface


def apply_Gamma(v_hat, xi, table: KernelTable, start: int) -> np.ndarray:
    """Response of the (present value, history) pair with no forcing seed."""
    return gamma_field(v_hat, xi, table, start)


def apply_Lambda(u: ControlSignal, table: KernelTable) -> np.ndarray:
    return get_assembly(table, u.start).apply_Lambda(u.samples)


def apply_Lambda_star(v: Trajectory | np.ndarray, table: KernelTable, start: int | None = None) -> np.ndarray:
    if isinstance(v, Trajectory):
        start, values = v.start, v.values
    else:
        values = v
        if start is None:
            raise ValueError("start index required for raw arrays")
    return get_assembly(table, start).apply_Lambda_star(values)


def build_h(state: StateSnapshot, table: KernelTable) -> np.ndarray:
    """Affine term of the optimality system: Gamma Xi + forcing response."""
    return response_field(state, table)


@dataclass
class OptimalSolution:
    u_plus: ControlSignal
    v_plus: Trajectory
    W: float
    residual: float


def solve_optimal(state: StateSnapshot, table: KernelTable) -> OptimalSolution:
    """Solve the optimality system by the state-side SPD factorization."""
    asm = get_assembly(table, state.tau_index)
    h = build_h(state, table)
    vp = asm.solve_normal_state(h)
    up = -asm.apply_Lambda_star(vp)
    W = asm.inner_V(vp, h)
    grad = cost_gradient(state, ControlSignal(state.tau_index, up), table, _asm=asm, _h=h)
    residual = float(np.sqrt(max(asm.inner_U(grad, grad), 0.0)))
    return OptimalSolution(
        ControlSignal(state.tau_index, up),
        Trajectory(state.tau_index, h + asm.apply_Lambda(up)),
        W,
        residual,
    )


def u_plus_control_side(state: StateSnapshot, table: KernelTable) -> ControlSignal:
    """Second route: u+ = -(I + Lambda* Lambda)^-1 Lambda* h."""
    asm = get_assembly(table, state.tau_index)
    h = build_h(state, table)
    rhs = asm.apply_Lambda_star(h)
    return ControlSignal(state.tau_index, -asm.solve_normal_control(rhs))


def apply_H(g: np.ndarray, table: KernelTable, start: int) -> np.ndarray:
    """(I + Lambda Lambda*)^-1 g through the decoupled two-field algorithm."""
    phi, _psi = get_assembly(table, start).solve_decoupled(g)
    return phi


def evaluate_cost(state: StateSnapshot, u: ControlSignal, table: KernelTable) -> float:
    """Quadratic cost of (state, u); the trajectory rides the resolvent route.

    Using solve_voc keeps the cost evaluation in the same discrete family as
    the optimality system, so the value-function identity holds to solver
    precision instead of to the cross-scheme O(dt^2).
    """
    asm = get_assembly(table, state.tau_index)
    v = solve_voc(state, u, table)
    return asm.inner_V(v.values, v.values) + asm.inner_U(u.samples, u.samples)


def value_function(state: StateSnapshot, table: KernelTable) -> float:
    """Minimum cost-to-go via the decoupled inverse (independent of solve_optimal)."""
    asm = get_assembly(table, state.tau_index)
    h = build_h(state, table)
    phi = apply_H(h, table, state.tau_index)
    return asm.inner_V(phi, h)


def cost_gradient(
    state: StateSnapshot,
    u: ControlSignal,
    table: KernelTable,
    _asm: OperatorAssembly | None = None,
    _h: np.ndarray | None = None,
) -> np.ndarray:
    """Frechet gradient 2 (u + Lambda* (h + Lambda u)) in the weighted metric."""
    asm = _asm if _asm is not None else get_assembly(table, state.tau_index)
    h = _h if _h is not None else build_h(state, table)
    v = h + asm.apply_Lambda(u.samples)
    return 2.0 * (u.samples + asm.apply_Lambda_star(v))
