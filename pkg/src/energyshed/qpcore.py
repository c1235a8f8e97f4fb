"""In-house convex solver for diagonal-quadratic programs.

Handles the canonical class every problem here compiles to:

    minimize    sum_i q_i x_i^2 + c'x
    subject to  A_eq x = b_eq
                G_ineq x <= h_ineq
                lo <= x <= hi

via a primal-dual interior-point method with Mehrotra predictor-corrector
steps.  Bounds are folded into the inequality block internally.  Each
Newton system is solved as a regularized quasi-definite KKT system with a
sparse LU factorization (fixed symmetric minimum-degree ordering and
diagonal pivoting, so runs are deterministic and fill stays low even when
the slack diagonal is badly scaled).  Infeasibility is certified by an
explicit phase-1 elastic program rather than dual rays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INF = math.inf


class QPError(ValueError):
    pass


@dataclass
class QuadProgram:
    n: int
    q_diag: np.ndarray
    c_lin: np.ndarray
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    G_ineq: sp.csr_matrix | None = None
    h_ineq: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.q_diag = np.asarray(self.q_diag, dtype=float)
        self.c_lin = np.asarray(self.c_lin, dtype=float)
        if self.lo is None:
            self.lo = np.full(self.n, -INF)
        if self.hi is None:
            self.hi = np.full(self.n, INF)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.A_eq is not None:
            self.A_eq = sp.csr_matrix(self.A_eq)
            self.b_eq = np.asarray(self.b_eq, dtype=float)
        if self.G_ineq is not None:
            self.G_ineq = sp.csr_matrix(self.G_ineq)
            self.h_ineq = np.asarray(self.h_ineq, dtype=float)
        self.validate()

    @property
    def m_eq(self):
        return 0 if self.A_eq is None else self.A_eq.shape[0]

    @property
    def m_ineq(self):
        return 0 if self.G_ineq is None else self.G_ineq.shape[0]

    def validate(self):
        if self.q_diag.shape != (self.n,) or self.c_lin.shape != (self.n,):
            raise QPError("q_diag/c_lin dimension mismatch")
        if (self.q_diag < 0).any():
            raise QPError("q_diag must be nonnegative (convexity)")
        if self.lo.shape != (self.n,) or self.hi.shape != (self.n,):
            raise QPError("bound dimension mismatch")
        if (self.lo > self.hi).any():
            raise QPError("lower bound exceeds upper bound")
        if self.A_eq is not None and (self.A_eq.shape[1] != self.n
                                      or self.b_eq.shape != (self.A_eq.shape[0],)):
            raise QPError("equality system dimension mismatch")
        if self.G_ineq is not None and (self.G_ineq.shape[1] != self.n
                                        or self.h_ineq.shape != (self.G_ineq.shape[0],)):
            raise QPError("inequality system dimension mismatch")

    def objective(self, x):
        return float(self.q_diag @ (x * x) + self.c_lin @ x)

    def to_json_dict(self):
        """Documented debug dump for external cross-checking."""
        def mat(m):
            if m is None:
                return None
            coo = m.tocoo()
            return {"shape": list(coo.shape), "row": coo.row.tolist(),
                    "col": coo.col.tolist(), "data": coo.data.tolist()}

        def vec(v):
            return None if v is None else [None if math.isinf(x) else x for x in v]

        return {
            "n": self.n,
            "q_diag": self.q_diag.tolist(),
            "c_lin": self.c_lin.tolist(),
            "A_eq": mat(self.A_eq), "b_eq": None if self.b_eq is None else self.b_eq.tolist(),
            "G_ineq": mat(self.G_ineq),
            "h_ineq": None if self.h_ineq is None else self.h_ineq.tolist(),
            "lo": vec(self.lo), "hi": vec(self.hi),
            "names": self.names,
        }

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)


@dataclass
class SolverConfig:
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 100
    feas_tol: float = 1e-7

    def __post_init__(self):
        if min(self.tol_primal, self.tol_dual, self.tol_gap, self.feas_tol) <= 0:
            raise QPError("tolerances must be positive")
        if self.max_iter < 1:
            raise QPError("max_iter must be at least 1")


@dataclass
class Solution:
    x: np.ndarray
    duals_eq: np.ndarray
    duals_ineq: np.ndarray
    objective: float
    status: str  # optimal | infeasible | max_iter
    iterations: int
    duals_lo: np.ndarray = field(default=None, repr=False)
    duals_hi: np.ndarray = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# internal: fold bounds into the inequality block
# ---------------------------------------------------------------------------

def _extended_ineq(p):
    """Stack [G; I on finite hi; -I on finite lo] and the matching rhs.

    Returns (G_ext, h_ext, hi_idx, lo_idx); hi_idx/lo_idx give the variable
    each appended row bounds, in order.
    """
    blocks, rhs = [], []
    if p.m_ineq:
        blocks.append(p.G_ineq)
        rhs.append(p.h_ineq)
    hi_idx = np.flatnonzero(np.isfinite(p.hi))
    lo_idx = np.flatnonzero(np.isfinite(p.lo))
    n = p.n
    if hi_idx.size:
        blocks.append(sp.csr_matrix((np.ones(hi_idx.size), (np.arange(hi_idx.size), hi_idx)),
                                    shape=(hi_idx.size, n)))
        rhs.append(p.hi[hi_idx])
    if lo_idx.size:
        blocks.append(sp.csr_matrix((-np.ones(lo_idx.size), (np.arange(lo_idx.size), lo_idx)),
                                    shape=(lo_idx.size, n)))
        rhs.append(-p.lo[lo_idx])
    if not blocks:
        return None, np.zeros(0), hi_idx, lo_idx
    return sp.vstack(blocks, format="csr"), np.concatenate(rhs), hi_idx, lo_idx


def _split_ineq_duals(p, z, hi_idx, lo_idx):
    m = p.m_ineq
    duals_ineq = z[:m].copy() if m else np.zeros(0)
    duals_hi = np.zeros(p.n)
    duals_lo = np.zeros(p.n)
    pos = m
    duals_hi[hi_idx] = z[pos:pos + hi_idx.size]
    pos += hi_idx.size
    duals_lo[lo_idx] = z[pos:pos + lo_idx.size]
    return duals_ineq, duals_hi, duals_lo


# ---------------------------------------------------------------------------
# interior-point core
# ---------------------------------------------------------------------------

_REG = 1e-8      # static primal/dual regularization of the KKT system
_STEP = 0.995    # fraction-to-boundary factor


def _solve_equality_qp(p, cfg):
    """No inequalities at all: one regularized Newton solve plus refinement."""
    n, me = p.n, p.m_eq
    if me:
        K_reg = sp.bmat([[sp.diags(2.0 * p.q_diag + _REG), p.A_eq.T],
                         [p.A_eq, -_REG * sp.identity(me)]], format="csc")
        K_true = sp.bmat([[sp.diags(2.0 * p.q_diag), p.A_eq.T],
                          [p.A_eq, None]], format="csc")
        rhs = np.concatenate([-p.c_lin, p.b_eq])
    else:
        K_reg = sp.csc_matrix(sp.diags(2.0 * p.q_diag + _REG))
        K_true = sp.csc_matrix(sp.diags(2.0 * p.q_diag))
        rhs = -p.c_lin
    lu = spla.splu(K_reg, permc_spec="MMD_AT_PLUS_A",
                   diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    sol = lu.solve(rhs)
    for _ in range(3):  # refinement removes the regularization bias
        sol = sol + lu.solve(rhs - K_true @ sol)
    x, y = sol[:n], sol[n:]
    res_stat = np.abs(2 * p.q_diag * x + p.c_lin + (p.A_eq.T @ y if me else 0)).max() if n else 0.0
    res_feas = np.abs(p.A_eq @ x - p.b_eq).max() if me else 0.0
    scale = 1.0 + max(np.abs(p.c_lin).max(initial=0), np.abs(p.b_eq).max(initial=0) if me else 0)
    ok = res_stat <= cfg.tol_dual * scale and res_feas <= cfg.tol_primal * scale
    return Solution(x=x, duals_eq=y, duals_ineq=np.zeros(0),
                    objective=p.objective(x), status="optimal" if ok else "max_iter",
                    iterations=1, duals_lo=np.zeros(n), duals_hi=np.zeros(n))


def _ipm(p, cfg):
    """Infeasible-start Mehrotra predictor-corrector.

    Returns (Solution-without-status-judgement, converged: bool).
    """
    n = p.n
    G, h, hi_idx, lo_idx = _extended_ineq(p)
    if G is None:
        sol = _solve_equality_qp(p, cfg)
        return sol, sol.status == "optimal"
    mi = G.shape[0]
    me = p.m_eq
    A = p.A_eq if me else sp.csr_matrix((0, n))
    b = p.b_eq if me else np.zeros(0)
    q2 = 2.0 * p.q_diag
    c = p.c_lin

    data_scale = 1.0 + max(np.abs(c).max(initial=0.0),
                           np.abs(h[np.isfinite(h)]).max(initial=0.0),
                           np.abs(b).max(initial=0.0))

    # starting point: shifted so all slacks and duals are comfortably interior
    x = np.clip(np.zeros(n), p.lo, p.hi)
    s_raw = h - G @ x
    shift = max(1.0, -1.5 * s_raw.min())
    s = s_raw + shift
    z = np.ones(mi)
    y = np.zeros(me)

    # constant KKT blocks; only the (2,2) slack diagonal changes per iteration
    GT = G.T.tocsr()
    AT = A.T.tocsr()

    best = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        r_d = q2 * x + c + GT @ z + (AT @ y if me else 0.0)
        r_p = A @ x - b if me else np.zeros(0)
        r_g = G @ x + s - h
        mu = float(s @ z) / mi

        obj = p.objective(x)
        res_stat = np.abs(r_d).max() / data_scale
        res_feas = max(np.abs(r_p).max(initial=0.0), np.abs(r_g).max(initial=0.0)) / data_scale
        res_gap = mu / (1.0 + abs(obj))
        metric = max(res_stat, res_feas, res_gap)
        if best is None or metric < best[0]:
            best = (metric, x.copy(), y.copy(), z.copy(), s.copy(), it)
        if (res_stat <= cfg.tol_dual and res_feas <= cfg.tol_primal
                and res_gap <= cfg.tol_gap):
            converged = True
            break
        # stall guard: primal infeasibility stuck well above tolerance
        if it > 40 and res_feas > 1e-4 and metric > 0.9 * best[0] and best[5] < it - 15:
            break

        rows = [
            [sp.diags(q2 + _REG), GT] + ([AT] if me else []),
            [G, sp.diags(-s / z - _REG)] + ([None] if me else []),
        ]
        if me:
            rows.append([A, None, sp.diags(np.full(me, -_REG))])
        K = sp.bmat(rows, format="csc")
        try:
            # quasi-definite after regularization: a fixed symmetric ordering
            # with diagonal pivoting keeps fill low even when the slack
            # diagonal becomes badly scaled near convergence
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A",
                           diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError:
            break

        def newton(r_c):
            rhs = np.concatenate([-r_d, -r_g + r_c / z, -r_p])
            d = lu.solve(rhs)
            dx = d[:n]
            dz = d[n:n + mi]
            dy = d[n + mi:]
            ds = (-r_c - s * dz) / z
            return dx, dy, dz, ds

        # predictor
        dx, dy, dz, ds = newton(s * z)
        ap = _max_step(s, ds)
        ad = _max_step(z, dz)
        mu_aff = float((s + ap * ds) @ (z + ad * dz)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        dx, dy, dz, ds = newton(s * z + ds * dz - sigma * mu)
        ap = min(1.0, _STEP * _max_step(s, ds))
        ad = min(1.0, _STEP * _max_step(z, dz))

        x = x + ap * dx
        s = s + ap * ds
        y = y + ad * dy
        z = z + ad * dz

    if not converged and best is not None:
        _, x, y, z, s, _ = best
    duals_ineq, duals_hi, duals_lo = _split_ineq_duals(p, z, hi_idx, lo_idx)
    sol = Solution(x=x, duals_eq=y if me else np.zeros(0), duals_ineq=duals_ineq,
                   objective=p.objective(x), status="optimal" if converged else "max_iter",
                   iterations=it, duals_lo=duals_lo, duals_hi=duals_hi)
    return sol, converged


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


# ---------------------------------------------------------------------------
# phase 1
# ---------------------------------------------------------------------------

def _phase1_program(p):
    """Elastic LP: bounds stay hard, G rows get slack u, equalities get v-w.

    min 1'u + 1'(v + w)  s.t.  Gx - u <= h, Ax + v - w = b, u,v,w >= 0.
    Always feasible and bounded; optimum ~ 0 iff p's constraints admit a
    point inside the variable box.
    """
    n, mi, me = p.n, p.m_ineq, p.m_eq
    n_tot = n + mi + 2 * me
    q = np.zeros(n_tot)
    c = np.concatenate([np.zeros(n), np.ones(mi + 2 * me)])
    lo = np.concatenate([p.lo, np.zeros(mi + 2 * me)])
    hi = np.concatenate([p.hi, np.full(mi + 2 * me, INF)])
    G = None
    h = None
    if mi:
        G = sp.hstack([p.G_ineq, -sp.identity(mi), sp.csr_matrix((mi, 2 * me))],
                      format="csr")
        h = p.h_ineq
    A = None
    b = None
    if me:
        A = sp.hstack([p.A_eq, sp.csr_matrix((me, mi)), sp.identity(me), -sp.identity(me)],
                      format="csr")
        b = p.b_eq
    return QuadProgram(n=n_tot, q_diag=q, c_lin=c, A_eq=A, b_eq=b,
                       G_ineq=G, h_ineq=h, lo=lo, hi=hi)


def check_feasibility(p, cfg=None):
    """'feasible' or 'infeasible' by phase-1 elastic minimization."""
    cfg = cfg or SolverConfig()
    if (p.lo > p.hi).any():
        return "infeasible"
    if p.m_eq == 0 and p.m_ineq == 0:
        return "feasible"
    ph = _phase1_program(p)
    sol, converged = _ipm(ph, cfg)
    scale = 1.0 + max(np.abs(p.b_eq).max(initial=0.0) if p.m_eq else 0.0,
                      np.abs(p.h_ineq[np.isfinite(p.h_ineq)]).max(initial=0.0)
                      if p.m_ineq else 0.0)
    thr = cfg.feas_tol * scale
    if 1e-2 * thr < sol.objective < 1e2 * thr:
        # ambiguous band: the IPM's mean-complementarity stop leaves a total
        # duality gap of order tol_gap * m_ineq, which can straddle thr on
        # marginal problems; re-solve the elastic LP to a much tighter gap
        tight = SolverConfig(tol_primal=min(cfg.tol_primal, 1e-9),
                             tol_dual=min(cfg.tol_dual, 1e-9),
                             tol_gap=min(cfg.tol_gap, 1e-12),
                             max_iter=cfg.max_iter, feas_tol=cfg.feas_tol)
        sol, converged = _ipm(ph, tight)
    return "feasible" if sol.objective <= thr else "infeasible"


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def solve_qp(p, cfg=None):
    """Solve the program; status is optimal, infeasible or max_iter."""
    cfg = cfg or SolverConfig()
    p.validate()
    sol, converged = _ipm(p, cfg)
    if converged:
        return sol
    # did not converge: classify via phase 1
    if check_feasibility(p, cfg) == "infeasible":
        sol.status = "infeasible"
    return sol


def kkt_residuals(p, s):
    """Scaled infinity-norm residuals (stationarity, feasibility, complementarity)."""
    x = np.asarray(s.x, dtype=float)
    if x.shape != (p.n,):
        raise QPError("solution dimension mismatch")
    grad = 2.0 * p.q_diag * x + p.c_lin
    if p.m_eq:
        grad = grad + p.A_eq.T @ s.duals_eq
    if p.m_ineq:
        grad = grad + p.G_ineq.T @ s.duals_ineq
    if s.duals_hi is not None:
        grad = grad + s.duals_hi - s.duals_lo
    scale = 1.0 + max(np.abs(p.c_lin).max(initial=0.0), np.abs(x).max(initial=0.0))
    r_stat = float(np.abs(grad).max(initial=0.0)) / scale

    feas_terms = [0.0]
    comp_terms = [0.0]
    if p.m_eq:
        feas_terms.append(np.abs(p.A_eq @ x - p.b_eq).max(initial=0.0))
    if p.m_ineq:
        slack = p.h_ineq - p.G_ineq @ x
        feas_terms.append(float(np.maximum(-slack, 0.0).max(initial=0.0)))
        comp_terms.append(float(np.abs(s.duals_ineq * slack).max(initial=0.0)))
    fin_hi = np.isfinite(p.hi)
    fin_lo = np.isfinite(p.lo)
    if fin_hi.any():
        feas_terms.append(float(np.maximum(x[fin_hi] - p.hi[fin_hi], 0.0).max(initial=0.0)))
        if s.duals_hi is not None:
            comp_terms.append(float(np.abs(s.duals_hi[fin_hi]
                                           * (p.hi[fin_hi] - x[fin_hi])).max(initial=0.0)))
    if fin_lo.any():
        feas_terms.append(float(np.maximum(p.lo[fin_lo] - x[fin_lo], 0.0).max(initial=0.0)))
        if s.duals_lo is not None:
            comp_terms.append(float(np.abs(s.duals_lo[fin_lo]
                                           * (x[fin_lo] - p.lo[fin_lo])).max(initial=0.0)))
    rhs_scale = 1.0 + max(
        np.abs(p.b_eq).max(initial=0.0) if p.m_eq else 0.0,
        np.abs(p.h_ineq[np.isfinite(p.h_ineq)]).max(initial=0.0) if p.m_ineq else 0.0,
        np.abs(x).max(initial=0.0),
    )
    r_feas = max(feas_terms) / rhs_scale
    r_comp = max(comp_terms) / (1.0 + abs(p.objective(x)))
    return r_stat, r_feas, r_comp
