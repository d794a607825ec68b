"""Minimally invasive safety filter for a double-integrator agent.

Every constraint the filter handles is a quadratic in the control of the form

    sign * ((G u + c)^T W (G u + c) - rho^2) >= 0

with a scalar gain ``G``: the obstacle barrier (keep outside an ellipsoid),
the two formation bounds (outside / inside a ball around the partner's next
position) and the velocity bound (inside a ball).  The filter enumerates
active sets and, for each, every KKT point, then keeps the feasible point of
least deviation from the nominal control.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .constraints import (
    CbfParams,
    FormationConstraint,
    QuadraticBarrier,
    VelocityBound,
    barrier_grad_u,
    barrier_value,
    formation_values,
)
from .dynamics import DynamicsParams, control_matrix

STATIONARITY_TOL = 1e-8
FEAS_TOL = 1e-10
MULT_TOL = 1e-9
MAX_NEWTON_ITER = 50

OBSTACLE = "obstacle"
FORMATION_LOWER = "formation_lower"
FORMATION_UPPER = "formation_upper"
VELOCITY = "velocity"


class FilterError(RuntimeError):
    pass


class FilterInfeasible(FilterError):
    """No control satisfies every constraint of the filter problem."""

    def __init__(self, most_violated, value: float):
        self.most_violated = most_violated
        self.value = value
        super().__init__(f"safety filter infeasible; most violated constraint {most_violated} "
                         f"(value {value:.3e} at the nominal control)")


class FilterNotConverged(FilterError):
    def __init__(self, last_iterate, residual: float):
        self.last_iterate = last_iterate
        self.residual = residual
        super().__init__(f"safety filter did not converge (residual {residual:.3e})")


@dataclass(frozen=True)
class FormationTerm:
    """A formation constraint against a partner whose next position is known."""

    constraint: FormationConstraint
    partner_next: np.ndarray
    partner: int = -1

    def __post_init__(self):
        object.__setattr__(self, "partner_next",
                           np.asarray(self.partner_next, dtype=float).reshape(-1))
        if not np.all(np.isfinite(self.partner_next)):
            raise ValueError("partner position must be finite")


@dataclass(frozen=True)
class FilterProblem:
    s_t: np.ndarray
    v_t: np.ndarray
    u_nom: np.ndarray
    barrier: Optional[QuadraticBarrier] = None
    formations: tuple = ()
    vel_bound: Optional[VelocityBound] = None
    cbf: CbfParams = CbfParams()
    dyn: DynamicsParams = DynamicsParams()

    def __post_init__(self):
        for name in ("s_t", "v_t", "u_nom"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        forms = self.formations
        if isinstance(forms, FormationTerm):
            forms = (forms,)
        object.__setattr__(self, "formations", tuple(forms))
        d = self.s_t.size
        if self.v_t.size != d or self.u_nom.size != d:
            raise ValueError("state, velocity and nominal control must share a dimension")
        if self.barrier is not None and self.barrier.theta.size != d:
            raise ValueError("barrier dimension does not match the state")
        for term in self.formations:
            if term.partner_next.size != d:
                raise ValueError("partner position dimension does not match the state")

    def next_position(self, u) -> np.ndarray:
        dt = self.dyn.dt
        return self.s_t + dt * self.v_t + 0.5 * dt * dt * np.asarray(u, dtype=float)

    def next_velocity(self, u) -> np.ndarray:
        return self.v_t + self.dyn.dt * np.asarray(u, dtype=float)


@dataclass
class FilterSolution:
    u_safe: np.ndarray
    lambda_obs: float = 0.0
    nu_form: float = 0.0
    mu_vel: float = 0.0
    active_set: frozenset = frozenset()
    kkt_residual: float = 0.0
    multipliers: dict = field(default_factory=dict)

    @property
    def modified(self) -> bool:
        return bool(self.multipliers)

    def is_active(self, kind: str) -> bool:
        return kind in self.active_set


class KKTReport(NamedTuple):
    stationarity_residual: float
    worst_primal_violation: float
    worst_complementarity: float


class _Quad(NamedTuple):
    kind: str
    key: tuple
    gain: float
    offset: np.ndarray
    w: Optional[np.ndarray]  # None stands for the identity
    rho2: float
    sign: float

    def z(self, u):
        return self.gain * u + self.offset

    def value(self, u) -> float:
        z = self.gain * u + self.offset
        zz = z @ z if self.w is None else z @ self.w @ z
        return self.sign * (zz - self.rho2)

    def grad(self, u) -> np.ndarray:
        z = self.gain * u + self.offset
        wz = z if self.w is None else self.w @ z
        return 2.0 * self.sign * self.gain * wz

    def hess(self, d: int) -> np.ndarray:
        w = np.eye(d) if self.w is None else self.w
        return 2.0 * self.sign * self.gain ** 2 * w


def _build(problem: FilterProblem) -> list:
    dt = problem.dyn.dt
    b = 0.5 * dt * dt
    s0 = problem.s_t + dt * problem.v_t
    cons = []
    bar = problem.barrier
    if bar is not None:
        rho2 = bar.r ** 2 + (1.0 - problem.cbf.gamma) * barrier_value(problem.s_t, bar)
        w = None if bar.is_circle else bar.q
        cons.append(_Quad(OBSTACLE, (OBSTACLE,), b, s0 - bar.theta, w, rho2, 1.0))
    for n, term in enumerate(problem.formations):
        fc = term.constraint
        tag = term.partner if term.partner >= 0 else n
        off = s0 - term.partner_next
        cons.append(_Quad(FORMATION_LOWER, (FORMATION_LOWER, tag), b, off, None, fc.lower ** 2, 1.0))
        cons.append(_Quad(FORMATION_UPPER, (FORMATION_UPPER, tag), b, off, None, fc.upper ** 2, -1.0))
    if problem.vel_bound is not None:
        cons.append(_Quad(VELOCITY, (VELOCITY,), dt, problem.v_t.copy(), None,
                          problem.vel_bound.v_max ** 2, -1.0))
    return cons


class _Candidate(NamedTuple):
    u: np.ndarray
    active: tuple  # indices into the constraint list
    lam: np.ndarray
    objective: float


def _single_candidates(con: _Quad, idx: int, u_nom: np.ndarray) -> list:
    """Every KKT point of ``min 0.5|u - u_nom|^2`` with ``con`` binding and lam >= 0."""
    g = con.gain
    z_nom = g * u_nom + con.offset
    d = u_nom.size
    zs = []  # pairs (z, tau) with tau = 2 * lam * g**2
    if con.w is None:
        rho = np.sqrt(con.rho2)
        nz = np.linalg.norm(z_nom)
        if nz == 0.0:
            if con.sign > 0:
                e = np.zeros(d)
                e[0] = 1.0
                zs += [(rho * e, 1.0), (-rho * e, 1.0)]
        else:
            kappa = nz / rho
            if con.sign > 0:
                # z = z_nom / (1 - tau): near side (tau < 1) and far side (tau > 1)
                if kappa <= 1.0:
                    zs.append((z_nom / kappa, 1.0 - kappa))
                zs.append((-z_nom / kappa, 1.0 + kappa))
            elif kappa >= 1.0:
                zs.append((z_nom / kappa, kappa - 1.0))
    else:
        zs = _secular_points(con.w, z_nom, con.rho2, con.sign)
    out = []
    for z, tau in zs:
        wz = z if con.w is None else con.w @ z
        u = u_nom + tau * con.sign * wz / g
        lam = tau / (2.0 * g * g)
        out.append(_Candidate(u, (idx,), np.array([lam]), 0.5 * float((u - u_nom) @ (u - u_nom))))
    return out


def _secular_points(w_mat, z_nom, rho2, sign):
    """Solve ``(I - sign*tau*W) z = z_nom`` with ``z^T W z = rho2`` for tau >= 0."""
    qs, vecs = np.linalg.eigh(w_mat)
    wv = vecs.T @ z_nom
    a = sign * qs
    d = qs.size
    out = []

    def phi(tau):
        den = 1.0 - tau * a
        return float(np.sum(qs * wv ** 2 / den ** 2) - rho2)

    def dphi(tau):
        den = 1.0 - tau * a
        return float(np.sum(2.0 * a * qs * wv ** 2 / den ** 3))

    # Polynomial obtained by clearing the denominators of phi(tau) = 0.
    lin = [np.polynomial.Polynomial([1.0, -ai]) for ai in a]
    poly = -rho2 * np.prod([l ** 2 for l in lin])
    for i in range(d):
        term = np.polynomial.Polynomial([qs[i] * wv[i] ** 2])
        for j in range(d):
            if j != i:
                term = term * lin[j] ** 2
        poly = poly + term
    scale = max(1.0, float(np.max(np.abs(a))))
    for root in poly.roots():
        if abs(root.imag) > 1e-6 * (1.0 + abs(root.real)):
            continue
        tau = float(root.real)
        if tau < -1e-12:
            continue
        den = 1.0 - tau * a
        if np.min(np.abs(den)) < 1e-9:
            continue
        for _ in range(8):
            dp = dphi(tau)
            if dp == 0.0:
                break
            nxt = tau - phi(tau) / dp
            if not np.isfinite(nxt) or np.min(np.abs(1.0 - nxt * a)) < 1e-12:
                break
            tau = nxt
        tau = max(tau, 0.0)
        zt = wv / (1.0 - tau * a)
        if abs(float(np.sum(qs * zt ** 2)) - rho2) > 1e-8 * max(1.0, rho2):
            continue
        out.append((vecs @ zt, tau))
    # Hard case: z_nom has no component along an eigenvector and tau sits on its pole.
    wnorm = np.linalg.norm(wv) + 1.0
    for i in range(d):
        if abs(wv[i]) > 1e-12 * wnorm or a[i] <= 0:
            continue
        tau = 1.0 / a[i]
        zt = np.zeros(d)
        same = np.abs(a - a[i]) <= 1e-12 * scale
        zt[~same] = wv[~same] / (1.0 - tau * a[~same])
        rest = rho2 - float(np.sum(qs[~same] * zt[~same] ** 2))
        if rest < 0:
            continue
        for sgn in (1.0, -1.0):
            z2 = zt.copy()
            z2[i] = sgn * np.sqrt(rest / qs[i])
            out.append((vecs @ z2, tau))
    return out


def _residual(cons, active, u, lam, u_nom):
    stat = u - u_nom
    for k, l in zip(active, lam):
        stat = stat - l * cons[k].grad(u)
    prim = np.array([cons[k].value(u) for k in active])
    return stat, prim


def _newton_kkt(cons, active, u0, u_nom, lam0=None):
    """Newton iteration on stationarity plus binding constraints."""
    d = u_nom.size
    m = len(active)
    u = np.array(u0, dtype=float)
    if lam0 is None:
        gmat = np.column_stack([cons[k].grad(u) for k in active])
        lam0 = np.linalg.lstsq(gmat, u - u_nom, rcond=None)[0]
    lam = np.array(lam0, dtype=float)
    hess = [cons[k].hess(d) for k in active]
    stat, prim = _residual(cons, active, u, lam, u_nom)
    res = np.sqrt(stat @ stat + prim @ prim)
    for _ in range(MAX_NEWTON_ITER):
        if res <= 1e-13 * (1.0 + np.linalg.norm(u)):
            break
        gmat = np.column_stack([cons[k].grad(u) for k in active])
        jac = np.zeros((d + m, d + m))
        jac[:d, :d] = np.eye(d) - sum(l * h for l, h in zip(lam, hess))
        jac[:d, d:] = -gmat
        jac[d:, :d] = gmat.T
        try:
            delta = np.linalg.solve(jac, -np.concatenate([stat, prim]))
        except np.linalg.LinAlgError:
            return None
        alpha = 1.0
        for _ in range(30):
            u_new = u + alpha * delta[:d]
            lam_new = lam + alpha * delta[d:]
            stat_n, prim_n = _residual(cons, active, u_new, lam_new, u_nom)
            res_n = np.sqrt(stat_n @ stat_n + prim_n @ prim_n)
            if res_n < res or res_n == 0.0:
                break
            alpha *= 0.5
        else:
            break
        u, lam, stat, prim, res = u_new, lam_new, stat_n, prim_n, res_n
    if np.linalg.norm(stat) > STATIONARITY_TOL or np.max(np.abs(prim)) > FEAS_TOL * 100:
        return None
    return _Candidate(u, tuple(active), lam, 0.5 * float((u - u_nom) @ (u - u_nom)))


def _circle_intersections(cons, a: int, b: int, u_nom):
    """Points (2-D only) where constraint surfaces ``a`` (a ball) and ``b`` meet."""
    ca, cb = cons[a], cons[b]
    if ca.w is not None:
        ca, cb = cb, ca
    if ca.w is not None:
        return []
    rho = np.sqrt(ca.rho2)

    def u_of(phi):
        return (rho * np.array([np.cos(phi), np.sin(phi)]) - ca.offset) / ca.gain

    def gb(phi):
        return cb.value(u_of(phi))

    phis = np.linspace(0.0, 2.0 * np.pi, 145)
    us = (rho * np.stack([np.cos(phis), np.sin(phis)], axis=1) - ca.offset) / ca.gain
    zs = cb.gain * us + cb.offset
    zz = np.einsum("ij,ij->i", zs, zs) if cb.w is None else np.einsum("ij,jk,ik->i", zs, cb.w, zs)
    vals = cb.sign * (zz - cb.rho2)
    out = []
    for k in range(len(phis) - 1):
        if vals[k] == 0.0:
            out.append(u_of(phis[k]))
        elif vals[k] * vals[k + 1] < 0:
            out.append(u_of(brentq(gb, phis[k], phis[k + 1], xtol=1e-14)))
    return out


def _pair_vertices(cons, active, u_nom) -> list:
    """KKT candidates with two constraints binding in the plane.

    Both surfaces pass through the control, so it is one of their
    intersection points and stationarity fixes the multipliers linearly.
    """
    out = []
    for u in _circle_intersections(cons, active[0], active[1], u_nom):
        gmat = np.column_stack([cons[k].grad(u) for k in active])
        try:
            lam = np.linalg.solve(gmat, u - u_nom)
        except np.linalg.LinAlgError:
            cand = _newton_kkt(cons, active, u, u_nom)
            if cand is not None:
                out.append(cand)
            continue
        cand = _Candidate(u, tuple(active), lam, 0.5 * float((u - u_nom) @ (u - u_nom)))
        stat = u - u_nom - gmat @ lam
        if np.linalg.norm(stat) > STATIONARITY_TOL:
            cand = _newton_kkt(cons, active, u, u_nom, lam)
        if cand is not None and not any(np.linalg.norm(cand.u - c.u) < 1e-9 for c in out):
            out.append(cand)
    return out


def _valid(cons, cand: _Candidate) -> bool:
    if np.any(cand.lam < -MULT_TOL):
        return False
    for k, con in enumerate(cons):
        if k not in cand.active and con.value(cand.u) < -FEAS_TOL:
            return False
    return True


def _enumerate(cons, u_nom, singles):
    d = u_nom.size
    n = len(cons)
    found = [c for c in singles if _valid(cons, c)]
    for size in range(2, min(d, n) + 1):
        for active in itertools.combinations(range(n), size):
            keys = [cons[k].key for k in active]
            tags = [key[1] for key in keys if key[0] in (FORMATION_LOWER, FORMATION_UPPER)]
            if len(tags) != len(set(tags)):
                continue  # lower and upper of one pair cannot bind together
            if size == 2 and d == 2:
                found += [c for c in _pair_vertices(cons, active, u_nom) if _valid(cons, c)]
                continue
            starts = [u_nom] + [c.u for c in singles if c.active[0] in active]
            if size > 2:
                starts += [c.u for c in found if set(c.active) <= set(active)]
            sols = []
            for u0 in starts:
                cand = _newton_kkt(cons, active, u0, u_nom)
                if cand is None:
                    continue
                if any(np.linalg.norm(cand.u - s.u) < 1e-9 for s in sols):
                    continue
                sols.append(cand)
            found += [c for c in sols if _valid(cons, c)]
    return found


def _to_solution(cons, cand: _Candidate, u_nom) -> FilterSolution:
    u = cand.u
    mult = {}
    stat = u - u_nom
    for k, l in zip(cand.active, cand.lam):
        l = max(float(l), 0.0)
        mult[cons[k].key] = l
        stat = stat - l * cons[k].grad(u)
    kinds = {key[0] for key in mult}
    nu = max([l for key, l in mult.items() if key[0] in (FORMATION_LOWER, FORMATION_UPPER)], default=0.0)
    return FilterSolution(
        u_safe=u,
        lambda_obs=mult.get((OBSTACLE,), 0.0),
        nu_form=nu,
        mu_vel=mult.get((VELOCITY,), 0.0),
        active_set=frozenset(kinds),
        kkt_residual=float(np.linalg.norm(stat)),
        multipliers=mult,
    )


def solve(problem: FilterProblem) -> FilterSolution:
    """Project the nominal control onto the safe control set.

    Raises:
        FilterInfeasible: when no control satisfies every constraint.
    """
    u_nom = problem.u_nom
    cons = _build(problem)
    values = [c.value(u_nom) for c in cons]
    if all(v >= 0.0 for v in values):
        return FilterSolution(u_safe=u_nom.copy())

    singles = []
    relaxed = []
    for k, con in enumerate(cons):
        cands = _single_candidates(con, k, u_nom)
        singles += cands
        if values[k] < 0.0 and cands:
            best = min(cands, key=lambda c: c.objective)
            if _valid(cons, best):
                relaxed.append(best)
    if relaxed:
        # The global minimiser of a relaxation that is feasible for the full problem is optimal.
        return _to_solution(cons, min(relaxed, key=lambda c: c.objective), u_nom)

    found = _enumerate(cons, u_nom, singles)
    if not found:
        k = int(np.argmin(values))
        raise FilterInfeasible(cons[k].key, values[k])
    return _to_solution(cons, min(found, key=lambda c: c.objective), u_nom)


def nearest_obstacle(s, beliefs: Iterable) -> Optional[QuadraticBarrier]:
    """Closest barrier to ``s`` by center distance; ties go to the earliest entry."""
    s = np.asarray(s, dtype=float)
    best, best_d = None, np.inf
    for entry in beliefs:
        bar = getattr(entry, "barrier", entry)
        dist = float(np.linalg.norm(s - bar.theta))
        if dist < best_d:
            best, best_d = bar, dist
    return best


def constraint_values(problem: FilterProblem, u) -> dict:
    """Constraint values at ``u`` computed from the barrier definitions directly."""
    u = np.asarray(u, dtype=float)
    s_next = problem.next_position(u)
    out = {}
    if problem.barrier is not None:
        out[(OBSTACLE,)] = (barrier_value(s_next, problem.barrier)
                            - (1.0 - problem.cbf.gamma) * barrier_value(problem.s_t, problem.barrier))
    for n, term in enumerate(problem.formations):
        tag = term.partner if term.partner >= 0 else n
        lo, hi = formation_values(s_next, term.partner_next, term.constraint)
        out[(FORMATION_LOWER, tag)] = lo
        out[(FORMATION_UPPER, tag)] = hi
    if problem.vel_bound is not None:
        v = problem.next_velocity(u)
        out[(VELOCITY,)] = problem.vel_bound.v_max ** 2 - float(v @ v)
    return out


def constraint_gradients(problem: FilterProblem, u) -> dict:
    u = np.asarray(u, dtype=float)
    s_next = problem.next_position(u)
    bs = control_matrix(problem.dyn)
    out = {}
    if problem.barrier is not None:
        out[(OBSTACLE,)] = barrier_grad_u(s_next, problem.barrier, bs)
    for n, term in enumerate(problem.formations):
        tag = term.partner if term.partner >= 0 else n
        f = 2.0 * bs.T @ (s_next - term.partner_next)
        out[(FORMATION_LOWER, tag)] = f
        out[(FORMATION_UPPER, tag)] = -f
    if problem.vel_bound is not None:
        out[(VELOCITY,)] = -2.0 * problem.dyn.dt * problem.next_velocity(u)
    return out


def verify_kkt(problem: FilterProblem, sol: FilterSolution) -> KKTReport:
    """Recompute the KKT residuals of ``sol`` from the problem data alone."""
    u = np.asarray(sol.u_safe, dtype=float)
    values = constraint_values(problem, u)
    grads = constraint_gradients(problem, u)
    stat = u - problem.u_nom
    comp = 0.0
    for key, g in values.items():
        lam = sol.multipliers.get(key, 0.0)
        stat = stat - lam * grads[key]
        comp = max(comp, abs(lam * g))
    worst = max([0.0] + [-v for v in values.values()])
    return KKTReport(float(np.linalg.norm(stat)), worst, comp)
