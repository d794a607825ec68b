"""Recover an obstacle center from an observed safety-filtered action.

A filtered action deviates from the nominal one along the gradient of the
active barrier.  With only the obstacle barrier active the center follows in
closed form; with a formation bound active as well the stationarity system
is underdetermined by one degree of freedom and is solved as a regularized
least-squares problem by a damped Newton iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize, nnls

from . import safety_filter
from .constraints import CbfParams, QuadraticBarrier, VelocityBound
from .dynamics import DynamicsParams, control_matrix
from .safety_filter import FilterError, FilterProblem, FormationTerm

logger = logging.getLogger(__name__)

INFERRED_CLOSED_FORM = "inferred_closed_form"
INFERRED_NEWTON = "inferred_newton"
INFERRED_INPUT_MATCHING = "inferred_input_matching"
REJECTED_NOISE = "rejected_noise"
REJECTED_FORMATION = "rejected_formation_explains"
REJECTED_VELOCITY = "rejected_velocity"
REJECTED_KNOWN = "rejected_known"
FAILED = "failed"

ACTIVE_TOL = 1e-7

# Running tally of the quadratic sign structure checked on every closed-form call.
sign_audit = {"calls": 0, "violations": 0}


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Observation:
    """One demonstrator step as seen by a learner.

    ``formations`` carries the demonstrator's formation constraints together
    with each partner's realized next position.  ``v_t`` and ``vel_bound`` are
    only needed to re-solve the demonstrator's filter (input matching) and to
    tell whether the velocity bound was binding.
    """

    u_nom: np.ndarray
    u_safe: np.ndarray
    s_t: np.ndarray
    s_next: np.ndarray
    dyn: DynamicsParams = DynamicsParams()
    v_t: Optional[np.ndarray] = None
    formations: tuple = ()
    vel_bound: Optional[VelocityBound] = None

    def __post_init__(self):
        for name in ("u_nom", "u_safe", "s_t", "s_next"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        forms = self.formations
        if isinstance(forms, FormationTerm):
            forms = (forms,)
        object.__setattr__(self, "formations", tuple(forms))
        d = self.s_t.size
        if any(getattr(self, n).size != d for n in ("u_nom", "u_safe", "s_next")):
            raise ValueError("observation vectors must share one dimension")
        if self.v_t is not None:
            v = np.asarray(self.v_t, dtype=float).reshape(-1)
            object.__setattr__(self, "v_t", v)
            dt = self.dyn.dt
            pred = self.s_t + dt * v + 0.5 * dt * dt * self.u_safe
            if np.max(np.abs(pred - self.s_next)) > 1e-9 * (1.0 + np.max(np.abs(self.s_next))):
                raise ValueError("s_next is not the dynamics step of s_t under u_safe")

    @property
    def delta_u(self) -> np.ndarray:
        return self.u_safe - self.u_nom

    @property
    def partner_s_next(self) -> Optional[np.ndarray]:
        return self.formations[0].partner_next if self.formations else None


@dataclass(frozen=True)
class InferenceConfig:
    cbf: CbfParams = CbfParams()
    q: np.ndarray = None
    r: float = 1.0
    noise_threshold: float = 1e-6
    mu: float = 1e-3
    newton_max_iter: int = 100
    newton_tol: float = 1e-10
    armijo_c: float = 1e-4
    backtrack_beta: float = 0.5
    match_tol: Optional[float] = None
    im_max_iter: int = 100
    im_step: float = 0.5

    def __post_init__(self):
        q = np.eye(2) if self.q is None else np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        if self.match_tol is None:
            object.__setattr__(self, "match_tol", 0.25 * self.r)
        for name in ("r", "noise_threshold", "mu", "newton_tol", "match_tol", "im_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iter < 1 or self.im_max_iter < 1:
            raise ValueError("iteration caps must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack_beta < 1):
            raise ValueError("armijo_c and backtrack_beta must lie in (0, 1)")

    def barrier(self, theta) -> QuadraticBarrier:
        return QuadraticBarrier(theta, self.q, self.r)


@dataclass
class InferenceResult:
    verdict: str
    theta_hat: Optional[np.ndarray] = None
    lambda_hat: Optional[float] = None
    nu_hat: Optional[float] = None
    iterations: int = 0
    final_residual: float = 0.0
    trace: list = field(default_factory=list)
    premise_ok: Optional[bool] = None
    message: str = ""
    candidate: Optional[np.ndarray] = None

    @property
    def inferred(self) -> bool:
        return self.verdict.startswith("inferred")


class Identifiability(NamedTuple):
    identifiable: bool
    reasons: list


def obstacle_direction(delta_u, B_s, q) -> np.ndarray:
    """Unit vector pointing from the obstacle center to the next position."""
    delta_u = np.asarray(delta_u, dtype=float)
    if not np.linalg.norm(delta_u) > 0:
        raise InferenceError("zero control deviation carries no direction")
    B_s = np.asarray(B_s, dtype=float)
    if np.linalg.matrix_rank(B_s) < B_s.shape[0]:
        raise InferenceError("constraint-relevant control matrix is singular")
    raw = np.linalg.solve(np.asarray(q, dtype=float), np.linalg.solve(B_s.T, delta_u))
    return raw / np.linalg.norm(raw)


def closed_form_theta(obs: Observation, cfg: InferenceConfig) -> tuple[np.ndarray, float]:
    """Obstacle center for an observation where only the obstacle barrier binds.

    The center lies on the ray ``s_next - t * d_hat``; substituting it into
    the binding barrier condition gives ``A t^2 + B t + C = 0`` with
    ``A > 0`` and ``C < 0``, whose single positive root fixes the center.
    """
    B_s = control_matrix(obs.dyn)
    d_hat = obstacle_direction(obs.delta_u, B_s, cfg.q)
    gamma = cfg.cbf.gamma
    q = cfg.q
    e = obs.s_t - obs.s_next
    a = gamma * float(d_hat @ q @ d_hat)
    b = -2.0 * (1.0 - gamma) * float(e @ q @ d_hat)
    c = -(1.0 - gamma) * float(e @ q @ e) - gamma * cfg.r ** 2
    sign_audit["calls"] += 1
    if not (a > 0 and c < 0):
        sign_audit["violations"] += 1
        raise InferenceError(f"quadratic sign structure violated: A={a}, C={c}")
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise InferenceError("no consistent obstacle for this observation")
    # Stable form of the positive root (-b + sqrt(disc)) / 2a.
    sq = np.sqrt(disc)
    t_star = (-b + sq) / (2.0 * a) if b <= 0 else (-2.0 * c) / (b + sq)
    return obs.s_next - t_star * d_hat, float(t_star)


def closed_form_multiplier(obs: Observation, theta, cfg: InferenceConfig) -> float:
    """Least-squares fit of the obstacle multiplier for a candidate center."""
    B_s = control_matrix(obs.dyn)
    grad = 2.0 * B_s.T @ cfg.q @ (obs.s_next - np.asarray(theta, dtype=float))
    return float(np.linalg.norm(obs.delta_u) / np.linalg.norm(grad))


def check_identifiability(B_s, lam: float, q) -> Identifiability:
    B_s = np.asarray(B_s, dtype=float)
    q = np.asarray(q, dtype=float)
    k = q.shape[0]
    reasons = []
    if not lam > 0:
        reasons.append("constraint inactive")
    if np.linalg.matrix_rank(B_s) < k:
        reasons.append("insufficient actuation")
    if np.linalg.matrix_rank(2.0 * q) < k:
        reasons.append("insufficient barrier sensitivity")
    return Identifiability(not reasons, reasons)


def formation_terms(obs: Observation, active_only: bool = True,
                    tol: float = ACTIVE_TOL) -> list:
    """``(f, sign)`` pairs for the demonstrator's formation constraints.

    ``f`` is the offset between the demonstrator and its partner at the next
    step; ``sign`` is +1 when the lower bound binds and -1 for the upper one,
    decided from the observed distance alone.
    """
    out = []
    for term in obs.formations:
        f = obs.s_next - term.partner_next
        dd = float(f @ f)
        fc = term.constraint
        sign = 1.0 if np.sqrt(dd) <= fc.dist else -1.0
        if active_only:
            gap = dd - fc.lower ** 2 if sign > 0 else fc.upper ** 2 - dd
            if abs(gap) > tol * max(1.0, fc.upper ** 2):
                continue
        out.append((f, sign))
    return out


def _system(x, obs: Observation, cfg: InferenceConfig, terms):
    """Residual F, Jacobian J and the weighted Hessian sum of the KKT system."""
    d = obs.s_t.size
    m = len(terms)
    theta, lam, nus = x[:d], x[d], x[d + 1:]
    bs = control_matrix(obs.dyn)
    q = cfg.q
    gamma = cfg.cbf.gamma
    bq = bs.T @ q
    c = obs.s_next - theta
    et = obs.s_t - theta
    F = np.empty(d + 1)
    F[:d] = obs.delta_u - 2.0 * lam * (bq @ c)
    J = np.zeros((d + 1, d + 1 + m))
    J[:d, :d] = 2.0 * lam * bq
    J[:d, d] = -2.0 * (bq @ c)
    for k, (f, sign) in enumerate(terms):
        g = 2.0 * sign * (bs.T @ f)
        F[:d] -= nus[k] * g
        J[:d, d + 1 + k] = -g
    F[d] = float(c @ q @ c - (1.0 - gamma) * (et @ q @ et) - gamma * cfg.r ** 2)
    J[d, :d] = -2.0 * (q @ c) + 2.0 * (1.0 - gamma) * (q @ et)
    S = np.zeros((d + 1 + m, d + 1 + m))
    cross = 2.0 * (bq.T @ F[:d])
    S[:d, d] = cross
    S[d, :d] = cross
    S[:d, :d] = 2.0 * gamma * F[d] * q
    return F, J, S


def hessian_bound(obs: Observation, cfg: InferenceConfig) -> float:
    """Largest spectral norm among the Hessians of the residual components."""
    bq = control_matrix(obs.dyn).T @ cfg.q
    rows = 2.0 * np.linalg.norm(bq, axis=1)
    return float(max(rows.max(), 2.0 * cfg.cbf.gamma * np.linalg.norm(cfg.q, 2)))


def residual_F(x, obs: Observation, cfg: InferenceConfig) -> np.ndarray:
    """KKT residual for ``x = (theta, lambda, nu_1..nu_m)``, one nu per formation term."""
    terms = formation_terms(obs, active_only=False)
    if not terms:
        raise InferenceError("observation has no formation partner")
    x = np.asarray(x, dtype=float)
    if x.size != obs.s_t.size + 1 + len(terms):
        raise ValueError("x must hold theta, lambda and one nu per formation partner")
    return _system(x, obs, cfg, terms)[0]


def regularized_gradient(x, x0, obs: Observation, cfg: InferenceConfig, terms=None):
    """``pi(x) = J^T F + mu (x - x0)`` and its Jacobian."""
    if terms is None:
        terms = formation_terms(obs, active_only=False)
    F, J, S = _system(np.asarray(x, dtype=float), obs, cfg, terms)
    x = np.asarray(x, dtype=float)
    pi = J.T @ F + cfg.mu * (x - x0)
    dpi = J.T @ J + S + cfg.mu * np.eye(x.size)
    return pi, dpi, F


def default_start(obs: Observation, cfg: InferenceConfig, n_terms: int, theta0=None) -> np.ndarray:
    if theta0 is None:
        theta0, _ = closed_form_theta(obs, cfg)
    theta0 = np.asarray(theta0, dtype=float)
    lam0 = closed_form_multiplier(obs, theta0, cfg)
    return np.concatenate([theta0, [lam0], np.zeros(n_terms)])


def newton_infer(obs: Observation, x0=None, cfg: InferenceConfig = None,
                 terms=None) -> InferenceResult:
    """Regularized Newton solve of the obstacle-plus-formation KKT system.

    ``x0`` defaults to the closed-form obstacle-only estimate with the fitted
    obstacle multiplier and zero formation multipliers.  Each step is damped by
    backtracking until ``|pi|`` decreases sufficiently.
    """
    cfg = cfg or InferenceConfig()
    if terms is None:
        terms = formation_terms(obs)
    d = obs.s_t.size
    try:
        x0 = default_start(obs, cfg, len(terms)) if x0 is None else np.asarray(x0, dtype=float)
    except InferenceError as exc:
        return InferenceResult(FAILED, message=str(exc))
    if x0.size != d + 1 + len(terms) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite and hold theta, lambda and one nu per active formation")
    x = x0.copy()
    pi, dpi, F = regularized_gradient(x, x0, obs, cfg, terms)
    norm = float(np.linalg.norm(pi))
    trace = [norm]
    f_max = float(np.sum(np.abs(F)))
    verdict, message, it = FAILED, "iteration limit reached", 0
    while True:
        if norm <= cfg.newton_tol:
            verdict, message = INFERRED_NEWTON, ""
            break
        if it >= cfg.newton_max_iter:
            break
        try:
            step = np.linalg.solve(dpi, -pi)
        except np.linalg.LinAlgError:
            message = "singular Jacobian of the optimality condition"
            break
        alpha = 1.0
        while True:
            trial = x + alpha * step
            pi_t, dpi_t, F_t = regularized_gradient(trial, x0, obs, cfg, terms)
            norm_t = float(np.linalg.norm(pi_t))
            if np.isfinite(norm_t) and norm_t <= (1.0 - cfg.armijo_c * alpha) * norm:
                break
            alpha *= cfg.backtrack_beta
            if alpha < 1e-14:
                break
        it += 1
        if not (np.isfinite(norm_t) and norm_t <= norm):
            message = "line search found no decrease"
            break
        x, pi, dpi, norm = trial, pi_t, dpi_t, norm_t
        f_max = max(f_max, float(np.sum(np.abs(F_t))))
        trace.append(norm)
    bound = hessian_bound(obs, cfg)
    premise_ok = cfg.mu > bound * f_max
    if not premise_ok:
        logger.warning("regularization premise violated: mu=%.3g <= M*F_max=%.3g", cfg.mu, bound * f_max)
    res = InferenceResult(verdict, iterations=it, final_residual=norm, trace=trace,
                          premise_ok=premise_ok, message=message)
    if verdict == INFERRED_NEWTON:
        res.theta_hat = x[:d].copy()
        res.lambda_hat = float(x[d])
        res.nu_hat = float(x[d + 1]) if len(terms) else 0.0
    return res


def im_objective(theta, obs: Observation, cfg: InferenceConfig) -> float:
    """Squared mismatch between the observed and the re-solved filtered action."""
    if obs.v_t is None:
        raise ValueError("input matching needs the demonstrator velocity")
    problem = FilterProblem(obs.s_t, obs.v_t, obs.u_nom,
                            barrier=QuadraticBarrier(theta, cfg.q, cfg.r),
                            formations=obs.formations, vel_bound=obs.vel_bound,
                            cbf=cfg.cbf, dyn=obs.dyn)
    try:
        u = safety_filter.solve(problem).u_safe
    except (FilterError, ValueError):
        return np.inf
    diff = obs.u_safe - u
    return float(diff @ diff)


def input_matching_baseline(obs: Observation, theta0, cfg: InferenceConfig) -> InferenceResult:
    """Fit the center by Nelder-Mead on the re-solved filter output."""
    theta0 = np.asarray(theta0, dtype=float)
    d = theta0.size
    simplex = np.vstack([theta0] + [theta0 + cfg.im_step * np.eye(d)[i] for i in range(d)])
    res = minimize(im_objective, theta0, args=(obs, cfg), method="Nelder-Mead",
                   options={"maxiter": cfg.im_max_iter, "initial_simplex": simplex})
    if not np.isfinite(res.fun):
        return InferenceResult(FAILED, iterations=int(res.nit), final_residual=float(res.fun),
                               message="filter infeasible at every simplex vertex")
    return InferenceResult(INFERRED_INPUT_MATCHING, theta_hat=np.asarray(res.x, dtype=float),
                           iterations=int(res.nit), final_residual=float(res.fun),
                           message="" if res.success else str(res.message))


def velocity_active(obs: Observation, tol: float = ACTIVE_TOL) -> bool:
    if obs.vel_bound is None or obs.v_t is None:
        return False
    v = obs.v_t + obs.dyn.dt * obs.u_safe
    return abs(obs.vel_bound.v_max ** 2 - float(v @ v)) <= tol * max(1.0, obs.vel_bound.v_max ** 2)


def _known_thetas(beliefs) -> list:
    out = []
    for entry in beliefs or ():
        bar = getattr(entry, "barrier", entry)
        out.append(getattr(bar, "theta", bar))
    return out


def fit_multipliers(obs: Observation, theta, cfg: InferenceConfig, terms) -> np.ndarray:
    """Nonnegative least-squares ``(lambda, nu...)`` for a fixed obstacle center."""
    bs = control_matrix(obs.dyn)
    cols = [2.0 * bs.T @ cfg.q @ (obs.s_next - np.asarray(theta, dtype=float))]
    cols += [2.0 * s * (bs.T @ f) for f, s in terms]
    mult, _ = nnls(np.column_stack(cols), obs.delta_u)
    return mult


def explained_by_known(obs: Observation, beliefs: Iterable, cfg: InferenceConfig,
                       terms=None) -> Optional[np.ndarray]:
    """Known obstacle consistent with a multi-constraint observation, if any.

    With a formation bound active the observation only pins the obstacle to a
    one-parameter family of solutions.  Starting the regularized solve at a
    known obstacle finds the nearest member of that family; if it stays
    within ``match_tol`` the known obstacle already explains the deviation.
    """
    if terms is None:
        terms = formation_terms(obs)
    for known in _known_thetas(beliefs):
        known = np.asarray(known, dtype=float)
        x0 = np.concatenate([known, fit_multipliers(obs, known, cfg, terms)])
        res = newton_infer(obs, x0, cfg, terms)
        if res.inferred and np.linalg.norm(res.theta_hat - known) <= cfg.match_tol:
            return known
    return None


def rejection_pipeline(obs: Observation, beliefs: Iterable, cfg: InferenceConfig,
                       active: Optional[Iterable[str]] = None, method: str = "kkt",
                       theta0=None) -> InferenceResult:
    """Filter out deviations that do not reveal a new obstacle, then infer one.

    ``active`` lists the constraint kinds the demonstrator reported binding;
    when omitted the velocity bound is judged from the observation itself.
    ``method`` is ``"kkt"`` (closed form or Newton) or ``"input_matching"``.
    """
    du = obs.delta_u
    if np.linalg.norm(du) < cfg.noise_threshold:
        return InferenceResult(REJECTED_NOISE)
    vel = (safety_filter.VELOCITY in set(active)) if active is not None else velocity_active(obs)
    if vel:
        return InferenceResult(REJECTED_VELOCITY)
    terms = formation_terms(obs)
    if terms:
        bs = control_matrix(obs.dyn)
        grads = np.column_stack([2.0 * s * (bs.T @ f) for f, s in terms])
        _, resid = nnls(grads, du)
        if resid < cfg.noise_threshold:
            return InferenceResult(REJECTED_FORMATION)
    try:
        if method == "kkt":
            if terms:
                result = newton_infer(obs, cfg=cfg, terms=terms)
            else:
                theta, _ = closed_form_theta(obs, cfg)
                result = InferenceResult(INFERRED_CLOSED_FORM, theta_hat=theta,
                                         lambda_hat=closed_form_multiplier(obs, theta, cfg), nu_hat=0.0)
        elif method == "input_matching":
            start = obs.s_next if theta0 is None else theta0
            result = input_matching_baseline(obs, start, cfg)
        else:
            raise ValueError(f"unknown inference method {method!r}")
    except InferenceError as exc:
        return InferenceResult(FAILED, message=str(exc))
    if not result.inferred:
        return result
    known = None
    for theta in _known_thetas(beliefs):
        if np.linalg.norm(result.theta_hat - theta) <= cfg.match_tol:
            known = theta
            break
    if known is None and terms and method == "kkt":
        known = explained_by_known(obs, beliefs, cfg, terms)
    if known is not None:
        result.verdict = REJECTED_KNOWN
        result.candidate, result.theta_hat = result.theta_hat, None
    return result
