"""Cosserat rod statics and dynamics for a tendon-driven catheter.

The rod state along arc length s is the centerline position p, the material
frame R, the local strain v (rest value (0, 0, 1)), the curvature/twist u
(rest value 0), and the local linear/angular velocities q and w. Statics and
dynamics share one spatial integrator: time derivatives are replaced by
c0 * x + history(x), so a dynamic step is the same boundary-value problem as
the static one with extra source terms. The boundary-value problem is closed
by shooting on the base strain pair (v(0), u(0)) until the internal loads at
the tip balance the tendon termination pull plus any external tip load.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConvergenceError,
    ParameterError,
    PreconditionError,
    SingularSystemError,
    StepError,
)

DEFAULT_ALPHA = -0.2
DEFAULT_DT = 0.01
DEFAULT_NODES = 41

_EYE3 = np.eye(3)


def hat(vec: Sequence[float]) -> np.ndarray:
    """Skew matrix of a 3-vector, so hat(a) @ b == cross(a, b)."""
    a = np.asarray(vec, dtype=float)
    if a.shape != (3,):
        raise PreconditionError("hat expects a 3-vector")
    return np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )


def vee(mat: np.ndarray) -> np.ndarray:
    """Extract the 3-vector from a skew-symmetric matrix; inverse of hat."""
    m = np.asarray(mat, dtype=float)
    if m.shape != (3, 3):
        raise PreconditionError("vee expects a 3x3 matrix")
    if np.linalg.norm(m + m.T) >= 1e-9:
        raise PreconditionError("vee expects a skew-symmetric matrix")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rotation_exp(phi: np.ndarray) -> np.ndarray:
    """Rotation matrix for a rotation vector phi (Rodrigues form)."""
    angle = float(np.linalg.norm(phi))
    if not math.isfinite(angle):
        raise FloatingPointError("rotation vector is not finite")
    K = hat(phi)
    if angle < 1e-10:
        return _EYE3 + K + 0.5 * (K @ K)
    K = K / angle
    return _EYE3 + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    # One symmetric polish step; input is within O(ds^2) of orthonormal.
    return R @ (1.5 * _EYE3 - 0.5 * (R.T @ R))


@dataclass(frozen=True)
class BdfCoeffs:
    """Implicit differentiation weights: dx/dt ~ c0*x + c1*x1 + c2*x2 + d1*xt1.

    x1 and x2 are the two previous time levels and xt1 the previous realized
    time derivative. alpha in (-0.5, 0] trades accuracy for numerical
    damping; alpha = 0 recovers the plain two-step backward formula.
    """

    c0: float
    c1: float
    c2: float
    d1: float
    dt: float
    alpha: float

    @classmethod
    def statics(cls) -> "BdfCoeffs":
        """Degenerate weights that zero out every time derivative."""
        return cls(0.0, 0.0, 0.0, 0.0, math.inf, 0.0)

    @property
    def is_static(self) -> bool:
        return self.c0 == 0.0


def bdf_coeffs(dt: float, alpha: float = DEFAULT_ALPHA) -> BdfCoeffs:
    """Differentiation weights for step dt and damping parameter alpha."""
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
        raise ParameterError("dt must be a positive finite number")
    if not (-0.5 < alpha <= 0.0):
        raise ParameterError("alpha must lie in (-0.5, 0]")
    den = dt * (1.0 + alpha)
    return BdfCoeffs(
        c0=(1.5 + alpha) / den,
        c1=-2.0 / dt,
        c2=(0.5 + alpha) / den,
        d1=alpha / (1.0 + alpha),
        dt=dt,
        alpha=alpha,
    )


def _bootstrap_coeffs(dt: float) -> BdfCoeffs:
    # Backward-Euler weights used until two full history levels exist.
    return BdfCoeffs(c0=1.0 / dt, c1=-1.0 / dt, c2=0.0, d1=0.0, dt=dt, alpha=0.0)


@dataclass
class Tendon:
    """Tendon routed at a constant cross-section offset, ending at the tip."""

    offset: np.ndarray
    tension: float = 0.0

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        if self.offset.shape != (3,):
            raise ParameterError("tendon offset must be a 3-vector")
        if self.tension < 0.0:
            raise ParameterError("tendon tension must be non-negative")


@dataclass
class RodParams:
    """Geometry, elasticity, inertia and loading of the rod."""

    length: float = 0.08
    n_nodes: int = DEFAULT_NODES
    Kse: np.ndarray = None
    Kbt: np.ndarray = None
    Bse: np.ndarray = None
    Bbt: np.ndarray = None
    rho: float = 1630.573
    area: float = None
    J: np.ndarray = None
    grav: np.ndarray = None
    drag: np.ndarray = None
    tendons: list = field(default_factory=list)
    v_star: np.ndarray = None
    u_star: np.ndarray = None

    def __post_init__(self):
        if self.length <= 0.0:
            raise ParameterError("rod length must be positive")
        if self.n_nodes < 2:
            raise ParameterError("need at least two nodes")
        if self.grav is None:
            self.grav = np.zeros(3)
        if self.drag is None:
            self.drag = np.zeros((3, 3))
        if self.v_star is None:
            self.v_star = np.array([0.0, 0.0, 1.0])
        if self.u_star is None:
            self.u_star = np.zeros(3)
        for name in ("Kse", "Kbt", "Bse", "Bbt", "J"):
            m = getattr(self, name)
            if m is None:
                raise ParameterError(f"{name} matrix is required")
            setattr(self, name, np.asarray(m, dtype=float))
        self.grav = np.asarray(self.grav, dtype=float)
        self.v_star = np.asarray(self.v_star, dtype=float)
        self.u_star = np.asarray(self.u_star, dtype=float)
        for name in ("Kse", "Kbt"):
            m = getattr(self, name)
            if np.any(np.linalg.eigvalsh(0.5 * (m + m.T)) <= 0.0):
                raise ParameterError(f"{name} must be positive definite")
        if self.area is None or self.area <= 0.0:
            raise ParameterError("cross-section area must be positive")

    @classmethod
    def from_material(
        cls,
        youngs_modulus: float,
        second_moment: float,
        area: float,
        density: float,
        length: float = 0.08,
        n_nodes: int = DEFAULT_NODES,
        poisson_ratio: float = 0.3,
        damping_beta: float = 0.0,
        grav: Sequence[float] = (0.0, 0.0, 0.0),
        tendons: Optional[Sequence[Tendon]] = None,
    ) -> "RodParams":
        """Build stiffness/inertia matrices for a homogeneous round rod.

        damping_beta adds stiffness-proportional internal damping
        (Bse = beta * Kse, Bbt = beta * Kbt).
        """
        if youngs_modulus <= 0.0 or second_moment <= 0.0 or density <= 0.0:
            raise ParameterError("material constants must be positive")
        E = youngs_modulus
        G = E / (2.0 * (1.0 + poisson_ratio))
        I = second_moment
        Kse = np.diag([G * area, G * area, E * area])
        Kbt = np.diag([E * I, E * I, 2.0 * G * I])
        J = np.diag([I, I, 2.0 * I])
        return cls(
            length=length,
            n_nodes=n_nodes,
            Kse=Kse,
            Kbt=Kbt,
            Bse=damping_beta * Kse,
            Bbt=damping_beta * Kbt,
            rho=density,
            area=area,
            J=J,
            grav=np.asarray(grav, dtype=float),
            tendons=list(tendons) if tendons else [],
        )

    @property
    def s_step(self) -> float:
        return self.length / (self.n_nodes - 1)


def tendon_loads(
    v: np.ndarray, u: np.ndarray, tendons: Sequence[Tendon]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Distributed tendon terms (a, b, A, G, H) at one cross-section.

    A couples tension into the translational block, G the cross block and H
    the rotational block of the node-local system; a and b are the
    distributed force/moment loads. Offsets are constant along arc length,
    so the tendon tangent in the body frame is cross(u, r) + v.
    """
    a = np.zeros(3)
    b = np.zeros(3)
    A = np.zeros((3, 3))
    G = np.zeros((3, 3))
    H = np.zeros((3, 3))
    for t in tendons:
        r = t.offset
        pbs = np.cross(u, r) + v
        norm = float(np.linalg.norm(pbs))
        if norm < 1e-12:
            raise PreconditionError("tendon tangent degenerated to zero")
        ph = hat(pbs)
        Ai = (-t.tension / norm**3) * (ph @ ph)
        rh = hat(r)
        Gi = -Ai @ rh
        ai = Ai @ np.cross(u, pbs)
        a += ai
        b += rh @ ai
        A += Ai
        G += Gi
        H += rh @ Gi
    return a, b, A, G, H


@dataclass
class RodNode:
    """Full state of one cross-section."""

    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    u: np.ndarray
    q: np.ndarray
    w: np.ndarray

    @classmethod
    def rest_base(cls) -> "RodNode":
        return cls(
            p=np.zeros(3),
            R=np.eye(3),
            v=np.array([0.0, 0.0, 1.0]),
            u=np.zeros(3),
            q=np.zeros(3),
            w=np.zeros(3),
        )


@dataclass
class NodeHistory:
    """History source terms at one node (all zero in statics)."""

    v_h: np.ndarray
    u_h: np.ndarray
    q_h: np.ndarray
    w_h: np.ndarray
    vs_h: np.ndarray
    us_h: np.ndarray

    @classmethod
    def zero(cls) -> "NodeHistory":
        return cls(*(np.zeros(3) for _ in range(6)))


@dataclass
class NodeRates:
    """Arc-length derivatives of the node state."""

    p_s: np.ndarray
    R_s: np.ndarray
    v_s: np.ndarray
    u_s: np.ndarray
    q_s: np.ndarray
    w_s: np.ndarray


class _RodContext:
    """Per-solve scratch and precomputed constants for the node loop."""

    __slots__ = (
        "Kse", "Kbt", "KseB", "KbtB", "Bse", "Bbt", "v_star", "u_star",
        "rhoA", "rhoAg", "rhoJ", "J", "drag", "tendons", "K66", "rhs6",
        "has_drag", "rho",
    )

    def __init__(self, params: RodParams, coeffs: BdfCoeffs):
        c0 = coeffs.c0
        self.Kse = params.Kse
        self.Kbt = params.Kbt
        self.Bse = params.Bse
        self.Bbt = params.Bbt
        self.KseB = params.Kse + c0 * params.Bse
        self.KbtB = params.Kbt + c0 * params.Bbt
        self.v_star = params.v_star
        self.u_star = params.u_star
        self.rho = params.rho
        self.rhoA = params.rho * params.area
        self.rhoAg = self.rhoA * params.grav
        self.J = params.J
        self.rhoJ = params.rho * params.J
        self.drag = params.drag
        self.has_drag = bool(np.any(params.drag))
        self.tendons = [
            (t.offset, hat(t.offset), float(t.tension)) for t in params.tendons
        ]
        self.K66 = np.empty((6, 6))
        self.rhs6 = np.empty(6)


def _node_rates(
    R: np.ndarray,
    v: np.ndarray,
    u: np.ndarray,
    q: np.ndarray,
    w: np.ndarray,
    ctx: _RodContext,
    c0: float,
    v_h: np.ndarray,
    u_h: np.ndarray,
    q_h: np.ndarray,
    w_h: np.ndarray,
    vs_h: np.ndarray,
    us_h: np.ndarray,
    node_index: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    vt = c0 * v + v_h
    ut = c0 * u + u_h
    qt = c0 * q + q_h
    wt = c0 * w + w_h

    n_loc = ctx.Kse @ (v - ctx.v_star) + ctx.Bse @ vt
    m_loc = ctx.Kbt @ (u - ctx.u_star) + ctx.Bbt @ ut

    K = ctx.K66
    K[:3, :3] = ctx.KseB
    K[3:, 3:] = ctx.KbtB
    K[:3, 3:] = 0.0
    K[3:, :3] = 0.0
    a = np.zeros(3)
    b = np.zeros(3)
    for r, rh, tau in ctx.tendons:
        pbs = np.cross(u, r) + v
        n2 = float(pbs @ pbs)
        n1 = math.sqrt(n2)
        if n1 < 1e-12:
            raise PreconditionError("tendon tangent degenerated to zero")
        # hat(pbs)^2 == outer(pbs, pbs) - |pbs|^2 I
        coef = tau / (n1 * n2)
        Ai = coef * (n2 * _EYE3 - np.outer(pbs, pbs))
        Gi = -Ai @ rh
        ai = Ai @ np.cross(u, pbs)
        a += ai
        b += np.cross(r, ai)
        K[:3, :3] += Ai
        K[:3, 3:] += Gi
        K[3:, :3] += Gi.T
        K[3:, 3:] += rh @ Gi

    pi_n = ctx.rhoA * (np.cross(w, q) + qt) - R.T @ ctx.rhoAg - a
    if ctx.has_drag:
        pi_n = pi_n + ctx.drag @ (q * np.abs(q))
    pi_m = (
        ctx.rho * np.cross(w, ctx.J @ w) + ctx.rhoJ @ wt
        - np.cross(v, n_loc)
        - b
    )
    # Reference strains are uniform along s, so their arc-length derivative
    # drops out of the source terms.
    rhs = ctx.rhs6
    rhs[:3] = pi_n - np.cross(u, n_loc) - ctx.Bse @ vs_h
    rhs[3:] = pi_m - np.cross(u, m_loc) - ctx.Bbt @ us_h
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(node_index) from exc

    v_s = sol[:3]
    u_s = sol[3:]
    q_s = vt - np.cross(u, q) + np.cross(w, v)
    w_s = ut - np.cross(u, w)
    p_s = R @ v
    return p_s, v_s, u_s, q_s, w_s


def rod_derivatives(
    node: RodNode,
    params: RodParams,
    coeffs: Optional[BdfCoeffs] = None,
    history: Optional[NodeHistory] = None,
) -> NodeRates:
    """Arc-length derivatives of the full node state.

    With static weights and zero history this is the equilibrium form; with
    dynamic weights the history terms carry the previous time levels.
    """
    coeffs = coeffs or BdfCoeffs.statics()
    h = history or NodeHistory.zero()
    ctx = _RodContext(params, coeffs)
    p_s, v_s, u_s, q_s, w_s = _node_rates(
        node.R,
        node.v,
        node.u,
        node.q,
        node.w,
        ctx,
        coeffs.c0,
        h.v_h,
        h.u_h,
        h.q_h,
        h.w_h,
        h.vs_h,
        h.us_h,
        0,
    )
    return NodeRates(
        p_s=p_s,
        R_s=node.R @ hat(node.u),
        v_s=v_s,
        u_s=u_s,
        q_s=q_s,
        w_s=w_s,
    )


@dataclass
class HistoryTerms:
    """Per-node history source arrays for one implicit step."""

    v_h: np.ndarray
    u_h: np.ndarray
    q_h: np.ndarray
    w_h: np.ndarray
    vs_h: np.ndarray
    us_h: np.ndarray

    @classmethod
    def zero(cls, n_nodes: int) -> "HistoryTerms":
        return cls(*(np.zeros((n_nodes, 3)) for _ in range(6)))

    def at(self, k: int) -> NodeHistory:
        return NodeHistory(
            self.v_h[k], self.u_h[k], self.q_h[k], self.w_h[k],
            self.vs_h[k], self.us_h[k],
        )


@dataclass
class RodHistory:
    """Time levels behind a rod state, enough for one implicit step.

    prev_* holds the fields one step back, rate_* the realized time
    derivatives at the state's own time. depth counts how many steps have
    been taken; below two the integrator stays on the backward-Euler
    bootstrap.
    """

    depth: int
    prev_v: np.ndarray
    prev_u: np.ndarray
    prev_q: np.ndarray
    prev_w: np.ndarray
    prev_vs: np.ndarray
    prev_us: np.ndarray
    rate_v: np.ndarray
    rate_u: np.ndarray
    rate_q: np.ndarray
    rate_w: np.ndarray
    rate_vs: np.ndarray
    rate_us: np.ndarray


@dataclass
class RodState:
    """Discretized rod state plus the history needed to step it in time."""

    s_step: float
    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    u: np.ndarray
    q: np.ndarray
    w: np.ndarray
    vs: np.ndarray
    us: np.ndarray
    history: Optional[RodHistory] = None

    @property
    def n_nodes(self) -> int:
        return self.p.shape[0]

    @property
    def tip_position(self) -> np.ndarray:
        return self.p[-1]

    @property
    def tip_rotation(self) -> np.ndarray:
        return self.R[-1]

    def node(self, k: int) -> RodNode:
        return RodNode(
            p=self.p[k], R=self.R[k], v=self.v[k], u=self.u[k],
            q=self.q[k], w=self.w[k],
        )

    def orthonormality_defect(self) -> float:
        prods = np.einsum("nij,nik->njk", self.R, self.R)
        return float(np.max(np.abs(prods - _EYE3)))


def _march(
    base: RodNode,
    params: RodParams,
    coeffs: BdfCoeffs,
    hist: HistoryTerms,
    ctx: Optional[_RodContext] = None,
) -> RodState:
    n = params.n_nodes
    ds = params.s_step
    if ctx is None:
        ctx = _RodContext(params, coeffs)
    c0 = coeffs.c0
    p = np.empty((n, 3))
    R = np.empty((n, 3, 3))
    v = np.empty((n, 3))
    u = np.empty((n, 3))
    q = np.empty((n, 3))
    w = np.empty((n, 3))
    vs = np.empty((n, 3))
    us = np.empty((n, 3))
    p[0] = base.p
    R[0] = base.R
    v[0] = base.v
    u[0] = base.u
    q[0] = base.q
    w[0] = base.w
    vh, uh, qh, wh = hist.v_h, hist.u_h, hist.q_h, hist.w_h
    vsh, ush = hist.vs_h, hist.us_h
    for k in range(n):
        p_s, v_s, u_s, q_s, w_s = _node_rates(
            R[k], v[k], u[k], q[k], w[k], ctx, c0,
            vh[k], uh[k], qh[k], wh[k], vsh[k], ush[k], k,
        )
        vs[k] = v_s
        us[k] = u_s
        if k == n - 1:
            break
        p[k + 1] = p[k] + ds * p_s
        R[k + 1] = _orthonormalize(R[k] @ rotation_exp(ds * u[k]))
        v[k + 1] = v[k] + ds * v_s
        u[k + 1] = u[k] + ds * u_s
        q[k + 1] = q[k] + ds * q_s
        w[k + 1] = w[k] + ds * w_s
    return RodState(s_step=ds, p=p, R=R, v=v, u=u, q=q, w=w, vs=vs, us=us)


def integrate_shape(
    base: RodNode,
    params: RodParams,
    coeffs: Optional[BdfCoeffs] = None,
    history: Optional[HistoryTerms] = None,
) -> RodState:
    """Integrate the rod state from the base node out to the tip.

    First-order explicit march in s; frames advance by the exact rotation of
    the current curvature over the step and are re-orthonormalized, so the
    orientation stays a rotation matrix at every node.
    """
    coeffs = coeffs or BdfCoeffs.statics()
    hist = history or HistoryTerms.zero(params.n_nodes)
    return _march(base, params, coeffs, hist)


def _tip_residual(
    state: RodState,
    params: RodParams,
    coeffs: BdfCoeffs,
    hist: HistoryTerms,
    tip_force: np.ndarray,
    tip_moment: np.ndarray,
) -> np.ndarray:
    vL = state.v[-1]
    uL = state.u[-1]
    RL = state.R[-1]
    c0 = coeffs.c0
    vtL = c0 * vL + hist.v_h[-1]
    utL = c0 * uL + hist.u_h[-1]
    n_loc = params.Kse @ (vL - params.v_star) + params.Bse @ vtL
    m_loc = params.Kbt @ (uL - params.u_star) + params.Bbt @ utL
    res_n = n_loc - RL.T @ tip_force
    res_m = m_loc - RL.T @ tip_moment
    for t in params.tendons:
        pbs = np.cross(uL, t.offset) + vL
        t_hat = pbs / np.linalg.norm(pbs)
        res_n += t.tension * t_hat
        res_m += t.tension * np.cross(t.offset, t_hat)
    return np.concatenate((res_n, res_m))


def _fd_jacobian(residual_fn, x: np.ndarray, r: np.ndarray) -> np.ndarray:
    J = np.empty((r.size, x.size))
    for j in range(x.size):
        h = 1e-8 * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        J[:, j] = (residual_fn(xp) - r) / h
    return J


def _newton(
    residual_fn,
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    scale: np.ndarray,
    J0: Optional[np.ndarray],
    secant: bool,
) -> Tuple[np.ndarray, float, int, Optional[np.ndarray]]:
    x = x0.astype(float).copy()
    r = residual_fn(x)
    nr = float(np.linalg.norm(r))
    ns = float(np.linalg.norm(r / scale))
    J = J0
    fresh = False
    it = 0
    while it < max_iter:
        if nr < tol:
            return x, nr, it, J
        if J is None:
            J = _fd_jacobian(residual_fn, x, r)
            fresh = True
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        improved = False
        while lam >= 1.0 / 1024.0:
            x_new = x + lam * step
            r_new = residual_fn(x_new)
            nr_new = float(np.linalg.norm(r_new))
            ns_new = float(np.linalg.norm(r_new / scale))
            if ns_new < ns * (1.0 - 1e-4 * lam) or nr_new < tol:
                improved = True
                break
            lam *= 0.5
        if not improved:
            if not fresh:
                # Stale secant Jacobian stalled; re-difference and retry.
                J = None
                it += 1
                continue
            raise ConvergenceError(nr, it, "shooting stalled")
        if secant:
            dx = x_new - x
            dr = r_new - r
            dxdx = float(dx @ dx)
            if dxdx > 1e-300 and np.all(np.isfinite(dr)):
                J = J + np.outer((dr - J @ dx) / dxdx, dx)
        else:
            J = None
        fresh = False
        x, r, nr, ns = x_new, r_new, nr_new, ns_new
        it += 1
    if nr < tol:
        return x, nr, max_iter, J
    raise ConvergenceError(nr, max_iter)


def _shoot(
    residual_fn,
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    res_scale: Optional[np.ndarray] = None,
    jac_cache: Optional[dict] = None,
) -> Tuple[np.ndarray, float, int]:
    """Damped Newton on the base unknown with forward-difference Jacobian.

    res_scale normalizes the force (N) and moment (N m) residual blocks to
    comparable magnitudes for the line search; convergence is still judged
    on the raw residual norm against tol. A fast pass recycles the cached
    Jacobian with rank-1 secant updates; if it stalls or runs out of budget
    the solve restarts from x0 re-differencing the Jacobian every iteration.
    """
    scale = np.ones(x0.size) if res_scale is None else res_scale
    J0 = jac_cache.get("J") if jac_cache is not None else None
    fast_budget = min(max_iter, 40)
    try:
        x, nr, it, J = _newton(residual_fn, x0, tol, fast_budget, scale, J0, True)
    except ConvergenceError:
        x, nr, it, J = None, None, None, None
    if x is None:
        if jac_cache is not None:
            jac_cache.pop("J", None)
        x, nr, it, J = _newton(residual_fn, x0, tol, max_iter, scale, None, False)
    if jac_cache is not None:
        # A long secant run leaves J drifted far from the true Jacobian;
        # caching it would poison the next solve.
        if J is not None and it <= 10:
            jac_cache["J"] = J
        else:
            jac_cache.pop("J", None)
    return x, nr, it


def _solve_bvp(
    params: RodParams,
    coeffs: BdfCoeffs,
    hist: HistoryTerms,
    tip_force: np.ndarray,
    tip_moment: np.ndarray,
    guess: np.ndarray,
    base: RodNode,
    tol: float = 1e-8,
    max_iter: int = 200,
    jac_cache: Optional[dict] = None,
) -> Tuple[RodState, np.ndarray]:
    result = {}
    ctx = _RodContext(params, coeffs)

    def residual(x: np.ndarray) -> np.ndarray:
        b = RodNode(
            p=base.p, R=base.R, v=x[:3], u=x[3:], q=base.q, w=base.w
        )
        # A wild probe during the line search can blow the march up; report
        # it as a huge residual so the step gets damped instead of crashing.
        try:
            with np.errstate(all="ignore"):
                st = _march(b, params, coeffs, hist, ctx)
                r = _tip_residual(st, params, coeffs, hist, tip_force, tip_moment)
        except (OverflowError, FloatingPointError, SingularSystemError):
            return np.full(6, 1e30)
        if not np.all(np.isfinite(r)):
            return np.full(6, 1e30)
        result["state"] = st
        return r

    f0 = float(params.Kse[2, 2])
    m0 = float(params.Kbt[0, 0])
    scale = np.array([f0, f0, f0, m0, m0, m0])
    x, _, _ = _shoot(
        residual, guess, tol, max_iter, res_scale=scale, jac_cache=jac_cache
    )
    residual(x)
    return result["state"], x


def solve_static(
    params: RodParams,
    tip_load: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    initial_guess: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    solver_cache: Optional[dict] = None,
) -> RodState:
    """Static equilibrium of the rod under tendon tensions and tip load.

    tip_load is a (force, moment) pair in the base frame, applied at the tip
    in addition to the tendon termination loads. Falls back to ramping the
    loads in stages when the direct solve stalls.
    """
    tip_force = np.zeros(3)
    tip_moment = np.zeros(3)
    if tip_load is not None:
        tip_force = np.asarray(tip_load[0], dtype=float)
        tip_moment = np.asarray(tip_load[1], dtype=float)

    base = RodNode.rest_base()
    coeffs = BdfCoeffs.statics()
    hist = HistoryTerms.zero(params.n_nodes)
    if initial_guess is not None:
        guess = np.asarray(initial_guess, dtype=float)
    else:
        # Linearized seed: tip loads and tendon termination loads carried to
        # the base through the straight-rod lever arm.
        ez = params.v_star / np.linalg.norm(params.v_star)
        n_base = tip_force.copy()
        m_base = tip_moment + np.cross(params.length * ez, tip_force)
        for t in params.tendons:
            n_base -= t.tension * ez
            m_base -= t.tension * np.cross(t.offset, ez)
        v_seed = params.v_star + np.linalg.solve(params.Kse, n_base)
        u_seed = params.u_star + np.linalg.solve(params.Kbt, m_base)
        guess = np.concatenate((v_seed, u_seed))

    try:
        state, _ = _solve_bvp(
            params, coeffs, hist, tip_force, tip_moment, guess, base,
            tol=tol, max_iter=max_iter, jac_cache=solver_cache,
        )
        return state
    except ConvergenceError:
        if solver_cache is not None:
            solver_cache.pop("J", None)

    # Load continuation: ramp tendon tension, gravity and tip load together.
    full_tensions = [t.tension for t in params.tendons]
    stages = 4
    while stages <= 32:
        try:
            x = np.concatenate((params.v_star, params.u_star))
            state = None
            for m in range(1, stages + 1):
                f = m / stages
                sub = replace(
                    params,
                    tendons=[
                        Tendon(t.offset, f * tau)
                        for t, tau in zip(params.tendons, full_tensions)
                    ],
                    grav=f * params.grav,
                )
                state, x = _solve_bvp(
                    sub, coeffs, HistoryTerms.zero(params.n_nodes),
                    f * tip_force, f * tip_moment, x, base,
                    tol=tol, max_iter=max_iter,
                )
            return state
        except ConvergenceError as exc:
            last_exc = exc
            stages *= 2
    raise last_exc


def rest_state(params: RodParams) -> RodState:
    """Straight unloaded rod at rest (zero velocities, no history)."""
    stripped = replace(params, tendons=[], grav=np.zeros(3))
    return solve_static(stripped)


def _history_terms(state: RodState, coeffs: BdfCoeffs) -> HistoryTerms:
    h = state.history
    c1, c2, d1 = coeffs.c1, coeffs.c2, coeffs.d1
    if h is None or h.depth < 1 or c2 == 0.0:
        return HistoryTerms(
            v_h=c1 * state.v,
            u_h=c1 * state.u,
            q_h=c1 * state.q,
            w_h=c1 * state.w,
            vs_h=c1 * state.vs,
            us_h=c1 * state.us,
        )
    return HistoryTerms(
        v_h=c1 * state.v + c2 * h.prev_v + d1 * h.rate_v,
        u_h=c1 * state.u + c2 * h.prev_u + d1 * h.rate_u,
        q_h=c1 * state.q + c2 * h.prev_q + d1 * h.rate_q,
        w_h=c1 * state.w + c2 * h.prev_w + d1 * h.rate_w,
        vs_h=c1 * state.vs + c2 * h.prev_vs + d1 * h.rate_vs,
        us_h=c1 * state.us + c2 * h.prev_us + d1 * h.rate_us,
    )


def step_dynamics(
    state: RodState,
    params: RodParams,
    coeffs: BdfCoeffs,
    tip_load: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    solver_cache: Optional[dict] = None,
) -> RodState:
    """Advance the rod one implicit time step from a clamped base.

    The first two steps after a fresh state run on the backward-Euler
    bootstrap; afterwards the full two-level weights apply. Raises StepError
    when the step's boundary-value problem does not converge, so the caller
    can halve dt and retry.
    """
    if coeffs.is_static:
        raise PreconditionError("step_dynamics needs dynamic weights")
    if state.n_nodes != params.n_nodes:
        raise PreconditionError("state and params disagree on node count")

    depth = state.history.depth if state.history is not None else 0
    eff = coeffs if depth >= 2 else _bootstrap_coeffs(coeffs.dt)
    hist = _history_terms(state, eff)

    tip_force = np.zeros(3)
    tip_moment = np.zeros(3)
    if tip_load is not None:
        tip_force = np.asarray(tip_load[0], dtype=float)
        tip_moment = np.asarray(tip_load[1], dtype=float)

    base = RodNode(
        p=state.p[0].copy(),
        R=state.R[0].copy(),
        v=state.v[0].copy(),
        u=state.u[0].copy(),
        q=np.zeros(3),
        w=np.zeros(3),
    )
    guess = np.concatenate((state.v[0], state.u[0]))
    try:
        new, _ = _solve_bvp(
            params, eff, hist, tip_force, tip_moment, guess, base,
            tol=tol, max_iter=max_iter, jac_cache=solver_cache,
        )
    except (ConvergenceError, SingularSystemError) as exc:
        raise StepError(f"time step failed: {exc}") from exc

    c0 = eff.c0
    new.history = RodHistory(
        depth=min(depth + 1, 2),
        prev_v=state.v,
        prev_u=state.u,
        prev_q=state.q,
        prev_w=state.w,
        prev_vs=state.vs,
        prev_us=state.us,
        rate_v=c0 * new.v + hist.v_h,
        rate_u=c0 * new.u + hist.u_h,
        rate_q=c0 * new.q + hist.q_h,
        rate_w=c0 * new.w + hist.w_h,
        rate_vs=c0 * new.vs + hist.vs_h,
        rate_us=c0 * new.us + hist.us_h,
    )
    return new


def tip_displacement(state: RodState, reference: Optional[np.ndarray] = None) -> float:
    """Euclidean tip travel from the straight rest position (or a reference)."""
    if reference is None:
        length = state.s_step * (state.n_nodes - 1)
        reference = np.array([0.0, 0.0, length])
    return float(np.linalg.norm(state.tip_position - reference))
