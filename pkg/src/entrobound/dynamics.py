"""System definitions and reachable-set over-approximation oracles.

Three system kinds are supported, each with a sound one-step enclosure:

* ``affine``       x' = A x + B u (+ W): exact interval hull via center/radius.
* ``polynomial-map``  componentwise polynomial expressions evaluated with a
  natural interval extension (with a dedicated even-power rule), sound but
  not exact in general.
* ``sampled-ode``  RK4 image of the box center over one sampling interval,
  inflated per axis by radius * exp(L * T_s) where L is a user-supplied
  growth constant; sound whenever L is valid on the working domain.  The
  fixed 100-substep RK4 error is assumed dominated by the growth-bound
  inflation.

All oracles are pure functions and vectorize over batches of boxes.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import HyperRect, Polytope, UniformGrid, fitted_eta

ODE_SUBSTEPS = 100
ODE_REFERENCE_SUBSTEPS = 1000


# ---------------------------------------------------------------------------
# Interval arithmetic and expression maps
# ---------------------------------------------------------------------------


class _Iv:
    """Interval [lo, hi]; lo/hi are scalars or equal-shape arrays."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        self.lo = lo
        self.hi = hi

    def __add__(self, other):
        return _Iv(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other):
        return _Iv(self.lo - other.hi, self.hi - other.lo)

    def __neg__(self):
        return _Iv(-self.hi, -self.lo)

    def __mul__(self, other):
        a = self.lo * other.lo
        b = self.lo * other.hi
        c = self.hi * other.lo
        d = self.hi * other.hi
        return _Iv(
            np.minimum(np.minimum(a, b), np.minimum(c, d)),
            np.maximum(np.maximum(a, b), np.maximum(c, d)),
        )

    def power(self, n: int):
        if n == 0:
            return _Iv(np.ones_like(self.lo * 1.0), np.ones_like(self.hi * 1.0))
        a = self.lo**n
        b = self.hi**n
        if n % 2 == 1:
            return _Iv(a, b)
        # even power: [0, max] where the interval straddles zero
        lo = np.where((self.lo <= 0) & (self.hi >= 0), 0.0, np.minimum(a, b))
        return _Iv(lo, np.maximum(a, b))

    def divide_by_const(self, c: float):
        if c == 0:
            raise ZeroDivisionError("interval division by zero constant")
        return self * _Iv(1.0 / c, 1.0 / c)


_NUMERIC_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "arctan": np.arctan,
    "atan": np.arctan,
    "abs": np.abs,
}


class ExprMap:
    """Componentwise map given by expression strings.

    State variables are x0..x{d-1} (aliases x, y, z for d <= 3) and inputs
    u0..u{m-1} (aliases u, v for m <= 2).  Interval evaluation supports the
    polynomial subset (+, -, *, ** with nonnegative integer exponent, and
    division by a numeric constant); pointwise evaluation additionally allows
    sin/cos/tan/exp/sqrt/arctan/abs.
    """

    def __init__(self, exprs: list[str], state_dim: int, input_dim: int):
        self.exprs = list(exprs)
        self.state_dim = state_dim
        self.input_dim = input_dim
        self._names = {}
        for i in range(state_dim):
            self._names[f"x{i}"] = ("x", i)
        for alias, i in zip("xyz", range(state_dim)):
            self._names.setdefault(alias, ("x", i))
        for i in range(input_dim):
            self._names[f"u{i}"] = ("u", i)
        for alias, i in zip("uv", range(input_dim)):
            self._names.setdefault(alias, ("u", i))
        self._asts = []
        for e in exprs:
            tree = ast.parse(e, mode="eval")
            self._validate(tree.body)
            self._asts.append(tree.body)

    def _validate(self, node):
        ok = (
            ast.BinOp,
            ast.UnaryOp,
            ast.Constant,
            ast.Name,
            ast.Load,
            ast.Call,
            ast.Add,
            ast.Sub,
            ast.Mult,
            ast.Div,
            ast.Pow,
            ast.USub,
            ast.UAdd,
        )
        for sub in ast.walk(node):
            if not isinstance(sub, ok):
                raise ValueError(f"unsupported syntax in expression: {ast.dump(sub)}")
            if isinstance(sub, ast.Name) and sub.id not in self._names:
                if sub.id not in _NUMERIC_FUNCS:
                    raise ValueError(f"unknown symbol {sub.id!r}")
            if isinstance(sub, ast.Constant) and not isinstance(sub.value, (int, float)):
                raise ValueError(f"non-numeric constant {sub.value!r}")
            if isinstance(sub, ast.Call) and (
                not isinstance(sub.func, ast.Name) or sub.func.id not in _NUMERIC_FUNCS
            ):
                raise ValueError("only the whitelisted math functions may be called")

    # -- interval evaluation -------------------------------------------------

    def eval_interval(self, lo: np.ndarray, hi: np.ndarray, u) -> tuple[np.ndarray, np.ndarray]:
        """Natural interval extension over a batch of boxes (n, d) -> (n, d_out)."""
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        env = {}
        for name, (kind, i) in self._names.items():
            if kind == "x":
                env[name] = _Iv(lo[:, i], hi[:, i])
            else:
                env[name] = _Iv(u[i], u[i])
        outs = [self._eval_iv(node, env) for node in self._asts]
        out_lo = np.stack([np.broadcast_to(o.lo, lo.shape[:1]) for o in outs], axis=-1)
        out_hi = np.stack([np.broadcast_to(o.hi, lo.shape[:1]) for o in outs], axis=-1)
        return out_lo, out_hi

    def _eval_iv(self, node, env) -> _Iv:
        if isinstance(node, ast.Constant):
            return _Iv(float(node.value), float(node.value))
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.UnaryOp):
            v = self._eval_iv(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                base = self._eval_iv(node.left, env)
                exp = node.right
                if isinstance(exp, ast.UnaryOp) and isinstance(exp.op, ast.USub):
                    raise ValueError("negative exponents are not supported in intervals")
                if not isinstance(exp, ast.Constant) or not isinstance(exp.value, int):
                    raise ValueError("interval powers need a nonnegative integer exponent")
                return base.power(exp.value)
            left = self._eval_iv(node.left, env)
            if isinstance(node.op, ast.Div):
                c = self._const_value(node.right, env)
                return left.divide_by_const(c)
            right = self._eval_iv(node.right, env)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
        if isinstance(node, ast.Call):
            raise ValueError("transcendental functions are not interval-evaluable here")
        raise ValueError(f"cannot interval-evaluate {ast.dump(node)}")

    def _const_value(self, node, env) -> float:
        v = self._eval_iv(node, env)
        lo = np.min(v.lo)
        hi = np.max(v.hi)
        if lo != hi:
            raise ValueError("division is only supported by a constant")
        return float(lo)

    # -- pointwise evaluation -------------------------------------------------

    def eval_points(self, X: np.ndarray, u) -> np.ndarray:
        """Exact map on a batch of points (n, d) -> (n, d_out)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        env = {}
        for name, (kind, i) in self._names.items():
            env[name] = X[:, i] if kind == "x" else u[i]
        cols = [
            np.broadcast_to(self._eval_pt(node, env), X.shape[:1])
            for node in self._asts
        ]
        return np.stack(cols, axis=-1)

    def _eval_pt(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.UnaryOp):
            v = self._eval_pt(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            left = self._eval_pt(node.left, env)
            right = self._eval_pt(node.right, env)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
            if isinstance(node.op, ast.Div):
                return left / right
            if isinstance(node.op, ast.Pow):
                return left**right
        if isinstance(node, ast.Call):
            args = [self._eval_pt(a, env) for a in node.args]
            return _NUMERIC_FUNCS[node.func.id](*args)
        raise ValueError(f"cannot evaluate {ast.dump(node)}")


# ---------------------------------------------------------------------------
# System definitions
# ---------------------------------------------------------------------------

KINDS = ("affine", "polynomial-map", "sampled-ode")


@dataclass(frozen=True)
class SystemDef:
    """One control system: deterministic map or set-valued via additive W."""

    state_dim: int
    input_dim: int
    kind: str
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    fmap: ExprMap | None = None
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    T_s: float | None = None
    L: float | None = None
    W: HyperRect | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.kind == "affine":
            A = np.asarray(self.A, dtype=float)
            B = np.asarray(self.B, dtype=float).reshape(self.state_dim, self.input_dim)
            if A.shape != (self.state_dim, self.state_dim):
                raise ValueError(f"A must be {self.state_dim}x{self.state_dim}")
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "B", B)
        elif self.kind == "polynomial-map":
            if self.fmap is None or len(self.fmap.exprs) != self.state_dim:
                raise ValueError("polynomial-map needs one expression per state")
        elif self.kind == "sampled-ode":
            if self.rhs is None:
                raise ValueError("sampled-ode needs a right-hand side")
            if self.T_s is None or self.T_s <= 0:
                raise ValueError("sampled-ode needs a sampling time T_s > 0")
            if self.L is None:
                raise ValueError("sampled-ode needs a growth constant L")
        if self.W is not None and self.W.dim != self.state_dim:
            raise ValueError("disturbance set W must have state dimension")

    @property
    def is_uncertain(self) -> bool:
        return self.W is not None

    @property
    def w_contains_zero(self) -> bool:
        """Additive disturbance sets normally contain 0; flagged if not."""
        return self.W is None or self.W.contains(np.zeros(self.state_dim))


@dataclass(frozen=True)
class ReachResult:
    enclosure: HyperRect
    exact: bool


def _add_disturbance(lo, hi, W: HyperRect | None):
    if W is None:
        return lo, hi
    return lo + W.lb, hi + W.ub


def reach_affine(A, B, rect: HyperRect, u, W: HyperRect | None = None) -> ReachResult:
    """Exact interval hull of {A x + B u : x in rect} plus W."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if A.shape[1] != rect.dim:
        raise ValueError(f"A has {A.shape[1]} columns, rect dimension {rect.dim}")
    if B.reshape(A.shape[0], -1).shape[1] != u.size:
        raise ValueError("B column count must match input dimension")
    lo, hi = _affine_boxes(A, B, rect.lb[None], rect.ub[None], u, W)
    return ReachResult(HyperRect(lo[0], hi[0]), exact=True)


def _affine_boxes(A, B, lo, hi, u, W):
    c = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo)
    m = c @ A.T + (B.reshape(A.shape[0], -1) @ u)
    rad = r @ np.abs(A).T
    return _add_disturbance(m - rad, m + rad, W)


def reach_interval(fmap: ExprMap, rect: HyperRect, u, W: HyperRect | None = None) -> ReachResult:
    """Natural interval extension of a polynomial map over rect, plus W."""
    lo, hi = fmap.eval_interval(rect.lb[None], rect.ub[None], u)
    lo, hi = _add_disturbance(lo, hi, W)
    return ReachResult(HyperRect(lo[0], hi[0]), exact=False)


def rk4(rhs, X: np.ndarray, u, T: float, substeps: int) -> np.ndarray:
    """Classical RK4 on a batch of points over [0, T]; errors on non-finite values."""
    X = np.atleast_2d(np.asarray(X, dtype=float)).copy()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    dt = T / substeps
    for _ in range(substeps):
        k1 = rhs(X, u)
        k2 = rhs(X + 0.5 * dt * k1, u)
        k3 = rhs(X + 0.5 * dt * k2, u)
        k4 = rhs(X + dt * k3, u)
        X = X + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(X)):
        raise FloatingPointError("integration diverged")
    return X


def reach_ode(rhs, rect: HyperRect, u, T_s: float, L: float) -> ReachResult:
    """RK4 image of the box center, inflated by radius * exp(L * T_s) per axis."""
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    center = rk4(rhs, rect.center[None], u, T_s, ODE_SUBSTEPS)[0]
    rad = rect.radius * math.exp(L * T_s)
    return ReachResult(HyperRect(center - rad, center + rad), exact=False)


def reach_boxes(sys: SystemDef, lo: np.ndarray, hi: np.ndarray, u) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized one-step enclosure of a batch of boxes under one input."""
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if sys.kind == "affine":
        return _affine_boxes(sys.A, sys.B, lo, hi, u, sys.W)
    if sys.kind == "polynomial-map":
        out_lo, out_hi = sys.fmap.eval_interval(lo, hi, u)
        return _add_disturbance(out_lo, out_hi, sys.W)
    centers = rk4(sys.rhs, 0.5 * (lo + hi), u, sys.T_s, ODE_SUBSTEPS)
    rad = 0.5 * (hi - lo) * math.exp(sys.L * sys.T_s)
    return _add_disturbance(centers - rad, centers + rad, sys.W)


def step_points(
    sys: SystemDef, X: np.ndarray, u, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Concrete image of a batch of points (reference map for sampling oracles).

    For uncertain systems a disturbance is drawn uniformly from W when an rng
    is supplied; otherwise the nominal (zero-disturbance) map is used.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if sys.kind == "affine":
        out = X @ sys.A.T + sys.B @ u
    elif sys.kind == "polynomial-map":
        out = sys.fmap.eval_points(X, u)
    else:
        out = rk4(sys.rhs, X, u, sys.T_s, ODE_REFERENCE_SUBSTEPS)
    if sys.W is not None and rng is not None:
        out = out + rng.uniform(sys.W.lb, sys.W.ub, size=out.shape)
    return out


# ---------------------------------------------------------------------------
# Built-in benchmark systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemSetup:
    """A system together with its invariance problem data and grid defaults."""

    name: str
    system: SystemDef
    U: HyperRect
    Q: HyperRect | Polytope
    Q_X: HyperRect
    eta_s: np.ndarray
    eta_i: np.ndarray
    tau: int = 1
    reverse: SystemDef | None = None
    theory: float | None = None
    notes: str = ""


BUILTIN_NAMES = ("example1", "linear2d", "pendulum", "henon", "uncertain-linear")


def _pendulum_rhs(b: float):
    def rhs(X, u):
        x = X[:, 0]
        s, c = np.sin(x), np.cos(x)
        return (-2.0 * b * s * c - s * s + c * c + u[0] * c * c)[:, None]

    return rhs


def builtin_system(name: str, **params) -> SystemSetup:
    """Benchmark systems with their invariant sets and default grid parameters.

    pendulum accepts rho, b, T_s (defaults 1, 1, 0.01) and an optional L
    override (default 2*(b^2+1), a conservative bound on |df/dx|).
    henon accepts eps (default 0.08).
    """
    if name == "example1":
        q = HyperRect([-1.0, -2.0], [1.0, 2.0])
        return SystemSetup(
            name="example1",
            system=SystemDef(2, 1, "affine", A=[[2.0, 0.0], [0.0, 0.5]], B=[[1.0], [1.0]], name="example1"),
            U=HyperRect([-1.0], [1.0]),
            Q=q,
            Q_X=q,
            eta_s=np.array([2 / 3, 4 / 3]),
            eta_i=np.array([1.0]),
            notes="diagonal linear system on a 3x3 grid with inputs {-1, 0, 1}",
        )
    if name == "linear2d":
        qx = HyperRect([-1.2, -2.12], [1.2, 2.12])
        poly = Polytope(
            [
                [0.0261, -0.4993],
                [0.9986, 0.0523],
                [-0.0261, 0.4993],
                [-0.9986, -0.0523],
            ],
            [1.0, 1.0, 1.0, 1.0],
        )
        return SystemSetup(
            name="linear2d",
            system=SystemDef(
                2, 1, "affine",
                A=[[2.0, 0.0784], [0.0784, 0.5041]],
                B=[[0.9463], [1.051]],
                name="linear2d",
            ),
            U=HyperRect([-1.0], [1.0]),
            Q=poly,
            Q_X=qx,
            eta_s=np.array([0.04, 0.08]),
            eta_i=np.array([0.2]),
            theory=1.003,
            notes="rotated version of example1 with a polytopic invariant set",
        )
    if name == "pendulum":
        rho = float(params.pop("rho", 1.0))
        b = float(params.pop("b", 1.0))
        T_s = float(params.pop("T_s", 0.01))
        a = b * b + 1.0
        if not 0 < rho < a:
            raise ValueError("pendulum requires 0 < rho < b^2 + 1")
        L = float(params.pop("L", 2.0 * a))
        eta_nominal = float(params.pop("eta_s", 1e-6))
        _reject_extra(params)
        q = HyperRect(
            [math.atan(-b - math.sqrt(a + rho))], [math.atan(-b - math.sqrt(a - rho))]
        )
        return SystemSetup(
            name="pendulum",
            system=SystemDef(
                1, 1, "sampled-ode", rhs=_pendulum_rhs(b), T_s=T_s, L=L, name="pendulum"
            ),
            U=HyperRect([-rho], [rho]),
            Q=q,
            Q_X=q,
            eta_s=fitted_eta(q, eta_nominal),
            eta_i=np.array([0.2 * rho]),
            theory=2.0 / math.log(2.0) * math.sqrt(a - rho),
            notes="projectivized pendulum linearization; theory value is the "
            "continuous-time rate (compare bound / T_s against it)",
        )
    if name == "henon":
        eps = float(params.pop("eps", 0.08))
        eta_nominal = params.pop("eta_s", (0.009, 0.009))
        _reject_extra(params)
        r = 1.3 + math.sqrt(1.3**2 + 20.0)
        q = HyperRect([-r / 2, -r / 2], [r / 2, r / 2])
        fwd = ExprMap(["5 - 0.3*x1 - x0**2 + u0", "x0 + u1"], 2, 2)
        rev = ExprMap(["x1 - u1", "(5 - x1**2 + u0 - x0)/0.3"], 2, 2)
        return SystemSetup(
            name="henon",
            system=SystemDef(2, 2, "polynomial-map", fmap=fwd, name="henon"),
            U=HyperRect([-eps, -eps], [eps, eps]),
            Q=q,
            Q_X=q,
            eta_s=fitted_eta(q, eta_nominal),
            eta_i=np.array([0.01, 0.01]),
            reverse=SystemDef(2, 2, "polynomial-map", fmap=rev, name="henon-reversed"),
            theory=0.696,
            notes="controlled horseshoe map; run the forward/backward iteration "
            "to find an all-time controlled invariant set first",
        )
    if name == "uncertain-linear":
        q = HyperRect([-1.0, -2.0], [1.0, 2.0])
        return SystemSetup(
            name="uncertain-linear",
            system=SystemDef(
                2, 1, "affine",
                A=[[2.0, 1.0], [-0.4, 0.5]],
                B=[[1.0], [1.0]],
                W=HyperRect([-0.1, -0.1], [0.1, 0.1]),
                name="uncertain-linear",
            ),
            U=HyperRect([-1.0], [1.0]),
            Q=q,
            Q_X=q,
            eta_s=np.array([0.2, 0.2]),
            eta_i=np.array([0.05]),
            notes="linear system with additive disturbance; tau is fixed at 1",
        )
    raise ValueError(f"unknown system {name!r}; builtins: {', '.join(BUILTIN_NAMES)}")


def _reject_extra(params):
    if params:
        raise ValueError(f"unknown system parameters: {sorted(params)}")


# ---------------------------------------------------------------------------
# System setup (de)serialization for the CLI
# ---------------------------------------------------------------------------


def _box_from_pairs(pairs) -> HyperRect:
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return HyperRect(arr[:, 0], arr[:, 1])


def setup_from_dict(d: dict) -> SystemSetup:
    """Build a SystemSetup from the documented JSON schema (see README)."""
    kind = d["kind"]
    U = _box_from_pairs(d["U"])
    q_raw = d["Q"]
    if isinstance(q_raw, dict):
        Q = Polytope(q_raw["H"], q_raw["b"])
        Q_X = _box_from_pairs(d["Q_X"])
    else:
        Q = _box_from_pairs(q_raw)
        Q_X = _box_from_pairs(d.get("Q_X", q_raw))
    W = _box_from_pairs(d["W"]) if d.get("W") is not None else None
    state_dim = Q_X.dim
    input_dim = U.dim
    if kind == "affine":
        system = SystemDef(
            state_dim, input_dim, "affine", A=d["A"], B=d["B"], W=W,
            name=d.get("name", "custom"),
        )
        reverse = None
    elif kind == "polynomial-map":
        system = SystemDef(
            state_dim, input_dim, "polynomial-map",
            fmap=ExprMap(d["exprs"], state_dim, input_dim), W=W,
            name=d.get("name", "custom"),
        )
        reverse = None
        if d.get("reverse_exprs"):
            reverse = SystemDef(
                state_dim, input_dim, "polynomial-map",
                fmap=ExprMap(d["reverse_exprs"], state_dim, input_dim), W=W,
                name=d.get("name", "custom") + "-reversed",
            )
    elif kind == "sampled-ode":
        rhs_map = ExprMap(d["rhs"], state_dim, input_dim)
        system = SystemDef(
            state_dim, input_dim, "sampled-ode",
            rhs=rhs_map.eval_points, T_s=float(d["T_s"]), L=float(d["L"]), W=W,
            name=d.get("name", "custom"),
        )
        reverse = None
    else:
        raise ValueError(f"unknown system kind {kind!r}")
    eta_s = np.asarray(d["eta_s"], dtype=float)
    if d.get("fit_eta", False):
        eta_s = fitted_eta(Q_X, eta_s)
    return SystemSetup(
        name=d.get("name", "custom"),
        system=system,
        U=U,
        Q=Q,
        Q_X=Q_X,
        eta_s=eta_s,
        eta_i=np.asarray(d["eta_i"], dtype=float),
        tau=int(d.get("tau", 1)),
        reverse=reverse,
        theory=d.get("theory"),
    )


def state_grid(setup: SystemSetup) -> UniformGrid:
    return UniformGrid(setup.Q_X, setup.eta_s)


def input_grid(setup: SystemSetup) -> UniformGrid:
    return UniformGrid(setup.U, setup.eta_i)
