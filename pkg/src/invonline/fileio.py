"""Plain-text problem files and the big-M MIQP export.

Config format: one `key = value` statement per line, `#` starts a comment,
values are JSON literals (numbers, strings, or nested row-major arrays for
vectors/matrices).  A statement may span lines until its brackets balance.
Two kinds of files are understood:

    kind = "qp"        a fully numeric QP (keys Q, c, A_ineq, b_ineq, A_eq, b_eq)
    kind = "param_qp"  a parameterized problem (keys n, p, m, Q, c0, C_theta,
                       C_u, A_ineq, b0_ineq, B_theta, B_u, A_eq, b0_eq,
                       E_theta, E_u, A_ineq_u, box_lo, box_hi, signals)

Unspecified blocks default to zero; `box_lo`/`box_hi` and `signals` are
optional extras used by the CLI.
"""

from __future__ import annotations

import json

import numpy as np

from .model import ConcreteQP, ModelError, Observation, ParameterBox, ParamQP


class ConfigError(ValueError):
    """Malformed problem file."""


_PARAM_KEYS = ("n", "p", "m", "Q", "c0", "C_theta", "C_u", "A_ineq", "b0_ineq",
               "B_theta", "B_u", "A_eq", "b0_eq", "E_theta", "E_u", "A_ineq_u")
_QP_KEYS = ("Q", "c", "A_ineq", "b_ineq", "A_eq", "b_eq")


def _strip_comment(line: str) -> str:
    # '#' never appears inside JSON numeric arrays or the keys we accept,
    # except within quoted strings; handle that one case
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_config(text: str) -> dict:
    """Parse `key = JSON` statements (multi-line values by bracket balance)."""
    result = {}
    pending_key = None
    pending_val = []
    depth = 0
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line and pending_key is None:
            continue
        if pending_key is None:
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            if not key.isidentifier():
                raise ConfigError(f"line {ln}: invalid key {key!r}")
            if key in result:
                raise ConfigError(f"line {ln}: duplicate key {key!r}")
            pending_key = key
            pending_val = [val.strip()]
            depth = val.count("[") - val.count("]")
        else:
            pending_val.append(line)
            depth += line.count("[") - line.count("]")
        if depth == 0:
            joined = " ".join(pending_val)
            try:
                result[pending_key] = json.loads(joined)
            except json.JSONDecodeError as e:
                raise ConfigError(f"value for {pending_key!r}: {e}") from e
            pending_key = None
        elif depth < 0:
            raise ConfigError(f"line {ln}: unbalanced brackets")
    if pending_key is not None:
        raise ConfigError(f"unterminated value for {pending_key!r}")
    return result


def load_config(path) -> dict:
    with open(path, "r") as f:
        return parse_config(f.read())


def _arr(cfg, key):
    v = cfg.get(key)
    return None if v is None else np.asarray(v, dtype=float)


def problem_from_config(cfg: dict):
    """Build (ParamQP, ParameterBox | None, extras) from a parsed config."""
    if cfg.get("kind", "param_qp") != "param_qp":
        raise ConfigError(f"expected kind 'param_qp', got {cfg.get('kind')!r}")
    for key in ("n", "p", "m"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    try:
        prob = ParamQP(n=int(cfg["n"]), p=int(cfg["p"]), m=int(cfg["m"]),
                       Q=_arr(cfg, "Q"), c0=_arr(cfg, "c0"),
                       C_theta=_arr(cfg, "C_theta"), C_u=_arr(cfg, "C_u"),
                       A_ineq=_arr(cfg, "A_ineq"), b0_ineq=_arr(cfg, "b0_ineq"),
                       B_theta=_arr(cfg, "B_theta"), B_u=_arr(cfg, "B_u"),
                       A_eq=_arr(cfg, "A_eq"), b0_eq=_arr(cfg, "b0_eq"),
                       E_theta=_arr(cfg, "E_theta"), E_u=_arr(cfg, "E_u"),
                       A_ineq_u=_arr(cfg, "A_ineq_u"))
    except ModelError as e:
        raise ConfigError(str(e)) from e
    box = None
    if "box_lo" in cfg or "box_hi" in cfg:
        if not ("box_lo" in cfg and "box_hi" in cfg):
            raise ConfigError("box_lo and box_hi must be given together")
        try:
            box = ParameterBox(_arr(cfg, "box_lo"), _arr(cfg, "box_hi"))
        except ModelError as e:
            raise ConfigError(str(e)) from e
        if box.p != prob.p:
            raise ConfigError(f"box dimension {box.p} != p = {prob.p}")
    extras = {k: v for k, v in cfg.items()
              if k not in _PARAM_KEYS + ("kind", "box_lo", "box_hi")}
    return prob, box, extras


def qp_from_config(cfg: dict) -> ConcreteQP:
    if cfg.get("kind", "qp") != "qp":
        raise ConfigError(f"expected kind 'qp', got {cfg.get('kind')!r}")
    Q = _arr(cfg, "Q")
    if Q is None:
        raise ConfigError("missing required key 'Q'")
    Q = np.atleast_2d(Q)
    n = Q.shape[0]
    c = _arr(cfg, "c")
    A = _arr(cfg, "A_ineq")
    b = _arr(cfg, "b_ineq")
    Ae = _arr(cfg, "A_eq")
    be = _arr(cfg, "b_eq")
    A = np.zeros((0, n)) if A is None else np.atleast_2d(A)
    b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(b)
    Ae = np.zeros((0, n)) if Ae is None else np.atleast_2d(Ae)
    be = np.zeros(Ae.shape[0]) if be is None else np.atleast_1d(be)
    c = np.zeros(n) if c is None else np.atleast_1d(c)
    if c.shape != (n,) or A.shape[1:] != (n,) or b.shape != (A.shape[0],) \
            or Ae.shape[1:] != (n,) or be.shape != (Ae.shape[0],):
        raise ConfigError("inconsistent QP dimensions")
    return ConcreteQP(Q=Q, c=c, A_ineq=A, b_ineq=b, A_eq=Ae, b_eq=be)


def load_problem(path):
    return problem_from_config(load_config(path))


def load_qp(path) -> ConcreteQP:
    return qp_from_config(load_config(path))


def _fmt_array(a) -> str:
    return json.dumps(np.asarray(a, dtype=float).tolist())


def save_problem(problem: ParamQP, path, box: ParameterBox | None = None,
                 extras: dict | None = None):
    """Write a param_qp config that round-trips through load_problem."""
    lines = ['kind = "param_qp"',
             f"n = {problem.n}", f"p = {problem.p}", f"m = {problem.m}"]
    for key in ("Q", "c0", "C_theta", "C_u", "A_ineq", "b0_ineq", "B_theta",
                "B_u", "A_eq", "b0_eq", "E_theta", "E_u", "A_ineq_u"):
        val = getattr(problem, key)
        if val is not None and np.any(val):
            lines.append(f"{key} = {_fmt_array(val)}")
    if box is not None:
        lines.append(f"box_lo = {_fmt_array(box.lo)}")
        lines.append(f"box_hi = {_fmt_array(box.hi)}")
    for k, v in (extras or {}).items():
        lines.append(f"{k} = {json.dumps(v)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def save_qp(qp: ConcreteQP, path):
    lines = ['kind = "qp"', f"Q = {_fmt_array(qp.Q)}", f"c = {_fmt_array(qp.c)}"]
    if qp.q:
        lines.append(f"A_ineq = {_fmt_array(qp.A_ineq)}")
        lines.append(f"b_ineq = {_fmt_array(qp.b_ineq)}")
    if qp.r:
        lines.append(f"A_eq = {_fmt_array(qp.A_eq)}")
        lines.append(f"b_eq = {_fmt_array(qp.b_eq)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# big-M MIQP export

def export_bigm_mip(problem: ParamQP, box: ParameterBox, theta_t, eta_t,
                    obs: Observation, big_m: float, path):
    """Write the implicit update as a big-M MIQP in CPLEX LP file format.

    Single-level form over theta, x, duals (mu, nu) and binaries z:

        min  0.5||theta - theta_t||^2 + eta ||y - x||^2   (constant terms dropped)
        s.t. stationarity,  primal feasibility,  0 <= mu_i <= M z_i,
             slack_i <= M (1 - z_i),  theta in box.

    The caller supplies M explicitly; too small an M cuts off optima, which
    is exactly the hazard the in-repo branch-and-bound avoids.  Intended for
    cross-checking single updates against external MIP solvers.
    """
    theta_t = np.asarray(theta_t, dtype=float)
    if big_m <= 0:
        raise ValueError("big_m must be positive")
    if eta_t <= 0:
        raise ValueError("eta_t must be positive")
    p, n, q, r = problem.p, problem.n, problem.q, problem.r
    u, y = obs.u, obs.y
    A = problem.ineq_matrix(u)
    b_const = problem.b0_ineq + problem.B_u @ u
    c_const = problem.c0 + problem.C_u @ u
    beq_const = problem.b0_eq + problem.E_u @ u

    tv = [f"th{i}" for i in range(p)]
    xv = [f"x{i}" for i in range(n)]
    mv = [f"mu{i}" for i in range(q)]
    nv = [f"nu{i}" for i in range(r)]
    zv = [f"z{i}" for i in range(q)]

    def _r(v):
        return repr(float(v))

    def term(coef, var):
        return f"{'+' if coef >= 0 else '-'} {_r(abs(coef))} {var}"

    def lin(coefs, names):
        return " ".join(term(c, v) for c, v in zip(coefs, names) if c != 0.0)

    out = ["\\ big-M single-level implicit update (constant objective terms dropped)",
           f"\\ eta = {_r(eta_t)}, M = {_r(big_m)}",
           "Minimize", " obj: " +
           (lin(-theta_t, tv) + " " if p else "") + lin(-2.0 * eta_t * y, xv) +
           " + [ " +
           " ".join(f"+ {_r(1.0)} {v} ^2" for v in tv) +
           " " + " ".join(f"+ {_r(2.0 * eta_t)} {v} ^2" for v in xv) +
           " ] / 2",
           "Subject To"]
    # stationarity: C_theta th + Q x - A' mu - A_eq' nu = -c_const
    for i in range(n):
        parts = []
        if p:
            parts.append(lin(problem.C_theta[i], tv))
        parts.append(lin(problem.Q[i], xv))
        if q:
            parts.append(lin(-A[:, i], mv))
        if r:
            parts.append(lin(-problem.A_eq[:, i], nv))
        body = " ".join(x for x in parts if x) or f"+ 0 {xv[i]}"
        out.append(f" stat{i}: {body} = {_r(-c_const[i])}")
    # primal inequalities: A x - B_theta th >= b_const
    for i in range(q):
        body = lin(A[i], xv)
        if p:
            bt = lin(-problem.B_theta[i], tv)
            body = " ".join(x for x in (body, bt) if x)
        out.append(f" ineq{i}: {body} >= {_r(b_const[i])}")
    # primal equalities: A_eq x - E_theta th = beq_const
    for i in range(r):
        body = lin(problem.A_eq[i], xv)
        if p:
            et = lin(-problem.E_theta[i], tv)
            body = " ".join(x for x in (body, et) if x)
        out.append(f" eq{i}: {body} = {_r(beq_const[i])}")
    # complementarity big-M pairs
    for i in range(q):
        out.append(f" muub{i}: + {_r(1.0)} {mv[i]} - {_r(big_m)} {zv[i]} <= 0")
        body = lin(A[i], xv)
        if p:
            bt = lin(-problem.B_theta[i], tv)
            body = " ".join(x for x in (body, bt) if x)
        out.append(f" slkub{i}: {body} + {_r(big_m)} {zv[i]} <= "
                   f"{_r(b_const[i] + big_m)}")
    out.append("Bounds")
    for i in range(p):
        out.append(f" {_r(box.lo[i])} <= {tv[i]} <= {_r(box.hi[i])}")
    for v in xv:
        out.append(f" -inf <= {v} <= +inf")
    for v in nv:
        out.append(f" -inf <= {v} <= +inf")
    # mu defaults to >= 0 in LP format
    if q:
        out.append("Binaries")
        out.append(" " + " ".join(zv))
    out.append("End")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")
