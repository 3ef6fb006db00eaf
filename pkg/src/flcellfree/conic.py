"""Embedded second-order cone programming backend.

Programs are expressed as named variables plus row groups of four kinds
(linear equality, linear inequality, second-order cone, rotated second-order
cone) and solved by a primal-dual interior-point method with Nesterov-Todd
scaling and a Mehrotra predictor-corrector, using dense normal-equation
linear algebra.  Problem sizes here stay in the low thousands of variables,
so no sparsity is exploited beyond the constraint matrices themselves.

Internal standard form:

    minimize    c' x
    subject to  A x = b,   G x + s = h,   s in K,

where K is a product of a nonnegative orthant and second-order cones
{(t, u): ||u|| <= t}.  A rotated-cone row group {(p, q, u): 2 p q >= ||u||^2,
p, q >= 0} is mapped onto a plain second-order cone by the orthogonal
transform ((p+q)/sqrt2, (p-q)/sqrt2, u) before solving, and its dual is
mapped back through the same transform.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

EQ = "eq"
INEQ = "ineq"
SOC = "soc"
RSOC = "rsoc"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_LIMIT = "numerical_limit"

# Contract tolerances for claiming optimality: absolute per-row primal
# residual and relative duality gap.
FEAS_ABS_CONTRACT = 1e-8
RELGAP_CONTRACT = 1e-8


@dataclass
class RowGroup:
    """A block of rows sharing one constraint kind and provenance tag.

    Semantics of (kind, A, b) with s := b - A x:
      eq:   s = 0 rowwise
      ineq: s >= 0 rowwise (i.e. A x <= b)
      soc:  s, split into cones of sizes ``dims``, each with head first:
            ||s[1:]|| <= s[0]
      rsoc: each cone (s0, s1, s2...) with 2 s0 s1 >= ||s2:||^2, s0, s1 >= 0
    """

    kind: str
    A: sp.csr_matrix
    b: np.ndarray
    tag: str
    dims: Tuple[int, ...] = ()

    def n_rows(self) -> int:
        return self.A.shape[0]


@dataclass
class ConicProgram:
    n: int
    c: np.ndarray
    variables: Dict[str, slice]
    groups: List[RowGroup]
    # optional diagonal variable scaling already folded into c and the rows;
    # physical values are x * col_scale
    col_scale: Optional[np.ndarray] = None

    def validate(self) -> None:
        if self.c.shape != (self.n,):
            raise ValueError("objective length does not match variable count")
        for g in self.groups:
            if g.A.shape[1] != self.n:
                raise ValueError(f"row group {g.tag!r} has wrong width")
            if g.b.shape != (g.A.shape[0],):
                raise ValueError(f"row group {g.tag!r} has mismatched rhs")
            if not g.tag:
                raise ValueError("every row group needs a provenance tag")
            if g.kind in (SOC, RSOC):
                if sum(g.dims) != g.A.shape[0]:
                    raise ValueError(f"cone dims of {g.tag!r} do not add up")
                min_dim = 2 if g.kind == SOC else 3
                if any(d < min_dim for d in g.dims):
                    raise ValueError(f"cone in {g.tag!r} below minimal dimension")
            elif g.kind not in (EQ, INEQ):
                raise ValueError(f"unknown row kind {g.kind!r}")

    def var(self, name: str) -> slice:
        return self.variables[name]

    def to_benchmark_text(self) -> str:
        """Dump in conic-benchmark text form (CBF 1.0 subset) for external tools."""
        out = io.StringIO()
        out.write("VER\n1\n\nOBJSENSE\nMIN\n\n")
        out.write(f"VAR\n{self.n} 1\nF {self.n}\n\n")
        cones = []      # (name, size)
        a_coord = []    # (row, col, val) of the CBF constraint matrix
        b_coord = []    # (row, val)
        row0 = 0
        for g in self.groups:
            A = g.A.tocoo()
            # CBF states rows as  sum_j a_ij x_j + b_i  in cone, so emit -A, +b
            for r, cc, v in zip(A.row, A.col, A.data):
                a_coord.append((row0 + r, cc, -v))
            for r, v in enumerate(g.b):
                if v != 0.0:
                    b_coord.append((row0 + r, v))
            if g.kind == EQ:
                cones.append(("L=", g.n_rows()))
            elif g.kind == INEQ:
                cones.append(("L+", g.n_rows()))
            else:
                name = "Q" if g.kind == SOC else "QR"
                cones.extend((name, d) for d in g.dims)
            row0 += g.n_rows()
        out.write(f"CON\n{row0} {len(cones)}\n")
        for name, size in cones:
            out.write(f"{name} {size}\n")
        out.write("\nOBJACOORD\n")
        nz = np.flatnonzero(self.c)
        out.write(f"{len(nz)}\n")
        for j in nz:
            out.write(f"{j} {float(self.c[j])!r}\n")
        out.write(f"\nACOORD\n{len(a_coord)}\n")
        for r, cc, v in a_coord:
            out.write(f"{r} {cc} {float(v)!r}\n")
        out.write(f"\nBCOORD\n{len(b_coord)}\n")
        for r, v in b_coord:
            out.write(f"{r} {float(v)!r}\n")
        return out.getvalue()


@dataclass
class ConicSolution:
    x: np.ndarray
    duals: List[np.ndarray]         # aligned with ConicProgram.groups
    status: str
    gap: float                      # absolute duality gap s'z
    rel_gap: float
    iters: int
    pobj: float
    dobj: float
    pres: float                     # max absolute row residual
    dres: float                     # scaled dual residual


@dataclass
class SolverOptions:
    feastol: float = 1e-9
    reltol: float = 1e-9
    maxiter: int = 200
    step_frac: float = 0.99
    reg: float = 1e-9     # absolute static regularization, undone by refinement
    refine: int = 4       # max iterative-refinement rounds per linear solve
    init: str = "unit"    # "unit" or "ls" starting point
    verbose: bool = False


class ProgramBuilder:
    """Incremental construction of a ConicProgram with named variables."""

    def __init__(self):
        self._names: Dict[str, slice] = {}
        self._n = 0
        self._cost: List[Tuple[int, float]] = []
        self._groups: List[RowGroup] = []

    def add_var(self, name: str, size: int) -> np.ndarray:
        if name in self._names:
            raise ValueError(f"duplicate variable {name!r}")
        sl = slice(self._n, self._n + size)
        self._names[name] = sl
        self._n += size
        return np.arange(sl.start, sl.stop)

    def set_cost(self, idx, coef) -> None:
        for i, v in zip(np.atleast_1d(idx), np.broadcast_to(coef, np.shape(idx) or (1,))):
            self._cost.append((int(i), float(v)))

    def add_group(self, kind, rows_ij, rows_val, b, tag, dims=(), n_rows=None):
        """rows_ij: (row_idx, col_idx) arrays; rows_val: coefficients."""
        if n_rows is None:
            n_rows = len(b)
        A = sp.csr_matrix(
            (np.asarray(rows_val, float),
             (np.asarray(rows_ij[0], int), np.asarray(rows_ij[1], int))),
            shape=(n_rows, self._n),
        )
        self._groups.append(RowGroup(kind, A, np.asarray(b, float), tag, tuple(dims)))

    def build(self) -> ConicProgram:
        c = np.zeros(self._n)
        for i, v in self._cost:
            c[i] += v
        # pad widths: groups were created while variables kept being added
        groups = []
        for g in self._groups:
            A = g.A
            if A.shape[1] != self._n:
                A = sp.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], self._n))
            groups.append(RowGroup(g.kind, A, g.b, g.tag, g.dims))
        prog = ConicProgram(n=self._n, c=c, variables=dict(self._names), groups=groups)
        prog.validate()
        return prog


# ---------------------------------------------------------------------------
# standard-form conversion
# ---------------------------------------------------------------------------

def _rsoc_to_soc(A: sp.csr_matrix, b: np.ndarray, dims) -> Tuple[sp.csr_matrix, np.ndarray]:
    T = _rsoc_transform(dims)
    return (T @ A).tocsr(), T @ b


def _rsoc_transform(dims) -> sp.csr_matrix:
    """Blockwise orthogonal map sending each rotated cone onto a plain one."""
    r = 1.0 / np.sqrt(2.0)
    rows, cols, vals = [], [], []
    off = 0
    for d in dims:
        rows += [off, off, off + 1, off + 1]
        cols += [off, off + 1, off, off + 1]
        vals += [r, r, r, -r]
        for j in range(2, d):
            rows.append(off + j)
            cols.append(off + j)
            vals.append(1.0)
        off += d
    return sp.csr_matrix((vals, (rows, cols)), shape=(off, off))


@dataclass
class _StdForm:
    c: np.ndarray
    A: Optional[sp.csr_matrix]
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    dim_lp: int
    soc_batches: List[Tuple[int, int, int]]   # (row offset, n_cones, cone dim)
    group_rows: List[Tuple[str, np.ndarray]]  # per group: (kind, std row indices)


def _standardize(prog: ConicProgram) -> _StdForm:
    eq_A, eq_b = [], []
    lp_A, lp_b, lp_src = [], [], []
    soc_parts = []   # (dim, A, b, group_index, order_in_group)
    group_rows: List[Tuple[str, np.ndarray]] = [(g.kind, None) for g in prog.groups]

    for gi, g in enumerate(prog.groups):
        if g.kind == EQ:
            eq_A.append(g.A)
            eq_b.append(g.b)
            group_rows[gi] = (EQ, ("eq", len(eq_b) - 1))
        elif g.kind == INEQ:
            lp_A.append(g.A)
            lp_b.append(g.b)
            lp_src.append(gi)
        else:
            A, b = (g.A, g.b) if g.kind == SOC else _rsoc_to_soc(g.A, g.b, g.dims)
            off = 0
            for ci, d in enumerate(g.dims):
                soc_parts.append((d, A[off:off + d], b[off:off + d], gi, ci))
                off += d

    n = prog.n
    A_eq = sp.vstack(eq_A).tocsr() if eq_A else None
    b_eq = np.concatenate(eq_b) if eq_b else np.zeros(0)

    blocks, hs = [], []
    lp_rows_per_group = {}
    row0 = 0
    if lp_A:
        stacked = sp.vstack(lp_A).tocsr()
        blocks.append(stacked)
        hs.append(np.concatenate(lp_b))
        r = 0
        for gi, Ab in zip(lp_src, lp_A):
            lp_rows_per_group[gi] = np.arange(r, r + Ab.shape[0])
            r += Ab.shape[0]
        row0 = r
    dim_lp = row0

    # batch equal-dimension cones so scaling math vectorizes
    soc_batches = []
    cone_row_of = {}
    by_dim: Dict[int, list] = {}
    for part in soc_parts:
        by_dim.setdefault(part[0], []).append(part)
    for d in sorted(by_dim):
        parts = by_dim[d]
        soc_batches.append((row0, len(parts), d))
        for (dd, Ab, bb, gi, ci) in parts:
            blocks.append(Ab)
            hs.append(bb)
            cone_row_of[(gi, ci)] = row0
            row0 += dd

    if blocks:
        G = sp.vstack(blocks).tocsr()
        h = np.concatenate(hs)
    else:
        G = sp.csr_matrix((0, n))
        h = np.zeros(0)

    for gi, g in enumerate(prog.groups):
        if g.kind == INEQ:
            group_rows[gi] = (INEQ, lp_rows_per_group[gi])
        elif g.kind in (SOC, RSOC):
            idx = np.concatenate([
                np.arange(cone_row_of[(gi, ci)], cone_row_of[(gi, ci)] + d)
                for ci, d in enumerate(g.dims)
            ])
            group_rows[gi] = (g.kind, idx)

    return _StdForm(prog.c.astype(float), A_eq, b_eq, G, h, dim_lp, soc_batches, group_rows)


def _equilibrate(std: _StdForm, iters: int = 10):
    """Cone-aware Ruiz equilibration of the standard form.

    Rows belonging to one second-order cone share a single scale factor so
    the cone is preserved; returns (scaled std, D, E, F) with
    G_scaled = diag(E) G diag(D) and likewise for A rows (F).
    """
    G = std.G.tocsr(copy=True)
    A = std.A.tocsr(copy=True) if std.A is not None else None
    m, n = G.shape
    p = A.shape[0] if A is not None else 0
    D = np.ones(n)
    E = np.ones(m)
    F = np.ones(p)
    cone_slices = [(off, off + nc * d, d) for (off, nc, d) in std.soc_batches]

    for _ in range(iters):
        Gabs = abs(G)
        col_max = np.asarray(Gabs.max(axis=0).todense()).ravel()
        if A is not None:
            col_max = np.maximum(col_max, np.asarray(abs(A).max(axis=0).todense()).ravel())
        d = 1.0 / np.sqrt(np.where(col_max > 0, col_max, 1.0))
        row_max = np.asarray(Gabs.max(axis=1).todense()).ravel()
        e = 1.0 / np.sqrt(np.where(row_max > 0, row_max, 1.0))
        for (lo, hi, dim) in cone_slices:
            blk = row_max[lo:hi].reshape(-1, dim).max(axis=1)
            e[lo:hi] = np.repeat(1.0 / np.sqrt(np.where(blk > 0, blk, 1.0)), dim)
        G = sp.csr_matrix(sp.diags(e) @ G @ sp.diags(d))
        D *= d
        E *= e
        if A is not None:
            arow = np.asarray(abs(A).max(axis=1).todense()).ravel()
            fscale = 1.0 / np.sqrt(np.where(arow > 0, arow, 1.0))
            A = sp.csr_matrix(sp.diags(fscale) @ A @ sp.diags(d))
            F *= fscale

    scaled = _StdForm(
        c=std.c * D, A=A, b=std.b * F, G=G, h=std.h * E,
        dim_lp=std.dim_lp, soc_batches=std.soc_batches, group_rows=std.group_rows,
    )
    return scaled, D, E, F


# ---------------------------------------------------------------------------
# cone algebra, vectorized over batches of equal-dimension cones
# ---------------------------------------------------------------------------

class _Scaling:
    """Nesterov-Todd scaling state for the composite cone.

    For each second-order cone the scaling matrix is W = eta (2 q q' - J)
    where q is the Jordan square root of the normalized NT point wbar
    (q o q = wbar, q'Jq = 1) and eta = (s'Js / z'Jz)^(1/4) squared, i.e.
    eta^2 = sqrt(s'Js / z'Jz).  This gives W^2 z = s and hence
    W z = W^-1 s = lambda.
    """

    def __init__(self, std: _StdForm, s: np.ndarray, z: np.ndarray):
        l = std.dim_lp
        self.std = std
        self.w_lp = np.sqrt(s[:l] / z[:l])
        self.lam = np.empty_like(s)
        self.lam[:l] = np.sqrt(s[:l] * z[:l])
        self.batch = []
        for (off, nc, d) in std.soc_batches:
            sb = s[off:off + nc * d].reshape(nc, d)
            zb = z[off:off + nc * d].reshape(nc, d)
            rs = np.sqrt(_jdot(sb, sb))
            rz = np.sqrt(_jdot(zb, zb))
            s_n = sb / rs[:, None]
            z_n = zb / rz[:, None]
            gamma = np.sqrt((1.0 + _dot(s_n, z_n)) / 2.0)
            wbar = (s_n + _jmul(z_n)) / (2.0 * gamma[:, None])
            q = wbar.copy()
            q[:, 0] += 1.0
            q /= np.sqrt(2.0 * q[:, :1])
            eta = np.sqrt(rs / rz)
            self.batch.append((off, nc, d, q, wbar, eta))
            lam = eta[:, None] * (2.0 * q * _dot(q, zb)[:, None] - _jmul(zb))
            self.lam[off:off + nc * d] = lam.ravel()

    def apply(self, v: np.ndarray, inv: bool = False) -> np.ndarray:
        """W v (or W^-1 v); W is symmetric."""
        out = np.empty_like(v)
        l = self.std.dim_lp
        out[:l] = v[:l] / self.w_lp if inv else v[:l] * self.w_lp
        for (off, nc, d, q, wbar, eta) in self.batch:
            vb = v[off:off + nc * d].reshape(nc, d)
            if inv:
                u = _jmul(q)
                r = (2.0 * u * _dot(u, vb)[:, None] - _jmul(vb)) / eta[:, None]
            else:
                r = eta[:, None] * (2.0 * q * _dot(q, vb)[:, None] - _jmul(vb))
            out[off:off + nc * d] = r.ravel()
        return out

    def apply_inv2(self, v: np.ndarray) -> np.ndarray:
        """W^-2 v in one pass (W^-2 = eta^-2 (2 u u' - J) with u = J wbar)."""
        out = np.empty_like(v)
        l = self.std.dim_lp
        out[:l] = v[:l] / self.w_lp**2
        for (off, nc, d, q, wbar, eta) in self.batch:
            vb = v[off:off + nc * d].reshape(nc, d)
            u = _jmul(wbar)
            r = (2.0 * u * _dot(u, vb)[:, None] - _jmul(vb)) / (eta * eta)[:, None]
            out[off:off + nc * d] = r.ravel()
        return out


def _dot(a, b):
    return (a * b).sum(axis=1)


def _jdot(a, b):
    return a[:, 0] * b[:, 0] - (a[:, 1:] * b[:, 1:]).sum(axis=1)


def _jmul(a):
    out = a.copy()
    out[:, 1:] *= -1.0
    return out


def _jordan_prod(std: _StdForm, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    l = std.dim_lp
    out[:l] = u[:l] * v[:l]
    for (off, nc, d) in std.soc_batches:
        ub = u[off:off + nc * d].reshape(nc, d)
        vb = v[off:off + nc * d].reshape(nc, d)
        r = np.empty_like(ub)
        r[:, 0] = _dot(ub, vb)
        r[:, 1:] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        out[off:off + nc * d] = r.ravel()
    return out


def _jordan_div(std: _StdForm, lam: np.ndarray, d_: np.ndarray) -> np.ndarray:
    """Solve lam o x = d_ for x."""
    out = np.empty_like(d_)
    l = std.dim_lp
    out[:l] = d_[:l] / lam[:l]
    for (off, nc, dim) in std.soc_batches:
        lb = lam[off:off + nc * dim].reshape(nc, dim)
        db = d_[off:off + nc * dim].reshape(nc, dim)
        a = lb[:, 0]
        det = a * a - (lb[:, 1:] ** 2).sum(axis=1)
        x0 = (a * db[:, 0] - (lb[:, 1:] * db[:, 1:]).sum(axis=1)) / det
        xt = (db[:, 1:] - x0[:, None] * lb[:, 1:]) / a[:, None]
        out[off:off + nc * dim] = np.concatenate([x0[:, None], xt], axis=1).ravel()
    return out


def _cone_identity(std: _StdForm, m: int) -> np.ndarray:
    e = np.zeros(m)
    e[:std.dim_lp] = 1.0
    for (off, nc, d) in std.soc_batches:
        e[off:off + nc * d:d] = 1.0
    return e


def _min_margin(std: _StdForm, v: np.ndarray) -> float:
    """Distance of v from the cone boundary (negative when outside)."""
    parts = []
    if std.dim_lp:
        parts.append(v[:std.dim_lp].min())
    for (off, nc, d) in std.soc_batches:
        vb = v[off:off + nc * d].reshape(nc, d)
        parts.append((vb[:, 0] - np.linalg.norm(vb[:, 1:], axis=1)).min())
    return min(parts) if parts else np.inf


def _max_step(std: _StdForm, p: np.ndarray, dp: np.ndarray) -> float:
    """sup {alpha >= 0 : p + alpha dp in K} for p in int K."""
    alpha = np.inf
    l = std.dim_lp
    if l:
        neg = dp[:l] < 0
        if neg.any():
            alpha = min(alpha, float((-p[:l][neg] / dp[:l][neg]).min()))
    for (off, nc, d) in std.soc_batches:
        pb = p[off:off + nc * d].reshape(nc, d)
        db = dp[off:off + nc * d].reshape(nc, d)
        # first root of f(t) = <p+t*d, J(p+t*d)>, f(0) > 0 for interior p;
        # the head cannot cross zero before f does, so f alone decides
        a = _jdot(db, db)
        bq = 2.0 * _jdot(pb, db)
        cq = _jdot(pb, pb)
        disc = bq * bq - 4.0 * a * cq
        with np.errstate(invalid="ignore", divide="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            quad_root = (-bq - sq) / (2.0 * a)
            lin_root = -cq / bq
        hits = np.full(nc, np.inf)
        quad = (a < 0.0) | ((a > 0.0) & (bq < 0.0) & (disc >= 0.0))
        hits[quad] = quad_root[quad]
        lin = (a == 0.0) & (bq < 0.0)
        hits[lin] = lin_root[lin]
        hits[hits <= 0.0] = np.inf
        alpha = min(alpha, float(hits.min()))
    return alpha


# ---------------------------------------------------------------------------
# KKT system
# ---------------------------------------------------------------------------

class _KKT:
    """Factorization of [[G' W^-2 G + reg, A'], [A, -reg]] with refinement.

    For a second-order cone, W^-2 = eta^-2 (2 u u' - J) with u = J wbar, so
    G' W^-2 G = eta^-2 (G'G - 2 g0 g0' + 2 a a') where g0 is the cone's head
    row and a = G'u: one constant sparse part plus two rank-one corrections.
    """

    def __init__(self, std: _StdForm, opts: SolverOptions):
        self.std = std
        self.opts = opts
        self.n = std.G.shape[1]
        self.p = std.A.shape[0] if std.A is not None else 0
        self.GT = std.G.T.tocsr()
        G = std.G.tocsr()
        self._row_of_nnz = np.repeat(np.arange(G.shape[0]), np.diff(G.indptr))
        self.G = G
        # constant structure of the per-cone rank-one corrections
        lp = std.dim_lp
        n_cones = sum(nc for (_o, nc, _d) in std.soc_batches)
        self._socs = n_cones > 0
        self._n_cones = n_cones
        if self._socs:
            m_soc = G.shape[0] - lp
            self.G_soc = G[lp:].tocsr()
            self._soc_row_of_nnz = np.repeat(
                np.arange(m_soc), np.diff(self.G_soc.indptr))
            # summing matrix: row k sums the rows of cone k
            cols = np.arange(m_soc)
            rows = np.concatenate([
                np.repeat(np.arange(nc), d) + sum(
                    b[1] for b in std.soc_batches[:bi])
                for bi, (off, nc, d) in enumerate(std.soc_batches)
            ])
            self._sum_cones = sp.csr_matrix(
                (np.ones(m_soc), (rows, cols)), shape=(n_cones, m_soc))
            heads = []
            off0 = 0
            for (off, nc, d) in std.soc_batches:
                heads.append(off0 + np.arange(nc) * d)
                off0 += nc * d
            head_T = self.G_soc[np.concatenate(heads)].T
            self._head_T = np.asarray(head_T.todense())   # (n, n_cones)
        self._fact = None
        self._M = None

    def factor(self, scal: Optional[_Scaling]) -> None:
        std = self.std
        m = std.G.shape[0]
        lp = std.dim_lp
        # row weights 1/w for the LP block and 1/eta per cone row
        row_scale = np.ones(m)
        if scal is not None:
            row_scale[:lp] = 1.0 / scal.w_lp
            for (off, nc, d, q, wbar, eta) in scal.batch:
                row_scale[off:off + nc * d] = np.repeat(1.0 / eta, d)
        Gs = sp.csr_matrix(
            (self.G.data * row_scale[self._row_of_nnz], self.G.indices,
             self.G.indptr), shape=self.G.shape)
        H = (Gs.T @ Gs).toarray()

        if scal is not None and self._socs:
            # a_k = G_k' u_k / eta_k via one row scaling + cone-summing matrix
            uvals = np.empty(m - lp)
            inv_eta = np.empty(self._n_cones)
            col = 0
            for (off, nc, d, q, wbar, eta) in scal.batch:
                uvals[off - lp:off - lp + nc * d] = \
                    (_jmul(wbar) / eta[:, None]).ravel()
                inv_eta[col:col + nc] = 1.0 / eta
                col += nc
            Gu = sp.csr_matrix(
                (self.G_soc.data * uvals[self._soc_row_of_nnz],
                 self.G_soc.indices, self.G_soc.indptr), shape=self.G_soc.shape)
            A = np.asarray((self._sum_cones @ Gu).todense()).T   # (n, n_cones)
            B = self._head_T * inv_eta[None, :]
            # rank-one corrections via syrk on the lower triangle (half flops)
            Hl = sla.blas.dsyrk(2.0, A, trans=0, lower=1)
            Hl = sla.blas.dsyrk(-2.0, B, beta=1.0, c=Hl, trans=0, lower=1,
                                overwrite_c=1)
            H += Hl
            Hl[np.diag_indices_from(Hl)] = 0.0
            H += Hl.T

        reg = self.opts.reg
        for attempt in range(4):
            Hr = H if attempt == 0 else H.copy()
            Hr[np.diag_indices_from(Hr)] += reg
            try:
                if self.p == 0:
                    self._fact = ("chol",
                                  sla.cho_factor(Hr, lower=True, check_finite=False))
                    self._M = Hr
                else:
                    A = self.std.A.toarray()
                    M = np.zeros((self.n + self.p, self.n + self.p))
                    M[:self.n, :self.n] = Hr
                    M[:self.n, self.n:] = A.T
                    M[self.n:, :self.n] = A
                    M[self.n:, self.n:] = -reg * np.eye(self.p)
                    self._fact = ("lu", sla.lu_factor(M, check_finite=False))
                    self._M = M
                return
            except (sla.LinAlgError, ValueError):
                reg = max(reg, 1e-12) * 1e3
        raise sla.LinAlgError("KKT factorization failed")

    def _raw_solve(self, rhs):
        kind, fact = self._fact
        if kind == "chol":
            return sla.cho_solve(fact, rhs, check_finite=False)
        return sla.lu_solve(fact, rhs, check_finite=False)

    def solve(self, rhs_x: np.ndarray, rhs_y: np.ndarray):
        rhs = np.concatenate([rhs_x, rhs_y]) if self.p else rhs_x
        sol = self._raw_solve(rhs)
        scale = 1.0 + np.abs(rhs).max()
        prev = np.inf
        for _ in range(2):
            r = rhs - self._M @ sol
            rnorm = np.abs(r).max()
            if rnorm <= 1e-14 * scale or rnorm >= prev:
                break
            prev = rnorm
            sol = sol + self._raw_solve(r)
        if self.p == 0:
            return sol, np.zeros(0)
        return sol[:self.n], sol[self.n:]


# ---------------------------------------------------------------------------
# main solver
# ---------------------------------------------------------------------------

def solve_conic(prog: ConicProgram, tol: float = None,
                options: SolverOptions = None) -> ConicSolution:
    """Solve the program; deterministic for identical inputs.

    ``tol`` overrides both feasibility and gap tolerances when given.
    """
    prog.validate()
    opts = options or SolverOptions()
    if tol is not None:
        opts = SolverOptions(**{**opts.__dict__, "feastol": tol, "reltol": tol})
    std = _standardize(prog)
    scaled, D, E, F = _equilibrate(std)
    # the interior-point iteration interleaves small BLAS calls with sparse
    # ops; threaded BLAS spin-waits between them cost far more than they buy
    with threadpool_limits(limits=1):
        raw = _conelp(scaled, opts)

    # undo the equilibration and recompute the reported residuals unscaled
    x = raw["x"] * D
    z = raw["z"] * E
    y = raw["y"] * F
    s = raw["s"] / E
    pobj = float(std.c @ x)
    dobj = float(-(std.h @ z) - (std.b @ y if std.A is not None else 0.0))
    gap = float(s @ z)
    relgap = gap / max(1.0, abs(pobj), abs(dobj))
    pres = float(np.abs(std.G @ x + s - std.h).max())
    if std.A is not None:
        pres = max(pres, float(np.abs(std.A @ x - std.b).max()))
    dres = float(np.abs(std.c + std.G.T @ z +
                        (std.A.T @ y if std.A is not None else 0.0)).max())
    dres /= max(1.0, float(np.abs(std.c).max()))
    status = raw["status"]
    if status == OPTIMAL and not (
            pres <= 10 * FEAS_ABS_CONTRACT and relgap <= 10 * RELGAP_CONTRACT):
        status = NUMERICAL_LIMIT

    duals = _map_duals(prog, std, z, y)
    return ConicSolution(
        x=x, duals=duals, status=status, gap=gap, rel_gap=relgap,
        iters=raw["iters"], pobj=pobj, dobj=dobj, pres=pres, dres=dres,
    )


def _map_duals(prog, std, z, y):
    duals = []
    for gi, g in enumerate(prog.groups):
        kind, rows = std.group_rows[gi]
        if kind == EQ:
            # rows is a marker; recover the block by position
            duals.append(None)
        elif kind == INEQ:
            duals.append(z[:std.dim_lp][rows] if len(rows) else np.zeros(0))
        elif kind == SOC:
            duals.append(z[rows])
        else:
            T = _rsoc_transform(g.dims)
            duals.append(T @ z[rows])
    # equality blocks take consecutive slices of y in declaration order
    off = 0
    for gi, g in enumerate(prog.groups):
        if g.kind == EQ:
            duals[gi] = y[off:off + g.n_rows()]
            off += g.n_rows()
    return duals


def _conelp(std: _StdForm, opts: SolverOptions) -> dict:
    c, G, h = std.c, std.G, std.h
    A, b = std.A, std.b
    n = G.shape[1]
    m = G.shape[0]
    p = A.shape[0] if A is not None else 0
    if m == 0:
        raise ValueError("program needs at least one cone/inequality row")

    GT = G.T.tocsr()
    AT = A.T.tocsr() if A is not None else None
    nu = std.dim_lp + sum(nc for (_o, nc, _d) in std.soc_batches)
    e = _cone_identity(std, m)

    kkt = _KKT(std, opts)

    if opts.init == "ls":
        # primal init: argmin ||h - Gx|| s.t. Ax = b, then shift s into the cone
        kkt.factor(None)
        x, _ = kkt.solve(GT @ h, b if p else np.zeros(0))
        s = h - G @ x
        margin = _min_margin(std, s)
        if margin < 1.0:
            s = s + (1.0 - margin) * e
        # dual init: minimal-norm z with G'z + A'y = -c
        w, y = kkt.solve(-c, np.zeros(p))
        z = G @ w
        if p:
            # correct y from stationarity residual (least squares on A')
            y = np.asarray(
                sla.lstsq(A.toarray().T, -(c + GT @ z), check_finite=False)[0]
            )
        margin = _min_margin(std, z)
        if margin < 1.0:
            z = z + (1.0 - margin) * e
    else:
        rho = math.sqrt(max(1.0, float(np.abs(h).max())))
        x = np.zeros(n)
        y = np.zeros(p)
        s = rho * e
        z = max(1.0, float(np.abs(c).max())) / rho * e

    best = None
    status = None
    iters = 0
    stall = 0
    gap0 = float(s @ z)
    min_gap = gap0
    norm_c = max(1.0, np.abs(c).max())
    norm_h = max(1.0, np.abs(h).max() if m else 1.0, np.abs(b).max() if p else 1.0)

    for iters in range(1, opts.maxiter + 1):
        rx = c + GT @ z + (AT @ y if p else 0.0)
        ry = (A @ x - b) if p else np.zeros(0)
        rz = G @ x + s - h
        gap = float(s @ z)
        pcost = float(c @ x)
        dcost = float(-(h @ z) - (b @ y if p else 0.0))
        relgap = gap / max(1.0, abs(pcost), abs(dcost))
        pres_abs = max(
            float(np.abs(rz).max()) if m else 0.0,
            float(np.abs(ry).max()) if p else 0.0,
        )
        dres = float(np.abs(rx).max()) / norm_c
        pres_rel = pres_abs / norm_h
        if not np.isfinite(gap) or not np.isfinite(pres_abs):
            status = NUMERICAL_LIMIT
            break

        metric = max(pres_rel, relgap, 0.1 * dres)
        if best is None or metric < best["metric"] * 0.9 or gap < 0.7 * min_gap:
            stall = 0
        elif metric < 1e-2:
            stall += 1  # plateaus only matter once the endgame has started
        min_gap = min(min_gap, gap)
        if best is None or metric < best["metric"]:
            best = dict(x=x.copy(), y=y.copy(), s=s.copy(), z=z.copy(),
                        metric=metric, gap=gap, relgap=relgap, pcost=pcost,
                        dcost=dcost, pres=pres_abs, dres=dres)

        if opts.verbose:
            print(f"  it {iters:3d} gap {gap:10.3e} relgap {relgap:9.2e} "
                  f"pres {pres_abs:9.2e} dres {dres:9.2e}")

        if pres_abs <= opts.feastol * norm_h and dres <= opts.feastol and (
                relgap <= opts.reltol or gap <= opts.reltol):
            status = OPTIMAL
            best = dict(x=x, y=y, s=s, z=z, metric=metric, gap=gap,
                        relgap=relgap, pcost=pcost, dcost=dcost,
                        pres=pres_abs, dres=dres)
            break
        if stall >= 8:
            break

        # infeasibility certificates on the (scaled) iterates
        hz_by = float(h @ z + (b @ y if p else 0.0))
        if hz_by < -1e-12:
            cert = float(np.abs(GT @ z + (AT @ y if p else 0.0)).max()) / (-hz_by)
            if cert <= 1e-8 * norm_c:
                status = INFEASIBLE
                break
        if pcost < -1e-12:
            ray = max(
                float(np.abs(G @ x + s).max()) if m else 0.0,
                float(np.abs(A @ x).max()) if p else 0.0,
            ) / (-pcost)
            if ray <= 1e-8 * norm_h and _min_margin(std, s) >= -1e-10:
                status = UNBOUNDED
                break

        if _min_margin(std, s) <= 0.0 or _min_margin(std, z) <= 0.0:
            break  # iterate pinned to the boundary; grade the best point seen

        scal = _Scaling(std, s, z)
        lam = scal.lam
        kkt.factor(scal)

        def solve_dirs(a1, a2, a3, a4):
            """Direction solving G'dz + A'dy = a1, A dx = a2, G dx + ds = a3,
            lam o (W dz + W^-1 ds) = a4."""
            t1 = _jordan_div(std, lam, a4)
            u = scal.apply_inv2(a3 - scal.apply(t1))
            dx, dy = kkt.solve(a1 + GT @ u, a2)
            ds = a3 - G @ dx
            dz = scal.apply_inv2(G @ dx - a3) + scal.apply(t1, inv=True)
            return dx, dy, ds, dz

        # direction refinement is what keeps the endgame accurate; early on
        # the factorization error is negligible next to the residuals
        refine_rounds = opts.refine if gap < 1e-3 * gap0 else 1

        def newton(d_target):
            dx, dy, ds, dz = solve_dirs(-rx, -ry, -rz, d_target)
            prev = np.inf
            for _ in range(refine_rounds):
                r1 = -rx - (GT @ dz + (AT @ dy if p else 0.0))
                r2 = (-ry - A @ dx) if p else np.zeros(0)
                r3 = -rz - (G @ dx + ds)
                r4 = d_target - _jordan_prod(
                    std, lam, scal.apply(dz) + scal.apply(ds, inv=True))
                rnorm = max(np.abs(r1).max(), np.abs(r3).max(), np.abs(r4).max())
                if rnorm < 1e-14 * norm_h or rnorm >= prev:
                    break
                prev = rnorm
                cx, cy, cs, cz = solve_dirs(r1, r2, r3, r4)
                dx, dy, ds, dz = dx + cx, dy + cy, ds + cs, dz + cz
            return dx, dy, ds, dz

        # predictor
        lam2 = _jordan_prod(std, lam, lam)
        dxa, dya, dsa, dza = newton(-lam2)
        alpha_aff = min(1.0, min(_max_step(std, s, dsa), _max_step(std, z, dza)))
        gap_aff = float((s + alpha_aff * dsa) @ (z + alpha_aff * dza))
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3
        mu = gap / nu

        # corrector
        corr = _jordan_prod(std, scal.apply(dsa, inv=True), scal.apply(dza))
        dx, dy, ds, dz = newton(-lam2 - corr + sigma * mu * e)
        alpha = min(_max_step(std, s, ds), _max_step(std, z, dz))
        alpha = min(1.0, opts.step_frac * alpha)
        if not np.isfinite(alpha) or alpha <= 1e-10:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    out = best
    if status is None:
        # stalled or ran out of iterations: certificate, then grade best seen
        hz_by = float(h @ z + (b @ y if p else 0.0))
        if hz_by < -1e-10 and float(
                np.abs(GT @ z + (AT @ y if p else 0.0)).max()) <= 1e-6 * (-hz_by) \
                and _min_margin(std, z) >= -1e-9 * max(1.0, np.abs(z).max()):
            status = INFEASIBLE
        elif out["pres"] <= FEAS_ABS_CONTRACT * norm_h and out["dres"] <= 1e-7 \
                and out["relgap"] <= RELGAP_CONTRACT:
            status = OPTIMAL
        else:
            status = NUMERICAL_LIMIT
    elif status == NUMERICAL_LIMIT:
        pass
    elif status != OPTIMAL:
        out = dict(x=x, y=y, s=s, z=z, gap=float(s @ z), relgap=np.nan,
                   pcost=float(c @ x),
                   dcost=float(-(h @ z) - (b @ y if p else 0.0)),
                   pres=np.nan, dres=np.nan)
    return dict(
        x=out["x"], y=out["y"], s=out["s"], z=out["z"], status=status,
        gap=out["gap"], relgap=out["relgap"], iters=iters,
        pobj=out["pcost"], dobj=out["dcost"], pres=out["pres"], dres=out["dres"],
    )


# ---------------------------------------------------------------------------
# KKT residual reporting (used by the validation suites)
# ---------------------------------------------------------------------------

def kkt_residuals(prog: ConicProgram, sol: ConicSolution) -> dict:
    """Scaled stationarity / feasibility / complementarity residuals."""
    x = sol.x
    grad = prog.c.copy()
    comp = 0.0
    pfeas = 0.0
    dfeas = 0.0
    for g, zg in zip(prog.groups, sol.duals):
        s = g.b - g.A @ x
        grad += g.A.T @ zg
        if g.kind == EQ:
            pfeas = max(pfeas, float(np.abs(s).max()) if len(s) else 0.0)
        elif g.kind == INEQ:
            if len(s):
                pfeas = max(pfeas, float((-s).max()))
                dfeas = max(dfeas, float((-zg).max()))
                comp = max(comp, float(np.abs(s * zg).max()))
        else:
            off = 0
            for d in g.dims:
                sc, zc = s[off:off + d], zg[off:off + d]
                if g.kind == SOC:
                    pfeas = max(pfeas, float(np.linalg.norm(sc[1:]) - sc[0]))
                    dfeas = max(dfeas, float(np.linalg.norm(zc[1:]) - zc[0]))
                else:
                    pfeas = max(pfeas, _rsoc_violation(sc))
                    dfeas = max(dfeas, _rsoc_violation(zc))
                comp = max(comp, abs(float(sc @ zc)))
                off += d
    scale = max(1.0, float(np.abs(prog.c).max()))
    return {
        "stationarity": float(np.abs(grad).max()) / scale,
        "primal_feasibility": pfeas,
        "dual_feasibility": dfeas,
        "complementarity": comp / max(1.0, abs(sol.pobj)),
    }


def _rsoc_violation(v: np.ndarray) -> float:
    lin = max(-float(v[0]), -float(v[1]))
    quad = float(v[2:] @ v[2:]) - 2.0 * float(v[0]) * float(v[1])
    # scale the quadratic violation to a length
    return max(lin, quad / max(1.0, np.abs(v).max()))
