"""Convex QP solver: operator splitting with an active-set polish.

Solves
    minimize   0.5 x' P x + q' x
    subject to l <= A x <= u

where equality constraints are rows with l == u and P is symmetric PSD.
The iteration is the standard over-relaxed ADMM splitting with Ruiz
equilibration, a cached KKT factorization (the same (P, A) can be
re-solved for many (q, l, u), the receding-horizon use case), adaptive
step parameter, primal/dual infeasibility certificates and a final
polish step that solves the KKT system of the detected active set.

Reported KKT residuals (unscaled):
  stationarity     ||P x + q + A' y||_inf
  primal           ||A x - clip(A x, l, u)||_inf
  complementarity  max_i |y_i| * gap to the bound y_i points at
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lu_factor, lu_solve

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"

_DENSE_LIMIT = 600  # n + m below this uses dense LU factorizations


@dataclass
class QpProblem:
    """Problem data; `a` may be dense or any scipy sparse matrix."""

    p: object
    q: np.ndarray
    a: object
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.l = np.asarray(self.l, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        n, m = self.q.size, self.l.size
        if self.p.shape != (n, n):
            raise ValueError(f"P must be ({n},{n}), got {self.p.shape}")
        if self.a.shape != (m, n):
            raise ValueError(f"A must be ({m},{n}), got {self.a.shape}")
        if self.u.size != m or np.any(self.l > self.u):
            raise ValueError("need l <= u elementwise")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.p @ x) + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: str
    objective: float
    iterations: int
    kkt: dict = field(default_factory=dict)
    polished: bool = False


def _col_max(mat) -> np.ndarray:
    out = np.abs(mat).max(axis=0)
    return out.toarray().ravel() if sp.issparse(out) else np.asarray(out).ravel()


def _row_max(mat) -> np.ndarray:
    out = np.abs(mat).max(axis=1)
    return out.toarray().ravel() if sp.issparse(out) else np.asarray(out).ravel()


def _ruiz_equilibrate(p, a, iters: int = 10):
    """Diagonal scaling of the stacked [[P, A'], [A, 0]] system.

    Returns (d, e): column scaling d (n,) and row scaling e (m,), applied
    as P <- D P D, A <- E A D.
    """
    n, m = p.shape[0], a.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    ps = p.copy().astype(float)
    as_ = a.copy().astype(float)
    sparse = sp.issparse(p) or sp.issparse(a)
    if sparse:
        ps, as_ = sp.csc_matrix(ps), sp.csc_matrix(as_)
    for _ in range(iters):
        col = np.maximum(_col_max(ps), _col_max(as_)) if m else _col_max(ps)
        dn = np.where(col > 0, 1.0 / np.sqrt(col), 1.0)
        dn = np.clip(dn, 1e-3, 1e3)
        row = _row_max(as_) if m else np.ones(0)
        en = np.where(row > 0, 1.0 / np.sqrt(row), 1.0)
        en = np.clip(en, 1e-3, 1e3)
        if sparse:
            dd, ee = sp.diags(dn), sp.diags(en)
            ps = (dd @ ps @ dd).tocsc()
            as_ = (ee @ as_ @ dd).tocsc()
        else:
            ps = ps * dn[:, None] * dn[None, :]
            as_ = as_ * en[:, None] * dn[None, :]
        d *= dn
        e *= en
    return d, e


class BoxQpSolver:
    """Reusable solver for a fixed (P, A).

    Construction equilibrates and factorizes once; solve() accepts fresh
    (q, l, u) plus optional warm starts and reuses the factorization.
    """

    def __init__(self, p, a, sigma: float = 1e-6, rho: float = 0.1,
                 alpha: float = 1.6, eps_abs: float = 1e-8, eps_rel: float = 1e-8,
                 max_iter: int = 20000, check_every: int = 10, polish: bool = True,
                 adaptive_rho: bool = True, scale_iters: int = 10):
        self.sparse = sp.issparse(p) or sp.issparse(a) or p.shape[0] + a.shape[0] > _DENSE_LIMIT
        if self.sparse:
            self.p = sp.csc_matrix(p).astype(float)
            self.a = sp.csc_matrix(a).astype(float)
            self._a_rows = sp.csr_matrix(self.a)
        else:
            self.p = np.asarray(p, dtype=float)
            self.a = np.asarray(a, dtype=float)
            self._a_rows = self.a
        self.n, self.m = self.p.shape[0], self.a.shape[0]
        self.sigma = sigma
        self.alpha = alpha
        self.eps_abs = eps_abs
        self.eps_rel = eps_rel
        self.max_iter = max_iter
        self.check_every = check_every
        self.do_polish = polish
        self.adaptive_rho = adaptive_rho
        self.rho_bar = rho
        self.d, self.e = _ruiz_equilibrate(self.p, self.a, scale_iters)
        if self.sparse:
            dd, ee = sp.diags(self.d), sp.diags(self.e)
            self.ps = (dd @ self.p @ dd).tocsc()
            self.as_ = (ee @ self.a @ dd).tocsr()
            self.ast = sp.csr_matrix(self.as_.T)
        else:
            self.ps = self.p * self.d[:, None] * self.d[None, :]
            self.as_ = self.a * self.e[:, None] * self.d[None, :]
            self.ast = np.ascontiguousarray(self.as_.T)
        self._eq_rows = None
        self._kkt_solve = None

    def _factorize(self, rho_bar, eq_rows):
        rho = np.full(self.m, rho_bar)
        rho[eq_rows] = rho_bar * 1e3
        self.rho = rho
        self.rho_inv = 1.0 / rho
        if self.sparse:
            kkt = sp.bmat([
                [self.ps + self.sigma * sp.eye(self.n), self.ast],
                [self.as_, -sp.diags(self.rho_inv)],
            ], format="csc")
            lu = spla.splu(kkt)
            self._kkt_solve = lu.solve
        else:
            kkt = np.block([
                [self.ps + self.sigma * np.eye(self.n), self.ast],
                [self.as_, -np.diag(self.rho_inv)],
            ])
            fac = lu_factor(kkt)
            self._kkt_solve = lambda rhs: lu_solve(fac, rhs)

    def solve(self, q, l, u, x0=None, y0=None) -> QpSolution:
        n, m = self.n, self.m
        d, e = self.d, self.e
        d_inv, e_inv = 1.0 / d, 1.0 / e
        q = np.asarray(q, dtype=float)
        l = np.asarray(l, dtype=float)
        u = np.asarray(u, dtype=float)
        qs = d * q
        ls = e * l
        us = e * u
        eq_rows = np.isfinite(ls) & np.isfinite(us) & (us - ls <= 0.0)
        if self._kkt_solve is None or not np.array_equal(eq_rows, self._eq_rows):
            self._eq_rows = eq_rows.copy()
            self._factorize(self.rho_bar, eq_rows)

        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / d
        y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float) / e
        z = np.clip(self.as_ @ x, ls, us)
        alpha = self.alpha
        status = MAX_ITER
        iters = self.max_iter
        rhs = np.empty(n + m)
        for it in range(1, self.max_iter + 1):
            rhs[:n] = self.sigma * x - qs
            rhs[n:] = z - self.rho_inv * y
            sol = self._kkt_solve(rhs)
            x_t = sol[:n]
            z_t = z + self.rho_inv * (sol[n:] - y)
            x_prev, z_prev, y_prev = x, z, y
            x = alpha * x_t + (1 - alpha) * x_prev
            z_r = alpha * z_t + (1 - alpha) * z_prev
            z = np.clip(z_r + self.rho_inv * y_prev, ls, us)
            y = y_prev + self.rho * (z_r - z)
            if it % self.check_every == 0 or it == self.max_iter:
                # componentwise residuals in the unscaled problem space, so
                # mixed-unit rows (K vs kW) each see a sensible tolerance
                ax_u = e_inv * (self.as_ @ x)
                z_u = e_inv * z
                px_u = d_inv * (self.ps @ x)
                aty_u = d_inv * (self.ast @ y)
                q_u = d_inv * qs
                tol_p = self.eps_abs + self.eps_rel * np.maximum(np.abs(ax_u), np.abs(z_u))
                tol_d = self.eps_abs + self.eps_rel * (np.abs(px_u) + np.abs(aty_u)
                                                       + np.abs(q_u))
                r_prim = float(np.max(np.abs(ax_u - z_u) / tol_p)) if m else 0.0
                r_dual = float(np.max(np.abs(px_u + q_u + aty_u) / tol_d))
                if r_prim <= 1.0 and r_dual <= 1.0:
                    status = OPTIMAL
                    iters = it
                    break
                if self._primal_infeasible(y - y_prev, ls, us):
                    status = INFEASIBLE
                    iters = it
                    break
                if self._dual_infeasible(x - x_prev, qs, ls, us):
                    status = INFEASIBLE
                    iters = it
                    break
                if self.adaptive_rho and it % 100 == 0 and r_prim > 0 and r_dual > 0:
                    ratio = np.sqrt(r_prim / r_dual)
                    if ratio > 5.0 or ratio < 0.2:
                        self.rho_bar = float(np.clip(self.rho_bar * ratio, 1e-6, 1e6))
                        self._factorize(self.rho_bar, self._eq_rows)

        x_out = d * x
        y_out = e * y
        z_out = z / e
        sol = QpSolution(x=x_out, y=y_out, z=z_out, status=status,
                         objective=self._objective(x_out, q), iterations=iters)
        if status == OPTIMAL and self.do_polish:
            self._polish(sol, q, l, u)
        sol.kkt = self._kkt_residuals(sol.x, sol.y, q, l, u)
        return sol

    def _objective(self, x, q):
        return float(0.5 * x @ (self.p @ x) + q @ x)

    def _primal_infeasible(self, dy, ls, us, eps: float = 1e-9):
        nrm = float(np.max(np.abs(dy))) if dy.size else 0.0
        if nrm <= 1e-12:
            return False
        dy = dy / nrm
        dy[np.abs(dy) < eps] = 0.0
        if float(np.max(np.abs(self.ast @ dy))) > eps:
            return False
        up = np.maximum(dy, 0.0)
        lo = np.minimum(dy, 0.0)
        support = np.sum(np.where(up > 0, us * up, 0.0) + np.where(lo < 0, ls * lo, 0.0))
        return bool(support < -eps)

    def _dual_infeasible(self, dx, qs, ls, us, eps: float = 1e-9):
        nrm = float(np.max(np.abs(dx))) if dx.size else 0.0
        if nrm <= 1e-12:
            return False
        dx = dx / nrm
        if float(np.max(np.abs(self.ps @ dx))) > eps or qs @ dx > -eps:
            return False
        adx = self.as_ @ dx
        ok_up = (adx <= eps) | ~np.isfinite(us)
        ok_lo = (adx >= -eps) | ~np.isfinite(ls)
        return bool(np.all(ok_up & ok_lo))

    def _polish(self, sol: QpSolution, q, l, u, delta: float = 1e-8):
        """Solve the equality-constrained QP on the detected active set.

        Active rows are picked primarily by dual sign (robust when the
        iterate is only loosely converged), plus rows sitting on a bound.
        """
        ax = self.a @ sol.x
        y_thresh = 1e-9 * max(1.0, float(np.max(np.abs(sol.y))) if self.m else 0.0)
        gap_tol = 1e-7 * (1.0 + np.abs(ax))
        low = np.isfinite(l) & ((sol.y < -y_thresh) | (ax - l <= gap_tol))
        upp = np.isfinite(u) & ((sol.y > y_thresh) | (u - ax <= gap_tol)) & ~low
        idx = np.nonzero(low | upp)[0]
        if idx.size == 0:
            if float(np.max(np.abs(sol.y))) <= y_thresh:
                try:
                    if self.sparse:
                        x_new = spla.splu(
                            (self.p + delta * sp.eye(self.n)).tocsc()).solve(-q)
                    else:
                        x_new = np.linalg.solve(self.p + delta * np.eye(self.n), -q)
                except RuntimeError:
                    return
                self._accept_polish(sol, x_new, np.zeros(self.m), q, l, u)
            return
        target = np.where(low[idx], l[idx], u[idx])
        na = idx.size
        rhs = np.concatenate([-q, target])
        try:
            if self.sparse:
                a_act = self._a_rows[idx]
                kkt = sp.bmat([
                    [self.p + delta * sp.eye(self.n), a_act.T],
                    [a_act, -delta * sp.eye(na)],
                ], format="csc")
                fac = spla.splu(kkt)
                out = fac.solve(rhs)
                res = np.concatenate([
                    -q - self.p @ out[:self.n] - a_act.T @ out[self.n:],
                    target - a_act @ out[:self.n],
                ])
                out = out + fac.solve(res)
            else:
                a_act = self._a_rows[idx]
                kkt = np.block([
                    [self.p + delta * np.eye(self.n), a_act.T],
                    [a_act, -delta * np.eye(na)],
                ])
                fac = lu_factor(kkt)
                out = lu_solve(fac, rhs)
                res = np.concatenate([
                    -q - self.p @ out[:self.n] - a_act.T @ out[self.n:],
                    target - a_act @ out[:self.n],
                ])
                out = out + lu_solve(fac, res)
        except (RuntimeError, np.linalg.LinAlgError):
            return
        if not np.all(np.isfinite(out)):
            return
        y_new = np.zeros(self.m)
        y_new[idx] = out[self.n:]
        self._accept_polish(sol, out[:self.n], y_new, q, l, u)

    def _accept_polish(self, sol, x_new, y_new, q, l, u):
        old = self._kkt_residuals(sol.x, sol.y, q, l, u)
        new = self._kkt_residuals(x_new, y_new, q, l, u)
        if max(new.values()) <= max(old.values()):
            sol.x, sol.y = x_new, y_new
            sol.z = np.clip(self.a @ x_new, l, u)
            sol.objective = self._objective(x_new, q)
            sol.polished = True

    def _kkt_residuals(self, x, y, q, l, u) -> dict:
        return kkt_residuals(self.p, self.a, x, y, q, l, u)


def kkt_residuals(p, a, x, y, q, l, u) -> dict:
    """Unscaled KKT residuals of a point for min 0.5x'Px+q'x, l <= Ax <= u."""
    ax = a @ x
    z = np.clip(ax, l, u)
    m = a.shape[0]
    stat = float(np.max(np.abs(p @ x + q + a.T @ y)))
    prim = float(np.max(np.abs(ax - z))) if m else 0.0
    cap = 1.0 + np.abs(ax)
    lo_gap = np.minimum(np.where(np.isfinite(l), np.abs(ax - l), np.inf), cap)
    up_gap = np.minimum(np.where(np.isfinite(u), np.abs(u - ax), np.inf), cap)
    comp = np.where(y < 0, -y * lo_gap, y * up_gap)
    comp = float(np.max(comp)) if m else 0.0
    return {"stationarity": stat, "primal": prim, "complementarity": comp}


class InteriorPointQp:
    """Primal-dual interior point (Mehrotra predictor-corrector) for

        minimize   0.5 x' P x + q' x
        subject to A_eq x = b,  A_in x <= g,  lb <= x <= ub

    P must be PSD (sparse or dense); infinite bounds are allowed.  The
    Newton system is reduced to the quasi-definite form
    [[P + D, A_eq'], [A_eq, -delta I]] so each iteration costs one sparse
    factorization plus two back-substitutions.  Built for the repeated
    solves of a receding-horizon controller: the matrices are fixed at
    construction and (q, b, g, lb, ub) may change per solve.
    """

    def __init__(self, p, a_eq, a_in, delta: float = 1e-9,
                 reduce: bool | None = None):
        self.p = sp.csc_matrix(p).astype(float)
        self.a_eq = sp.csr_matrix(a_eq).astype(float)
        self.a_in = sp.csr_matrix(a_in).astype(float)
        self.n = self.p.shape[0]
        self.m_eq = self.a_eq.shape[0]
        self.m_in = self.a_in.shape[0]
        self.delta = delta
        p_offdiag = self.p - sp.diags(self.p.diagonal())
        diagonal_p = p_offdiag.nnz == 0
        if reduce is None:
            reduce = diagonal_p and self.n > _DENSE_LIMIT
        if reduce and not diagonal_p:
            raise ValueError("the reduced Newton path needs a diagonal P")
        self.reduced = reduce
        if self.reduced:
            self._p_diag = np.asarray(self.p.diagonal(), dtype=float)
            self._build_schur_template()
        else:
            self._build_kkt_template()

    def _build_kkt_template(self):
        """KKT sparsity with every mutable slot present, plus index maps so
        each interior-point iteration only rewrites values in place."""
        n, m_eq, m_in = self.n, self.m_eq, self.m_in
        ident = sp.eye(n, format="csc")
        pat_in = (self.a_in.T @ self.a_in).tocsc() if m_in else sp.csc_matrix((n, n))
        pblock = (self.p + ident + pat_in).tocsc()
        kkt = sp.bmat([[pblock, self.a_eq.T],
                       [self.a_eq, -sp.eye(m_eq, format="csc")]], format="csc")
        kkt.sort_indices()
        self._kkt = kkt
        pos = {}
        indptr, indices = kkt.indptr, kkt.indices
        for col in range(kkt.shape[1]):
            for k in range(indptr[col], indptr[col + 1]):
                pos[(int(indices[k]), col)] = k
        base = kkt.data.copy()
        # rebuild the constant part: P, A_eq blocks, -delta on the eq diag
        base[:] = 0.0
        pc = self.p.tocoo()
        for i, j, v in zip(pc.row, pc.col, pc.data):
            base[pos[(int(i), int(j))]] += v
        ec = self.a_eq.tocoo()
        for i, j, v in zip(ec.row, ec.col, ec.data):
            base[pos[(n + int(i), int(j))]] += v
            base[pos[(int(j), n + int(i))]] += v
        for i in range(m_eq):
            base[pos[(n + i, n + i)]] = -self.delta
        self._base = base
        self._diag_pos = np.array([pos[(i, i)] for i in range(n)], dtype=int)
        if m_in:
            # scatter matrix: column r holds the outer-product coefficients of
            # inequality row r at the kkt data slots it touches
            rows_s, cols_s, vals_s = [], [], []
            ai = self.a_in.tocoo()
            by_row: dict[int, list] = {}
            for i, j, v in zip(ai.row, ai.col, ai.data):
                by_row.setdefault(int(i), []).append((int(j), float(v)))
            for r, entries in by_row.items():
                for j1, v1 in entries:
                    for j2, v2 in entries:
                        rows_s.append(pos[(j1, j2)])
                        cols_s.append(r)
                        vals_s.append(v1 * v2)
            self._scatter = sp.coo_matrix(
                (vals_s, (rows_s, cols_s)),
                shape=(kkt.data.size, m_in)).tocsr()
        else:
            self._scatter = None

    def _build_schur_template(self):
        """Normal-equations path for diagonal P: eliminate x against the
        (scaled) stacked constraints B = [A_eq; W^(1/2) A_in] and factor
        M = B diag(1/Delta) B' + blkdiag(delta I, I), which is a much
        smaller SPD system than the full KKT."""
        m = self.m_eq + self.m_in
        b0 = sp.vstack([self.a_eq, self.a_in]).tocsc()
        b0.sort_indices()
        self._b0 = b0
        self._b0_rows = sp.csr_matrix(b0)
        # column-wise outer products scattered into the fixed pattern of M
        ra_all, rb_all, vv_all, col_all = [], [], [], []
        indptr, indices, data = b0.indptr, b0.indices, b0.data
        for j in range(self.n):
            sl = slice(indptr[j], indptr[j + 1])
            rows = indices[sl]
            vals = data[sl]
            k = rows.size
            if k == 0:
                continue
            ra_all.append(np.repeat(rows, k))
            rb_all.append(np.tile(rows, k))
            vv_all.append(np.outer(vals, vals).ravel())
            col_all.append(np.full(k * k, j))
        ra = np.concatenate(ra_all)
        rb = np.concatenate(rb_all)
        vv = np.concatenate(vv_all)
        cols = np.concatenate(col_all)
        # include the block-diagonal regularizer slots in the pattern
        diag_r = np.arange(m)
        pattern = sp.coo_matrix(
            (np.ones(ra.size + m), (np.concatenate([ra, diag_r]),
                                    np.concatenate([rb, diag_r]))),
            shape=(m, m)).tocsc()
        pattern.sort_indices()
        pattern.data[:] = 0.0
        self._m_mat = pattern
        lookup = {}
        for col in range(m):
            for k in range(pattern.indptr[col], pattern.indptr[col + 1]):
                lookup[(int(pattern.indices[k]), col)] = k
        slot = np.array([lookup[(int(a), int(b))] for a, b in zip(ra, rb)])
        self._s_map = sp.coo_matrix((vv, (slot, cols)),
                                    shape=(pattern.data.size, self.n)).tocsr()
        self._m_diag_slots = np.array([lookup[(i, i)] for i in range(m)])
        self._pair_a = np.empty(pattern.data.size, dtype=int)
        self._pair_b = np.empty(pattern.data.size, dtype=int)
        self._pair_a.fill(0)
        self._pair_b.fill(0)
        for (a, col), k in lookup.items():
            self._pair_a[k] = a
            self._pair_b[k] = col

    def _solve_newton(self, dl_du: np.ndarray, w_in: np.ndarray):
        """Factor the Newton system; returns solve(rhs_x, rhs_eq) -> (dx, dy)."""
        if self.reduced:
            return self._solve_newton_schur(dl_du, w_in)
        data = self._base.copy()
        data[self._diag_pos] += dl_du
        if self._scatter is not None:
            data += self._scatter @ w_in
        self._kkt.data = data
        lu = spla.splu(self._kkt)
        n = self.n

        def solve(rhs_x, rhs_eq):
            out = lu.solve(np.concatenate([rhs_x, rhs_eq]))
            return out[:n], out[n:]

        return solve

    def _solve_newton_schur(self, dl_du: np.ndarray, w_in: np.ndarray):
        m_eq, m_in = self.m_eq, self.m_in
        delta_diag = self._p_diag + dl_du
        # conditioning guard: squaring in the normal equations amplifies
        # near-free directions, so cap their leverage and rely on refinement
        dinv = 1.0 / np.maximum(delta_diag, 1e-9)
        dinv = np.minimum(dinv, 1e9)
        s_full = np.concatenate([np.ones(m_eq), np.sqrt(w_in)])
        data = np.asarray(self._s_map @ dinv)
        data *= s_full[self._pair_a] * s_full[self._pair_b]
        data[self._m_diag_slots[:m_eq]] += self.delta
        data[self._m_diag_slots[m_eq:]] += 1.0
        self._m_mat.data = data
        lu = spla.splu(self._m_mat)
        a_eq, a_in = self.a_eq, self.a_in
        w_half = s_full[m_eq:]

        def solve_once(rhs_x, rhs_eq):
            t = dinv * rhs_x
            top = (a_eq @ t) - rhs_eq
            bot = w_half * (a_in @ t) if m_in else np.zeros(0)
            yv = lu.solve(np.concatenate([top, bot]))
            dy = yv[:m_eq]
            v = yv[m_eq:]
            dx = dinv * (rhs_x - a_eq.T @ dy
                         - (a_in.T @ (w_half * v) if m_in else 0.0))
            return dx, dy

        def solve(rhs_x, rhs_eq):
            dx, dy = solve_once(rhs_x, rhs_eq)
            # refinement passes against the unreduced system
            scale = 1.0 + max(float(np.max(np.abs(rhs_x))),
                              float(np.max(np.abs(rhs_eq))) if m_eq else 0.0)
            for _ in range(3):
                adx = a_in @ dx if m_in else np.zeros(0)
                r1 = rhs_x - delta_diag * dx - a_eq.T @ dy \
                    - (a_in.T @ (w_in * adx) if m_in else 0.0)
                r2 = rhs_eq - (a_eq @ dx) + self.delta * dy
                res = max(float(np.max(np.abs(r1))),
                          float(np.max(np.abs(r2))) if m_eq else 0.0)
                if not np.isfinite(res) or res <= 1e-10 * scale:
                    break
                cx, cy = solve_once(r1, r2)
                dx = dx + cx
                dy = dy + cy
            return dx, dy

        return solve

    def solve(self, q, b, g, lb, ub, warm: dict | None = None,
              tol: float = 1e-8, max_iter: int = 60) -> dict:
        n, m_eq, m_in = self.n, self.m_eq, self.m_in
        q = np.asarray(q, dtype=float)
        b = np.asarray(b, dtype=float)
        g = np.asarray(g, dtype=float)
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        has_lb = np.isfinite(lb)
        has_ub = np.isfinite(ub)
        n_pairs = m_in + int(has_lb.sum()) + int(has_ub.sum())

        def push_inside(x):
            with np.errstate(invalid="ignore"):
                mid = np.where(
                    has_lb & has_ub, 0.5 * (lb + ub),
                    np.where(has_lb, lb + 1.0, np.where(has_ub, ub - 1.0, x)))
                gap = np.where(has_lb & has_ub, 0.05 * (ub - lb), 1.0)
            x = np.where(has_lb, np.maximum(x, lb + np.minimum(gap, 1.0)), x)
            x = np.where(has_ub, np.minimum(x, ub - np.minimum(gap, 1.0)), x)
            bad = (has_lb & (x < lb)) | (has_ub & (x > ub))
            return np.where(bad, mid, x)

        if warm is not None:
            # keep warm-start pair products near mu0 so the first centering
            # steps are not crippled by near-complementary pairs
            mu0 = warm.get("mu0", 1e-4)
            x = push_inside(warm["x"].copy())
            y = warm["y"].copy()
            s = np.maximum(g - self.a_in @ x, 1e-3) if m_in else np.zeros(0)
            z = np.maximum(warm["z"], mu0 / np.maximum(s, 1.0)) if m_in else np.zeros(0)
            xl0 = np.where(has_lb, x - lb, 1.0)
            xu0 = np.where(has_ub, ub - x, 1.0)
            zl = np.where(has_lb, np.maximum(warm["zl"], mu0 / np.maximum(xl0, 1.0)), 0.0)
            zu = np.where(has_ub, np.maximum(warm["zu"], mu0 / np.maximum(xu0, 1.0)), 0.0)
        else:
            x = push_inside(np.zeros(n))
            y = np.zeros(m_eq)
            s = np.maximum(g - self.a_in @ x, 1.0) if m_in else np.zeros(0)
            z = np.ones(m_in)
            zl = np.where(has_lb, 1.0, 0.0)
            zu = np.where(has_ub, 1.0, 0.0)

        status = MAX_ITER
        iters = max_iter
        for it in range(1, max_iter + 1):
            xl = np.where(has_lb, x - lb, 1.0)
            xu = np.where(has_ub, ub - x, 1.0)
            r_d = self.p @ x + q + self.a_eq.T @ y - np.where(has_lb, zl, 0.0) \
                + np.where(has_ub, zu, 0.0)
            if m_in:
                r_d += self.a_in.T @ z
            r_eq = self.a_eq @ x - b
            r_in = (self.a_in @ x + s - g) if m_in else np.zeros(0)
            gap = float(s @ z + xl[has_lb] @ zl[has_lb] + xu[has_ub] @ zu[has_ub])
            mu = gap / max(n_pairs, 1)
            scale_d = 1.0 + max(float(np.max(np.abs(q))), 1.0)
            ok_d = float(np.max(np.abs(r_d))) <= tol * scale_d
            ok_eq = m_eq == 0 or float(np.max(np.abs(r_eq))) <= tol * (1.0 + float(np.max(np.abs(b))))
            ok_in = m_in == 0 or float(np.max(r_in)) <= tol * (1.0 + float(np.max(np.abs(g))))
            if mu <= tol and ok_d and ok_eq and ok_in:
                status = OPTIMAL
                iters = it - 1
                break
            dual_norm = max(float(np.max(zl)), float(np.max(zu)),
                            float(np.max(z)) if m_in else 0.0)
            prim_bad = (m_eq > 0 and float(np.max(np.abs(r_eq)))
                        > 1e-6 * (1.0 + float(np.max(np.abs(b))))) or \
                       (m_in > 0 and float(np.max(r_in))
                        > 1e-6 * (1.0 + float(np.max(np.abs(g)))))
            if dual_norm > 1e12 and prim_bad:
                # a material primal violation persists while the inequality
                # duals blow up: the constraints admit no interior point
                status = INFEASIBLE
                iters = it
                break

            d_in = np.clip(z / np.maximum(s, 1e-300), 0.0, 1e12) if m_in else np.zeros(0)
            dl = np.where(has_lb, zl / np.maximum(xl, 1e-300), 0.0)
            du = np.where(has_ub, zu / np.maximum(xu, 1e-300), 0.0)
            try:
                solve_fn = self._solve_newton(
                    np.clip(dl + du, 0.0, 1e12) + self.delta, d_in)
            except RuntimeError:
                break

            def newton(rc_s, rc_l, rc_u, rd, req, rin):
                rhs_x = -rd.copy()
                if m_in:
                    rhs_x -= self.a_in.T @ ((rc_s + z * rin) / np.maximum(s, 1e-300))
                rhs_x += np.where(has_lb, rc_l / np.maximum(xl, 1e-300), 0.0)
                rhs_x -= np.where(has_ub, rc_u / np.maximum(xu, 1e-300), 0.0)
                dx, dy = solve_fn(rhs_x, -req)
                ds = (-rin - self.a_in @ dx) if m_in else np.zeros(0)
                dz = ((rc_s - z * ds) / np.maximum(s, 1e-300)) if m_in else np.zeros(0)
                dzl = np.where(has_lb, (rc_l - zl * dx) / np.maximum(xl, 1e-300), 0.0)
                dzu = np.where(has_ub, (rc_u + zu * dx) / np.maximum(xu, 1e-300), 0.0)
                return dx, dy, ds, dz, dzl, dzu

            def max_step(v, dv, mask=None):
                if mask is not None:
                    v = v[mask]
                    dv = dv[mask]
                neg = dv < 0
                if not np.any(neg):
                    return 1.0
                return float(min(1.0, np.min(-v[neg] / dv[neg])))

            def step_sizes(dx, ds, dz, dzl, dzu):
                a_p = min(max_step(s, ds) if m_in else 1.0,
                          max_step(xl, dx, has_lb), max_step(xu, -dx, has_ub))
                a_d = min(max_step(z, dz) if m_in else 1.0,
                          max_step(zl, dzl, has_lb), max_step(zu, dzu, has_ub))
                return a_p, a_d

            # predictor
            rc_s = -(s * z) if m_in else np.zeros(0)
            rc_l = np.where(has_lb, -(xl * zl), 0.0)
            rc_u = np.where(has_ub, -(xu * zu), 0.0)
            dx, dy, ds, dz, dzl, dzu = newton(rc_s, rc_l, rc_u, r_d, r_eq, r_in)
            if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
                break
            a_p, a_d = step_sizes(dx, ds, dz, dzl, dzu)
            gap_aff = float((s + a_p * ds) @ (z + a_d * dz)) if m_in else 0.0
            gap_aff += float((xl + a_p * dx)[has_lb] @ (zl + a_d * dzl)[has_lb])
            gap_aff += float((xu - a_p * dx)[has_ub] @ (zu + a_d * dzu)[has_ub])
            mu_aff = gap_aff / max(n_pairs, 1)
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

            # corrector
            if m_in:
                rc_s = -(s * z) - ds * dz + sigma * mu
            rc_l = np.where(has_lb, -(xl * zl) - dx * dzl + sigma * mu, 0.0)
            rc_u = np.where(has_ub, -(xu * zu) + dx * dzu + sigma * mu, 0.0)
            dx, dy, ds, dz, dzl, dzu = newton(rc_s, rc_l, rc_u, r_d, r_eq, r_in)
            a_p, a_d = step_sizes(dx, ds, dz, dzl, dzu)

            # multiple centrality correctors: reuse the factorization to pull
            # outlying complementarity pairs toward the central path
            zero_d = np.zeros(n)
            zero_eq = np.zeros(m_eq)
            zero_in = np.zeros(m_in)
            mu_t = max(sigma * mu, 1e-2 * mu)
            for _ in range(2):
                if min(a_p, a_d) > 0.9:
                    break
                ap_t = min(a_p + 0.3, 1.0)
                ad_t = min(a_d + 0.3, 1.0)
                if m_in:
                    v_s = (s + ap_t * ds) * (z + ad_t * dz)
                    t_s = np.clip(v_s, 0.1 * mu_t, 10.0 * mu_t) - v_s
                else:
                    t_s = np.zeros(0)
                v_l = np.where(has_lb, (xl + ap_t * dx) * (zl + ad_t * dzl), mu_t)
                t_l = np.where(has_lb, np.clip(v_l, 0.1 * mu_t, 10.0 * mu_t) - v_l, 0.0)
                v_u = np.where(has_ub, (xu - ap_t * dx) * (zu + ad_t * dzu), mu_t)
                t_u = np.where(has_ub, np.clip(v_u, 0.1 * mu_t, 10.0 * mu_t) - v_u, 0.0)
                cx, cy, cs, cz, czl, czu = newton(t_s, t_l, t_u,
                                                  zero_d, zero_eq, zero_in)
                n_p, n_d = step_sizes(dx + cx, ds + cs, dz + cz, dzl + czl, dzu + czu)
                if n_p + n_d < a_p + a_d + 0.02 or n_p < a_p - 1e-12 or n_d < a_d - 1e-12:
                    break
                dx, dy = dx + cx, dy + cy
                ds, dz = ds + cs, dz + cz
                dzl, dzu = dzl + czl, dzu + czu
                a_p, a_d = n_p, n_d
            a_p *= 0.995
            a_d *= 0.995
            x = x + a_p * dx
            y = y + a_d * dy
            if m_in:
                s = np.maximum(s + a_p * ds, 1e-300)
                z = np.maximum(z + a_d * dz, 1e-300)
            zl = np.where(has_lb, np.maximum(zl + a_d * dzl, 1e-300), 0.0)
            zu = np.where(has_ub, np.maximum(zu + a_d * dzu, 1e-300), 0.0)

        return {"x": x, "y": y, "s": s, "z": z, "zl": zl, "zu": zu,
                "status": status, "iterations": iters, "mu": mu}


def solve_qp(problem: QpProblem, tol: float = 1e-6, max_iter: int = 20000,
             x0=None, y0=None, polish: bool = True) -> QpSolution:
    """One-shot solve of a QpProblem to the given KKT tolerance."""
    solver = BoxQpSolver(problem.p, problem.a, eps_abs=tol * 0.1, eps_rel=tol * 0.1,
                         max_iter=max_iter, polish=polish)
    return solver.solve(problem.q, problem.l, problem.u, x0=x0, y0=y0)


def dump_problem(problem: QpProblem, path) -> None:
    """Plain-text problem dump for external verification.

    Format: header `qp <n> <m>`, then five blocks.  `P <nnz>` and
    `A <nnz>` list nonzeros as `i j value` triplets (row-major order);
    `q`, `l`, `u` list one value per line.  Infinite bounds are written
    as `inf` / `-inf`.  Values use shortest round-trip repr.
    """
    p = sp.coo_matrix(problem.p)
    a = sp.coo_matrix(problem.a)
    with open(path, "w") as f:
        f.write(f"qp {problem.n} {problem.m}\n")
        f.write(f"P {p.nnz}\n")
        for i, j, v in zip(p.row, p.col, p.data):
            f.write(f"{i} {j} {float(v)!r}\n")
        f.write("q\n")
        for v in problem.q:
            f.write(f"{float(v)!r}\n")
        f.write(f"A {a.nnz}\n")
        for i, j, v in zip(a.row, a.col, a.data):
            f.write(f"{i} {j} {float(v)!r}\n")
        f.write("l\n")
        for v in problem.l:
            f.write(f"{float(v)!r}\n")
        f.write("u\n")
        for v in problem.u:
            f.write(f"{float(v)!r}\n")


def load_problem(path) -> QpProblem:
    """Inverse of dump_problem."""
    with open(path) as f:
        head = f.readline().split()
        if len(head) != 3 or head[0] != "qp":
            raise ValueError("not a qp dump file")
        n, m = int(head[1]), int(head[2])

        def read_matrix(tag, shape):
            line = f.readline().split()
            if line[0] != tag:
                raise ValueError(f"expected block {tag}, got {line[0]}")
            nnz = int(line[1])
            rows, cols, vals = [], [], []
            for _ in range(nnz):
                i, j, v = f.readline().split()
                rows.append(int(i))
                cols.append(int(j))
                vals.append(float(v))
            return sp.coo_matrix((vals, (rows, cols)), shape=shape)

        def read_vector(tag, size):
            if f.readline().strip() != tag:
                raise ValueError(f"expected block {tag}")
            return np.array([float(f.readline()) for _ in range(size)])

        p = read_matrix("P", (n, n))
        q = read_vector("q", n)
        a = read_matrix("A", (m, n))
        l = read_vector("l", m)
        u = read_vector("u", m)
    return QpProblem(p=p.tocsc(), q=q, a=a.tocsc(), l=l, u=u)
