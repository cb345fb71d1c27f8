"""Vectorized residual/Jacobian assembly for the solver hot loop.

Groups the problem's cost terms by family and evaluates each family on
packed ``(n, 9)`` state arrays, scattering into a precomputed sparsity
pattern.  Semantically identical to evaluating ``costs.evaluate_term`` /
``costs.term_jacobian`` term by term (the tests cross-check this); only
the obstacle terms, which go through the distance field point by point,
fall back to the per-term reference path.
"""

from __future__ import annotations

import numpy as np

from .costs import (
    EPS_NORM,
    FD_STEP,
    RESIDUAL_CAP,
    CostTerm,
    TermKind,
    evaluate_term,
    term_jacobian,
)

STATE_DIM = 9


def _wrap(a):
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


class _Group:
    """One term family: indices into the path, weights, COO pattern."""

    def __init__(self, kind, terms, col_of):
        self.kind = kind
        self.term_ids = np.array([ti for ti, _ in terms], dtype=int)
        self.terms = [t for _, t in terms]
        self.dim = self.terms[0].dim
        self.idx = np.array([t.indices for t in self.terms], dtype=int)  # (m, nslots)
        self.sqw = np.array([np.sqrt(t.weight) for t in self.terms])     # (m, dim)
        self.row0 = None     # assigned by the assembler
        self.col_of = col_of

    def build_pattern(self):
        m, nslots = self.idx.shape
        rows = (self.row0[:, None, None, None]
                + np.arange(self.dim)[None, None, :, None])
        rows = np.broadcast_to(rows, (m, nslots, self.dim, STATE_DIM))
        cols = (self.idx[:, :, None, None] * STATE_DIM
                + np.arange(STATE_DIM)[None, None, None, :])
        cols = np.broadcast_to(cols, rows.shape)
        mapped = self.col_of[cols.ravel()]
        self.keep = mapped >= 0
        self.pat_rows = rows.ravel()[self.keep]
        self.pat_cols = mapped[self.keep]
        self.val_shape = (m, nslots, self.dim, STATE_DIM)


class TermAssembly:
    """Precompiled evaluation of a fixed term list over packed states."""

    def __init__(self, terms: list[CostTerm], n: int, col_of: np.ndarray):
        self.terms = terms
        self.n = n
        dims = np.array([t.dim for t in terms], dtype=int)
        self.row0_all = np.concatenate([[0], np.cumsum(dims)])[:-1]
        self.n_rows = int(dims.sum())
        by_kind: dict = {}
        for ti, t in enumerate(terms):
            by_kind.setdefault(t.kind, []).append((ti, t))
        self.groups: list[_Group] = []
        self.slow_ids: list[int] = []
        for kind, pairs in by_kind.items():
            if kind is TermKind.OBST_POS_VEL or not self._uniform(kind, pairs):
                self.slow_ids.extend(ti for ti, _ in pairs)
                continue
            g = _Group(kind, pairs, col_of)
            g.row0 = self.row0_all[g.term_ids]
            g.build_pattern()
            self.groups.append(g)
        self._slow_patterns = {}
        self.col_of = col_of

    @staticmethod
    def _uniform(kind, pairs) -> bool:
        t0 = pairs[0][1]
        return all(t.arm is t0.arm and t.timestep == t0.timestep
                   and t.normalized == t0.normalized
                   and t.workspace_radius == t0.workspace_radius
                   for _, t in pairs)

    # -- family evaluators: residual (m, dim) and jacobian (m, nslots, dim, 9)

    def _eval_manip(self, g: _Group, X):
        arm = g.terms[0].arm
        ee = X[g.idx[:, 0], 0:3]
        bxy = X[g.idx[:, 0], 6:8]

        def resid(ee, bxy):
            L = np.hypot(ee[:, 0] - bxy[:, 0], ee[:, 1] - bxy[:, 1])
            D = np.hypot(L, ee[:, 2] - arm.h_b)
            Dc = np.clip(D, abs(arm.l2 - arm.l3) + 1e-6, arm.l2 + arm.l3 - 1e-6)
            m = np.maximum(arm.l2 * arm.l3 * L
                           * np.sin(np.pi * (Dc - arm.l2 + arm.l3) / (2.0 * arm.l3)), 0.0)
            return np.where(m <= 1.0 / RESIDUAL_CAP, RESIDUAL_CAP, 1.0 / np.maximum(m, 1e-300))

        r = resid(ee, bxy)
        jac = np.zeros(g.val_shape)
        for c, (arr, j) in enumerate(((ee, 0), (ee, 1), (ee, 2), (bxy, 0), (bxy, 1))):
            col = (0, 1, 2, 6, 7)[c]
            arr[:, j] += FD_STEP
            hi = resid(ee, bxy)
            arr[:, j] -= 2.0 * FD_STEP
            lo = resid(ee, bxy)
            arr[:, j] += FD_STEP
            jac[:, 0, 0, col] = (hi - lo) / (2.0 * FD_STEP)
        return r[:, None], jac

    def _eval_workspace(self, g: _Group, X, lams):
        arm = g.terms[0].arm
        radius = g.terms[0].workspace_radius
        lam = np.array([lams.get(ti, 0.0) for ti in g.term_ids])
        dxy = X[g.idx[:, 0], 0:2] - X[g.idx[:, 0], 6:8]
        dz = X[g.idx[:, 0], 2] - arm.h_b
        v = np.sum(dxy * dxy, axis=1) + dz * dz - radius * radius
        active = (v > 0.0) & (lam != 0.0)
        r = np.where(active, lam * v, 0.0)
        jac = np.zeros(g.val_shape)
        s = np.where(active, 2.0 * lam, 0.0)
        jac[:, 0, 0, 0] = s * dxy[:, 0]
        jac[:, 0, 0, 1] = s * dxy[:, 1]
        jac[:, 0, 0, 2] = s * dz
        jac[:, 0, 0, 6] = -s * dxy[:, 0]
        jac[:, 0, 0, 7] = -s * dxy[:, 1]
        return r[:, None], jac

    def _eval_accel(self, g: _Group, X):
        t = g.terms[0].timestep
        s = 1.0 / (2.0 * t * t)
        prev = X[g.idx[:, 0], 0:6]
        cur = X[g.idx[:, 1], 0:6]
        nxt = X[g.idx[:, 2], 0:6]
        d1 = nxt - cur
        d0 = cur - prev
        d1[:, 3:6] = _wrap(d1[:, 3:6])
        d0[:, 3:6] = _wrap(d0[:, 3:6])
        r = (d1 - d0) * s
        jac = np.zeros(g.val_shape)
        eye = np.eye(6)
        jac[:, 0, :, 0:6] = eye * s
        jac[:, 1, :, 0:6] = eye * (-2.0 * s)
        jac[:, 2, :, 0:6] = eye * s
        return r, jac

    def _eval_curv(self, g: _Group, X):
        normalized = g.terms[0].normalized
        a = X[g.idx[:, 2], 0:3] - X[g.idx[:, 1], 0:3]
        b = X[g.idx[:, 1], 0:3] - X[g.idx[:, 0], 0:3]
        jac = np.zeros(g.val_shape)
        if normalized:
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            ok = (na > EPS_NORM) & (nb > EPS_NORM)
            na_s = np.where(ok, na, 1.0)
            nb_s = np.where(ok, nb, 1.0)
            ua = a / na_s[:, None]
            ub = b / nb_s[:, None]
            dot = np.sum(ua * ub, axis=1)
            r = np.where(ok, 1.0 - dot, 0.0)
            ga = -(ub - dot[:, None] * ua) / na_s[:, None]
            gb = -(ua - dot[:, None] * ub) / nb_s[:, None]
            ga[~ok] = 0.0
            gb[~ok] = 0.0
        else:
            r = 1.0 - np.sum(a * b, axis=1)
            ga, gb = -b, -a
        jac[:, 2, 0, 0:3] = ga
        jac[:, 1, 0, 0:3] = -ga + gb
        jac[:, 0, 0, 0:3] = -gb
        return r[:, None], jac

    def _eval_heading(self, g: _Group, X):
        dx = X[g.idx[:, 1], 6] - X[g.idx[:, 0], 6]
        dy = X[g.idx[:, 1], 7] - X[g.idx[:, 0], 7]
        L2 = dx * dx + dy * dy
        ok = np.sqrt(L2) >= EPS_NORM
        w = _wrap(X[g.idx[:, 1], 8] - np.arctan2(dy, dx))
        r = np.where(ok, np.abs(w), 0.0)
        s = np.where(ok, np.sign(w), 0.0)
        L2s = np.where(ok, L2, 1.0)
        jac = np.zeros(g.val_shape)
        jac[:, 1, 0, 8] = s
        jac[:, 1, 0, 6] = s * dy / L2s
        jac[:, 1, 0, 7] = -s * dx / L2s
        jac[:, 0, 0, 6] = -s * dy / L2s
        jac[:, 0, 0, 7] = s * dx / L2s
        return r[:, None], jac

    def residuals(self, states, X, lams) -> np.ndarray:
        """Unwhitened residual vector in global row order."""
        r = np.zeros(self.n_rows)
        for g in self.groups:
            rg, _ = self._eval_group(g, X, lams, need_jac=False)
            rows = g.row0[:, None] + np.arange(g.dim)[None, :]
            r[rows] = rg
        for ti in self.slow_ids:
            term = self.terms[ti]
            e = evaluate_term(term, states, lams.get(ti, 0.0))
            r[self.row0_all[ti]:self.row0_all[ti] + term.dim] = e
        return r

    def _eval_group(self, g: _Group, X, lams, need_jac=True):
        if g.kind is TermKind.MANIP:
            return self._eval_manip(g, X)
        if g.kind is TermKind.WORKSPACE:
            return self._eval_workspace(g, X, lams)
        if g.kind is TermKind.EE_ACCEL:
            return self._eval_accel(g, X)
        if g.kind is TermKind.EE_CURV:
            return self._eval_curv(g, X)
        if g.kind is TermKind.BASE_HEADING:
            return self._eval_heading(g, X)
        raise AssertionError(g.kind)

    def assemble(self, states, X, lams):
        """Whitened residual and COO data (rows, cols, vals) over free columns."""
        r = np.zeros(self.n_rows)
        rows_parts, cols_parts, vals_parts = [], [], []
        for g in self.groups:
            rg, jg = self._eval_group(g, X, lams)
            rows = g.row0[:, None] + np.arange(g.dim)[None, :]
            r[rows] = rg * g.sqw
            wj = jg * g.sqw[:, None, :, None]
            rows_parts.append(g.pat_rows)
            cols_parts.append(g.pat_cols)
            vals_parts.append(wj.ravel()[g.keep])
        for ti in self.slow_ids:
            term = self.terms[ti]
            lam = lams.get(ti, 0.0)
            e = evaluate_term(term, states, lam)
            sw = np.sqrt(term.weight)
            r[self.row0_all[ti]:self.row0_all[ti] + term.dim] = sw * e
            pat = self._slow_patterns.get(ti)
            blocks = term_jacobian(term, states, lam)
            if pat is None:
                pat = []
                for slot, idx in enumerate(term.indices):
                    cols = np.arange(idx * STATE_DIM, (idx + 1) * STATE_DIM)
                    mapped = self.col_of[cols]
                    keep = mapped >= 0
                    rr = np.repeat(np.arange(term.dim) + self.row0_all[ti], keep.sum())
                    cc = np.tile(mapped[keep], term.dim)
                    pat.append((rr, cc, keep))
                self._slow_patterns[ti] = pat
            for (rr, cc, keep), blk in zip(pat, blocks):
                rows_parts.append(rr)
                cols_parts.append(cc)
                vals_parts.append((sw[:, None] * blk)[:, keep].ravel())
        if rows_parts:
            return r, (np.concatenate(rows_parts), np.concatenate(cols_parts),
                       np.concatenate(vals_parts))
        return r, (np.zeros(0, int), np.zeros(0, int), np.zeros(0))
