"""Precision floors from the Fisher information of the measurement model.

The weighted-least-squares objective carries Fisher matrix
F = H' diag(1/sigma^2) H.  In the canonical state ordering F is an arrowhead:
the admittance parameters couple to every snapshot block, while distinct
snapshots never couple to each other.  The admittance covariance floor is
therefore the (pseudo-)inverse of the Schur complement

    F_a = F_aa - sum_t  F_at pinv(F_tt) F_at'

accumulated snapshot by snapshot, and the per-snapshot diagonal of the full
inverse follows by back-substitution:

    I_tt = P_t + P_t F_at' I_aa F_at P_t,     P_t = pinv(F_tt).

``SchurSystem`` packages the factored pieces so the same machinery serves
both the precision reports here and the curvature direction of the
estimator.

Forming F_a by that subtraction is numerically safe only while the weights
are tame: with stds spanning several decades the two terms agree to most of
their digits and the difference drowns in rounding noise.  ``eliminate_states``
therefore reduces the weighted Jacobian itself with one orthogonal
factorization per snapshot; the surviving rows R satisfy R'R = F_a exactly,
but their conditioning is that of the Jacobian, not its square.  Passing
those rows to ``build_schur`` swaps the admittance factorization onto the
stable path without changing any contract.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .mlmodel import ModelContext, StateVector, pack
from .netmodel import CandidateSet, NetworkCase
from .powerflow import MeasurementPlan

__all__ = [
    "FisherBlocks",
    "StateElimination",
    "SchurSystem",
    "AdmittanceCrlb",
    "CrlbReport",
    "fisher_blocks",
    "fisher_blocks_from_parts",
    "assemble_fisher_blocks",
    "eliminate_states",
    "build_schur",
    "crlb_admittance",
    "crlb_state_sigma",
    "precision_limits",
    "full_report",
    "full_report_at",
    "schur_at",
    "report_to_json",
    "write_report_json",
    "write_bounds_csv",
]

PINV_CUTOFF = 1e-12

# Cholesky factorizations are only trusted above this reciprocal condition
# number.  A successful cho_factor on a numerically singular matrix returns
# a factor whose inverse is dominated by rounding noise, so conditioning has
# to be checked explicitly.
_RCOND_MIN = 1e-10


@dataclass(frozen=True)
class FisherBlocks:
    """Nonzero blocks of F in the canonical ordering.

    F_aa is (A, A); F_at[t] is (A, w); F_tt[t] is (w, w) with
    w the snapshot width.  Cross-snapshot blocks are zero by construction
    and never stored.
    """

    layout: object
    F_aa: np.ndarray
    F_at: np.ndarray          # (T, A, w)
    F_tt: np.ndarray          # (T, w, w)

    def dense(self) -> np.ndarray:
        """Materialize full (S, S) F — small problems only."""
        lay = self.layout
        F = np.zeros((lay.S, lay.S))
        F[:lay.A, :lay.A] = self.F_aa
        for t in range(lay.T):
            sl = lay.snapshot_slice(t)
            F[:lay.A, sl] = self.F_at[t]
            F[sl, :lay.A] = self.F_at[t].T
            F[sl, sl] = self.F_tt[t]
        return F


def fisher_blocks(ctx: ModelContext, x_flat: np.ndarray,
                  sigma_vec: np.ndarray) -> FisherBlocks:
    """Assemble the blocks of H' diag(1/sigma^2) H at the state x_flat."""
    data, H_s, *_ = ctx.jacobian_parts(x_flat)
    return fisher_blocks_from_parts(ctx, data, H_s, sigma_vec)


def fisher_blocks_from_parts(ctx: ModelContext, data: np.ndarray,
                             H_s: np.ndarray,
                             sigma_vec: np.ndarray) -> FisherBlocks:
    """Fisher blocks from precomputed Jacobian parts (shared with gradient)."""
    lay = ctx.layout
    w_row = (1.0 / np.asarray(sigma_vec, dtype=float) ** 2).reshape(
        lay.T, ctx.m_t)

    # state-state blocks, one batched GEMM
    Hw = H_s * w_row[:, :, None]
    F_tt = np.matmul(H_s.transpose(0, 2, 1), Hw)

    # admittance-admittance: one sparse product over the stacked snapshots
    big = ctx.stacked_csr(data)
    row_w = np.repeat(w_row.reshape(-1), np.diff(big.indptr))
    big_w = big.copy()
    big_w.data = big_w.data * row_w
    F_aa = (big.T @ big_w).toarray()
    F_aa = 0.5 * (F_aa + F_aa.T)

    # admittance-state cross blocks, per snapshot
    F_at = np.empty((lay.T, lay.A, lay.snapshot_width))
    for t in range(lay.T):
        F_at[t] = ctx.snapshot_csr(data[t]).T @ Hw[t]
    return FisherBlocks(lay, F_aa, F_at, F_tt)


def _sigma_vec_from_plan(ctx: ModelContext, x_flat: np.ndarray,
                         plan: MeasurementPlan) -> np.ndarray:
    """Per-entry stds resolved against the model-implied series at x."""
    if plan.sigma is None and plan.noise is None:
        raise ValueError("plan carries no sigma or noise model")
    series = ctx.h(x_flat).reshape(plan.T, ctx.m_t)
    sig_row = np.empty(ctx.m_t)
    for k, chan in enumerate(plan.channels()):
        model = plan.noise_for(chan[0])
        if plan.sigma is not None and chan in plan.sigma:
            sig_row[k] = float(plan.sigma[chan])
        elif model is not None:
            sig_row[k] = model.resolve(series[:, k])
        else:
            raise ValueError(f"no sigma or noise model for channel {chan}")
    return np.tile(sig_row, plan.T)


def assemble_fisher_blocks(x: StateVector, plan: MeasurementPlan,
                           sigma_vec: np.ndarray | None = None) -> FisherBlocks:
    """Fisher blocks at x; stds resolve from the plan unless given."""
    ctx = ModelContext(x.layout, plan)
    flat = pack(x)
    if sigma_vec is None:
        sigma_vec = _sigma_vec_from_plan(ctx, flat, plan)
    return fisher_blocks(ctx, flat, sigma_vec)


# --------------------------------------------------------------------------
# orthogonal elimination of the snapshot blocks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StateElimination:
    """Weighted Jacobian after QR-eliminating every (V, theta) block.

    Each snapshot's rows [H_a | H_s | r] / sigma are rotated by the Q of its
    state block; the first k = min(m_t, w) rows keep the triangular state
    factor for back-substitution, the remainder depend on the admittance
    parameters alone.  ``rows`` stacks those remainders over snapshots, so
    rows' rows = F_a holds exactly while every entry comes straight from the
    Jacobian — no large Gram matrices are ever differenced.
    """

    layout: object
    rows: np.ndarray              # (T * max(m_t - w, 0), A)
    top_R: np.ndarray             # (T, k, w) upper-trapezoidal state factors
    top_C: np.ndarray             # (T, k, A)
    rhs: np.ndarray | None        # rotated residual, stacked bottom parts
    top_rhs: np.ndarray | None    # rotated residual, per-snapshot top parts

    def direction(self, cutoff: float = PINV_CUTOFF,
                  sig: float = 0.0) -> np.ndarray:
        """Exact minimizer of the linearized weighted least squares.

        Solves min_d ||(H d - r) / sigma|| over the full state, i.e. the
        curvature step satisfying F d = H' diag(1/sigma^2) r.  Rank
        deficiencies fall back to minimum-norm solutions with the
        singular-value analogue of ``cutoff`` (its square root, since the
        Fisher eigenvalues are squared singular values).

        ``sig > 0`` additionally zeroes every admittance SVD component whose
        residual projection is statistically insignificant.  The rows are
        sigma-weighted, so under pure Gaussian noise each projection is a
        standard normal draw: keeping only |u'r| > sig moves the admittances
        along directions the data actually demands and leaves the sloppy
        rest untouched instead of setting them to their noise-fitting
        least-squares values.
        """
        if self.rhs is None:
            raise ValueError("elimination was built without a residual")
        lay = self.layout
        rcond = float(np.sqrt(cutoff))
        if self.rows.size and sig > 0.0:
            U, s, Vt = np.linalg.svd(self.rows, full_matrices=False)
            coef = U.T @ self.rhs
            keep = (s > rcond * s[0]) & (np.abs(coef) > sig)
            d_a = Vt.T @ np.where(keep, coef / np.where(s > 0, s, 1.0), 0.0)
        elif self.rows.size:
            d_a = np.linalg.lstsq(self.rows, self.rhs, rcond=rcond)[0]
        else:
            d_a = np.zeros(lay.A)
        res = self.top_rhs - self.top_C @ d_a
        d_t = np.empty((lay.T, lay.snapshot_width))
        for t in range(lay.T):
            d_t[t] = np.linalg.lstsq(self.top_R[t], res[t], rcond=rcond)[0]
        return np.concatenate([d_a, d_t.reshape(-1)])


def eliminate_states(ctx: ModelContext, data: np.ndarray, H_s: np.ndarray,
                     sigma_vec: np.ndarray, r: np.ndarray | None = None,
                     chunk: int = 16) -> StateElimination:
    """Per-snapshot QR reduction of the weighted Jacobian (and residual).

    ``data``/``H_s`` are the parts from ``ModelContext.jacobian_parts``;
    pass ``r = z - h(x)`` to also prepare the right-hand side needed by
    ``StateElimination.direction``.  Snapshots are processed in chunks to
    bound the dense admittance-block scratch space.
    """
    lay = ctx.layout
    T, m, w, A = lay.T, ctx.m_t, lay.snapshot_width, lay.A
    sw = (1.0 / np.asarray(sigma_vec, dtype=float)).reshape(T, m)
    k = min(m, w)
    nb = max(m - w, 0)
    rows = np.empty((T * nb, A))
    top_R = np.empty((T, k, w))
    top_C = np.empty((T, k, A))
    rhs = top_rhs = None
    if r is not None:
        rw = r.reshape(T, m) * sw
        rhs = np.empty(T * nb)
        top_rhs = np.empty((T, k))
    for lo in range(0, T, chunk):
        hi = min(lo + chunk, T)
        sl = slice(lo, hi)
        Bw = H_s[sl] * sw[sl][:, :, None]
        Aw = np.empty((hi - lo, m, A))
        for t in range(lo, hi):
            Aw[t - lo] = ctx.snapshot_csr(data[t]).toarray()
        Aw *= sw[sl][:, :, None]
        Q, R = np.linalg.qr(Bw, mode="complete")
        Qt = Q.transpose(0, 2, 1)
        top_R[sl] = R[:, :k, :]
        C = Qt @ Aw
        top_C[sl] = C[:, :k, :]
        rows[lo * nb:hi * nb] = C[:, w:, :].reshape(-1, A)
        if r is not None:
            qr_ = (Qt @ rw[sl][:, :, None])[..., 0]
            top_rhs[sl] = qr_[:, :k]
            rhs[lo * nb:hi * nb] = qr_[:, w:].reshape(-1)
    return StateElimination(lay, rows, top_R, top_C, rhs, top_rhs)


# --------------------------------------------------------------------------
# partitioned solves
# --------------------------------------------------------------------------

def _eigh_pinv_batch(Ms: np.ndarray, cutoff: float):
    """Pseudo-inverses of a (T, w, w) stack of symmetric PSD matrices."""
    lam, U = np.linalg.eigh(Ms)
    lmax = np.maximum(lam[..., -1:], 0.0)
    keep = lam > cutoff * lmax
    inv = np.where(keep, 1.0, 0.0) / np.where(keep, lam, 1.0)
    return np.matmul(U * inv[..., None, :], U.transpose(0, 2, 1)), (lam, U, keep)


@dataclass
class SchurSystem:
    """Factored arrowhead system: solve F d = rhs and read diag(pinv(F)).

    ``F_a`` is the admittance-block Schur complement; ``ftt_pinv`` holds the
    per-snapshot pseudo-inverses P_t.  The F_a factorization prefers Cholesky
    but only keeps it when the estimated reciprocal condition number clears
    ``_RCOND_MIN``; otherwise (and whenever F_a is not positive definite) it
    uses an eigendecomposition pseudo-inverse with relative cutoff ``cutoff``.
    ``rank`` and ``null_dominant`` report any deficiency.

    When ``adm_rows`` (from ``eliminate_states``) is supplied, F_a and its
    pseudo-inverse come from the SVD of those rows instead of the blockwise
    subtraction, which keeps the admittance bound accurate under wildly
    mixed measurement weights.
    """

    blocks: FisherBlocks
    cutoff: float = PINV_CUTOFF
    adm_rows: np.ndarray | None = None
    F_a: np.ndarray = field(init=False)
    ftt_pinv: np.ndarray = field(init=False)

    def __post_init__(self):
        blk = self.blocks
        self.ftt_pinv, (lam, U, keep) = _eigh_pinv_batch(blk.F_tt, self.cutoff)
        self._cho = None
        self._pinv = None
        self._rank = None
        self._null_mass = None
        A = blk.layout.A
        if self.adm_rows is not None:
            self.F_a = self.adm_rows.T @ self.adm_rows
            self._factor_rows(self.adm_rows)
            return
        # R_t = F_at P_t^(1/2) so that sum_t R_t R_t' is symmetric PSD
        half = np.sqrt(np.where(keep, 1.0, 0.0) / np.where(keep, lam, 1.0))
        R = np.matmul(blk.F_at, U * half[..., None, :])        # (T, A, w)
        Z = R.transpose(1, 0, 2).reshape(A, -1)
        self.F_a = blk.F_aa - Z @ Z.T
        self.F_a = 0.5 * (self.F_a + self.F_a.T)
        anorm = float(np.abs(self.F_a).sum(axis=0).max())
        try:
            cho = sla.cho_factor(self.F_a, lower=True)
        except np.linalg.LinAlgError:
            self._factor_eigh()
            return
        rcond, info = lapack.dpocon(cho[0], anorm, uplo=b"L")
        if info == 0 and rcond >= _RCOND_MIN:
            self._cho = cho
            self._rank = A
        else:
            self._factor_eigh()

    def _factor_rows(self, rows: np.ndarray):
        A = self.blocks.layout.A
        if rows.size == 0:
            self._pinv = np.zeros((A, A))
            self._rank = 0
            self._null_mass = np.ones(A)
            return
        s, Vt = np.linalg.svd(rows, full_matrices=False)[1:]
        # Fisher eigenvalues are the squared singular values, so the
        # eigenvalue cutoff translates to sqrt(cutoff) on s.
        keep = s > np.sqrt(self.cutoff) * s[0]
        inv2 = np.where(keep, 1.0, 0.0) / np.where(keep, s ** 2, 1.0)
        self._pinv = (Vt.T * inv2) @ Vt
        self._rank = int(keep.sum())
        if self._rank == A:
            self._null_mass = None
        else:
            self._null_mass = 1.0 - (Vt[keep] ** 2).sum(axis=0)

    def _factor_eigh(self):
        lam, U = np.linalg.eigh(self.F_a)
        lmax = max(float(lam[-1]), 0.0)
        keep = lam > self.cutoff * lmax
        inv = np.where(keep, 1.0, 0.0) / np.where(keep, lam, 1.0)
        self._pinv = (U * inv) @ U.T
        self._rank = int(keep.sum())
        null = U[:, ~keep]
        self._null_mass = (null ** 2).sum(axis=1) if null.size else None

    @property
    def rank(self) -> int:
        return self._rank

    @property
    def null_dominant(self) -> list[int]:
        """Admittance-parameter indices carrying the bulk of the null space."""
        if self._null_mass is None:
            return []
        top = self._null_mass.max()
        if top <= 0:
            return []
        return list(np.nonzero(self._null_mass >= 0.5 * top)[0])

    def solve_admittance(self, rhs_a: np.ndarray) -> np.ndarray:
        if self._cho is not None:
            return sla.cho_solve(self._cho, rhs_a)
        return self._pinv @ rhs_a

    @cached_property
    def admittance_cov(self) -> np.ndarray:
        """pinv(F_a): covariance floor for the admittance parameters."""
        if self._cho is not None:
            return sla.cho_solve(self._cho, np.eye(self.F_a.shape[0]))
        return self._pinv

    def reduce(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Condense a full gradient onto the admittance block.

        Returns (rhs_a, Pg) where Pg[t] = P_t g_t is kept for
        back-substitution.
        """
        lay = self.blocks.layout
        g_a = grad[:lay.A]
        g_t = grad[lay.A:].reshape(lay.T, lay.snapshot_width)
        Pg = np.matmul(self.ftt_pinv, g_t[:, :, None])[..., 0]
        corr = np.einsum("taw,tw->a", self.blocks.F_at, Pg)
        return g_a - corr, Pg

    def newton_direction(self, grad: np.ndarray) -> np.ndarray:
        """d with F d = -grad, using the arrowhead partition."""
        lay = self.blocks.layout
        rhs_a, Pg = self.reduce(grad)
        d_a = self.solve_admittance(-rhs_a)
        lift = np.matmul(self.blocks.F_at.transpose(0, 2, 1),
                         d_a[None, :, None])[..., 0]          # (T, w)
        d_t = -(Pg + np.matmul(self.ftt_pinv, lift[:, :, None])[..., 0])
        return np.concatenate([d_a, d_t.reshape(-1)])

    def inverse_diag(self) -> np.ndarray:
        """diag of pinv(F) over the full state, shape (S,)."""
        lay = self.blocks.layout
        I_aa = self.admittance_cov
        out = np.empty(lay.S)
        out[:lay.A] = np.diag(I_aa)
        # M_t = F_at P_t; diag of P_t + M_t' I_aa M_t
        M = np.matmul(self.blocks.F_at, self.ftt_pinv)        # (T, A, w)
        A = lay.A
        M2 = M.transpose(1, 0, 2).reshape(A, -1)
        Y = I_aa @ M2
        extra = (M2 * Y).sum(axis=0).reshape(lay.T, lay.snapshot_width)
        diag_p = np.diagonal(self.ftt_pinv, axis1=1, axis2=2)
        out[lay.A:] = (diag_p + extra).reshape(-1)
        return out


def build_schur(blocks: FisherBlocks, cutoff: float = PINV_CUTOFF,
                adm_rows: np.ndarray | None = None) -> SchurSystem:
    return SchurSystem(blocks, cutoff, adm_rows)


@dataclass(frozen=True)
class AdmittanceCrlb:
    """Covariance floor of the admittance block and its factored system."""

    cov: np.ndarray           # (A, A)
    sigma_cr: np.ndarray      # (A,)
    system: SchurSystem

    @property
    def rank(self) -> int:
        return self.system.rank

    @property
    def null_dominant(self) -> list[int]:
        return self.system.null_dominant


def crlb_admittance(blocks: FisherBlocks,
                    cutoff: float = PINV_CUTOFF) -> AdmittanceCrlb:
    """Covariance lower bound for (g, b) via the partitioned inverse."""
    system = build_schur(blocks, cutoff)
    cov = system.admittance_cov
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return AdmittanceCrlb(cov, sigma, system)


def crlb_state_sigma(system: SchurSystem) -> np.ndarray:
    """Per-parameter std floor over the full state vector, shape (S,)."""
    return np.sqrt(np.clip(system.inverse_diag(), 0.0, None))


# --------------------------------------------------------------------------
# precision metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CrlbReport:
    """Reads the admittance bound as topology / admittance precision limits.

    A true branch counts as unidentifiable when the std floor of either of
    its parameters reaches the parameter's own magnitude — the hypothesis
    "this branch is absent" then sits within one std of the truth.
    """

    sigma_cr: np.ndarray
    topology_limit_pct: float
    admittance_limit_pct: float
    unidentifiable_branches: list[tuple[int, int]]
    rank: int = -1                 # -1: deficiency not assessed
    null_dominant: list[int] = field(default_factory=list)


def precision_limits(crlb_diag: np.ndarray, case: NetworkCase,
                     cset: CandidateSet) -> CrlbReport:
    """Table-style precision metrics from per-parameter std floors.

    ``crlb_diag`` is the (A,) vector of std floors in candidate order
    (all g, then all b), evaluated at the true state.
    """
    sigma = np.asarray(crlb_diag, dtype=float)
    P = len(cset)
    if sigma.shape != (2 * P,):
        raise ValueError(f"expected {2 * P} stds, got {sigma.shape}")
    index = cset.index_of()
    unidentifiable = []
    ratios = []
    for br in case.branches:
        if br.pair not in index:
            raise ValueError(f"true branch {br.pair} missing from candidates")
        p = index[br.pair]
        for true_val, s in ((br.g, sigma[p]), (br.b, sigma[P + p])):
            if abs(true_val) < 1e-9:
                continue
            ratios.append(s / abs(true_val))
        if sigma[p] >= abs(br.g) or sigma[P + p] >= abs(br.b):
            unidentifiable.append(br.pair)
    n_true = len(case.branches)
    topo = 100.0 * len(unidentifiable) / n_true if n_true else 0.0
    ratios = np.asarray(ratios)
    if ratios.size == 0 or np.any(ratios <= 0):
        adm = 0.0
    else:
        adm = 100.0 * float(np.exp(np.mean(np.log(ratios))))
    return CrlbReport(sigma, topo, adm, unidentifiable)


def full_report(blocks: FisherBlocks, case: NetworkCase, cset: CandidateSet,
                cutoff: float = PINV_CUTOFF) -> CrlbReport:
    """Convenience: bound + metrics + rank bookkeeping in one call."""
    adm = crlb_admittance(blocks, cutoff)
    rep = precision_limits(adm.sigma_cr, case, cset)
    return CrlbReport(rep.sigma_cr, rep.topology_limit_pct,
                      rep.admittance_limit_pct, rep.unidentifiable_branches,
                      rank=adm.rank, null_dominant=adm.null_dominant)


def schur_at(x: StateVector, plan: MeasurementPlan,
             sigma_vec: np.ndarray | None = None,
             cutoff: float = PINV_CUTOFF) -> SchurSystem:
    """Factored Fisher system at x with the admittance block taken from the
    eliminated Jacobian rows (the weight-spread-safe path)."""
    ctx = ModelContext(x.layout, plan)
    flat = pack(x)
    if sigma_vec is None:
        sigma_vec = _sigma_vec_from_plan(ctx, flat, plan)
    data, H_s, *_ = ctx.jacobian_parts(flat)
    blocks = fisher_blocks_from_parts(ctx, data, H_s, sigma_vec)
    rows = eliminate_states(ctx, data, H_s, sigma_vec).rows
    return build_schur(blocks, cutoff, rows)


def full_report_at(x: StateVector, plan: MeasurementPlan, case: NetworkCase,
                   cset: CandidateSet, sigma_vec: np.ndarray | None = None,
                   cutoff: float = PINV_CUTOFF) -> CrlbReport:
    """Precision limits evaluated at the state x under the given plan."""
    system = schur_at(x, plan, sigma_vec, cutoff)
    sigma = np.sqrt(np.clip(np.diag(system.admittance_cov), 0.0, None))
    rep = precision_limits(sigma, case, cset)
    return CrlbReport(rep.sigma_cr, rep.topology_limit_pct,
                      rep.admittance_limit_pct, rep.unidentifiable_branches,
                      rank=system.rank, null_dominant=system.null_dominant)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def report_to_json(report: CrlbReport) -> str:
    payload = {
        "topology_limit_pct": report.topology_limit_pct,
        "admittance_limit_pct": report.admittance_limit_pct,
        "unidentifiable_branches": [list(p) for p in
                                    report.unidentifiable_branches],
        "rank": report.rank,
        "null_dominant_params": list(map(int, report.null_dominant)),
        "sigma_cr": [float(s) for s in report.sigma_cr],
    }
    return json.dumps(payload, indent=2)


def write_report_json(path: str, report: CrlbReport) -> None:
    with open(path, "w") as f:
        f.write(report_to_json(report))
        f.write("\n")


def write_bounds_csv(path: str, case: NetworkCase, cset: CandidateSet,
                     sigma_cr: np.ndarray) -> None:
    """Rows: branch, param in {g, b}, true_value, sigma_cr."""
    by_pair = {br.pair: (br.g, br.b) for br in case.branches}
    P = len(cset)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["branch", "param", "true_value", "sigma_cr"])
        for which, off in (("g", 0), ("b", P)):
            for p, pair in enumerate(cset.pairs):
                true = by_pair.get(pair, (0.0, 0.0))[0 if which == "g" else 1]
                wr.writerow([f"{pair[0]}-{pair[1]}", which, repr(true),
                             repr(float(sigma_cr[off + p]))])
