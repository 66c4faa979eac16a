"""The estimation problem: state vector, forward model, loss and Jacobian.

State vector layout (flat, length S): all candidate conductances g, then all
candidate susceptances b, then for each snapshot t the voltage-magnitude
block followed by the angle block.  With slack pinning (default) the slack
angle is removed from every snapshot block, so

    S = 2 * n_pairs + T * (2N - 1).

The forward model h(x) evaluates, in the canonical measurement order
(per snapshot: P, Q, V, TH), the AC injection equations at the admittance
matrices built from (g, b) over the candidate set.

Derivatives w.r.t. a candidate pair p = (k, l) follow from the chain rule
through G/B assembly; only the two endpoint rows are affected:

    dP_k/dg_p = V_k (V_k - V_l cos th_kl)     dP_k/db_p = -V_k V_l sin th_kl
    dQ_k/dg_p = -V_k V_l sin th_kl            dQ_k/db_p = -V_k (V_k - V_l cos th_kl)

(and symmetrically for endpoint l).  V- and TH-rows are unit selectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .injections import bus_injections, injection_jacobian
from .netmodel import CandidateSet
from .powerflow import GroundTruth, MeasurementPlan, MeasurementTensor

__all__ = [
    "StateLayout",
    "StateVector",
    "Residuals",
    "JacobianH",
    "ModelContext",
    "make_layout",
    "eval_h",
    "eval_loss",
    "eval_jacobian",
    "eval_gradient",
    "pack",
    "unpack",
    "state_from_truth",
]


@dataclass(frozen=True)
class StateLayout:
    """Index bookkeeping for the flat state ordering."""

    cset: CandidateSet
    n_bus: int
    T: int
    slack_bus: int
    pin_slack: bool = True

    @property
    def n_pairs(self) -> int:
        return len(self.cset)

    @property
    def A(self) -> int:
        """Number of admittance parameters (g and b)."""
        return 2 * self.n_pairs

    @property
    def snapshot_width(self) -> int:
        return 2 * self.n_bus - (1 if self.pin_slack else 0)

    @property
    def S(self) -> int:
        return self.A + self.T * self.snapshot_width

    def theta_buses(self) -> np.ndarray:
        """0-based bus indices of the angle entries within a snapshot block."""
        buses = np.arange(self.n_bus)
        if self.pin_slack:
            buses = buses[buses != self.slack_bus - 1]
        return buses

    def snapshot_slice(self, t: int) -> slice:
        w = self.snapshot_width
        return slice(self.A + t * w, self.A + (t + 1) * w)


@dataclass(frozen=True)
class StateVector:
    """Structured view of one state: candidate (g, b) plus all snapshots."""

    layout: StateLayout
    g: np.ndarray           # (n_pairs,)
    b: np.ndarray           # (n_pairs,)
    V: np.ndarray           # (T, N)
    theta: np.ndarray       # (T, N); theta[:, slack-1] is 0 when pinned


@dataclass(frozen=True)
class Residuals:
    r: np.ndarray
    weighted_loss: float


@dataclass(frozen=True)
class JacobianH:
    """Per-snapshot Jacobian blocks of h (rows: snapshot measurements).

    H_a[t] is (m_t, A) — derivatives w.r.t. the admittance parameters;
    H_s[t] is (m_t, snapshot_width) — derivatives w.r.t. snapshot t's own
    (V, theta) block.  Cross-snapshot blocks are zero by construction.
    """

    layout: StateLayout
    H_a: np.ndarray          # (T, m_t, A)
    H_s: np.ndarray          # (T, m_t, w)

    def dense(self) -> np.ndarray:
        """Materialize the full M x S matrix (small problems only)."""
        lay = self.layout
        T, m_t, w = self.H_s.shape
        H = np.zeros((T * m_t, lay.S))
        for t in range(T):
            rows = slice(t * m_t, (t + 1) * m_t)
            H[rows, : lay.A] = self.H_a[t]
            H[rows, lay.snapshot_slice(t)] = self.H_s[t]
        return H


def make_layout(n_bus: int, cset: CandidateSet, T: int, slack_bus: int,
                pin_slack: bool = True) -> StateLayout:
    return StateLayout(cset, n_bus, T, slack_bus, pin_slack)


def pack(x: StateVector) -> np.ndarray:
    """Flatten a StateVector to the canonical S-vector."""
    lay = x.layout
    th = x.theta[:, lay.theta_buses()]
    snaps = np.concatenate([x.V, th], axis=1)          # (T, w)
    return np.concatenate([x.g, x.b, snaps.reshape(-1)])


def unpack(flat: np.ndarray, layout: StateLayout) -> StateVector:
    """Inverse of pack; raises on length mismatch."""
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (layout.S,):
        raise ValueError(f"state length {flat.shape} != ({layout.S},)")
    P = layout.n_pairs
    g = flat[:P].copy()
    b = flat[P:2 * P].copy()
    snaps = flat[layout.A:].reshape(layout.T, layout.snapshot_width)
    V = snaps[:, :layout.n_bus].copy()
    theta = np.zeros((layout.T, layout.n_bus))
    theta[:, layout.theta_buses()] = snaps[:, layout.n_bus:]
    return StateVector(layout, g, b, V, theta)


def state_from_truth(truth: GroundTruth, cset: CandidateSet,
                     pin_slack: bool = True) -> StateVector:
    """Ground-truth StateVector on a candidate set (absent pairs get 0)."""
    case = truth.case
    lay = make_layout(case.bus_count, cset, truth.T, case.slack_bus, pin_slack)
    by_pair = {br.pair: (br.g, br.b) for br in case.branches}
    g = np.array([by_pair.get(p, (0.0, 0.0))[0] for p in cset.pairs])
    b = np.array([by_pair.get(p, (0.0, 0.0))[1] for p in cset.pairs])
    return StateVector(lay, g, b, truth.V.copy(), truth.theta.copy())


# --------------------------------------------------------------------------
# evaluation engine
# --------------------------------------------------------------------------

class ModelContext:
    """Precomputed index structure for fast repeated evaluation.

    Bound to one (layout, plan) pair.  All heavy methods accept flat state
    vectors; loss evaluation additionally supports batches of states (used
    by the line search).
    """

    def __init__(self, layout: StateLayout, plan: MeasurementPlan):
        if plan.T != layout.T:
            raise ValueError("plan and layout disagree on T")
        self.layout = layout
        self.plan = plan
        n = layout.n_bus
        self.kk = np.array([p[0] - 1 for p in layout.cset.pairs], dtype=int)
        self.ll = np.array([p[1] - 1 for p in layout.cset.pairs], dtype=int)

        self.mp = np.array(plan.m_p, dtype=int) - 1
        self.mq = np.array(plan.m_q, dtype=int) - 1
        self.mv = np.array(plan.m_v, dtype=int) - 1
        self.mth = np.array(plan.m_th, dtype=int) - 1
        self.m_t = plan.per_snapshot

        # row offsets of the quantity blocks inside one snapshot
        self.off_p = 0
        self.off_q = len(self.mp)
        self.off_v = self.off_q + len(self.mq)
        self.off_th = self.off_v + len(self.mv)

        # theta state columns: bus -> column inside the snapshot block, or -1
        th_buses = layout.theta_buses()
        self.th_col = np.full(n, -1, dtype=int)
        self.th_col[th_buses] = n + np.arange(len(th_buses))
        self.n_th_state = len(th_buses)

        self._build_admittance_index()
        self._build_sparse_structure()

    # -- admittance scatter ------------------------------------------------
    def _build_admittance_index(self):
        n = self.layout.n_bus
        P = self.layout.n_pairs
        rows = np.concatenate([self.kk, self.ll, self.kk, self.ll])
        cols = np.concatenate([self.ll, self.kk, self.kk, self.ll])
        # off-diagonal entries get -value, diagonals +value
        self._adm_rows = rows
        self._adm_cols = cols
        self._adm_sign = np.concatenate(
            [-np.ones(2 * P), np.ones(2 * P)])
        self._adm_pair = np.tile(np.arange(P), 4)
        self._n = n

    def admittance(self, g: np.ndarray, b: np.ndarray):
        """(G, B) for per-pair values; supports batched leading dims."""
        n = self._n
        lead = g.shape[:-1]
        G = np.zeros(lead + (n, n))
        B = np.zeros(lead + (n, n))
        vals_g = self._adm_sign * g[..., self._adm_pair]
        vals_b = self._adm_sign * b[..., self._adm_pair]
        np.add.at(G, (Ellipsis, self._adm_rows, self._adm_cols), vals_g)
        np.add.at(B, (Ellipsis, self._adm_rows, self._adm_cols), vals_b)
        return G, B

    # -- sparse admittance-block structure ----------------------------------
    def _build_sparse_structure(self):
        """COO pattern of the (P,Q)-rows x (g,b)-columns block of H.

        Each nonzero is described by (row, col, source, pair, sign) where
        source indexes the per-iteration value arrays
        [E1_k, E1_l, E2_k, E2_l] (see module docstring).
        """
        P = self.layout.n_pairs
        n = self.layout.n_bus
        pos_p = np.full(n, -1, dtype=int)
        pos_p[self.mp] = np.arange(len(self.mp))
        pos_q = np.full(n, -1, dtype=int)
        pos_q[self.mq] = np.arange(len(self.mq))

        rows, cols, srcs, pair_ids, signs = [], [], [], [], []

        def add(bus_pos, row_off, col_off, src, sign):
            # one endpoint family across all pairs; keep only measured rows
            mask = bus_pos >= 0
            pid = np.nonzero(mask)[0]
            rows.append(row_off + bus_pos[mask])
            cols.append(col_off + pid)
            srcs.append(np.full(pid.size, src))
            pair_ids.append(pid)
            signs.append(np.full(pid.size, sign, dtype=float))

        posp_k, posp_l = pos_p[self.kk], pos_p[self.ll]
        posq_k, posq_l = pos_q[self.kk], pos_q[self.ll]
        # dP/dg: E1;  dP/db: E2;  dQ/dg: E2;  dQ/db: -E1
        add(posp_k, self.off_p, 0, 0, +1.0)   # P_k, g col, E1_k
        add(posp_l, self.off_p, 0, 1, +1.0)   # P_l, g col, E1_l
        add(posp_k, self.off_p, P, 2, +1.0)   # P_k, b col, E2_k
        add(posp_l, self.off_p, P, 3, +1.0)
        add(posq_k, self.off_q, 0, 2, +1.0)   # Q_k, g col, E2_k
        add(posq_l, self.off_q, 0, 3, +1.0)
        add(posq_k, self.off_q, P, 0, -1.0)   # Q_k, b col, -E1_k
        add(posq_l, self.off_q, P, 1, -1.0)

        self._nz_row = np.concatenate(rows) if rows else np.zeros(0, int)
        self._nz_col = np.concatenate(cols) if cols else np.zeros(0, int)
        self._nz_src = np.concatenate(srcs) if srcs else np.zeros(0, int)
        self._nz_pair = np.concatenate(pair_ids) if pair_ids else np.zeros(0, int)
        self._nz_sign = np.concatenate(signs) if signs else np.zeros(0)
        # fixed CSR skeleton for one snapshot
        coo = sp.coo_matrix(
            (np.arange(self._nz_row.size, dtype=float),
             (self._nz_row, self._nz_col)),
            shape=(self.m_t, self.layout.A))
        csr = coo.tocsr()
        self._csr_indptr = csr.indptr
        self._csr_indices = csr.indices
        # permutation mapping original nonzero order -> CSR data order
        self._csr_perm = csr.data.astype(int)

    # -- forward model -------------------------------------------------------
    def _split(self, X: np.ndarray):
        """Views of a (..., S) state batch: g, b, V, theta (full N columns)."""
        lay = self.layout
        P = lay.n_pairs
        g = X[..., :P]
        b = X[..., P:2 * P]
        snaps = X[..., lay.A:].reshape(X.shape[:-1] + (lay.T, lay.snapshot_width))
        V = snaps[..., :lay.n_bus]
        th_part = snaps[..., lay.n_bus:]
        theta = np.zeros(X.shape[:-1] + (lay.T, lay.n_bus))
        theta[..., lay.theta_buses()] = th_part
        return g, b, V, theta

    def h(self, x_flat: np.ndarray) -> np.ndarray:
        """Model output, shape (M,) for a single state or (K, M) batched."""
        X = np.atleast_2d(np.asarray(x_flat, dtype=float))
        g, b, V, theta = self._split(X)
        G, B = self.admittance(g, b)
        Pinj, Qinj = bus_injections(G[:, None], B[:, None], V, theta)
        K = X.shape[0]
        out = np.empty((K, self.layout.T, self.m_t))
        out[..., self.off_p:self.off_q] = Pinj[..., self.mp]
        out[..., self.off_q:self.off_v] = Qinj[..., self.mq]
        out[..., self.off_v:self.off_th] = V[..., self.mv]
        out[..., self.off_th:] = theta[..., self.mth]
        out = out.reshape(K, -1)
        return out[0] if np.ndim(x_flat) == 1 else out

    def residual(self, x_flat: np.ndarray, z: MeasurementTensor) -> np.ndarray:
        return z.z - self.h(x_flat)

    def loss(self, x_flat: np.ndarray, z: MeasurementTensor):
        """Weighted squared loss; batched if x_flat is (K, S)."""
        r = (self.residual(x_flat, z) / z.sigma_vec) ** 2
        return r.sum(axis=-1)

    # -- Jacobian pieces -----------------------------------------------------
    def _edge_values(self, V, theta):
        """E-source arrays, shape (4, T, n_pairs): [E1_k, E1_l, E2_k, E2_l]."""
        Vk, Vl = V[:, self.kk], V[:, self.ll]
        th_kl = theta[:, self.kk] - theta[:, self.ll]
        cos, sin = np.cos(th_kl), np.sin(th_kl)
        E = np.empty((4,) + Vk.shape)
        E[0] = Vk * (Vk - Vl * cos)
        E[1] = Vl * (Vl - Vk * cos)
        E[2] = -Vk * Vl * sin
        E[3] = -E[2]         # sin th_lk = -sin th_kl
        return E

    def admittance_jacobian_data(self, V, theta) -> np.ndarray:
        """Per-snapshot CSR data of the sparse (P,Q) x (g,b) block, (T, nnz)."""
        E = self._edge_values(V, theta)
        data = self._nz_sign * E[self._nz_src, :, self._nz_pair].T
        # reorder to the CSR skeleton's data layout
        return data[:, self._csr_perm] if data.size else data.reshape(V.shape[0], 0)

    def snapshot_csr(self, data_t: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data_t, self._csr_indices, self._csr_indptr),
                             shape=(self.m_t, self.layout.A))

    def stacked_csr(self, data: np.ndarray) -> sp.csr_matrix:
        """All T snapshot blocks stacked vertically, (T*m_t, A)."""
        T = self.layout.T
        nnz = self._csr_indices.size
        indptr = (self._csr_indptr[:-1][None, :]
                  + nnz * np.arange(T)[:, None]).reshape(-1)
        indptr = np.append(indptr, T * nnz)
        return sp.csr_matrix(
            (data.reshape(-1), np.tile(self._csr_indices, T), indptr),
            shape=(T * self.m_t, self.layout.A))

    def state_jacobian(self, G, B, V, theta) -> np.ndarray:
        """Dense (T, m_t, w) block of derivatives w.r.t. (V, theta)."""
        lay = self.layout
        T, n, w = lay.T, lay.n_bus, lay.snapshot_width
        dP_dth, dP_dV, dQ_dth, dQ_dV = injection_jacobian(G, B, V, theta)
        th_buses = lay.theta_buses()
        H = np.zeros((T, self.m_t, w))
        H[:, self.off_p:self.off_q, :n] = dP_dV[:, self.mp]
        H[:, self.off_p:self.off_q, n:] = dP_dth[:, self.mp][:, :, th_buses]
        H[:, self.off_q:self.off_v, :n] = dQ_dV[:, self.mq]
        H[:, self.off_q:self.off_v, n:] = dQ_dth[:, self.mq][:, :, th_buses]
        rows = np.arange(len(self.mv))
        H[:, self.off_v + rows, self.mv] = 1.0
        for i, bus in enumerate(self.mth):
            col = self.th_col[bus]
            if col >= 0:
                H[:, self.off_th + i, col] = 1.0
        return H

    def jacobian_parts(self, x_flat: np.ndarray):
        """(adm_data (T, nnz), H_s (T, m_t, w), G, B, V, theta) at x."""
        g, b, V, theta = self._split(np.asarray(x_flat, dtype=float))
        G, B = self.admittance(g, b)
        data = self.admittance_jacobian_data(V, theta)
        H_s = self.state_jacobian(G, B, V, theta)
        return data, H_s, G, B, V, theta

    def gradient(self, x_flat: np.ndarray, z: MeasurementTensor) -> np.ndarray:
        """Analytic gradient of the weighted loss, shape (S,)."""
        data, H_s, *_ = self.jacobian_parts(x_flat)
        r = self.residual(x_flat, z)
        return self.gradient_from_parts(data, H_s, r, z.sigma_vec)

    def gradient_from_parts(self, data, H_s, r, sigma_vec) -> np.ndarray:
        """Gradient given precomputed Jacobian parts and residual z - h."""
        lay = self.layout
        wres = (2.0 * r / sigma_vec**2).reshape(lay.T, self.m_t)
        grad = np.zeros(lay.S)
        if self._nz_row.size:
            contrib = data * wres[:, self._csr_row_of_nz]
            np.add.at(grad, self._csr_indices, -contrib.sum(axis=0))
        grad[lay.A:] = -np.einsum("tmw,tm->tw", H_s, wres).reshape(-1)
        return grad

    @property
    def _csr_row_of_nz(self):
        """Row index of every CSR nonzero (cached)."""
        try:
            return self.__rowexp
        except AttributeError:
            rows = np.repeat(np.arange(self.m_t), np.diff(self._csr_indptr))
            self.__rowexp = rows
            return rows

    def jacobian(self, x_flat: np.ndarray) -> JacobianH:
        """Materialized per-snapshot Jacobian blocks (small problems)."""
        data, H_s, *_ = self.jacobian_parts(x_flat)
        T = self.layout.T
        H_a = np.zeros((T, self.m_t, self.layout.A))
        for t in range(T):
            H_a[t] = self.snapshot_csr(data[t]).toarray()
        return JacobianH(self.layout, H_a, H_s)


# --------------------------------------------------------------------------
# functional wrappers (one-shot evaluation on a StateVector)
# --------------------------------------------------------------------------

def eval_h(x: StateVector, plan: MeasurementPlan) -> np.ndarray:
    """h(x) stacked in the canonical measurement order, shape (M,)."""
    return ModelContext(x.layout, plan).h(pack(x))


def eval_loss(x: StateVector, z: MeasurementTensor) -> float:
    """Weighted squared loss sum(((z - h(x)) / sigma)^2)."""
    return float(ModelContext(x.layout, z.plan).loss(pack(x), z))


def compute_residuals(x: StateVector, z: MeasurementTensor) -> Residuals:
    ctx = ModelContext(x.layout, z.plan)
    r = ctx.residual(pack(x), z)
    return Residuals(r, float(np.sum((r / z.sigma_vec) ** 2)))


def eval_jacobian(x: StateVector, plan: MeasurementPlan) -> JacobianH:
    """Analytic Jacobian of h at x, stored as per-snapshot blocks."""
    return ModelContext(x.layout, plan).jacobian(pack(x))


def eval_gradient(x: StateVector, z: MeasurementTensor) -> np.ndarray:
    """Gradient of eval_loss w.r.t. the flat state, shape (S,)."""
    return ModelContext(x.layout, z.plan).gradient(pack(x), z)
