"""Joint topology-and-admittance estimator.

The estimator minimizes the weighted squared measurement mismatch over the
joint state (candidate admittances plus per-snapshot voltage states).  Each
inner iteration combines three ingredients:

* a momentum accumulator over gradients rescaled group-wise — admittances,
  magnitudes and angles live on wildly different scales, so each group's
  gradient is normalized by its own mean magnitude and re-expressed in units
  of the group's precision floor (computed once per round from the empirical
  Fisher information at the starting point);
* a curvature direction: the exact minimizer of the linearized weighted
  least squares, computed by QR-eliminating each snapshot's voltage block
  from the weighted Jacobian and solving the small reduced system for the
  admittances (equivalent to solving F d = -g through the arrowhead
  partition of the Fisher matrix, but conditioned like the Jacobian rather
  than its square);
* a two-phase line search: a geometric scan along the momentum first, then a
  scan over momentum/curvature blends, both under an Armijo
  sufficient-decrease test.  The curvature-heavy blends are tried first by
  default: far from the solution they are usually rejected and the search
  falls back toward the momentum step, while near the solution they give the
  fast final convergence.

The outer loop prunes candidate branches whose admittance magnitude falls
below threshold once the inner iteration converges, then re-runs on the
reduced candidate set until the topology stops changing.  Pruned pairs never
re-enter.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .crlb import (
    PINV_CUTOFF,
    build_schur,
    crlb_state_sigma,
    eliminate_states,
    fisher_blocks_from_parts,
)
from .mlmodel import (
    ModelContext,
    StateLayout,
    StateVector,
    make_layout,
    pack,
    unpack,
)
from .netmodel import CandidateSet, NetworkCase
from .powerflow import GroundTruth, MeasurementPlan, MeasurementTensor

__all__ = [
    "CpsConfig",
    "OptimizerState",
    "SecondOrderDirection",
    "SearchOutcome",
    "EstimationResult",
    "init_optimizer",
    "first_order_step",
    "second_order_direction",
    "hybrid_line_search",
    "topology_update",
    "cps_estimate",
    "baseline_first_order",
    "baseline_second_order",
    "estimation_metrics",
]


@dataclass(frozen=True)
class CpsConfig:
    """Hyper-parameters of the estimator.

    ``alpha`` is the momentum ratio; the line search scans integer exponents
    r0..r_max of ``beta`` (phase 1 steps m/beta^r, phase 2 blend weights
    w2 = beta^r / (1 + beta^r)); ``eta`` is the Armijo threshold and
    ``gamma`` the termination threshold on the accepted step's max norm.
    """

    alpha: float = 0.9
    r0: int = -5
    r_max: int = 20
    beta: float = 5.0
    eta: float = 0.01
    gamma: float = 1e-5
    max_inner_iters: int = 400
    max_outer_rounds: int = 10
    tau_abs: float = 1e-3          # prune |y| below this outright
    tau_rel: float = 1e-3          # ... or below this fraction of the median |y|
    tau_sigma: float = 0.0         # ... or when |g|,|b| are all below this
    #                                many estimated std floors (0 disables)
    step_significance: float = 0.0  # keep curvature SVD components only when
    #                                 the residual projects > this many sigmas
    #                                 (0: plain truncated least squares)
    use_second_order: bool = True
    phase1_enabled: bool = True
    w2_fixed: float | None = None  # pin the blend weight instead of scanning
    phase2_ascending: bool = False  # scan blends small-w2-first instead
    expect_radial: bool = False
    pinv_cutoff: float = PINV_CUTOFF
    loss_chunk: int = 8            # line-search candidates per batched loss call
    divergence_loss: float = 1e12

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must be in [0, 1)")
        if self.beta <= 1.0:
            raise ValueError("beta must exceed 1")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must be in (0, 1)")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.r0 >= self.r_max:
            raise ValueError("r0 must be below r_max")
        if self.max_inner_iters < 1 or self.max_outer_rounds < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.tau_abs < 0 or self.tau_rel < 0 or self.tau_sigma < 0:
            raise ValueError("prune thresholds must be nonnegative")
        if self.step_significance < 0:
            raise ValueError("step_significance must be nonnegative")


@dataclass(frozen=True)
class SecondOrderDirection:
    """Curvature direction d solving F d = -g, in flat state layout."""

    d: np.ndarray


@dataclass
class OptimizerState:
    """Mutable inner-iteration state bound to one evaluation context.

    ``x`` and ``m`` are flat states in the canonical layout.  ``w_cr`` holds
    the per-group precision-floor scales (admittances, magnitudes, angles),
    computed once from the Fisher information at the starting point; ``w_g``
    holds the latest gradient group means, refreshed every iteration.
    """

    ctx: ModelContext
    z: MeasurementTensor
    config: CpsConfig
    x: np.ndarray
    m: np.ndarray
    loss_history: list
    w_cr: np.ndarray | None = None
    w_g: np.ndarray | None = None

    @property
    def state_vector(self) -> StateVector:
        return unpack(self.x, self.ctx.layout)


def _group_slices(layout: StateLayout):
    """Boolean masks of the three rescaling groups over the flat state."""
    S, A, n, w = layout.S, layout.A, layout.n_bus, layout.snapshot_width
    mask_a = np.zeros(S, dtype=bool)
    mask_a[:A] = True
    mask_v = np.zeros(S, dtype=bool)
    mask_v[A:].reshape(layout.T, w)[:, :n] = True
    mask_th = np.zeros(S, dtype=bool)
    mask_th[A:].reshape(layout.T, w)[:, n:] = True
    return mask_a, mask_v, mask_th


def _group_means(vec: np.ndarray, masks) -> np.ndarray:
    return np.array([float(np.mean(np.abs(vec[m]))) if m.any() else 0.0
                     for m in masks])


def _rescaled_gradient(g: np.ndarray, masks, w_g: np.ndarray,
                       w_cr: np.ndarray) -> np.ndarray:
    """Per-group g / w_g * w_cr; groups at stationarity (w_g = 0) stay 0."""
    ghat = np.zeros_like(g)
    for mask, wg, wcr in zip(masks, w_g, w_cr):
        if wg > 0.0:
            ghat[mask] = g[mask] * (wcr / wg)
    return ghat


def _crlb_group_scales(system, masks) -> np.ndarray:
    return _group_means(crlb_state_sigma(system), masks)


def init_optimizer(x0: StateVector, z: MeasurementTensor,
                   config: CpsConfig | None = None) -> OptimizerState:
    """Fresh optimizer state at x0 with zero momentum."""
    config = config or CpsConfig()
    ctx = ModelContext(x0.layout, z.plan)
    flat = pack(x0)
    return OptimizerState(ctx, z, config, flat, np.zeros_like(flat),
                          [float(ctx.loss(flat, z))])


def first_order_step(state: OptimizerState,
                     z: MeasurementTensor | None = None):
    """Momentum update from the rescaled gradient; returns (m, g).

    On the first call the group scales are computed from the empirical
    precision floors at the current point.
    """
    z = state.z if z is None else z
    ctx = state.ctx
    masks = _group_slices(ctx.layout)
    data, H_s, *_ = ctx.jacobian_parts(state.x)
    r = z.z - ctx.h(state.x)
    g = ctx.gradient_from_parts(data, H_s, r, z.sigma_vec)
    if state.w_cr is None:
        blocks = fisher_blocks_from_parts(ctx, data, H_s, z.sigma_vec)
        rows = eliminate_states(ctx, data, H_s, z.sigma_vec).rows
        system = build_schur(blocks, state.config.pinv_cutoff, rows)
        state.w_cr = _crlb_group_scales(system, masks)
    state.w_g = _group_means(g, masks)
    ghat = _rescaled_gradient(g, masks, state.w_g, state.w_cr)
    alpha = state.config.alpha
    state.m = alpha * state.m - (1.0 - alpha) * ghat
    return state.m, g


def second_order_direction(x: StateVector, z: MeasurementTensor,
                           cutoff: float = PINV_CUTOFF) -> SecondOrderDirection:
    """Gauss-Newton step at x: the linearized weighted-least-squares optimum.

    On an affine model one such step lands exactly on the optimum; it
    satisfies 2F d = -grad for the squared-residual loss.
    """
    ctx = ModelContext(x.layout, z.plan)
    flat = pack(x)
    data, H_s, *_ = ctx.jacobian_parts(flat)
    r = z.z - ctx.h(flat)
    elim = eliminate_states(ctx, data, H_s, z.sigma_vec, r)
    return SecondOrderDirection(elim.direction(cutoff))


@dataclass(frozen=True)
class SearchOutcome:
    """Result of one hybrid line search from x_prev."""

    x: np.ndarray
    loss: float
    m: np.ndarray            # momentum after any phase-1 shrink
    accepted: bool           # a strictly improving point was adopted
    stalled: bool            # no candidate improved; x equals x_prev
    w2: float                # curvature weight of the adopted step (0 if none)
    step_scale: float        # multiplier applied to m in the adopted step


def _chunked_scan(ctx, z, x0, steps, needs, loss0, chunk):
    """First index passing Armijo + strict decrease, else best improvement.

    ``steps`` is (K, S); candidate k is x0 + steps[k] and must satisfy
    loss0 - loss_k >= needs[k].  Returns (accept_idx, losses_so_far) where
    losses are filled only for evaluated candidates.
    """
    K = steps.shape[0]
    losses = np.full(K, np.nan)
    for lo in range(0, K, chunk):
        hi = min(lo + chunk, K)
        losses[lo:hi] = ctx.loss(x0[None, :] + steps[lo:hi], z)
        for i in range(lo, hi):
            if losses[i] < loss0 and loss0 - losses[i] >= needs[i]:
                return i, losses
    return None, losses


def hybrid_line_search(state: OptimizerState, m: np.ndarray, g: np.ndarray,
                       d: np.ndarray | None,
                       z: MeasurementTensor | None = None) -> SearchOutcome:
    """Two-phase Armijo search from the current point.

    Phase 1 scans x + m/beta^r over r = r0..r_max (largest steps first) and
    shrinks the momentum to the accepted step.  Phase 2 scans blends
    x + (1-w2) m + w2 d over the same exponent grid; an accepted blend
    supersedes the phase-1 point.  If no candidate passes the Armijo test,
    the best strictly improving candidate is adopted; if none improves, the
    search stalls and x is returned unchanged.
    """
    cfg = state.config
    ctx = state.ctx
    z = state.z if z is None else z
    x0 = state.x
    loss0 = state.loss_history[-1]
    rs = np.arange(cfg.r0, cfg.r_max + 1)

    best_loss = loss0
    best = None        # (x, loss, m_after, w2, scale)

    p1 = None
    if cfg.phase1_enabled and np.any(m != 0.0):
        scales = cfg.beta ** (-rs.astype(float))
        steps = scales[:, None] * m[None, :]
        gm = float(g @ m)
        needs = cfg.eta * np.abs(gm) * scales
        idx, losses = _chunked_scan(ctx, z, x0, steps, needs, loss0,
                                    cfg.loss_chunk)
        if idx is not None:
            p1 = (x0 + steps[idx], float(losses[idx]), m * scales[idx],
                  scales[idx])
        seen = ~np.isnan(losses)
        if seen.any():
            k = int(np.nanargmin(losses))
            if losses[k] < best_loss:
                best_loss = float(losses[k])
                best = (x0 + steps[k], best_loss, m * scales[k], 0.0,
                        scales[k])

    m_cur = p1[2] if p1 is not None else m

    p2 = None
    if d is not None and np.all(np.isfinite(d)):
        if cfg.w2_fixed is not None:
            w2s = np.array([float(cfg.w2_fixed)])
        else:
            br = cfg.beta ** rs.astype(float)
            w2s = br / (1.0 + br)
            if not cfg.phase2_ascending:
                w2s = w2s[::-1]          # curvature-heavy blends first
        steps = (1.0 - w2s)[:, None] * m_cur[None, :] + w2s[:, None] * d[None, :]
        needs = cfg.eta * np.abs(steps @ g)
        idx, losses = _chunked_scan(ctx, z, x0, steps, needs, loss0,
                                    cfg.loss_chunk)
        if idx is not None:
            p2 = (x0 + steps[idx], float(losses[idx]), float(w2s[idx]))
        seen = ~np.isnan(losses)
        if seen.any():
            k = int(np.nanargmin(losses))
            if losses[k] < best_loss:
                best_loss = float(losses[k])
                best = (x0 + steps[k], best_loss, m_cur, float(w2s[k]),
                        1.0 - float(w2s[k]))

    if p2 is not None:
        x_new, loss_new, w2 = p2
        return SearchOutcome(x_new, loss_new, m_cur, True, False, w2, 1.0 - w2)
    if p1 is not None:
        x_new, loss_new, m_new, scale = p1
        return SearchOutcome(x_new, loss_new, m_new, True, False, 0.0, scale)
    if best is not None:
        x_new, loss_new, m_new, w2, scale = best
        return SearchOutcome(x_new, loss_new, m_new, True, False, w2, scale)
    return SearchOutcome(x0, loss0, m, False, True, 0.0, 0.0)


# --------------------------------------------------------------------------
# topology pruning
# --------------------------------------------------------------------------

def _spans_all_buses(pairs, n_bus: int, root: int) -> bool:
    adj = {i: set() for i in range(1, n_bus + 1)}
    for k, l in pairs:
        adj[k].add(l)
        adj[l].add(k)
    seen, stack = {root}, [root]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == n_bus


def _sigma_cr_at(ctx: ModelContext, z: MeasurementTensor, x_flat: np.ndarray,
                 cutoff: float) -> np.ndarray:
    """Admittance std floors (2P,) from the Fisher information at x_flat."""
    data, H_s, *_ = ctx.jacobian_parts(x_flat)
    blocks = fisher_blocks_from_parts(ctx, data, H_s, z.sigma_vec)
    rows = eliminate_states(ctx, data, H_s, z.sigma_vec).rows
    system = build_schur(blocks, cutoff, rows)
    var = np.diag(system.admittance_cov)
    return np.sqrt(np.clip(var, 0.0, None))


def topology_update(x: StateVector, cset: CandidateSet | None = None,
                    config: CpsConfig | None = None,
                    sigma_cr: np.ndarray | None = None
                    ) -> tuple[CandidateSet, StateVector]:
    """Remove candidates with negligible admittance magnitude.

    A candidate is pruned when |y| = sqrt(g^2 + b^2) falls below ``tau_abs``
    outright, or below ``tau_rel`` times the median of the remaining
    (above-floor) magnitudes.  When ``sigma_cr`` (the 2P per-parameter std
    floors, candidate order) is supplied and ``tau_sigma`` is positive, a
    candidate is also pruned when both its parameters sit within
    ``tau_sigma`` std floors of zero — the hypothesis that the branch is
    absent is then consistent with the data.  Pruned pairs never re-enter.
    Under ``expect_radial`` a prune that disconnects the bus graph raises a
    warning, not an error.
    """
    config = config or CpsConfig()
    lay = x.layout
    cset = lay.cset if cset is None else cset
    y = np.hypot(x.g, x.b)
    above = y >= config.tau_abs
    med = float(np.median(y[above])) if above.any() else 0.0
    keep = above & (y >= config.tau_rel * med)
    if sigma_cr is not None and config.tau_sigma > 0.0:
        P = len(cset)
        sig = np.asarray(sigma_cr, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_g = np.abs(x.g) / sig[:P]
            t_b = np.abs(x.b) / sig[P:]
        score = np.fmax(np.nan_to_num(t_g, nan=0.0, posinf=np.inf),
                        np.nan_to_num(t_b, nan=0.0, posinf=np.inf))
        keep &= score >= config.tau_sigma
    if keep.all():
        return cset, x
    new_cset = cset.restrict(keep)
    if config.expect_radial and not _spans_all_buses(
            new_cset.pairs, lay.n_bus, lay.slack_bus):
        warnings.warn("pruning disconnected the candidate graph",
                      RuntimeWarning, stacklevel=2)
    new_lay = make_layout(lay.n_bus, new_cset, lay.T, lay.slack_bus,
                          lay.pin_slack)
    new_x = StateVector(new_lay, x.g[keep].copy(), x.b[keep].copy(),
                        x.V.copy(), x.theta.copy())
    return new_cset, new_x


# --------------------------------------------------------------------------
# result schema
# --------------------------------------------------------------------------

@dataclass
class EstimationResult:
    """Outcome of one estimation run (or baseline run).

    ``loss_history`` concatenates the per-round accepted-loss sequences;
    ``round_boundaries`` marks where each round starts.  The sequence is
    strictly decreasing within a round; the first entry of a round is the
    re-evaluated loss on the pruned candidate set, which may sit slightly
    above the previous round's last accepted loss.
    """

    cset: CandidateSet
    g: np.ndarray
    b: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    loss_history: list
    round_boundaries: list
    trace: list
    inner_iterations: int
    outer_rounds: int
    converged: bool
    stalled: bool
    diverged: bool
    metrics: dict | None = None
    note: str = ""

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]

    def to_json(self) -> str:
        payload = {
            "branches": [list(p) for p in self.cset.pairs],
            "g": [float(v) for v in self.g],
            "b": [float(v) for v in self.b],
            "loss_history": [float(v) for v in self.loss_history],
            "round_boundaries": list(map(int, self.round_boundaries)),
            "inner_iterations": self.inner_iterations,
            "outer_rounds": self.outer_rounds,
            "converged": self.converged,
            "stalled": self.stalled,
            "diverged": self.diverged,
            "metrics": self.metrics,
            "note": self.note,
        }
        return json.dumps(payload, indent=2)

    def write_json(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())
            f.write("\n")

    def write_trace_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["iter", "loss", "w2_accepted", "step_scale", "max_dx"])
            for row in self.trace:
                wr.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _geomean_pct(ratios) -> float:
    arr = np.asarray(ratios, dtype=float)
    if arr.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        return 100.0 * float(np.exp(np.mean(np.log(arr))))


def estimation_metrics(cset: CandidateSet, g: np.ndarray, b: np.ndarray,
                       case: NetworkCase, V: np.ndarray | None = None,
                       theta: np.ndarray | None = None,
                       truth: GroundTruth | None = None) -> dict:
    """Error metrics of an estimate against the true case.

    Topology error counts spurious plus missed branches over the true branch
    count (it can exceed 100%).  The admittance error is the relative
    geometric mean over true-branch parameters; the "full" variant scores a
    pruned true branch as ratio 1, the "conditional" variant skips it.
    """
    true_pairs = {br.pair for br in case.branches}
    est_pairs = set(cset.pairs)
    spurious = est_pairs - true_pairs
    missed = true_pairs - est_pairs
    index = cset.index_of()
    full, cond = [], []
    for br in case.branches:
        for true_val, est_arr in ((br.g, g), (br.b, b)):
            if abs(true_val) < 1e-9:
                continue
            if br.pair in index:
                ratio = abs(est_arr[index[br.pair]] - true_val) / abs(true_val)
                full.append(ratio)
                cond.append(ratio)
            else:
                full.append(1.0)
    out = {
        "topology_error_pct":
            100.0 * (len(spurious) + len(missed)) / max(len(true_pairs), 1),
        "spurious_branches": sorted(map(list, spurious)),
        "missed_branches": sorted(map(list, missed)),
        "admittance_error_pct": _geomean_pct(full),
        "admittance_error_conditional_pct": _geomean_pct(cond),
    }
    if truth is not None and V is not None:
        out["v_rmse"] = float(np.sqrt(np.mean((V - truth.V) ** 2)))
        out["theta_rmse"] = float(np.sqrt(np.mean((theta - truth.theta) ** 2)))
    return out


# --------------------------------------------------------------------------
# inner loop and full estimation
# --------------------------------------------------------------------------

def _run_inner(ctx: ModelContext, z: MeasurementTensor, x0: np.ndarray,
               config: CpsConfig, iter_offset: int, trace: list):
    """Iterate momentum + curvature + line search until convergence/stall."""
    state = OptimizerState(ctx, z, config, x0.copy(), np.zeros_like(x0),
                           [float(ctx.loss(x0, z))])
    masks = _group_slices(ctx.layout)
    converged = stalled = False
    iters = 0
    for k in range(config.max_inner_iters):
        iters = k + 1
        data, H_s, *_ = ctx.jacobian_parts(state.x)
        r = z.z - ctx.h(state.x)
        g = ctx.gradient_from_parts(data, H_s, r, z.sigma_vec)

        elim = None
        if config.use_second_order or state.w_cr is None:
            elim = eliminate_states(ctx, data, H_s, z.sigma_vec,
                                    r if config.use_second_order else None)
        if state.w_cr is None:
            blocks = fisher_blocks_from_parts(ctx, data, H_s, z.sigma_vec)
            system = build_schur(blocks, config.pinv_cutoff, elim.rows)
            state.w_cr = _crlb_group_scales(system, masks)

        state.w_g = _group_means(g, masks)
        ghat = _rescaled_gradient(g, masks, state.w_g, state.w_cr)
        state.m = config.alpha * state.m - (1.0 - config.alpha) * ghat

        d = None
        if config.use_second_order:
            d = elim.direction(config.pinv_cutoff, config.step_significance)
            if not np.all(np.isfinite(d)):
                d = None

        out = hybrid_line_search(state, state.m, g, d)
        if out.stalled and np.any(state.m != 0.0):
            # The accumulated momentum can drift uphill after a run of
            # curvature-dominated steps, poisoning every blend in the scan.
            # Restart it: with m = 0 the blend grid reduces to damped
            # curvature steps, so only a genuinely dead point still stalls.
            state.m = np.zeros_like(state.m)
            out = hybrid_line_search(state, state.m, g, d)
        if out.stalled:
            trace.append((iter_offset + k, out.loss, out.w2, out.step_scale,
                          0.0))
            stalled = True
            break
        max_dx = float(np.max(np.abs(out.x - state.x)))
        trace.append((iter_offset + k, out.loss, out.w2, out.step_scale,
                      max_dx))
        state.x = out.x
        state.m = out.m
        state.loss_history.append(out.loss)
        if max_dx <= config.gamma:
            converged = True
            break
    return state, converged, stalled, iters


def cps_estimate(z: MeasurementTensor, plan: MeasurementPlan | None,
                 cset: CandidateSet | None, x0: StateVector,
                 config: CpsConfig | None = None,
                 truth: GroundTruth | None = None) -> EstimationResult:
    """Full estimation: inner iterations plus topology-pruning outer loop.

    ``plan`` and ``cset`` may be None, in which case the plan attached to z
    and the candidate set of x0's layout are used.  ``truth`` is optional
    and only feeds the error metrics of the result.
    """
    config = config or CpsConfig()
    plan = z.plan if plan is None else plan
    cset = x0.layout.cset if cset is None else cset
    if x0.layout.cset.pairs != cset.pairs:
        raise ValueError("x0 layout and candidate set disagree")

    layout = x0.layout
    x_struct = x0
    history: list = []
    boundaries: list = []
    trace: list = []
    total_iters = 0
    converged = stalled = False
    rounds = 0
    note = ""

    polish = False
    for _round in range(config.max_outer_rounds):
        rounds += 1
        ctx = ModelContext(layout, plan)
        flat = pack(x_struct)
        boundaries.append(len(history))
        round_cfg = replace(config, step_significance=0.0) if polish else config
        state, converged, stalled, iters = _run_inner(
            ctx, z, flat, round_cfg, total_iters, trace)
        history.extend(state.loss_history)
        total_iters += iters
        x_struct = unpack(state.x, layout)
        if polish:
            break

        sigma_cr = None
        if config.tau_sigma > 0.0:
            sigma_cr = _sigma_cr_at(ctx, z, state.x, config.pinv_cutoff)
        new_cset, new_x = topology_update(x_struct, layout.cset, config,
                                          sigma_cr)
        if len(new_cset) == len(layout.cset):
            if config.step_significance > 0.0:
                # topology is stable; one exact refit pass removes the bias
                # the significance gating leaves in the kept parameters
                polish = True
                continue
            break
        x_struct = new_x
        layout = new_x.layout

    if len(history) == rounds:          # every round contributed only its
        note = "stalled before any improvement"        # starting loss

    metrics = None
    if truth is not None:
        metrics = estimation_metrics(layout.cset, x_struct.g, x_struct.b,
                                     truth.case, x_struct.V, x_struct.theta,
                                     truth)
        metrics["final_loss"] = history[-1]

    return EstimationResult(
        cset=layout.cset, g=x_struct.g, b=x_struct.b, V=x_struct.V,
        theta=x_struct.theta, loss_history=history,
        round_boundaries=boundaries, trace=trace,
        inner_iterations=total_iters, outer_rounds=rounds,
        converged=converged or stalled, stalled=stalled, diverged=False,
        metrics=metrics, note=note)


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------

def baseline_first_order(z: MeasurementTensor, plan: MeasurementPlan | None,
                         cset: CandidateSet, x0: StateVector,
                         config: CpsConfig | None = None,
                         truth: GroundTruth | None = None) -> EstimationResult:
    """Momentum-only descent: the estimator with the curvature direction off."""
    config = replace(config or CpsConfig(), use_second_order=False)
    return cps_estimate(z, plan, cset, x0, config, truth)


def baseline_second_order(z: MeasurementTensor, plan: MeasurementPlan | None,
                          cset: CandidateSet, x0: StateVector,
                          config: CpsConfig | None = None,
                          truth: GroundTruth | None = None) -> EstimationResult:
    """Undamped curvature iteration x <- x + d; divergence recorded, not raised."""
    config = config or CpsConfig()
    plan = z.plan if plan is None else plan
    layout = x0.layout
    ctx = ModelContext(layout, plan)
    x = pack(x0)
    history = [float(ctx.loss(x, z))]
    trace: list = []
    converged = diverged = False
    note = ""
    iters = 0
    for k in range(config.max_inner_iters):
        iters = k + 1
        data, H_s, *_ = ctx.jacobian_parts(x)
        r = z.z - ctx.h(x)
        elim = eliminate_states(ctx, data, H_s, z.sigma_vec, r)
        d = elim.direction(config.pinv_cutoff)
        if not np.all(np.isfinite(d)):
            diverged = True
            note = f"non-finite direction at iteration {k}"
            break
        x = x + d
        loss = float(ctx.loss(x, z))
        if not np.isfinite(loss):
            diverged = True
            note = f"non-finite loss at iteration {k}"
            break
        max_dx = float(np.max(np.abs(d)))
        trace.append((k, loss, 1.0, 1.0, max_dx))
        history.append(loss)
        if loss >= config.divergence_loss:
            diverged = True
        if max_dx <= config.gamma:
            converged = True
            break

    x_struct = unpack(x, layout) if np.all(np.isfinite(x)) else x0
    metrics = None
    if truth is not None:
        metrics = estimation_metrics(layout.cset, x_struct.g, x_struct.b,
                                     truth.case, x_struct.V, x_struct.theta,
                                     truth)
        metrics["final_loss"] = history[-1]
    return EstimationResult(
        cset=layout.cset, g=x_struct.g, b=x_struct.b, V=x_struct.V,
        theta=x_struct.theta, loss_history=history, round_boundaries=[0],
        trace=trace, inner_iterations=iters, outer_rounds=1,
        converged=converged, stalled=False, diverged=diverged,
        metrics=metrics, note=note)
