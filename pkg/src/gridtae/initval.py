"""Starting points from measurements alone, without angle data.

Three stages, each usable on its own:

1. A radial topology guess from voltage-magnitude statistics: buses are
   ranked by mean smoothed magnitude (feeders drop toward the leaves) and
   each bus attaches to the already-placed bus whose magnitude series it
   correlates with best.
2. Per-branch admittance seeds from an angle-free regression: under a
   constant P/Q ratio and small angle differences, the branch power over
   the sending voltage is proportional to the magnitude drop across the
   branch, so a one-dimensional least squares on measured series yields a
   conductance-scale starting value (and its reactive twin).
3. Snapshot angle seeds from a DC power flow on the guessed network.

All of it is approximation; the estimator owns correctness.  The job here
is only to land in the right order of magnitude so the iterations start
from a finite, non-degenerate loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mlmodel import StateVector, make_layout
from .netmodel import CandidateSet, candidate_set
from .powerflow import MeasurementPlan, MeasurementTensor

__all__ = [
    "FLAT_G",
    "FLAT_B",
    "InitConfig",
    "moving_average",
    "build_tree_topology",
    "phasor_free_admittance",
    "dc_angle_seed",
    "make_initial_state",
]

# Flat-start branch admittance used whenever the data cannot support the
# regression: ~1 p.u. conductance with a reactance-dominated line.
FLAT_G = 1.0
FLAT_B = -3.0


@dataclass(frozen=True)
class InitConfig:
    """Knobs of the initialization pipeline.

    ``window`` is the trailing moving-average length used to denoise the
    magnitude series before ranking and correlating buses.  ``night_window``
    optionally restricts which snapshots feed the topology/admittance
    stages (an index array, boolean mask, or slice) -- useful when parts of
    the day see reverse flows; default uses everything.  ``flow_mode``
    selects how branch flows are approximated from nodal injections:
    ``"subtree"`` accumulates injections over the downstream subtree
    (consistent with a radial feeder), ``"nodal"`` uses the bus injection
    alone.
    """

    window: int = 5
    assume_radial: bool = True
    night_window: object = None
    flow_mode: str = "subtree"

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("moving-average window must be >= 1")
        if self.flow_mode not in ("subtree", "nodal"):
            raise ValueError(f"unknown flow mode {self.flow_mode!r}")


def moving_average(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average along axis 0; output length T - window + 1."""
    series = np.asarray(series, dtype=float)
    T = series.shape[0]
    if not 1 <= window <= T:
        raise ValueError(f"window {window} outside 1..{T}")
    win = np.lib.stride_tricks.sliding_window_view(series, window, axis=0)
    return win.mean(axis=-1)


def _correlation_to(prev: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Pearson correlation of each row of ``prev`` with ``target`` (NaN when
    either side has zero variance)."""
    pc = prev - prev.mean(axis=1, keepdims=True)
    tc = target - target.mean()
    denom = np.sqrt((pc**2).sum(axis=1) * (tc**2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        return (pc @ tc) / denom


def build_tree_topology(V: np.ndarray,
                        cfg: InitConfig | None = None) -> CandidateSet:
    """Radial topology guess from a (T, N) voltage-magnitude panel.

    Buses are sorted by descending mean smoothed magnitude; from the second
    bus on, each attaches to the already-placed bus with the highest
    correlation of smoothed series.  Returns the N-1 edges as a candidate
    set.  A bus whose series is constant (correlation undefined against
    every placed bus) falls back to the placed bus with the closest mean
    magnitude, with a warning.
    """
    cfg = cfg or InitConfig()
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] < 2:
        raise ValueError("V must be (T, N) with N >= 2")
    sm = moving_average(V, cfg.window)        # (T', N)
    means = sm.mean(axis=0)
    order = np.argsort(-means, kind="stable")
    series = sm.T                             # (N, T')

    edges = []
    for i in range(1, V.shape[1]):
        bus = order[i]
        placed = order[:i]
        corr = _correlation_to(series[placed], series[bus])
        if np.isnan(corr).all():
            # no informative predecessor; forced single attachments (e.g. to
            # a stiff slack with constant magnitude) are silent
            if len(placed) > 1:
                warnings.warn(
                    f"constant voltage series around bus {bus + 1}; "
                    "attaching by mean magnitude", RuntimeWarning,
                    stacklevel=2)
            parent = placed[np.argmin(np.abs(means[placed] - means[bus]))]
        else:
            parent = placed[np.nanargmax(corr)]
        edges.append((int(bus) + 1, int(parent) + 1))
    return candidate_set(V.shape[1], prior=edges)


# --------------------------------------------------------------------------
# angle-free admittance regression
# --------------------------------------------------------------------------

def _orient_tree(tree: CandidateSet, root: int, n_bus: int):
    """Per-bus parent array (0-based, -1 at root) and leaves-first order."""
    adj = {i: [] for i in range(n_bus)}
    for a, b in tree.pairs:
        adj[a - 1].append(b - 1)
        adj[b - 1].append(a - 1)
    parent = np.full(n_bus, -1, dtype=int)
    seen = np.zeros(n_bus, dtype=bool)
    order = []
    stack = [root]
    seen[root] = True
    while stack:
        u = stack.pop()
        order.append(u)
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                stack.append(v)
    if not seen.all():
        raise ValueError("tree does not span all buses")
    return parent, order[::-1]


def phasor_free_admittance(P: np.ndarray, Q: np.ndarray, V: np.ndarray,
                           tree: CandidateSet, mode: str = "subtree"
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares admittance seeds per tree edge, from magnitudes only.

    For the edge between a bus and its parent, regress the bus-side power
    series divided by its voltage against the magnitude difference
    (V_bus - V_parent); the slope is the conductance-scale seed, and the
    same regression on reactive power gives its counterpart.  ``mode``
    chooses the power series: ``"subtree"`` sums injections over the
    downstream subtree, ``"nodal"`` takes the bus injection alone.  The
    estimates are raw regression output -- no sign convention is imposed.

    Edges whose magnitude difference is numerically zero cannot be
    regressed and get the flat-start values with a warning.

    Returns (g, b) arrays aligned with ``tree.pairs``.
    """
    if mode not in ("subtree", "nodal"):
        raise ValueError(f"unknown flow mode {mode!r}")
    P, Q, V = (np.asarray(a, dtype=float) for a in (P, Q, V))
    n = V.shape[1]
    root = int(np.argmax(V.mean(axis=0)))
    parent, leaves_first = _orient_tree(tree, root, n)

    Pacc, Qacc = P.copy(), Q.copy()
    if mode == "subtree":
        for u in leaves_first:
            if parent[u] >= 0:
                Pacc[:, parent[u]] += Pacc[:, u]
                Qacc[:, parent[u]] += Qacc[:, u]

    g = np.empty(len(tree))
    b = np.empty(len(tree))
    for k, (i, j) in enumerate(tree.pairs):
        child = i - 1 if parent[i - 1] == j - 1 else j - 1
        up = parent[child]
        dv = V[:, child] - V[:, up]
        denom = float(dv @ dv)
        if denom < 1e-12:
            warnings.warn(
                f"no magnitude drop across ({i},{j}); flat-start seed",
                RuntimeWarning, stacklevel=2)
            g[k], b[k] = FLAT_G, FLAT_B
            continue
        g[k] = float((Pacc[:, child] / V[:, child]) @ dv) / denom
        b[k] = float((Qacc[:, child] / V[:, child]) @ dv) / denom
    return g, b


def dc_angle_seed(P: np.ndarray, cset: CandidateSet, b: np.ndarray,
                  slack_bus: int = 1) -> np.ndarray:
    """Angle seeds from the DC power flow on the seeded network.

    Solves B' theta = P per snapshot, where B' is the susceptance-weighted
    graph Laplacian (weights -b per branch) with the slack row and column
    removed; the slack angle is 0.  A singular B' (disconnected seed
    network) yields zero angles with a warning.
    """
    P = np.asarray(P, dtype=float)
    T, n = P.shape
    L = np.zeros((n, n))
    for (i, j), bk in zip(cset.pairs, np.asarray(b, dtype=float)):
        w = -bk
        L[i - 1, i - 1] += w
        L[j - 1, j - 1] += w
        L[i - 1, j - 1] -= w
        L[j - 1, i - 1] -= w
    keep = np.arange(n) != slack_bus - 1
    theta = np.zeros((T, n))
    try:
        theta[:, keep] = np.linalg.solve(L[np.ix_(keep, keep)], P[:, keep].T).T
    except np.linalg.LinAlgError:
        warnings.warn("singular reduced susceptance matrix; zero angle seed",
                      RuntimeWarning, stacklevel=2)
    return theta


def make_initial_state(z: MeasurementTensor,
                       plan: MeasurementPlan | None = None,
                       cfg: InitConfig | None = None,
                       cset: CandidateSet | None = None,
                       slack_bus: int = 1,
                       n_bus: int | None = None) -> StateVector:
    """Assemble a full starting state from a measurement tensor.

    Voltage blocks copy the measured magnitudes (unmeasured buses default
    to 1.0 p.u.); the candidate admittances on the guessed tree edges come
    from the angle-free regression; angles are DC-flow seeds on the tree.
    Susceptance seeds take the inductive sign, since the magnitude
    regression cannot determine it.

    Candidates outside the tree start at zero when the candidate set is
    the default all-pairs space (they are presumed absent until the data
    says otherwise).  A caller-supplied ``cset`` is prior knowledge that
    its branches exist, so tree-absent pairs there get the flat-start
    values instead -- a zero seed on a known-real branch would disconnect
    the model network.

    Raises when no voltage magnitudes are measured at all -- without them
    there is nothing to build on and the caller must supply x0 directly.
    """
    plan = z.plan if plan is None else plan
    cfg = cfg or InitConfig()
    by_q = z.unstack()

    if len(plan.bus_set("V")) == 0:
        raise ValueError("no voltage-magnitude measurements; supply x0 "
                         "externally")
    if n_bus is None:
        n_bus = max(max(plan.bus_set(q), default=0)
                    for q in ("P", "Q", "V", "TH"))
        if cset is not None:
            n_bus = max(n_bus, max(j for _, j in cset.pairs))

    def full_panel(q, default):
        panel = np.full((plan.T, n_bus), default)
        for col, bus in enumerate(plan.bus_set(q)):
            panel[:, bus - 1] = by_q[q][:, col]
        return panel

    V = full_panel("V", 1.0)
    P = full_panel("P", 0.0)
    Q = full_panel("Q", 0.0)

    win = cfg.night_window
    Vw, Pw, Qw = (a if win is None else a[win] for a in (V, P, Q))

    tree = build_tree_topology(Vw, cfg)
    g_t, b_t = phasor_free_admittance(Pw, Qw, Vw, tree, cfg.flow_mode)
    b_t = -np.abs(b_t)

    prior_known = cset is not None
    if cset is None:
        cset = candidate_set(n_bus)
    index = {p: k for k, p in enumerate(tree.pairs)}
    fill_g, fill_b = (FLAT_G, FLAT_B) if prior_known else (0.0, 0.0)
    g = np.full(len(cset), fill_g)
    b = np.full(len(cset), fill_b)
    for k, pair in enumerate(cset.pairs):
        if pair in index:
            g[k] = g_t[index[pair]]
            b[k] = b_t[index[pair]]

    theta = dc_angle_seed(P, tree, b_t, slack_bus=slack_bus)
    layout = make_layout(n_bus, cset, plan.T, slack_bus)
    return StateVector(layout, g, b, V, theta)
