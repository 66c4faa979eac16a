"""Ground-truth snapshot generation and noisy measurement simulation.

The simulation pipeline is: draw per-bus load multipliers for T snapshots,
solve an AC power flow per snapshot (Newton-Raphson, polar, flat start),
stack the requested channels into a measurement vector in the canonical
order (per snapshot: P-block, Q-block, V-block, theta-block), and add
seeded Gaussian noise.

Noise magnitudes: a "x% noise" setting is resolved per channel
(quantity, bus) as sigma = (x/100) * RMS of that channel's true values over
the T snapshots, floored at 1e-8 (mode "rms"; see NoiseModel for the
"absolute" alternative).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .injections import bus_injections, injection_jacobian
from .netmodel import AdmittanceMatrices, NetworkCase, build_admittance

__all__ = [
    "PowerFlowError",
    "Snapshot",
    "LoadProfile",
    "NoiseModel",
    "MeasurementPlan",
    "MeasurementTensor",
    "GroundTruth",
    "solve_ac_power_flow",
    "generate_load_profile",
    "simulate_measurements",
    "full_plan",
    "write_measurement_csv",
    "read_measurement_csv",
]

QUANTITIES = ("P", "Q", "V", "TH")


class PowerFlowError(RuntimeError):
    """Newton-Raphson failure (non-convergence or structural problem)."""


@dataclass(frozen=True)
class Snapshot:
    """One solved operating point; arrays indexed by bus id - 1."""

    V: np.ndarray
    theta: np.ndarray
    P: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class LoadProfile:
    """Per-snapshot, per-bus load multipliers, shape (T, N)."""

    multipliers: np.ndarray

    @property
    def T(self) -> int:
        return self.multipliers.shape[0]


@dataclass(frozen=True)
class NoiseModel:
    """Percent noise resolved to per-channel standard deviations.

    What "x% noise" is relative to is a convention choice, so the base is a
    config option:

    mode "rms": sigma = percent/100 * RMS of the channel's true values.
    mode "deviation": sigma = percent/100 * std of the channel's true values
        over the snapshots, i.e. relative to how much the signal actually
        moves rather than its operating level.
    mode "absolute": sigma = percent/100 (p.u. for P/Q/V, rad for angles).
    All are floored at ``floor``, so constant channels under "deviation"
    degrade to near-exact readings instead of sigma = 0.
    """

    percent: float
    mode: str = "rms"
    floor: float = 1e-8

    def resolve(self, true_series: np.ndarray) -> float:
        if self.mode == "rms":
            base = float(np.sqrt(np.mean(true_series**2)))
        elif self.mode == "deviation":
            base = float(np.std(true_series))
        elif self.mode == "absolute":
            base = 1.0
        else:
            raise ValueError(f"unknown noise mode {self.mode!r}")
        return max(self.percent / 100.0 * base, self.floor)


@dataclass(frozen=True)
class MeasurementPlan:
    """Which channels are metered, for how many snapshots, at what noise.

    Either ``noise`` (resolved against the simulated truth) or an explicit
    per-channel ``sigma`` mapping {(quantity, bus): std} must be provided
    before measurements can be simulated.  ``noise`` is a single NoiseModel
    applied to every quantity, or a {quantity: NoiseModel} mapping when the
    quantities follow different conventions (e.g. voltage relative to its
    operating level, injections relative to their variability).
    """

    m_p: tuple[int, ...]
    m_q: tuple[int, ...]
    m_v: tuple[int, ...]
    m_th: tuple[int, ...]
    T: int
    rng_seed: int = 0
    noise: NoiseModel | dict | None = None
    sigma: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "m_p", tuple(sorted(self.m_p)))
        object.__setattr__(self, "m_q", tuple(sorted(self.m_q)))
        object.__setattr__(self, "m_v", tuple(sorted(self.m_v)))
        object.__setattr__(self, "m_th", tuple(sorted(self.m_th)))
        if isinstance(self.noise, dict):
            bad = set(self.noise) - set(QUANTITIES)
            if bad:
                raise ValueError(f"unknown quantities in noise map: {sorted(bad)}")

    def noise_for(self, quantity: str) -> NoiseModel | None:
        """The noise model governing one quantity, if any."""
        if isinstance(self.noise, dict):
            return self.noise.get(quantity)
        return self.noise

    def channels(self) -> list[tuple[str, int]]:
        """Per-snapshot channel list in canonical order P < Q < V < TH."""
        out = [("P", i) for i in self.m_p]
        out += [("Q", i) for i in self.m_q]
        out += [("V", i) for i in self.m_v]
        out += [("TH", i) for i in self.m_th]
        return out

    @property
    def per_snapshot(self) -> int:
        return len(self.m_p) + len(self.m_q) + len(self.m_v) + len(self.m_th)

    @property
    def M(self) -> int:
        return self.T * self.per_snapshot

    def bus_set(self, quantity: str) -> tuple[int, ...]:
        return {"P": self.m_p, "Q": self.m_q, "V": self.m_v, "TH": self.m_th}[quantity]


@dataclass(frozen=True)
class MeasurementTensor:
    """Stacked measurements z with per-entry noise stds and layout."""

    z: np.ndarray
    sigma_vec: np.ndarray
    plan: MeasurementPlan

    @property
    def M(self) -> int:
        return self.z.shape[0]

    def layout(self) -> list[tuple[int, str, int]]:
        """(t, quantity, bus) for every entry, in stacking order; t is 0-based."""
        chans = self.plan.channels()
        return [(t, q, bus) for t in range(self.plan.T) for (q, bus) in chans]

    def per_snapshot_view(self) -> np.ndarray:
        """z reshaped to (T, per_snapshot)."""
        return self.z.reshape(self.plan.T, self.plan.per_snapshot)

    def unstack(self) -> dict[str, np.ndarray]:
        """Split z by quantity into (T, n_channels) arrays."""
        view = self.per_snapshot_view()
        out, col = {}, 0
        for q in QUANTITIES:
            n = len(self.plan.bus_set(q))
            out[q] = view[:, col:col + n].copy()
            col += n
        return out

    @staticmethod
    def stack(plan: MeasurementPlan, by_quantity: dict[str, np.ndarray],
              sigma_vec: np.ndarray) -> "MeasurementTensor":
        """Inverse of unstack: reassemble the flat z vector."""
        cols = [by_quantity[q].reshape(plan.T, -1) for q in QUANTITIES
                if len(plan.bus_set(q))]
        z = np.hstack(cols).reshape(-1) if cols else np.zeros(0)
        return MeasurementTensor(z, np.asarray(sigma_vec, dtype=float), plan)


@dataclass(frozen=True)
class GroundTruth:
    """Exact simulated states for evaluation, arrays shaped (T, N)."""

    case: NetworkCase
    V: np.ndarray
    theta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    sigma_by_channel: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.V.shape[0]


# --------------------------------------------------------------------------
# power flow
# --------------------------------------------------------------------------

def _check_connected(case: NetworkCase) -> None:
    adj = {i: set() for i in range(1, case.bus_count + 1)}
    for br in case.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen, stack = {case.slack_bus}, [case.slack_bus]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if len(seen) != case.bus_count:
        missing = sorted(set(adj) - seen)
        raise PowerFlowError(f"network is disconnected; unreachable buses {missing}")


def solve_ac_power_flow(case: NetworkCase, loads: np.ndarray | None = None,
                        adm: AdmittanceMatrices | None = None,
                        tol: float = 1e-10, max_iter: int = 50) -> Snapshot:
    """Polar Newton-Raphson power flow with a flat start.

    Parameters
    ----------
    case : NetworkCase
    loads : complex array (N,), optional
        Per-bus consumed power in p.u. (positive = load). Defaults to the
        case's nominal loads. All non-slack buses are PQ buses with
        injection = -load; the slack bus holds V=1, theta=0.

    Returns
    -------
    Snapshot with V, theta and the recomputed net injections P, Q.
    """
    _check_connected(case)
    n = case.bus_count
    if loads is None:
        loads = case.nominal_loads
    loads = np.asarray(loads, dtype=complex)
    if adm is None:
        adm = build_admittance(case)
    G, B = adm.G, adm.B

    slack = case.slack_bus - 1
    pq = np.array([i for i in range(n) if i != slack])
    p_spec = -loads.real[pq]
    q_spec = -loads.imag[pq]

    V = np.ones(n)
    theta = np.zeros(n)
    for _ in range(max_iter):
        P, Q = bus_injections(G, B, V, theta)
        mism = np.concatenate([P[pq] - p_spec, Q[pq] - q_spec])
        worst = np.max(np.abs(mism))
        if worst <= tol:
            return Snapshot(V, theta, P, Q)
        dP_dth, dP_dV, dQ_dth, dQ_dV = injection_jacobian(G, B, V, theta)
        J = np.block([
            [dP_dth[np.ix_(pq, pq)], dP_dV[np.ix_(pq, pq)]],
            [dQ_dth[np.ix_(pq, pq)], dQ_dV[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -mism)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}") from exc
        theta = theta.copy()
        V = V.copy()
        theta[pq] += dx[: len(pq)]
        V[pq] += dx[len(pq):]
    P, Q = bus_injections(G, B, V, theta)
    mism = np.concatenate([P[pq] - p_spec, Q[pq] - q_spec])
    raise PowerFlowError(
        f"no convergence after {max_iter} iterations; "
        f"max mismatch {np.max(np.abs(mism)):.3e} p.u.")


def generate_load_profile(case: NetworkCase, T: int, seed: int,
                          spread: float, shared_fraction: float = 0.0
                          ) -> LoadProfile:
    """Uniform load multipliers in [1-spread, 1+spread], seeded.

    ``shared_fraction`` in [0, 1] mixes in a common per-snapshot factor to
    correlate buses (0 = independent).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 <= spread < 1.0:
        raise ValueError("spread must be in [0, 1)")
    rng = np.random.default_rng(seed)
    indiv = rng.uniform(-1.0, 1.0, size=(T, case.bus_count))
    shared = rng.uniform(-1.0, 1.0, size=(T, 1))
    mixed = (1.0 - shared_fraction) * indiv + shared_fraction * shared
    return LoadProfile(1.0 + spread * mixed)


# --------------------------------------------------------------------------
# measurement simulation
# --------------------------------------------------------------------------

def full_plan(case: NetworkCase, T: int, seed: int = 0,
              noise: NoiseModel | None = None,
              quantities: tuple[str, ...] = ("P", "Q", "V", "TH")
              ) -> MeasurementPlan:
    """Plan metering the given quantities at every bus."""
    every = tuple(range(1, case.bus_count + 1))
    return MeasurementPlan(
        m_p=every if "P" in quantities else (),
        m_q=every if "Q" in quantities else (),
        m_v=every if "V" in quantities else (),
        m_th=every if "TH" in quantities else (),
        T=T, rng_seed=seed, noise=noise)


def _truth_series(truth: GroundTruth, quantity: str, bus: int) -> np.ndarray:
    arr = {"P": truth.P, "Q": truth.Q, "V": truth.V, "TH": truth.theta}[quantity]
    return arr[:, bus - 1]


def resolve_sigmas(plan: MeasurementPlan, truth: GroundTruth) -> dict:
    """Per-channel noise stds: explicit plan.sigma wins, else plan.noise."""
    out = {}
    for q, bus in plan.channels():
        model = plan.noise_for(q)
        if plan.sigma is not None and (q, bus) in plan.sigma:
            out[(q, bus)] = float(plan.sigma[(q, bus)])
        elif model is not None:
            out[(q, bus)] = model.resolve(_truth_series(truth, q, bus))
        else:
            raise ValueError(f"no sigma or noise model for channel ({q}, {bus})")
        if out[(q, bus)] <= 0:
            raise ValueError(f"nonpositive sigma for channel ({q}, {bus})")
    return out


def solve_snapshots(case: NetworkCase, loads: LoadProfile) -> GroundTruth:
    """Solve the power flow for every snapshot of the profile."""
    n, T = case.bus_count, loads.T
    nominal = case.nominal_loads
    V = np.empty((T, n))
    theta = np.empty((T, n))
    P = np.empty((T, n))
    Q = np.empty((T, n))
    adm = build_admittance(case)
    for t in range(T):
        try:
            snap = solve_ac_power_flow(case, nominal * loads.multipliers[t], adm=adm)
        except PowerFlowError as exc:
            raise PowerFlowError(f"snapshot {t}: {exc}") from exc
        V[t], theta[t], P[t], Q[t] = snap.V, snap.theta, snap.P, snap.Q
    return GroundTruth(case, V, theta, P, Q)


def noiseless_vector(plan: MeasurementPlan, truth: GroundTruth) -> np.ndarray:
    """h(x_true): the stacked measurement vector before noise."""
    chans = plan.channels()
    h = np.empty((truth.T, len(chans)))
    for k, (q, bus) in enumerate(chans):
        h[:, k] = _truth_series(truth, q, bus)
    return h.reshape(-1)


def apply_noise(plan: MeasurementPlan, truth: GroundTruth,
                sig: dict | None = None) -> MeasurementTensor:
    """Add seeded Gaussian noise; the RNG stream is split per snapshot."""
    if sig is None:
        sig = resolve_sigmas(plan, truth)
    chans = plan.channels()
    sig_row = np.array([sig[c] for c in chans])
    h = noiseless_vector(plan, truth).reshape(truth.T, len(chans))
    z = np.empty_like(h)
    for t in range(truth.T):
        rng = np.random.default_rng([plan.rng_seed, t])
        z[t] = h[t] + sig_row * rng.standard_normal(len(chans))
    sigma_vec = np.tile(sig_row, truth.T)
    return MeasurementTensor(z.reshape(-1), sigma_vec, plan)


def simulate_measurements(case: NetworkCase, loads: LoadProfile,
                          plan: MeasurementPlan
                          ) -> tuple[MeasurementTensor, GroundTruth]:
    """Full pipeline: solve snapshots, resolve sigmas, add noise."""
    if loads.T != plan.T:
        raise ValueError(f"profile has T={loads.T} but plan expects T={plan.T}")
    truth = solve_snapshots(case, loads)
    sig = resolve_sigmas(plan, truth)
    truth = GroundTruth(case, truth.V, truth.theta, truth.P, truth.Q, sig)
    tensor = apply_noise(plan, truth, sig)
    return tensor, truth


# --------------------------------------------------------------------------
# CSV dump
# --------------------------------------------------------------------------

def write_measurement_csv(path: str, tensor: MeasurementTensor) -> None:
    """Columns: t, quantity in {P,Q,V,TH}, bus, value, sigma."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "quantity", "bus", "value", "sigma"])
        for (t, q, bus), val, s in zip(tensor.layout(), tensor.z, tensor.sigma_vec):
            w.writerow([t, q, bus, repr(float(val)), repr(float(s))])


def read_measurement_csv(path: str, plan: MeasurementPlan) -> MeasurementTensor:
    """Read a dump produced by write_measurement_csv (same plan layout)."""
    rows = {}
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            key = (int(rec["t"]), rec["quantity"], int(rec["bus"]))
            rows[key] = (float(rec["value"]), float(rec["sigma"]))
    layout = [(t, q, bus) for t in range(plan.T) for (q, bus) in plan.channels()]
    z = np.array([rows[k][0] for k in layout])
    s = np.array([rows[k][1] for k in layout])
    return MeasurementTensor(z, s, plan)
