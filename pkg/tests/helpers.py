"""Shared test utilities: tiny case builders and independent oracles."""
import math

import numpy as np

from gridtae.netmodel import Branch, Bus, NetworkCase, candidate_set
from gridtae.mlmodel import ModelContext, StateLayout, make_layout
from gridtae.powerflow import MeasurementPlan, NoiseModel


def make_case(n, branches, loads, base=1.0, slack=1):
    """branches: list of (i, j, g, b); loads: {bus: (p, q)} in p.u."""
    buses = tuple(Bus(i, *loads.get(i, (0.0, 0.0))) for i in range(1, n + 1))
    brs = tuple(Branch(i, j, g, b) for i, j, g, b in branches)
    return NetworkCase(n, base, slack, buses, brs)


def chain_case(n, g=8.0, b=-20.0, load=(0.05, 0.02)):
    """Radial chain 1-2-...-n with identical lines and uniform loads."""
    branches = [(i, i + 1, g, b) for i in range(1, n)]
    loads = {i: load for i in range(2, n + 1)}
    return make_case(n, branches, loads)


def naive_injections(G, B, V, theta):
    """Brute-force double loop over the AC injection equations."""
    n = len(V)
    P = np.zeros(n)
    Q = np.zeros(n)
    for i in range(n):
        for j in range(n):
            th = theta[i] - theta[j]
            P[i] += V[i] * V[j] * (G[i, j] * math.cos(th) + B[i, j] * math.sin(th))
            Q[i] += V[i] * V[j] * (G[i, j] * math.sin(th) - B[i, j] * math.cos(th))
    return P, Q


def full_plan_n(n, T, seed=0, noise=None, quantities=("P", "Q", "V", "TH")):
    every = tuple(range(1, n + 1))
    return MeasurementPlan(
        m_p=every if "P" in quantities else (),
        m_q=every if "Q" in quantities else (),
        m_v=every if "V" in quantities else (),
        m_th=every if "TH" in quantities else (),
        T=T, rng_seed=seed, noise=noise)


def random_problem(n=4, T=2, seed=0, pin_slack=True, prior=None,
                   quantities=("P", "Q", "V", "TH")):
    """Random layout/plan/state triple for oracle tests."""
    rng = np.random.default_rng(seed)
    cset = candidate_set(n, prior=prior)
    layout = make_layout(n, cset, T, slack_bus=1, pin_slack=pin_slack)
    plan = full_plan_n(n, T, quantities=quantities)
    x = random_flat_state(layout, rng)
    return layout, plan, x, rng


def random_flat_state(layout: StateLayout, rng) -> np.ndarray:
    p = layout.n_pairs
    x = np.empty(layout.S)
    x[:p] = rng.uniform(-3.0, 3.0, p)
    x[p:2 * p] = rng.uniform(-3.0, 3.0, p)
    snaps = x[layout.A:].reshape(layout.T, layout.snapshot_width)
    snaps[:, :layout.n_bus] = rng.uniform(0.9, 1.1, (layout.T, layout.n_bus))
    snaps[:, layout.n_bus:] = rng.uniform(-0.3, 0.3,
                                          (layout.T, layout.snapshot_width
                                           - layout.n_bus))
    return x


def fd_jacobian(ctx: ModelContext, x_flat, step=1e-6):
    """Central finite differences of h, column by column."""
    m = ctx.h(x_flat).shape[0]
    J = np.empty((m, x_flat.size))
    for s in range(x_flat.size):
        xp, xm = x_flat.copy(), x_flat.copy()
        xp[s] += step
        xm[s] -= step
        J[:, s] = (ctx.h(xp) - ctx.h(xm)) / (2 * step)
    return J


def random_sigma_vec(plan, rng):
    return rng.uniform(0.01, 0.1, plan.M)
