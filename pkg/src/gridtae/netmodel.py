"""Network case representation, case-file parsing, and admittance matrices.

A case is an N-bus network with a slack bus, per-bus complex nominal loads
(per-unit), and a list of branches.  Branch impedances r + jx are converted
at parse time to the series admittance parameters

    g = r / (r^2 + x^2),        b = -x / (r^2 + x^2),

and the bus admittance matrices follow the zero-shunt convention: for every
branch (i, j), G_ij = G_ji = -g_ij and G_ii accumulates +g_ij (B analogous).
Every row of G and B therefore sums to zero.

Two text formats are supported: a strict subset of the MATPOWER ``.m`` case
format (baseMVA / bus / branch matrices) and a native JSON format.  Loads in
both formats are given in MW / MVAr and divided by ``base_mva`` when parsed.
"""
from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = [
    "Bus",
    "Branch",
    "NetworkCase",
    "AdmittanceMatrices",
    "CandidateSet",
    "CaseError",
    "parse_case",
    "serialize_case",
    "load_case",
    "load_bundled_case",
    "build_admittance",
    "candidate_set",
    "impedance_to_gb",
]


class CaseError(ValueError):
    """Raised for malformed case files or invalid network data."""


def impedance_to_gb(r: float, x: float) -> tuple[float, float]:
    """Convert a series impedance r + jx (p.u.) to (g, b) = 1/(r+jx)."""
    d = r * r + x * x
    if d == 0.0:
        raise CaseError("zero-impedance branch (r = x = 0)")
    return r / d, -x / d


@dataclass(frozen=True)
class Bus:
    """One bus: index and nominal load in p.u. (positive = consumption)."""

    id: int
    pd: float
    qd: float


@dataclass(frozen=True)
class Branch:
    """A line between two buses, stored with ``from_bus < to_bus``."""

    from_bus: int
    to_bus: int
    g: float
    b: float

    @property
    def pair(self) -> tuple[int, int]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class NetworkCase:
    """Immutable network description.

    Attributes
    ----------
    bus_count : int
        Number of buses N; bus indices are exactly 1..N.
    base_mva : float
        Power base used to convert the case loads to per-unit.
    slack_bus : int
        Reference bus; its voltage angle is 0 by definition.
    buses : tuple of Bus
    branches : tuple of Branch
    """

    bus_count: int
    base_mva: float
    slack_bus: int
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]

    @property
    def nominal_loads(self) -> np.ndarray:
        """Complex per-bus loads (p.u.), shape (N,), index = bus id - 1."""
        s = np.zeros(self.bus_count, dtype=complex)
        for bus in self.buses:
            s[bus.id - 1] = bus.pd + 1j * bus.qd
        return s

    @property
    def branch_pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(br.pair for br in self.branches)

    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if sorted(ids) != list(range(1, self.bus_count + 1)):
            raise CaseError("bus ids must be exactly 1..N and unique")
        if not 1 <= self.slack_bus <= self.bus_count:
            raise CaseError(f"slack bus {self.slack_bus} not in 1..{self.bus_count}")
        seen = set()
        for br in self.branches:
            if br.from_bus == br.to_bus:
                raise CaseError(f"self-loop branch ({br.from_bus},{br.to_bus})")
            if not (1 <= br.from_bus <= self.bus_count
                    and 1 <= br.to_bus <= self.bus_count):
                raise CaseError(f"branch ({br.from_bus},{br.to_bus}) references "
                                "a nonexistent bus")
            if br.from_bus > br.to_bus:
                raise CaseError("branch pairs must be stored with from < to")
            if br.pair in seen:
                raise CaseError(f"duplicate branch {br.pair}")
            seen.add(br.pair)


@dataclass(frozen=True)
class AdmittanceMatrices:
    """Real and imaginary parts of the (shunt-free) bus admittance matrix."""

    G: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class CandidateSet:
    """Ordered set of unordered bus pairs the estimator may connect."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set()
        for i, j in self.pairs:
            if i == j:
                raise CaseError(f"self-pair ({i},{j}) in candidate set")
            if i > j:
                raise CaseError("candidate pairs must satisfy i < j")
            if (i, j) in seen:
                raise CaseError(f"duplicate candidate pair ({i},{j})")
            seen.add((i, j))

    def __len__(self) -> int:
        return len(self.pairs)

    def index_of(self) -> dict[tuple[int, int], int]:
        """Map pair -> position in the ordered list."""
        return {p: k for k, p in enumerate(self.pairs)}

    def restrict(self, keep: np.ndarray) -> "CandidateSet":
        """New set keeping only pairs where ``keep`` is True (same order)."""
        return CandidateSet(tuple(p for p, k in zip(self.pairs, keep) if k))


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def parse_case(text: str, format: str = "auto") -> NetworkCase:
    """Parse case-file content into a :class:`NetworkCase`.

    Parameters
    ----------
    text : str
        File content (not a path).
    format : {"auto", "matpower-subset", "native-json"}
        "auto" sniffs JSON vs MATPOWER from the first non-blank character.
    """
    if format == "auto":
        stripped = text.lstrip()
        format = "native-json" if stripped.startswith("{") else "matpower-subset"
    if format == "native-json":
        return _parse_native_json(text)
    if format == "matpower-subset":
        return _parse_matpower(text)
    raise CaseError(f"unknown case format {format!r}")


def _parse_native_json(text: str) -> NetworkCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"JSON syntax error at line {exc.lineno}: {exc.msg}") from exc
    try:
        base_mva = float(doc["base_mva"])
        slack = int(doc["slack_bus"])
        buses = tuple(
            Bus(int(b["id"]), float(b["pd"]) / base_mva, float(b["qd"]) / base_mva)
            for b in doc["buses"]
        )
        branches = []
        for br in doc["branches"]:
            i, j = int(br["from"]), int(br["to"])
            if i > j:
                i, j = j, i
            g, b = impedance_to_gb(float(br["r"]), float(br["x"]))
            branches.append(Branch(i, j, g, b))
    except (KeyError, TypeError) as exc:
        raise CaseError(f"missing or malformed field in native-json case: {exc}") from exc
    case = NetworkCase(len(buses), base_mva, slack, buses, tuple(branches))
    case.validate()
    return case


_MAT_NUM = r"[-+0-9.eE]+"


def _matpower_matrix(text: str, name: str) -> list[tuple[list[float], int]]:
    """Extract rows of ``mpc.<name> = [ ... ];`` with their 1-based line numbers."""
    m = re.search(rf"mpc\.{name}\s*=\s*\[", text)
    if m is None:
        raise CaseError(f"mpc.{name} matrix not found")
    start = m.end()
    end = text.find("];", start)
    if end < 0:
        raise CaseError(f"mpc.{name} matrix not terminated with '];'")
    body = text[start:end]
    base_line = text.count("\n", 0, start) + 1
    rows = []
    for off, raw in enumerate(body.split("\n")):
        line = raw.split("%")[0].strip()
        if not line:
            continue
        for chunk in line.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                rows.append(([float(v) for v in chunk.split()], base_line + off))
            except ValueError:
                raise CaseError(
                    f"syntax error in mpc.{name} at line {base_line + off}: {chunk!r}"
                ) from None
    return rows


def _parse_matpower(text: str) -> NetworkCase:
    m = re.search(rf"mpc\.baseMVA\s*=\s*({_MAT_NUM})\s*;", text)
    if m is None:
        raise CaseError("mpc.baseMVA not found")
    base_mva = float(m.group(1))

    buses, slack = [], None
    for row, line in _matpower_matrix(text, "bus"):
        if len(row) < 4:
            raise CaseError(f"bus row at line {line} has fewer than 4 columns")
        bus_id, bus_type = int(row[0]), int(row[1])
        buses.append(Bus(bus_id, row[2] / base_mva, row[3] / base_mva))
        if bus_type == 3:
            if slack is not None:
                raise CaseError(f"second slack (type 3) bus at line {line}")
            slack = bus_id
    if slack is None:
        raise CaseError("no slack (type 3) bus in mpc.bus")

    branches = []
    for row, line in _matpower_matrix(text, "branch"):
        if len(row) < 4:
            raise CaseError(f"branch row at line {line} has fewer than 4 columns")
        i, j = int(row[0]), int(row[1])
        if i > j:
            i, j = j, i
        if len(row) >= 5 and row[4] != 0.0:
            warnings.warn(
                f"branch ({i},{j}): shunt susceptance {row[4]} ignored "
                "(zero-shunt model)", stacklevel=3)
        try:
            g, b = impedance_to_gb(row[2], row[3])
        except CaseError as exc:
            raise CaseError(f"branch row at line {line}: {exc}") from None
        branches.append(Branch(i, j, g, b))

    case = NetworkCase(len(buses), base_mva, slack, tuple(buses), tuple(branches))
    case.validate()
    return case


def serialize_case(case: NetworkCase) -> str:
    """Render a case in the native JSON format (inverse of parse_case)."""
    doc = {
        "base_mva": case.base_mva,
        "slack_bus": case.slack_bus,
        "buses": [
            {"id": b.id, "pd": b.pd * case.base_mva, "qd": b.qd * case.base_mva}
            for b in case.buses
        ],
        "branches": [],
    }
    for br in case.branches:
        y2 = br.g * br.g + br.b * br.b
        doc["branches"].append(
            {"from": br.from_bus, "to": br.to_bus, "r": br.g / y2, "x": -br.b / y2}
        )
    return json.dumps(doc, indent=2)


def load_case(path: str, format: str = "auto") -> NetworkCase:
    """Read and parse a case file from disk."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if format == "auto" and path.endswith(".json"):
        format = "native-json"
    elif format == "auto" and path.endswith(".m"):
        format = "matpower-subset"
    return parse_case(text, format)


def load_bundled_case(name: str) -> NetworkCase:
    """Load one of the packaged cases: "case3", "case33" or "case141"."""
    pkg = resources.files("gridtae.data")
    for suffix, fmt in ((".json", "native-json"), (".m", "matpower-subset")):
        res = pkg.joinpath(name + suffix)
        if res.is_file():
            return parse_case(res.read_text(encoding="utf-8"), fmt)
    raise CaseError(f"no bundled case named {name!r}")


# --------------------------------------------------------------------------
# admittance assembly and candidate sets
# --------------------------------------------------------------------------

def build_admittance(case_or_set, g=None, b=None, bus_count=None) -> AdmittanceMatrices:
    """Assemble the N x N admittance matrices G and B.

    Either pass a :class:`NetworkCase` alone, or a :class:`CandidateSet`
    together with per-pair ``g``/``b`` arrays and ``bus_count``.
    """
    if isinstance(case_or_set, NetworkCase):
        case = case_or_set
        pairs = case.branch_pairs
        g = np.array([br.g for br in case.branches])
        b = np.array([br.b for br in case.branches])
        n = case.bus_count
    else:
        pairs = case_or_set.pairs
        if g is None or b is None or bus_count is None:
            raise CaseError("candidate-set form requires g, b and bus_count")
        g = np.asarray(g, dtype=float)
        b = np.asarray(b, dtype=float)
        n = int(bus_count)
        if len(g) != len(pairs) or len(b) != len(pairs):
            raise CaseError("g/b length does not match candidate pair count")

    G = np.zeros((n, n))
    B = np.zeros((n, n))
    for (i, j), gij, bij in zip(pairs, g, b):
        i -= 1
        j -= 1
        G[i, j] -= gij
        G[j, i] -= gij
        G[i, i] += gij
        G[j, j] += gij
        B[i, j] -= bij
        B[j, i] -= bij
        B[i, i] += bij
        B[j, j] += bij
    return AdmittanceMatrices(G, B)


def candidate_set(bus_count: int, prior=None) -> CandidateSet:
    """All N(N-1)/2 pairs, or exactly the given prior pairs.

    ``prior`` is an iterable of (i, j) bus pairs (order within a pair is
    irrelevant); it models prior knowledge that every other pair is
    disconnected.
    """
    if prior is None:
        pairs = tuple(
            (i, j)
            for i in range(1, bus_count + 1)
            for j in range(i + 1, bus_count + 1)
        )
        return CandidateSet(pairs)
    normalized = []
    for i, j in prior:
        i, j = int(i), int(j)
        if not (1 <= i <= bus_count and 1 <= j <= bus_count):
            raise CaseError(f"prior pair ({i},{j}) references a nonexistent bus")
        normalized.append((i, j) if i < j else (j, i))
    return CandidateSet(tuple(normalized))
