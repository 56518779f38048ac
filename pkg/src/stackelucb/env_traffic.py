"""
Traffic routing game on a directed road network.

An operator routes a fleet of units between two nodes while other users,
whose demand is the opponent type, pick between their two geometrically
shortest routes using travel times under the operator's load only. The
response is the average BPR congestion over all edges.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import networkx as nx
import numpy as np

from .errors import InputError, SetupError
from .games import GameEnv
from .policies import RewardOracle

log = logging.getLogger(__name__)

BPR_ALPHA = 0.15
BPR_POWER = 4
KAPPA = 10.0
NOISE_SIGMA = 5.0
TOTAL_UNITS = 300.0
FRACTIONS = (0.25, 0.5, 0.75, 1.0)
DEFAULT_SCALE = 0.01
LENGTH_DECIMALS = 9  # route lengths are compared after rounding so float noise cannot break ties


@dataclass
class RoadNetwork:
    """Directed network with node positions, BPR edge data and OD demand.

    Edges are indexed in file order; nodes keep their integer ids.
    """

    node_ids: np.ndarray
    positions: np.ndarray
    edge_from: np.ndarray
    edge_to: np.ndarray
    free_flow: np.ndarray
    capacity: np.ndarray
    od_pairs: list = field(default_factory=list)
    base_demand: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self._node_index = {int(n): i for i, n in enumerate(self.node_ids)}
        self._edge_index = {(int(a), int(b)): e for e, (a, b) in enumerate(zip(self.edge_from, self.edge_to))}
        if len(self._edge_index) != len(self.edge_from):
            raise SetupError("duplicate directed edge in network")
        if np.any(self.free_flow <= 0) or np.any(self.capacity <= 0):
            raise SetupError("free-flow times and capacities must be positive")
        for a, b in zip(self.edge_from, self.edge_to):
            if int(a) not in self._node_index or int(b) not in self._node_index:
                raise SetupError(f"edge ({a}, {b}) references an unknown node")
        self.lengths = np.array([np.linalg.norm(self.pos(b) - self.pos(a))
                                 for a, b in zip(self.edge_from, self.edge_to)])

    @property
    def n_edges(self) -> int:
        return len(self.edge_from)

    def pos(self, node) -> np.ndarray:
        return self.positions[self._node_index[int(node)]]

    def edge(self, a, b) -> int:
        return self._edge_index[(int(a), int(b))]

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(int(n) for n in self.node_ids)
        for e, (a, b) in enumerate(zip(self.edge_from, self.edge_to)):
            g.add_edge(int(a), int(b), length=float(self.lengths[e]), index=e)
        return g

    def route_edges(self, route) -> np.ndarray:
        return np.array([self.edge(a, b) for a, b in zip(route[:-1], route[1:])], dtype=np.int64)

    def route_incidence(self, route) -> np.ndarray:
        v = np.zeros(self.n_edges)
        v[self.route_edges(route)] = 1.0
        return v

    def route_length(self, route) -> float:
        return float(self.lengths[self.route_edges(route)].sum())


def _sections(text: str) -> dict:
    out, current = {}, None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            out[current] = []
        elif current is None:
            raise SetupError(f"data line outside a section: {raw!r}")
        else:
            out[current].append(line.split())
    return out


def load_network(path=None, scale: float = DEFAULT_SCALE) -> RoadNetwork:
    """Read a network file; capacities and demands are multiplied by ``scale``.

    The format has three whitespace-separated tables, introduced by the
    headers ``[nodes]`` (id x y), ``[edges]`` (from to capacity
    free_flow_time) and ``[demand]`` (origin destination demand). ``#``
    starts a comment. Without ``path`` the bundled 24-node fixture is read.
    """
    if not scale > 0:
        raise SetupError("scale must be positive")
    if path is None:
        text = resources.files("stackelucb").joinpath("data/sioux_falls_like.net").read_text()
    else:
        p = Path(path)
        if not p.exists():
            raise SetupError(f"network file not found: {p}")
        text = p.read_text()
    sec = _sections(text)
    for name in ("nodes", "edges"):
        if name not in sec:
            raise SetupError(f"network file lacks a [{name}] section")
    try:
        nodes = np.array([[float(v) for v in row[:3]] for row in sec["nodes"]])
        edges = np.array([[float(v) for v in row[:4]] for row in sec["edges"]])
        dem = [(int(r[0]), int(r[1]), float(r[2])) for r in sec.get("demand", [])]
    except (ValueError, IndexError) as exc:
        raise SetupError(f"malformed network file: {exc}") from exc
    node_ids = nodes[:, 0].astype(np.int64)
    # positions in the source data are large integers; rescale to unit-ish coordinates
    positions = nodes[:, 1:3] / 1e4
    od_pairs = [(o, d) for o, d, _ in dem if o != d]
    demand = np.array([v for o, d, v in dem if o != d]) * scale
    if np.any(demand < 0):
        raise SetupError("negative demand in network file")
    return RoadNetwork(
        node_ids=node_ids,
        positions=positions,
        edge_from=edges[:, 0].astype(np.int64),
        edge_to=edges[:, 1].astype(np.int64),
        free_flow=edges[:, 3].copy(),
        capacity=edges[:, 2] * scale,
        od_pairs=od_pairs,
        base_demand=demand,
    )


# -- BPR model ---------------------------------------------------------------------------

def bpr_travel_time(c_e, C_e, z):
    """``c_e (1 + 0.15 (z / C_e)^4)``, elementwise."""
    z = np.asarray(z, float)
    if np.any(z < 0):
        raise InputError("edge load must be nonnegative")
    return np.asarray(c_e, float) * (1.0 + BPR_ALPHA * (z / np.asarray(C_e, float)) ** BPR_POWER)


def edge_congestion(C_e, z):
    """Extra normalized travel time ``0.15 (z / C_e)^4``, elementwise."""
    z = np.asarray(z, float)
    if np.any(z < 0):
        raise InputError("edge load must be nonnegative")
    return BPR_ALPHA * (z / np.asarray(C_e, float)) ** BPR_POWER


# -- routes and plans --------------------------------------------------------------------

def k_shortest_routes(network: RoadNetwork, origin, dest, k: int, graph: Optional[nx.DiGraph] = None):
    """Up to ``k`` loopless routes in nondecreasing geometric length.

    Equal lengths are ordered by node sequence. Returns ``(routes,
    complete)`` where ``complete`` is False when fewer than ``k`` routes
    exist. Raises ``SetupError`` when the pair is disconnected.
    """
    if k < 1:
        raise InputError("k must be positive")
    g = graph if graph is not None else network.graph()
    if origin == dest:
        raise InputError("origin and destination coincide")
    try:
        gen = nx.shortest_simple_paths(g, int(origin), int(dest), weight="length")
        found = []
        cutoff = None
        for path in gen:
            length = round(network.route_length(path), LENGTH_DECIMALS)
            if cutoff is not None and length > cutoff:
                break
            found.append((length, tuple(path)))
            if len(found) == k:
                cutoff = length
    except nx.NetworkXNoPath as exc:
        raise SetupError(f"no route from {origin} to {dest}") from exc
    except nx.NodeNotFound as exc:
        raise SetupError(str(exc)) from exc
    found.sort()
    routes = [list(p) for _, p in found[:k]]
    return routes, len(routes) == k


@dataclass(frozen=True)
class RoutingPlan:
    edge_loads: np.ndarray
    routed_fraction: float
    route_assignment: tuple  # route index of each group; empty for the 0% plan

    @property
    def units(self) -> float:
        return float(self.routed_fraction * TOTAL_UNITS)


def generate_plan_set(network: RoadNetwork, origin, dest, total_units: float = TOTAL_UNITS,
                      fractions=FRACTIONS, n_routes: int = 3, n_groups: int = 3):
    """The 0% plan plus every (fraction, multiset of routes per group) combination.

    Returns ``(plans, routes)``. Units are split into ``n_groups`` equal
    groups; each group takes one of the ``n_routes`` shortest routes.
    """
    routes, complete = k_shortest_routes(network, origin, dest, n_routes)
    if not complete:
        raise SetupError(f"only {len(routes)} routes between {origin} and {dest}; {n_routes} needed")
    inc = np.array([network.route_incidence(r) for r in routes])
    plans = [RoutingPlan(np.zeros(network.n_edges), 0.0, ())]
    for frac in fractions:
        group = frac * total_units / n_groups
        for combo in itertools.combinations_with_replacement(range(n_routes), n_groups):
            loads = group * inc[list(combo)].sum(axis=0)
            plans.append(RoutingPlan(loads, float(frac), combo))
    return plans, routes


# -- users and response ------------------------------------------------------------------

@dataclass
class UserRoutes:
    """Two distance-shortest routes per OD pair as edge-incidence matrices ``(n_od, E)``."""

    first: np.ndarray
    second: np.ndarray

    @classmethod
    def build(cls, network: RoadNetwork) -> "UserRoutes":
        g = network.graph()
        A1 = np.zeros((len(network.od_pairs), network.n_edges))
        A2 = np.zeros_like(A1)
        for i, (o, d) in enumerate(network.od_pairs):
            routes, complete = k_shortest_routes(network, o, d, 2, graph=g)
            if not complete:
                raise SetupError(f"OD pair ({o}, {d}) has a single route")
            A1[i] = network.route_incidence(routes[0])
            A2[i] = network.route_incidence(routes[1])
        return cls(A1, A2)

    def choice_matrix(self, network: RoadNetwork, x) -> np.ndarray:
        """Per-OD incidence of the chosen route under operator-only times; ties keep the first."""
        t = bpr_travel_time(network.free_flow, network.capacity, x)
        first = self.first @ t <= self.second @ t
        return np.where(first[:, None], self.first, self.second)


def users_route_choice(network: RoadNetwork, x, demands, user_routes: Optional[UserRoutes] = None) -> np.ndarray:
    """User occupancy ``u`` over edges for operator loads ``x`` and OD demands."""
    demands = np.asarray(demands, float)
    if demands.shape != (len(network.od_pairs),):
        raise InputError(f"demand vector has shape {demands.shape}, expected ({len(network.od_pairs)},)")
    ur = user_routes if user_routes is not None else UserRoutes.build(network)
    return demands @ ur.choice_matrix(network, np.asarray(x, float))


def network_response(network: RoadNetwork, x, demands, user_routes: Optional[UserRoutes] = None) -> float:
    """Average edge congestion with operator loads ``x`` plus the users' loads."""
    z = np.asarray(x, float) + users_route_choice(network, x, demands, user_routes)
    return float(edge_congestion(network.capacity, z).mean())


def operator_reward(units, y, kappa: float = KAPPA):
    """Routed units minus ``kappa`` times the average congestion."""
    return np.asarray(units, float) - kappa * np.asarray(y, float)


# -- demand profiles -----------------------------------------------------------------------

class DemandSequence:
    """``theta_t = base * U(0, 1)`` per entry, drawn from a stream keyed on ``(seed, t)``.

    Keying on the round index makes the sequence independent of how often
    or in which order rounds are queried.
    """

    def __init__(self, base_demand, seed: int):
        self.base = np.asarray(base_demand, float)
        self.seed = int(seed)

    def __call__(self, t: int, history=None) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(t)]))
        return self.base * rng.uniform(size=self.base.shape)


# -- environment -----------------------------------------------------------------------------

@dataclass
class TrafficGame:
    """Everything needed to play and analyse the routing game."""

    network: RoadNetwork
    plans: list
    routes: list
    user_routes: UserRoutes
    origin: int
    dest: int
    kappa: float = KAPPA
    choices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # route choice depends on the plan only, so every plan's user incidence is fixed
        self.choices = np.stack([self.user_routes.choice_matrix(self.network, p.edge_loads) for p in self.plans])
        self.loads = np.array([p.edge_loads for p in self.plans])
        self._plan_of = {p.edge_loads.tobytes(): i for i, p in enumerate(self.plans)}
        out = [e for e, a in enumerate(self.network.edge_from) if int(a) == self.origin]
        self._out_edges = np.array(out, dtype=np.int64)

    def responses(self, demands) -> np.ndarray:
        """Average congestion of every plan, shape ``(n_plans,)``."""
        z = self.loads + np.einsum("k,pke->pe", np.asarray(demands, float), self.choices)
        return edge_congestion(self.network.capacity, z).mean(axis=1)

    def edge_congestion_of(self, plan_index: int, demands) -> np.ndarray:
        z = self.loads[plan_index] + np.asarray(demands, float) @ self.choices[plan_index]
        return edge_congestion(self.network.capacity, z)

    def respond(self, x, demands) -> np.ndarray:
        x = np.asarray(x, float)
        i = self._plan_of.get(x.tobytes())
        if i is None:
            return np.array([network_response(self.network, x, demands, self.user_routes)])
        z = x + np.asarray(demands, float) @ self.choices[i]
        return np.array([edge_congestion(self.network.capacity, z).mean()])

    def units_routed(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return X[:, self._out_edges].sum(axis=1)

    def oracle(self) -> RewardOracle:
        kappa = self.kappa

        def fn(X, Y):
            return operator_reward(self.units_routed(X), Y[:, 0], kappa)

        def maximizer(X, lo, hi):
            # reward decreases in y, so the optimistic response is the (clipped) lower bound
            return lo.copy(), fn(X, lo)

        return RewardOracle(fn, response_lo=[0.0], lipschitz=kappa, maximizer=maximizer)

    def max_response(self) -> float:
        """Largest congestion any plan can cause; demands never exceed the base profile."""
        return float(self.responses(self.network.base_demand).max())

    def shortest_route_plan(self) -> int:
        """Index of the plan routing every unit along the shortest route."""
        for i, p in enumerate(self.plans):
            if p.routed_fraction == 1.0 and set(p.route_assignment) == {0}:
                return i
        raise SetupError("plan set lacks the all-shortest-route plan")

    def zero_plan(self) -> int:
        return 0


def build_traffic_game(network: Optional[RoadNetwork] = None, origin: int = 1, dest: int = 20,
                       kappa: float = KAPPA, total_units: float = TOTAL_UNITS) -> TrafficGame:
    network = network if network is not None else load_network()
    plans, routes = generate_plan_set(network, origin, dest, total_units)
    return TrafficGame(network, plans, routes, UserRoutes.build(network), int(origin), int(dest), kappa)


def build_traffic_env(game: TrafficGame, demand_seed: int, noise_sigma: float = NOISE_SIGMA,
                      reward_range=None) -> GameEnv:
    """Finite routing game; actions are the plans' edge-load vectors.

    The default reward range runs from the all-zero plan under the worst
    congestion to routing every unit at zero congestion.
    """
    if reward_range is None:
        reward_range = (-game.kappa * game.max_response(), TOTAL_UNITS)
    return GameEnv(
        actions=game.loads,
        type_sequence=DemandSequence(game.network.base_demand, demand_seed),
        respond=game.respond,
        reward=game.oracle(),
        noise_sigma=noise_sigma,
        reward_range=tuple(reward_range),
        respond_all=lambda theta: game.responses(theta)[:, None],
        name="traffic",
    )
