"""Discrete causal Bayesian networks and the intervention operator.

A model is a :class:`CausalGraph` (named categorical nodes plus directed
edges) together with a :class:`CptSet` holding one conditional probability
table per node.  Every query is answered by exhaustive enumeration of the
joint state space, so results are exact up to floating point.

Node states are integer codes ``0 .. card - 1``.  Expectations of an outcome
node use the code itself as the numeric value.
"""
from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .exceptions import EnumerationLimitError, ModelError

DEFAULT_ENUM_CAP = 2**22
NORMALIZATION_TOL = 1e-12


def enumeration_cap() -> int:
    """Current cap on joint configurations, honouring ``CEK_ENUM_CAP``."""
    raw = os.environ.get("CEK_ENUM_CAP")
    if raw is None or raw.strip() == "":
        return DEFAULT_ENUM_CAP
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ModelError(f"CEK_ENUM_CAP must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ModelError("CEK_ENUM_CAP must be positive")
    return cap


@dataclass(frozen=True)
class Node:
    name: str
    card: int


class Violation(NamedTuple):
    kind: str
    node: str | None
    detail: str

    def __str__(self):
        where = f" [{self.node}]" if self.node is not None else ""
        return f"{self.kind}{where}: {self.detail}"


class CausalGraph:
    """Named categorical nodes and directed edges.

    Construction never raises on structural problems so that
    :func:`validate` can report them; anything that needs a well-formed
    DAG calls :meth:`require_valid` first.  When the edges are acyclic,
    ``nodes`` holds the nodes in topological order, breaking ties by
    declaration order.
    """

    def __init__(self, nodes: Iterable[Node | tuple[str, int]], edges: Iterable[Sequence[str]] = ()):
        declared = tuple(n if isinstance(n, Node) else Node(str(n[0]), int(n[1])) for n in nodes)
        self.declared = declared
        self.edges = tuple((str(p), str(c)) for p, c in edges)
        self.problems: list[Violation] = []

        seen: set[str] = set()
        for node in declared:
            if node.name in seen:
                self.problems.append(Violation("duplicate-node", node.name, "node name declared twice"))
            seen.add(node.name)
            if node.card < 2:
                self.problems.append(Violation("cardinality", node.name, f"cardinality {node.card} < 2"))
        for p, c in self.edges:
            for end in (p, c):
                if end not in seen:
                    self.problems.append(Violation("unknown-node", end, f"edge {p}->{c} names an unknown node"))

        self._cards = {n.name: n.card for n in declared}
        parents: dict[str, list[str]] = {n.name: [] for n in declared}
        for p, c in self.edges:
            if c in parents and p in self._cards and p not in parents[c]:
                parents[c].append(p)

        order = _topological_order([n.name for n in declared], parents)
        if order is None:
            cyc = _find_cycle([n.name for n in declared], parents)
            self.problems.append(Violation("cycle", cyc[0] if cyc else None,
                                           "edges contain a cycle: " + " -> ".join(cyc)))
            self.nodes = declared
        else:
            by_name = {n.name: n for n in declared}
            self.nodes = tuple(by_name[name] for name in order)
        self._index = {n.name: i for i, n in enumerate(self.nodes)}
        self.parents = {name: tuple(sorted(ps, key=self._index.__getitem__))
                        for name, ps in parents.items()}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    @property
    def is_valid(self) -> bool:
        return not self.problems

    def card(self, name: str) -> int:
        try:
            return self._cards[name]
        except KeyError:
            raise ModelError(f"unknown node {name!r}") from None

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelError(f"unknown node {name!r}") from None

    def children(self, name: str) -> tuple[str, ...]:
        return tuple(c for c in self.names if name in self.parents[c])

    def require_valid(self) -> None:
        if self.problems:
            raise ModelError("invalid graph: " + "; ".join(map(str, self.problems)))

    def __repr__(self):
        return f"CausalGraph(nodes={[(n.name, n.card) for n in self.nodes]}, edges={list(self.edges)})"


def _topological_order(names: list[str], parents: Mapping[str, list[str]]) -> list[str] | None:
    rank = {n: i for i, n in enumerate(names)}
    remaining = {n: len(set(parents[n])) for n in names}
    children: dict[str, list[str]] = {n: [] for n in names}
    for c in names:
        for p in set(parents[c]):
            children[p].append(c)
    ready = sorted((n for n in names if remaining[n] == 0), key=rank.__getitem__)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in children[n]:
            remaining[c] -= 1
            if remaining[c] == 0:
                ready.append(c)
        ready.sort(key=rank.__getitem__)
    return order if len(order) == len(names) else None


def _find_cycle(names: list[str], parents: Mapping[str, list[str]]) -> list[str]:
    state = dict.fromkeys(names, 0)
    stack: list[str] = []

    def visit(n):
        state[n] = 1
        stack.append(n)
        for p in parents[n]:
            if state[p] == 1:
                return stack[stack.index(p):] + [p]
            if state[p] == 0:
                found = visit(p)
                if found:
                    return found
        stack.pop()
        state[n] = 2
        return None

    for n in names:
        if state[n] == 0:
            found = visit(n)
            if found:
                return list(reversed(found))
    return []


class CptSet:
    """Conditional probability tables keyed by node name.

    Each table is an array of shape ``(*parent_cards, card)`` whose leading
    axes follow the graph's stored parent order.  Arrays are copied and made
    read-only.
    """

    def __init__(self, tables: Mapping[str, np.ndarray], unidentified: Iterable[tuple[str, tuple]] = ()):
        frozen = {}
        for name, table in tables.items():
            arr = np.array(table, dtype=float)
            arr.setflags(write=False)
            frozen[name] = arr
        self._tables = frozen
        # rows filled uniformly because their parent configuration was never observed
        self.unidentified = tuple(unidentified)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tables[name]
        except KeyError:
            raise ModelError(f"no CPT for node {name!r}") from None

    def __contains__(self, name):
        return name in self._tables

    def __iter__(self):
        return iter(self._tables)

    def __len__(self):
        return len(self._tables)

    def items(self):
        return self._tables.items()

    def row(self, name: str, parent_states: Sequence[int] = ()) -> np.ndarray:
        return self[name][tuple(parent_states)]

    def replace(self, **tables) -> "CptSet":
        merged = dict(self._tables)
        merged.update(tables)
        return CptSet(merged)


@dataclass(frozen=True)
class InterventionQuery:
    target: str
    do: Mapping[str, int] = field(default_factory=dict)
    evidence: Mapping[str, int] = field(default_factory=dict)


def validate(graph: CausalGraph, cpts: CptSet | None) -> list[Violation]:
    """List every structural or numerical problem; empty means well-formed."""
    out = list(graph.problems)
    if cpts is None:
        return out
    known = {n.name for n in graph.declared}
    for name in cpts:
        if name not in known:
            out.append(Violation("unknown-cpt", name, "CPT given for a node not in the graph"))
    if graph.problems:
        return out
    for node in graph.nodes:
        if node.name not in cpts:
            out.append(Violation("missing-cpt", node.name, "no CPT for node"))
            continue
        table = cpts[node.name]
        pcards = tuple(graph.card(p) for p in graph.parents[node.name])
        expected = pcards + (node.card,)
        if table.shape != expected:
            out.append(Violation("missing-row", node.name,
                                 f"table shape {table.shape} does not cover parent configurations {expected}"))
            continue
        for config in itertools.product(*(range(c) for c in pcards)):
            row = table[config]
            if not np.all(np.isfinite(row)) or np.any(row < 0):
                out.append(Violation("negative", node.name, f"row {config} has negative or non-finite entries"))
            elif abs(float(np.sum(row)) - 1.0) > NORMALIZATION_TOL:
                out.append(Violation("normalization", node.name,
                                     f"row {config} sums to {float(np.sum(row))!r}"))
    return out


def require_valid(graph: CausalGraph, cpts: CptSet) -> None:
    problems = validate(graph, cpts)
    if problems:
        raise ModelError("invalid model: " + "; ".join(map(str, problems)))


def _check_state(graph: CausalGraph, name: str, state) -> int:
    card = graph.card(name)
    if isinstance(state, (bool, np.bool_)) or int(state) != state or not 0 <= int(state) < card:
        raise ModelError(f"state {state!r} out of range for node {name!r} (cardinality {card})")
    return int(state)


def joint_probability(graph: CausalGraph, cpts: CptSet, assignment: Mapping[str, int]) -> float:
    """Product of the CPT factors at a full assignment, in topological order."""
    graph.require_valid()
    for name in assignment:
        graph.card(name)
    missing = [n for n in graph.names if n not in assignment]
    if missing:
        raise ModelError(f"assignment does not cover nodes {missing}")
    states = {n: _check_state(graph, n, assignment[n]) for n in graph.names}
    prob = 1.0
    for name in graph.names:
        config = tuple(states[p] for p in graph.parents[name])
        prob *= float(cpts[name][config + (states[name],)])
    return prob


def _joint_tensor(graph: CausalGraph, cpts: CptSet, do: Mapping[str, int] = (), cap: int | None = None) -> np.ndarray:
    """Full (possibly truncated) joint as an array with one axis per node."""
    cards = [n.card for n in graph.nodes]
    size = 1
    for c in cards:
        size *= c
    limit = enumeration_cap() if cap is None else cap
    if size > limit:
        raise EnumerationLimitError(f"joint state space has {size} configurations, cap is {limit}")
    do = dict(do)
    joint = np.ones(cards)
    for i, node in enumerate(graph.nodes):
        shape = [1] * len(cards)
        shape[i] = node.card
        if node.name in do:
            factor = np.zeros(node.card)
            factor[do[node.name]] = 1.0
        else:
            for p in graph.parents[node.name]:
                shape[graph.index(p)] = graph.card(p)
            factor = cpts[node.name]
        joint = joint * factor.reshape(shape)
    return joint


def interventional_distribution(graph: CausalGraph, cpts: CptSet, query: InterventionQuery,
                                cap: int | None = None) -> np.ndarray:
    """``p(target | do(...), evidence)`` by truncated factorization.

    Factors of intervened nodes are dropped and the nodes clamped to their
    do-values; every other non-target node is summed out.
    """
    require_valid(graph, cpts)
    do = {n: _check_state(graph, n, s) for n, s in query.do.items()}
    evidence = {n: _check_state(graph, n, s) for n, s in query.evidence.items()}
    graph.card(query.target)
    if query.target in do:
        raise ModelError(f"target {query.target!r} is also intervened on")
    joint = _joint_tensor(graph, cpts, do, cap)
    for name, state in evidence.items():
        mask = np.zeros(graph.card(name))
        mask[state] = 1.0
        shape = [1] * joint.ndim
        shape[graph.index(name)] = graph.card(name)
        joint = joint * mask.reshape(shape)
    t = graph.index(query.target)
    axes = tuple(i for i in range(joint.ndim) if i != t)
    marginal = joint.sum(axis=axes)
    total = float(marginal.sum())
    if total <= 0.0:
        raise ModelError("conditioning event has probability zero")
    if evidence:
        marginal = marginal / total
    return marginal


def expectation(dist: Sequence[float]) -> float:
    """Mean of a distribution over integer codes, summed in code order."""
    total = 0.0
    for code, p in enumerate(dist):
        total += code * float(p)
    return total


def true_ate(graph: CausalGraph, cpts: CptSet, treatment: str, outcome: str, cap: int | None = None) -> float:
    """``E[Y | do(Z=1)] - E[Y | do(Z=0)]`` computed exactly from the CPTs."""
    if graph.card(treatment) != 2:
        raise ModelError(f"treatment {treatment!r} must be binary")
    means = [expectation(interventional_distribution(graph, cpts, InterventionQuery(outcome, {treatment: z}), cap))
             for z in (0, 1)]
    return means[1] - means[0]


def adjustment_formula(graph: CausalGraph, cpts: CptSet, treatment: str, outcome: str,
                       adjustment: Sequence[str], treatment_value: int, cap: int | None = None) -> np.ndarray:
    """``sum_s p(s) p(y | z, s)`` with both factors taken from the observational joint.

    Raises :class:`ModelError` when some configuration ``s`` with ``p(s) > 0``
    has ``p(z, s) = 0`` (no common support).
    """
    require_valid(graph, cpts)
    adjustment = list(adjustment)
    for name in (treatment, outcome, *adjustment):
        graph.card(name)
    if treatment in adjustment or outcome in adjustment:
        raise ModelError("adjustment set must exclude treatment and outcome")
    z = _check_state(graph, treatment, treatment_value)
    joint = _joint_tensor(graph, cpts, cap=cap)
    keep = [graph.index(n) for n in adjustment] + [graph.index(treatment), graph.index(outcome)]
    drop = tuple(i for i in range(joint.ndim) if i not in keep)
    marg = joint.sum(axis=drop)
    # axes of marg follow the stored order of the kept nodes; move to (s..., z, y)
    kept_sorted = sorted(keep)
    marg = np.moveaxis(marg, [kept_sorted.index(k) for k in keep], list(range(len(keep))))
    p_s = marg.sum(axis=(-2, -1))
    p_zs = marg[..., z, :].sum(axis=-1)
    result = np.zeros(graph.card(outcome))
    for config in itertools.product(*(range(graph.card(n)) for n in adjustment)):
        ps = float(p_s[config]) if adjustment else float(p_s)
        if ps == 0.0:
            continue
        pzs = float(p_zs[config]) if adjustment else float(p_zs)
        if pzs <= 0.0:
            raise ModelError(f"no support for {treatment}={z} at {dict(zip(adjustment, config))}")
        result += ps * (marg[config + (z,)] / pzs)
    return result


def random_cpts(graph: CausalGraph, rng: np.random.Generator, low: float = 0.0) -> CptSet:
    """Random CPTs; each row is a Dirichlet(1) draw mixed with ``low`` uniform mass."""
    graph.require_valid()
    tables = {}
    for node in graph.nodes:
        pcards = tuple(graph.card(p) for p in graph.parents[node.name])
        draw = rng.dirichlet(np.ones(node.card), size=pcards if pcards else None)
        tables[node.name] = (1.0 - low) * draw + low / node.card
    return CptSet(tables)


# --- model file -----------------------------------------------------------

_TOP_FIELDS = {"nodes", "edges", "cpts"}
_NODE_FIELDS = {"name", "card"}
_CPT_FIELDS = {"parents", "table"}


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ModelError(f"{where}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ModelError(f"{where}: unknown field(s) {extra}")


def model_from_dict(doc: Mapping) -> tuple[CausalGraph, CptSet | None]:
    """Parse a model document; ``cpts`` may be omitted for graph-only files."""
    _reject_unknown(doc, _TOP_FIELDS, "model")
    if "nodes" not in doc:
        raise ModelError("model: missing field 'nodes'")
    nodes = []
    for i, entry in enumerate(doc["nodes"]):
        _reject_unknown(entry, _NODE_FIELDS, f"nodes[{i}]")
        if "name" not in entry or "card" not in entry:
            raise ModelError(f"nodes[{i}]: requires 'name' and 'card'")
        if not isinstance(entry["card"], int) or isinstance(entry["card"], bool):
            raise ModelError(f"nodes[{i}]: 'card' must be an integer")
        nodes.append(Node(str(entry["name"]), entry["card"]))
    edges = []
    for i, edge in enumerate(doc.get("edges", [])):
        if not isinstance(edge, (list, tuple)) or len(edge) != 2:
            raise ModelError(f"edges[{i}]: expected [parent, child]")
        edges.append((str(edge[0]), str(edge[1])))
    graph = CausalGraph(nodes, edges)
    graph.require_valid()
    if "cpts" not in doc:
        return graph, None
    raw = doc["cpts"]
    if not isinstance(raw, dict):
        raise ModelError("cpts: expected an object")
    tables = {}
    for name, spec in raw.items():
        _reject_unknown(spec, _CPT_FIELDS, f"cpts.{name}")
        card = graph.card(name)
        declared = [str(p) for p in spec.get("parents", [])]
        if sorted(declared) != sorted(graph.parents[name]):
            raise ModelError(f"cpts.{name}: parents {declared} do not match graph parents "
                             f"{list(graph.parents[name])}")
        flat = np.asarray(spec.get("table", []), dtype=float)
        dcards = [graph.card(p) for p in declared]
        expected = int(np.prod(dcards, dtype=np.int64)) * card
        if flat.ndim != 1 or flat.size != expected:
            raise ModelError(f"cpts.{name}: table has {flat.size} entries, expected {expected}")
        table = flat.reshape(tuple(dcards) + (card,))
        perm = [declared.index(p) for p in graph.parents[name]] + [len(declared)]
        tables[name] = np.transpose(table, perm)
    return graph, CptSet(tables)


def model_to_dict(graph: CausalGraph, cpts: CptSet | None = None) -> dict:
    doc = {
        "nodes": [{"name": n.name, "card": n.card} for n in graph.nodes],
        "edges": [list(e) for e in graph.edges],
    }
    if cpts is not None:
        doc["cpts"] = {
            name: {"parents": list(graph.parents[name]), "table": [float(v) for v in cpts[name].ravel()]}
            for name in graph.names if name in cpts
        }
    return doc


def load_model(path) -> tuple[CausalGraph, CptSet | None]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)


def save_model(path, graph: CausalGraph, cpts: CptSet | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(graph, cpts), fh, indent=2)
        fh.write("\n")
