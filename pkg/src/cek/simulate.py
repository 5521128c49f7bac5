"""Synthetic observational data with both potential outcomes materialized.

Randomness comes from numpy's Philox4x64 counter-based generator keyed by
the seed.  Record ``i`` and node ``j`` (topological position) always use
uniform draw number ``i * n_nodes + j``, so any split of records across
workers reproduces the same values.

Potential outcomes are coupled through shared uniforms: the arm-specific
worlds ``do(Z=0)`` and ``do(Z=1)`` reuse each record's draws, so a node
whose conditional distribution does not depend on Z takes the same value in
both worlds.  This coupling is a modelling choice; only the marginals of
``Y_0`` and ``Y_1`` enter the average treatment effect.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, write_csv
from .exceptions import DataError, ModelError
from .model import CausalGraph, CptSet, Node, require_valid, true_ate

GENERATOR = "numpy-philox4x64/v1"


@dataclass(frozen=True)
class Scenario:
    name: str
    graph: CausalGraph
    cpts: CptSet
    treatment: str = "z"
    outcome: str = "y"
    n: int = 1000
    seed: int = 0
    adjustment: tuple[str, ...] = ()
    description: str = ""

    def validate(self) -> None:
        require_valid(self.graph, self.cpts)
        if self.graph.card(self.treatment) != 2:
            raise ModelError(f"treatment {self.treatment!r} must be binary")
        self.graph.card(self.outcome)

    def with_sample(self, n: int, seed: int) -> "Scenario":
        return Scenario(self.name, self.graph, self.cpts, self.treatment, self.outcome, n, seed,
                        self.adjustment, self.description)

    def true_ate(self) -> float:
        return true_ate(self.graph, self.cpts, self.treatment, self.outcome)


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    dataset: Dataset
    y0: np.ndarray
    y1: np.ndarray
    scenario: Scenario
    columns: tuple[str, ...] = ()
    generator: str = GENERATOR
    metadata: dict = field(default_factory=dict)

    def sample_ate(self) -> float:
        return float(np.mean(self.y1) - np.mean(self.y0))

    def write(self, path, truth_path=None) -> str:
        """Write the observed CSV and its truth sidecar; returns the sidecar path."""
        write_csv(self.dataset, path, order=self.columns)
        truth_path = truth_path or truth_path_for(path)
        with open(truth_path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# true_ate={self.scenario.true_ate()!r}\n")
            fh.write(f"# scenario={self.scenario.name}\n")
            fh.write(f"# seed={self.scenario.seed}\n")
            fh.write(f"# generator={self.generator}\n")
            fh.write(f"# treatment={self.scenario.treatment}\n")
            fh.write(f"# outcome={self.scenario.outcome}\n")
            fh.write(f"# adjustment={','.join(self.scenario.adjustment)}\n")
            fh.write("y0,y1\n")
            for a, b in zip(self.y0, self.y1):
                fh.write(f"{int(a)},{int(b)}\n")
        return str(truth_path)


def truth_path_for(path) -> str:
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".truth.csv"


@dataclass(frozen=True)
class Truth:
    true_ate: float
    y0: np.ndarray
    y1: np.ndarray
    header: dict

    @property
    def adjustment(self) -> tuple[str, ...] | None:
        raw = self.header.get("adjustment")
        if raw is None:
            return None
        return tuple(c for c in raw.split(",") if c)


def read_truth(path) -> Truth:
    header = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read truth sidecar {path}: {exc}") from exc
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    if "true_ate" not in header:
        raise DataError(f"{path}: missing '# true_ate=' header comment")
    if not body or body[0].replace(" ", "") != "y0,y1":
        raise DataError(f"{path}: expected a y0,y1 header row")
    pairs = [tuple(int(v) for v in row.split(",")) for row in body[1:]]
    y0 = np.array([p[0] for p in pairs], dtype=np.int64)
    y1 = np.array([p[1] for p in pairs], dtype=np.int64)
    return Truth(float(header["true_ate"]), y0, y1, header)


def uniforms(seed: int, start: int, stop: int, n_nodes: int) -> np.ndarray:
    """Draws for records ``start..stop-1`` as an array of shape ``(stop-start, n_nodes)``."""
    first = start * n_nodes
    bitgen = np.random.Philox(key=int(seed))
    blocks, skip = divmod(first, 4)
    bitgen.advance(blocks)
    draws = np.random.Generator(bitgen).random(skip + (stop - start) * n_nodes)[skip:]
    return draws.reshape(stop - start, n_nodes)


def _draw(table: np.ndarray, parent_values: Sequence[np.ndarray], u: np.ndarray) -> np.ndarray:
    rows = table[tuple(parent_values)] if parent_values else np.broadcast_to(table, (u.size, table.shape[-1]))
    cdf = np.cumsum(rows, axis=1)
    return np.sum(cdf[:, :-1] <= u[:, None], axis=1).astype(np.int64)


def _propagate(graph: CausalGraph, cpts: CptSet, u: np.ndarray, clamp: dict | None = None) -> dict:
    values = {}
    n = u.shape[0]
    for j, node in enumerate(graph.nodes):
        if clamp and node.name in clamp:
            values[node.name] = np.full(n, clamp[node.name], dtype=np.int64)
            continue
        parents = [values[p] for p in graph.parents[node.name]]
        values[node.name] = _draw(cpts[node.name], parents, u[:, j])
    return values


def sample(scenario: Scenario, start: int = 0, stop: int | None = None) -> SimulatedDataset:
    """Ancestral sample of ``scenario.n`` records (or the shard ``start:stop``)."""
    if scenario.n < 1:
        raise DataError("sample size must be at least 1")
    scenario.validate()
    stop = scenario.n if stop is None else stop
    if not 0 <= start < stop <= scenario.n:
        raise DataError(f"invalid record range {start}:{stop}")
    graph = scenario.graph
    size = len(graph.nodes) * (stop - start)
    u = uniforms(scenario.seed, start, stop, len(graph.nodes))
    observed = _propagate(graph, scenario.cpts, u)
    arms = [_propagate(graph, scenario.cpts, u, {scenario.treatment: a})[scenario.outcome] for a in (0, 1)]
    if graph.card(scenario.outcome) != 2:
        raise ModelError("simulated outcome must be binary")
    covs = [n.name for n in graph.nodes if n.name not in (scenario.treatment, scenario.outcome)]
    ds = Dataset({c: observed[c] for c in covs}, observed[scenario.treatment], observed[scenario.outcome],
                 scenario.treatment, scenario.outcome, "binary")
    y0, y1 = arms
    y0.setflags(write=False)
    y1.setflags(write=False)
    return SimulatedDataset(ds, y0, y1, scenario, graph.names, GENERATOR,
                            {"seed": scenario.seed, "draws": size, "start": start, "stop": stop})


# --- builtin scenarios ----------------------------------------------------------

def _bern(p1):
    p1 = np.asarray(p1, dtype=float)
    return np.stack([1.0 - p1, p1], axis=-1)


def _triangle():
    graph = CausalGraph([Node("x", 3), Node("z", 2), Node("y", 2)], [("x", "z"), ("x", "y"), ("z", "y")])
    x = np.arange(3)
    z = np.arange(2)
    cpts = CptSet({
        "x": [0.3, 0.4, 0.3],
        "z": _bern([0.15, 0.5, 0.85]),
        # parents stored as (x, z)
        "y": _bern(0.1 + 0.25 * z[None, :] + 0.25 * x[:, None]),
    })
    return Scenario("triangle", graph, cpts, adjustment=("x",),
                    description="X confounds Z and Y: X->Z, X->Y, Z->Y; strong confounding, true ATE 0.25.")


def _randomized():
    graph = CausalGraph([Node("x", 3), Node("z", 2), Node("y", 2)], [("x", "y"), ("z", "y")])
    x = np.arange(3)
    z = np.arange(2)
    cpts = CptSet({
        "x": [0.3, 0.4, 0.3],
        "z": [0.5, 0.5],
        "y": _bern(0.1 + 0.25 * z[None, :] + 0.25 * x[:, None]),
    })
    return Scenario("randomized", graph, cpts, adjustment=("x",),
                    description="Z has no parents (randomized assignment); X affects Y only; true ATE 0.25.")


def _mediator():
    names = ["x1", "x2", "x3", "x4", "z", "zprime", "y"]
    edges = [("x1", "z"), ("x3", "z"), ("x4", "z"),
             ("z", "zprime"), ("x1", "zprime"), ("x2", "zprime"), ("x4", "zprime"),
             ("z", "y"), ("zprime", "y"), ("x2", "y"), ("x3", "y"), ("x4", "y")]
    graph = CausalGraph([Node(n, 2) for n in names], edges)
    b = np.arange(2)
    x1, x3, x4 = np.meshgrid(b, b, b, indexing="ij")
    z_p = 0.2 + 0.3 * x1 + 0.2 * x3 + 0.2 * x4
    # zprime parents in stored order: x1, x2, x4, z
    x1, x2, x4, z = np.meshgrid(b, b, b, b, indexing="ij")
    zp_p = 0.15 + 0.4 * z + 0.15 * x1 + 0.1 * x2 + 0.1 * x4
    # y parents in stored order: x2, x3, x4, z, zprime
    x2, x3, x4, z, zp = np.meshgrid(b, b, b, b, b, indexing="ij")
    y_p = 0.1 + 0.2 * z + 0.25 * zp + 0.1 * x2 + 0.1 * x3 + 0.1 * x4
    cpts = CptSet({
        "x1": [0.6, 0.4], "x2": [0.5, 0.5], "x3": [0.4, 0.6], "x4": [0.7, 0.3],
        "z": _bern(z_p), "zprime": _bern(zp_p), "y": _bern(y_p),
    })
    return Scenario("mediator", graph, cpts, adjustment=("x1", "x2", "x3", "x4"),
                    description=("Z affects Y directly and through the mediator zprime. Parents: "
                                 "z <- {x1,x3,x4}; zprime <- {z,x1,x2,x4}; y <- {z,zprime,x2,x3,x4}. "
                                 "Y does not depend on x1 directly. x1 still reaches Y through zprime, "
                                 "so {x2,x3,x4} alone is not an admissible adjustment set; true ATE 0.3."))


_BUILDERS = {"triangle": _triangle, "randomized": _randomized, "mediator": _mediator}


def builtin_scenarios() -> dict[str, Scenario]:
    return {name: build() for name, build in _BUILDERS.items()}


def get_scenario(name: str, n: int = 1000, seed: int = 0) -> Scenario:
    try:
        base = _BUILDERS[name]()
    except KeyError:
        raise ModelError(f"unknown scenario {name!r}; choose from {sorted(_BUILDERS)}") from None
    return base.with_sample(n, seed)
