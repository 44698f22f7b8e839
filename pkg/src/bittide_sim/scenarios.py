"""Built-in and file-defined simulation scenarios.

The triangle is the three-node network with all six directed links; its
edge numbering is chosen so the counter-example mode de-centers edges 1
and 4 (the two links out of the root) after they were already centered.
The mesh is a nine-node network whose BFS tree from root 2 has eight
edges; the schedule (3, 5, 10, 4, 13, 2, 7, 11) is a valid processing
order for that tree.  Random scenarios draw a Hamiltonian cycle over a
shuffled node order plus extra edges, so they are strongly connected by
construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .controller import RotationConfig
from .errors import ConfigError
from .graph import DirectedGraph, load_graph

TRIANGLE_EDGES = ((1, 2), (2, 3), (2, 1), (1, 3), (3, 1), (3, 2))

MESH_EDGES = (
    (7, 2),
    (4, 8),
    (2, 1),
    (2, 5),
    (2, 3),
    (8, 2),
    (6, 9),
    (9, 2),
    (3, 2),
    (1, 4),
    (5, 7),
    (5, 1),
    (3, 6),
)
MESH_SCHEDULE = (3, 5, 10, 4, 13, 2, 7, 11)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything one run needs: topology, frequencies, gains, timing."""

    name: str
    graph: DirectedGraph
    root: int
    omega_u: np.ndarray
    config: RotationConfig
    dt: float = 0.01
    sample_stride: int = 1
    t_end: float | None = None
    schedule: tuple[int, ...] | None = None
    naive_targets: tuple[int, ...] | None = None


def omega_spread(n: int, center: float = 1.0, delta: float = 1e-4, seed: int = 0) -> np.ndarray:
    """Uncontrolled frequencies drawn uniformly from [center - delta, center + delta]."""
    rng = np.random.default_rng(seed)
    return center + delta * (2.0 * rng.random(n) - 1.0)


def random_graph(n: int, seed: int, extra_edges: int | None = None) -> DirectedGraph:
    """Strongly connected digraph: a shuffled Hamiltonian cycle plus extras."""
    if n < 2:
        raise ConfigError("random graphs need at least two nodes")
    rng = np.random.default_rng(seed)
    order = [int(v) for v in rng.permutation(n) + 1]
    edges = [(order[i], order[(i + 1) % n]) for i in range(n)]
    present = set(edges)
    if extra_edges is None:
        extra_edges = n // 2
    candidates = [
        (a, b)
        for a in range(1, n + 1)
        for b in range(1, n + 1)
        if a != b and (a, b) not in present
    ]
    picks = rng.permutation(len(candidates))[: max(0, int(extra_edges))]
    edges.extend(candidates[int(i)] for i in sorted(picks))
    return DirectedGraph(node_count=n, edges=tuple(edges))


def _config(**overrides) -> RotationConfig:
    return RotationConfig(**overrides)


def triangle(delta: float = 1e-4, dt: float = 0.01, sample_stride: int = 1, **config_overrides) -> Scenario:
    """Three nodes, six links; node 2 runs fast so its incoming buffers sit low.

    The centering sequence pulses node 2 (edge 1) and then node 3 (edge 4);
    the naive targets instead follow edge 1 with edge 5, whose pulse lands
    on the root and pushes edges 1 and 4 away from center again.
    """
    graph = DirectedGraph(node_count=3, edges=TRIANGLE_EDGES)
    omega = np.array([1.0 - delta, 1.0 + delta, 1.0])
    return Scenario(
        name="triangle",
        graph=graph,
        root=1,
        omega_u=omega,
        config=_config(**config_overrides),
        dt=dt,
        sample_stride=sample_stride,
        naive_targets=(1, 5),
    )


def mesh(delta: float = 1e-4, seed: int = 7, dt: float = 0.01, sample_stride: int = 1, **config_overrides) -> Scenario:
    """Nine-node mesh, root 2, with the stock processing order for its tree."""
    graph = DirectedGraph(node_count=9, edges=MESH_EDGES)
    return Scenario(
        name="mesh",
        graph=graph,
        root=2,
        omega_u=omega_spread(9, delta=delta, seed=seed),
        config=_config(**config_overrides),
        dt=dt,
        sample_stride=sample_stride,
        schedule=MESH_SCHEDULE,
        naive_targets=tuple(reversed(MESH_SCHEDULE)),
    )


def random_scenario(
    n: int,
    seed: int,
    extra_edges: int | None = None,
    delta: float = 1e-4,
    root: int = 1,
    dt: float = 0.01,
    sample_stride: int = 1,
    **config_overrides,
) -> Scenario:
    graph = random_graph(n, seed, extra_edges)
    return Scenario(
        name=f"random-n{n}-s{seed}",
        graph=graph,
        root=root,
        omega_u=omega_spread(n, delta=delta, seed=seed + 1),
        config=_config(**config_overrides),
        dt=dt,
        sample_stride=sample_stride,
    )


def scenario_from_file(path: str | Path, **config_overrides) -> Scenario:
    """Load a scenario document.

    Fields: either a full "graph" object or top-level "nodes"/"edges",
    optional "root" (default 1), "omega_u" as a list or as a spread spec
    {"center", "delta", "seed"}, optional "schedule", "dt", "sample_stride",
    "t_end", and any RotationConfig field (k, k2, epsilon, ...).
    """
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ConfigError("scenario document must be a JSON object")

    graph_doc = doc.get("graph", doc)
    graph, file_root = load_graph(graph_doc)
    root = int(doc.get("root", file_root or 1))

    omega_spec = doc.get("omega_u", {"center": 1.0, "delta": 1e-4, "seed": 0})
    if isinstance(omega_spec, Mapping):
        omega = omega_spread(
            graph.node_count,
            center=float(omega_spec.get("center", 1.0)),
            delta=float(omega_spec.get("delta", 1e-4)),
            seed=int(omega_spec.get("seed", 0)),
        )
    else:
        omega = np.asarray([float(v) for v in omega_spec], dtype=float)
        if omega.shape != (graph.node_count,):
            raise ConfigError("omega_u length does not match the node count")

    config_fields = {}
    for name in ("k", "k2", "epsilon", "convergence_tol", "window", "margin", "hold_time", "expected_max_beta"):
        if name in doc:
            config_fields[name] = float(doc[name])
    if "phase_times" in doc:
        config_fields["phase_times"] = tuple(float(v) for v in doc["phase_times"])
    config_fields.update(config_overrides)

    schedule = tuple(int(e) for e in doc["schedule"]) if "schedule" in doc else None
    return Scenario(
        name=str(doc.get("name", p.stem)),
        graph=graph,
        root=root,
        omega_u=omega,
        config=_config(**config_fields),
        dt=float(doc.get("dt", 0.01)),
        sample_stride=int(doc.get("sample_stride", 1)),
        t_end=float(doc["t_end"]) if "t_end" in doc else None,
        schedule=schedule,
    )


def with_overrides(scenario: Scenario, **fields) -> Scenario:
    """Scenario copy with some fields replaced (config fields go via config=)."""
    return replace(scenario, **fields)
