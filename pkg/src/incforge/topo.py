"""Network topology model, equivalence-class reduction, client/server split.

Devices that are wired identically with respect to every other class (and
carry identical profiles) merge into one ECNode; a fat-tree or spine-leaf
network then reduces to a tree whose paths mirror the raw up-down paths.
Host endpoints are colored by their role in the traffic specification so
client-side and server-side switches never merge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import (DisconnectedGraph, HeterogeneousClass, MalformedTopology,
                     NoCommonRoot, UnknownProfile)

_TIER = {"host": 0, "tor": 1, "leaf": 1, "accel": 1, "agg": 2, "core": 3, "spine": 3}


@dataclass
class Device:
    id: str
    profile: str
    role: str


@dataclass
class Topology:
    kind: str
    devices: dict = field(default_factory=dict)   # id -> Device
    links: list = field(default_factory=list)     # (a, b, gbps)
    hosts: dict = field(default_factory=dict)     # host id -> attach device id

    def neighbors(self, node: str) -> list:
        out = []
        for a, b, gbps in self.links:
            if a == node:
                out.append((b, gbps))
            elif b == node:
                out.append((a, gbps))
        return out


def parse_topology(path_or_dict, registry: Optional[dict] = None) -> Topology:
    if isinstance(path_or_dict, dict):
        data = path_or_dict
    else:
        with open(path_or_dict) as fh:
            data = json.load(fh)
    kind = data.get("kind", "")
    # chain is the degenerate single-path case used by solver benchmarks
    if kind not in ("fat-tree", "spine-leaf", "chain"):
        raise MalformedTopology(f"unsupported topology kind {kind!r}")
    topo = Topology(kind=kind)
    for dev in data.get("devices", ()):
        if dev["role"] not in _TIER or dev["role"] == "host":
            raise MalformedTopology(f"device {dev['id']!r} has bad role {dev['role']!r}")
        if registry is not None and dev["profile"] not in registry:
            raise UnknownProfile(f"device {dev['id']!r} references unknown profile "
                                 f"{dev['profile']!r}")
        topo.devices[dev["id"]] = Device(dev["id"], dev["profile"], dev["role"])
    for link in data.get("links", ()):
        a, b, gbps = link["a"], link["b"], float(link.get("gbps", 100.0))
        for end in (a, b):
            if end not in topo.devices and all(h["id"] != end for h in data.get("hosts", ())):
                raise MalformedTopology(f"link references unknown node {end!r}")
        topo.links.append((a, b, gbps))
    for host in data.get("hosts", ()):
        if host["attach"] not in topo.devices:
            raise MalformedTopology(f"host {host['id']!r} attaches to unknown device")
        topo.hosts[host["id"]] = host["attach"]
        topo.links.append((host["id"], host["attach"], float(host.get("gbps", 100.0))))
    _check_connected(topo)
    return topo


def _check_connected(topo: Topology) -> None:
    nodes = set(topo.devices) | set(topo.hosts)
    if not nodes:
        raise MalformedTopology("empty topology")
    start = next(iter(sorted(nodes)))
    seen = {start}
    frontier = [start]
    while frontier:
        v = frontier.pop()
        for w, _ in topo.neighbors(v):
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    missing = nodes - seen
    if missing:
        raise DisconnectedGraph(f"unreachable nodes: {sorted(missing)}")


# ---------------------------------------------------------------------------
# Traffic specification
# ---------------------------------------------------------------------------

@dataclass
class Flow:
    client_volumes: dict                 # client host id -> volume (pps)
    server_hosts: list
    required_gbps: float = 0.0


@dataclass
class TrafficSpec:
    flows: list = field(default_factory=list)

    def validate(self, topo: Topology) -> None:
        for flow in self.flows:
            for h, vol in flow.client_volumes.items():
                if vol < 0:
                    raise ValueError(f"negative volume for client {h!r}")
                if h not in topo.hosts:
                    raise MalformedTopology(f"unknown client host {h!r}")
            for h in flow.server_hosts:
                if h not in topo.hosts:
                    raise MalformedTopology(f"unknown server host {h!r}")


# ---------------------------------------------------------------------------
# Equivalence-class reduction (color refinement)
# ---------------------------------------------------------------------------

@dataclass
class ECNode:
    id: int
    members: tuple
    profile: str
    role: str
    multiplicity: int = 1
    is_accelerator: bool = False


@dataclass
class ReducedTopology:
    nodes: dict = field(default_factory=dict)    # id -> ECNode
    edges: set = field(default_factory=set)      # undirected (min, max) id pairs
    ec_of_device: dict = field(default_factory=dict)
    host_leaf: dict = field(default_factory=dict)  # host id -> EC id

    def neighbors(self, ec: int) -> list:
        out = []
        for a, b in self.edges:
            if a == ec:
                out.append(b)
            elif b == ec:
                out.append(a)
        return sorted(out)

    def tree_path(self, a: int, b: int) -> list:
        """Unique path between two ECs (the reduced graph is a tree)."""
        parent = {a: None}
        frontier = [a]
        while frontier:
            v = frontier.pop()
            if v == b:
                break
            for w in self.neighbors(v):
                if w not in parent:
                    parent[w] = v
                    frontier.append(w)
        if b not in parent:
            raise MalformedTopology(f"no path between EC {a} and EC {b}")
        path = [b]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        return list(reversed(path))

    def tier(self, ec: int) -> int:
        return _TIER[self.nodes[ec].role]


def reduce_equivalence_classes(topo: Topology, spec: Optional[TrafficSpec] = None,
                               host_mode: str = "traffic") -> ReducedTopology:
    """Group same-wired devices into ECNodes; the result is a tree.

    host_mode picks how hosts are colored before refinement: "traffic"
    (endpoints of the given spec stay distinct; maximal merging for one
    placement) or "distinct" (every host unique; classes are then stable
    across placement rounds regardless of traffic). Profile uniformity
    inside each wiring class is an assumption of the reduction and is
    checked, not assumed.
    """
    host_tags = {h: ("bg",) for h in topo.hosts}
    if host_mode == "distinct":
        for h in topo.hosts:
            host_tags[h] = (h,)
    elif spec is not None:
        for fi, flow in enumerate(spec.flows):
            for h in flow.client_volumes:
                host_tags[h] = host_tags.get(h, ()) + (f"c{fi}",)
            for h in flow.server_hosts:
                host_tags[h] = host_tags.get(h, ()) + (f"s{fi}",)

    color = {}
    for h in topo.hosts:
        color[h] = ("host",) + tuple(sorted(set(host_tags[h])))
    for d in topo.devices.values():
        color[d.id] = (d.role,)

    while True:
        ranked = {c: i for i, c in enumerate(sorted(set(color.values())))}
        new_color = {}
        for node in color:
            neigh = tuple(sorted((ranked[color[w]], gbps)
                                 for w, gbps in topo.neighbors(node)))
            new_color[node] = (ranked[color[node]], neigh)
        if len(set(new_color.values())) == len(set(color.values())):
            break
        color = new_color

    classes: dict = {}
    for d in sorted(topo.devices):
        classes.setdefault(color[d], []).append(d)

    reduced = ReducedTopology()
    for i, key in enumerate(sorted(classes, key=lambda k: sorted(classes[k]))):
        members = classes[key]
        profiles = {topo.devices[m].profile for m in members}
        if len(profiles) != 1:
            raise HeterogeneousClass(
                f"devices {members} are wired identically but carry different "
                f"profiles {sorted(profiles)}")
        roles = {topo.devices[m].role for m in members}
        node = ECNode(id=i, members=tuple(sorted(members)), profile=profiles.pop(),
                      role=roles.pop(), multiplicity=len(members),
                      is_accelerator=topo.devices[members[0]].role == "accel")
        reduced.nodes[i] = node
        for m in members:
            reduced.ec_of_device[m] = i
    for a, b, _ in topo.links:
        if a in topo.devices and b in topo.devices:
            ea, eb = reduced.ec_of_device[a], reduced.ec_of_device[b]
            if ea != eb:
                reduced.edges.add((min(ea, eb), max(ea, eb)))
    for h, attach in topo.hosts.items():
        reduced.host_leaf[h] = reduced.ec_of_device[attach]

    n_switch_edges = len(reduced.edges)
    if n_switch_edges != len(reduced.nodes) - 1:
        raise MalformedTopology(
            f"reduction produced a non-tree quotient ({len(reduced.nodes)} classes, "
            f"{n_switch_edges} edges); topology violates fat-tree/spine-leaf symmetry")
    return reduced


def verify_reduction(topo: Topology, reduced: ReducedTopology) -> list:
    """EC soundness: every member has the same multiset of (neighbor class,
    bandwidth) pairs. Returns a list of violations (empty when sound)."""
    violations = []
    for node in reduced.nodes.values():
        signatures = set()
        for m in node.members:
            sig = []
            for w, gbps in topo.neighbors(m):
                cls = reduced.ec_of_device.get(w, "host")
                sig.append((cls, gbps))
            signatures.add(tuple(sorted(sig, key=str)))
        if len(signatures) > 1:
            violations.append(f"EC {node.id} members differ in wiring: {node.members}")
    return violations


# ---------------------------------------------------------------------------
# Client/server split around the traffic root
# ---------------------------------------------------------------------------

@dataclass
class PathSet:
    """Per-flow EC paths with volumes: the L_p of the placement objective."""

    # entries: (client EC, server EC, [EC sequence], t_l, required_gbps)
    paths: list = field(default_factory=list)

    def total_volume(self) -> float:
        return sum(p[3] for p in self.paths)


def derive_paths(reduced: ReducedTopology, spec: TrafficSpec) -> PathSet:
    out = PathSet()
    for flow in spec.flows:
        leaf_volume: dict = {}
        for h, vol in flow.client_volumes.items():
            leaf_volume[reduced.host_leaf[h]] = leaf_volume.get(
                reduced.host_leaf[h], 0.0) + vol
        server_leaves = sorted({reduced.host_leaf[h] for h in flow.server_hosts})
        if not server_leaves:
            raise MalformedTopology("flow has no server hosts")
        for client_ec in sorted(leaf_volume):
            share = leaf_volume[client_ec] / len(server_leaves)
            for server_ec in server_leaves:
                seq = reduced.tree_path(client_ec, server_ec)
                out.paths.append((client_ec, server_ec, seq, share,
                                  flow.required_gbps))
    return out


@dataclass
class ClientServerSplit:
    root: int
    client_parent: dict     # EC id -> parent EC id toward the root (root: None)
    server_parent: dict
    client_nodes: set
    server_nodes: set
    paths: PathSet


def split_client_server(reduced: ReducedTopology, spec: TrafficSpec) -> ClientServerSplit:
    """Segment the reduced tree into client-side and server-side subtrees
    sharing the traffic root (the apex every path crosses)."""
    paths = derive_paths(reduced, spec)
    if not paths.paths:
        raise NoCommonRoot("traffic specification produced no paths")
    roots = set()
    for _, _, seq, _, _ in paths.paths:
        apex = max(seq, key=lambda ec: (reduced.tier(ec), seq.index(ec)))
        roots.add(apex)
    if len(roots) != 1:
        raise NoCommonRoot(f"flows do not meet at a single root EC: {sorted(roots)}")
    root = roots.pop()

    client_parent = {root: None}
    server_parent = {root: None}
    for _, _, seq, _, _ in paths.paths:
        pivot = seq.index(root)
        for i in range(pivot):     # client side: seq[0..pivot], parent = toward root
            client_parent[seq[i]] = seq[i + 1]
        for i in range(pivot + 1, len(seq)):
            server_parent[seq[i]] = seq[i - 1]
    return ClientServerSplit(
        root=root,
        client_parent=client_parent,
        server_parent=server_parent,
        client_nodes=set(client_parent),
        server_nodes=set(server_parent),
        paths=paths,
    )
