"""Programmatic topology builders for fixtures, benchmarks, and tests."""

from __future__ import annotations


def fat_tree(k: int = 4, tor_profile: str = "tofino", agg_profile: str = "tofino",
             core_profile: str = "tofino", hosts_per_tor: int = 1,
             link_gbps: float = 100.0) -> dict:
    """Device-equal k-ary fat-tree: k pods, k/2 ToR + k/2 Agg per pod,
    (k/2)^2 cores; Agg j of every pod connects to core group j."""
    assert k % 2 == 0
    half = k // 2
    devices, links, hosts = [], [], []
    for c in range(half * half):
        devices.append({"id": f"core{c}", "profile": core_profile, "role": "core"})
    for p in range(k):
        for j in range(half):
            agg = f"agg{p}_{j}"
            devices.append({"id": agg, "profile": agg_profile, "role": "agg"})
            for c in range(half):
                links.append({"a": agg, "b": f"core{j * half + c}", "gbps": link_gbps})
        for t in range(half):
            tor = f"tor{p}_{t}"
            devices.append({"id": tor, "profile": tor_profile, "role": "tor"})
            for j in range(half):
                links.append({"a": tor, "b": f"agg{p}_{j}", "gbps": link_gbps})
            for h in range(hosts_per_tor):
                hosts.append({"id": f"h{p}_{t}_{h}", "attach": tor, "gbps": link_gbps})
    return {"kind": "fat-tree", "devices": devices, "links": links, "hosts": hosts}


def spine_leaf(spines: int = 4, leaves: int = 4, spine_profile: str = "tofino",
               leaf_profile: str = "tofino", hosts_per_leaf: int = 1,
               link_gbps: float = 100.0) -> dict:
    devices, links, hosts = [], [], []
    for s in range(spines):
        devices.append({"id": f"spine{s}", "profile": spine_profile, "role": "spine"})
    for l in range(leaves):
        leaf = f"leaf{l}"
        devices.append({"id": leaf, "profile": leaf_profile, "role": "leaf"})
        for s in range(spines):
            links.append({"a": leaf, "b": f"spine{s}", "gbps": link_gbps})
        for h in range(hosts_per_leaf):
            hosts.append({"id": f"h{l}_{h}", "attach": leaf, "gbps": link_gbps})
    return {"kind": "spine-leaf", "devices": devices, "links": links, "hosts": hosts}


def chain(n: int = 4, profile: str = "tofino", link_gbps: float = 100.0,
          profiles: list = None) -> dict:
    """A single path of n devices with one client host on the first device
    and one server host on the last."""
    devices, links = [], []
    for i in range(n):
        prof = profiles[i] if profiles else profile
        devices.append({"id": f"sw{i}", "profile": prof, "role": "tor"})
        if i:
            links.append({"a": f"sw{i - 1}", "b": f"sw{i}", "gbps": link_gbps})
    hosts = [{"id": "client0", "attach": "sw0", "gbps": link_gbps},
             {"id": "server0", "attach": f"sw{n - 1}", "gbps": link_gbps}]
    return {"kind": "chain", "devices": devices, "links": links, "hosts": hosts}


def emulation_pods(tor_profile: str = "tofino", agg_profile: str = "td4",
                   core_profile: str = "tofino2", link_gbps: float = 100.0) -> dict:
    """Three-pod testbed shape: 12 pod switches, 2 cores, FPGA NICs bypassing
    the pod-1 ToRs and FPGA cards bypassing the pod-2 Aggs (18 network
    devices overall). Two hosts per pod: <pod>a and <pod>b."""
    devices, links, hosts = [], [], []
    for c in range(2):
        devices.append({"id": f"core{c}", "profile": core_profile, "role": "core"})
    for p in range(3):
        for j in range(2):
            agg = f"agg{p}_{j}"
            devices.append({"id": agg, "profile": agg_profile, "role": "agg"})
            for c in range(2):
                links.append({"a": agg, "b": f"core{c}", "gbps": link_gbps})
        for t in range(2):
            tor = f"tor{p}_{t}"
            devices.append({"id": tor, "profile": tor_profile, "role": "tor"})
            for j in range(2):
                links.append({"a": tor, "b": f"agg{p}_{j}", "gbps": link_gbps})
        hosts.append({"id": f"pod{p}a", "attach": f"tor{p}_0", "gbps": link_gbps})
        hosts.append({"id": f"pod{p}b", "attach": f"tor{p}_1", "gbps": link_gbps})
    for t in range(2):
        nic = f"fnic{t}"
        devices.append({"id": nic, "profile": "fpga_nic", "role": "accel"})
        links.append({"a": f"tor1_{t}", "b": nic, "gbps": link_gbps})
    for j in range(2):
        card = f"fcard{j}"
        devices.append({"id": card, "profile": "fpga_card", "role": "accel"})
        links.append({"a": f"agg2_{j}", "b": card, "gbps": link_gbps})
    return {"kind": "fat-tree", "devices": devices, "links": links, "hosts": hosts}
