"""Workspace: durable compile/place/deploy state rooted in one directory.

Layout under the root:
    workspace.json    ledger: deployed programs, per-EC residuals, pid counter
    topology.json     network description
    profiles.json     device profile registry
    base.inc          operator base program (with head/tail markers)
    plans/<id>.json   committed placement plans
    devices/ec<N>.txt annotated per-device-class programs
    reports/          bench CSVs and figures

Equivalence classes are computed once with per-host coloring, so EC ids
stay stable while programs come and go; residuals are tracked per EC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import synth
from .blockdag import build_block_dag
from .devmodel import default_footprint_model, load_registry
from .errors import DuplicateProgram, UnknownProgram, WorkspaceError
from .frontend import Profile, compile_source, load_profile
from .frontend.profile import Profile as _Profile
from .ir import ResourceVector, build_dependency_graph, parse_program, serialize_program
from .placer import (PlacementPlan, adaptive_weights, apply_plan,
                     check_deployment_constraints, full_residuals, gain,
                     place_multipath, residual_ratio)
from .topo import (Flow, TrafficSpec, parse_topology,
                   reduce_equivalence_classes, split_client_server)

WORKSPACE_FILE = "workspace.json"


@dataclass
class Workspace:
    root: Path
    topology: object = None
    registry: dict = field(default_factory=dict)
    reduced: object = None
    base_prog: object = None
    base_id: str = "base"
    state: dict = field(default_factory=dict)

    # -- lifecycle --

    @staticmethod
    def init(root, topology_file, registry_file, base_file) -> "Workspace":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for sub in ("plans", "devices", "reports"):
            (root / sub).mkdir(exist_ok=True)
        for src, dst in ((topology_file, "topology.json"),
                         (registry_file, "profiles.json"),
                         (base_file, "base.inc")):
            (root / dst).write_text(Path(src).read_text())
        ws = Workspace(root=root)
        ws._load_static()
        ws.state = {
            "programs": {},
            "next_pid": 1,
            "residuals": ws._residuals_to_json(ws._initial_residuals()),
        }
        ws.save()
        for ec in ws.reduced.nodes:
            ws._write_device_artifact(ec, ws._fresh_device(ec))
        return ws

    @staticmethod
    def open(root) -> "Workspace":
        root = Path(root)
        if not (root / WORKSPACE_FILE).exists():
            raise WorkspaceError(f"no workspace at {root}")
        ws = Workspace(root=root)
        ws._load_static()
        ws.state = json.loads((root / WORKSPACE_FILE).read_text())
        return ws

    def save(self) -> None:
        (self.root / WORKSPACE_FILE).write_text(
            json.dumps(self.state, indent=2, sort_keys=True) + "\n")

    def _load_static(self) -> None:
        self.registry = load_registry(self.root / "profiles.json")
        self.topology = parse_topology(self.root / "topology.json", self.registry)
        self.reduced = reduce_equivalence_classes(self.topology, host_mode="distinct")
        self.base_prog = compile_source((self.root / "base.inc").read_text(),
                                        footprint_model=default_footprint_model())

    # -- residual bookkeeping --

    def _initial_residuals(self) -> dict:
        residuals = full_residuals(self.reduced, self.registry)
        # the base program occupies every device class up front
        from .placer import place_intra_device
        for ec, node in self.reduced.nodes.items():
            profile = self.registry[node.profile]
            stage = place_intra_device(range(len(self.base_prog.instructions)),
                                       self.base_prog, profile, residuals[ec])
            if stage is None:
                raise WorkspaceError(
                    f"base program does not fit device class {ec} ({profile.name})")
            for s, used in stage.usage(self.base_prog, profile).items():
                residuals[ec][s] = residuals[ec][s].minus(used)
        return residuals

    def _residuals_to_json(self, residuals: dict) -> dict:
        return {str(ec): [vec.to_json() for vec in stages]
                for ec, stages in residuals.items()}

    def residuals(self) -> dict:
        return {int(ec): [ResourceVector(dict(v)) for v in stages]
                for ec, stages in self.state["residuals"].items()}

    def capacity_check(self) -> list:
        """Ledger consistency: committed usage + residuals == capacity."""
        expect = self._initial_residuals()
        current = self.residuals()
        for meta in self.state["programs"].values():
            for ec_text, stages in meta["usage"].items():
                ec = int(ec_text)
                for s_text, used in stages.items():
                    expect[ec][int(s_text)] = expect[ec][int(s_text)].minus(
                        ResourceVector(dict(used)))
        problems = []
        for ec in expect:
            for s, vec in enumerate(expect[ec]):
                if vec.to_json() != current[ec][s].to_json():
                    problems.append(f"EC {ec} stage {s}: ledger mismatch")
        return problems

    # -- compile / place / deploy pipeline --

    def compile_program(self, source_text: str, profile: Profile = None):
        fpm = default_footprint_model()
        prog = compile_source(source_text, profile=profile, footprint_model=fpm)
        dag = build_block_dag(build_dependency_graph(prog), prog)
        return prog, dag

    def traffic_spec(self, profile: Profile, servers: list) -> TrafficSpec:
        volumes = dict(profile.traffic_frequency) if profile else {}
        if not volumes:
            raise WorkspaceError("profile declares no traffic frequencies")
        missing = [h for h in list(volumes) + list(servers)
                   if h not in self.topology.hosts]
        if missing:
            raise WorkspaceError(f"unknown hosts in flow: {missing}")
        return TrafficSpec(flows=[Flow(client_volumes=volumes,
                                       server_hosts=list(servers))])

    def place(self, program_id: str, prog, dag, spec: TrafficSpec,
              commit: bool = False, residuals: dict = None, prune: bool = True):
        if program_id in self.state["programs"]:
            raise DuplicateProgram(f"program {program_id!r} already placed")
        split = split_client_server(self.reduced, spec)
        res = residuals if residuals is not None else self.residuals()
        r = residual_ratio(res, self.reduced, self.registry)
        w = adaptive_weights(r)
        plan = place_multipath(dag, prog, self.reduced, split, self.registry,
                               res, w, prune=prune)
        plan.steps = synth.assign_steps(plan, dag)
        violations = check_deployment_constraints(
            plan, dag, prog, self.reduced, split, self.registry, res)
        if violations:
            raise WorkspaceError(f"emitted plan violates constraints: {violations}")
        if commit:
            self._commit(program_id, prog, dag, spec, plan)
        return plan, w, r

    def _commit(self, program_id: str, prog, dag, spec, plan) -> None:
        pid_number = self.state["next_pid"]
        self.state["next_pid"] = pid_number + 1
        usage = {}
        for ec in plan.ecs_used():
            profile = self.registry[self.reduced.nodes[ec].profile]
            stage_usage = plan.stage_assignments[ec].usage(prog, profile)
            usage[str(ec)] = {str(s): used.to_json()
                              for s, used in stage_usage.items()}
        res = apply_plan(self.residuals(), plan, prog, self.reduced, self.registry)
        self.state["residuals"] = self._residuals_to_json(res)
        self.state["programs"][program_id] = {
            "pid_number": pid_number,
            "usage": usage,
            "flow": {
                "clients": {h: v for h, v in spec.flows[0].client_volumes.items()},
                "servers": list(spec.flows[0].server_hosts),
            },
            "plan": plan.to_json(dag),
            "ir": serialize_program(prog),
            "deployed": False,
        }
        (self.root / "plans" / f"{program_id}.json").write_text(
            json.dumps(plan.to_json(dag), indent=2, sort_keys=True) + "\n")
        self.save()

    # -- device program artifacts --

    def _fresh_device(self, ec: int) -> synth.AnnotatedDeviceProgram:
        profile = self.registry[self.reduced.nodes[ec].profile]
        base_parser = synth.parser_tree_from_profile(
            _Profile(network="ethernet/ipv4/udp"), self.base_id)
        return synth.synthesize_device_program(
            self.base_prog, self.base_id, base_parser, [], profile, ec)

    def _device_path(self, ec: int) -> Path:
        return self.root / "devices" / f"ec{ec}.txt"

    def _write_device_artifact(self, ec: int, dev) -> bool:
        """Returns True when the artifact content changed."""
        text = synth.serialize_device_program(dev)
        path = self._device_path(ec)
        old = path.read_text() if path.exists() else None
        if old == text:
            return False
        path.write_text(text)
        return True

    def load_device(self, ec: int) -> synth.AnnotatedDeviceProgram:
        return synth.parse_device_program(self._device_path(ec).read_text())

    def deploy(self, program_id: str) -> dict:
        """Incremental deployment: rewrite only the devices the plan touches."""
        meta = self.state["programs"].get(program_id)
        if meta is None:
            raise UnknownProgram(f"no committed plan for {program_id!r}")
        if meta["deployed"]:
            raise DuplicateProgram(f"program {program_id!r} already deployed")
        prog = parse_program(meta["ir"])
        iso = synth.isolate_user_program(prog, program_id, meta["pid_number"])
        changed = []
        for ec_text, body in sorted(meta["plan"]["per_ec"].items()):
            ec = int(ec_text)
            dev = self.load_device(ec)
            instrs = self._snippet_instructions(iso, prog, body)
            steps = {int(b): s for b, s in body["steps"].items()}
            snippet = (program_id, instrs, iso.declared_states, iso.var_width, steps)
            dev = synth.add_user_program(dev, snippet, program_id)
            if self._write_device_artifact(ec, dev):
                changed.append(ec)
        meta["deployed"] = True
        self.save()
        return self._impact_report(changed, program_id)

    def _snippet_instructions(self, iso, prog, body) -> list:
        # instruction indices are identical pre/post isolation
        indices = sorted(int(i) for i in body["instruction_stages"])
        return [iso.instructions[i] for i in indices]

    def remove(self, program_id: str, lazy: bool = False) -> dict:
        meta = self.state["programs"].get(program_id)
        if meta is None:
            raise UnknownProgram(f"program {program_id!r} is not deployed")
        changed = []
        if meta["deployed"]:
            for ec_text in sorted(meta["plan"]["per_ec"]):
                ec = int(ec_text)
                dev = self.load_device(ec)
                dev = synth.remove_user_program(dev, program_id,
                                                "lazy" if lazy else "immediate")
                if self._write_device_artifact(ec, dev):
                    changed.append(ec)
        # resources are released immediately in both modes
        res = self.residuals()
        for ec_text, stages in meta["usage"].items():
            ec = int(ec_text)
            for s_text, used in stages.items():
                res[ec][int(s_text)] = res[ec][int(s_text)] + ResourceVector(dict(used))
        self.state["residuals"] = self._residuals_to_json(res)
        del self.state["programs"][program_id]
        self.save()
        return self._impact_report(changed, program_id)

    def monolithic_deploy(self, program_id: str) -> dict:
        """Re-place and re-synthesize every program (lexicographic id order)
        against a fresh network, then rewrite all artifacts."""
        meta = self.state["programs"].get(program_id)
        if meta is None:
            raise UnknownProgram(f"no committed plan for {program_id!r}")
        order = sorted(self.state["programs"])
        residuals = self._initial_residuals()
        placements = {}
        for pid in order:
            m = self.state["programs"][pid]
            prog = parse_program(m["ir"])
            dag = build_block_dag(build_dependency_graph(prog), prog)
            spec = TrafficSpec(flows=[Flow(
                client_volumes=dict(m["flow"]["clients"]),
                server_hosts=list(m["flow"]["servers"]))])
            split = split_client_server(self.reduced, spec)
            r = residual_ratio(residuals, self.reduced, self.registry)
            plan = place_multipath(dag, prog, self.reduced, split, self.registry,
                                   residuals, adaptive_weights(r))
            plan.steps = synth.assign_steps(plan, dag)
            residuals = apply_plan(residuals, plan, prog, self.reduced, self.registry)
            placements[pid] = (prog, dag, plan, m)
        changed = []
        for ec in self.reduced.nodes:
            dev = self._fresh_device(ec)
            for pid in order:
                prog, dag, plan, m = placements[pid]
                if ec not in plan.ecs_used():
                    continue
                iso = synth.isolate_user_program(prog, pid, m["pid_number"])
                instrs = [iso.instructions[i]
                          for b in plan.blocks_on(ec)
                          for i in dag.blocks[b].members]
                instrs.sort(key=lambda i: i.index)
                steps = {b: plan.steps[b] for b in plan.blocks_on(ec)}
                snippet = (pid, instrs, iso.declared_states, iso.var_width, steps)
                dev = synth.add_user_program(dev, snippet, pid)
            if self._write_device_artifact(ec, dev):
                changed.append(ec)
        for pid in order:
            prog, dag, plan, m = placements[pid]
            m["deployed"] = True
            m["plan"] = plan.to_json(dag)
            usage = {}
            for ec in plan.ecs_used():
                profile = self.registry[self.reduced.nodes[ec].profile]
                stage_usage = plan.stage_assignments[ec].usage(prog, profile)
                usage[str(ec)] = {str(s): used.to_json()
                                  for s, used in stage_usage.items()}
            m["usage"] = usage
        self.state["residuals"] = self._residuals_to_json(residuals)
        self.save()
        return self._impact_report(changed, program_id)

    # -- impact accounting --

    def _impact_report(self, changed_ecs: list, program_id: str) -> dict:
        changed_devices = []
        for ec in changed_ecs:
            changed_devices.extend(self.reduced.nodes[ec].members)
        other_programs = set()
        for pid, meta in self.state["programs"].items():
            if pid == program_id or not meta.get("deployed"):
                continue
            ecs = {int(e) for e in meta["plan"]["per_ec"]}
            if ecs & set(changed_ecs):
                other_programs.add(pid)
        pods = set()
        for pid, meta in self.state["programs"].items():
            flow = meta["flow"]
            for host in list(flow["clients"]) + list(flow["servers"]):
                leaf = self.reduced.host_leaf[host]
                for other in list(flow["servers"]) + list(flow["clients"]):
                    seq = self.reduced.tree_path(leaf, self.reduced.host_leaf[other])
                    if set(seq) & set(changed_ecs):
                        pods.add(_pod_tag(host))
        return {
            "program": program_id,
            "affected_device_count": len(changed_devices),
            "affected_devices": sorted(changed_devices),
            "affected_ecs": sorted(changed_ecs),
            "affected_inc_programs": sorted(other_programs),
            "affected_pods": sorted(pods),
        }


def _pod_tag(host: str) -> str:
    import re
    m = re.match(r"^([A-Za-z]+\d+)", host)
    return m.group(1) if m else host
