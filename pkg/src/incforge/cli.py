"""Command-line driver: compile, place, deploy, remove, simulate, bench."""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import click

from . import synth
from .blockdag import build_block_dag
from .devmodel import default_footprint_model
from .errors import IncForgeError
from .frontend import compile_source, load_profile
from .ir import build_dependency_graph, parse_program, serialize_program
from .sim import Packet, check_equivalence
from .topo import Flow, TrafficSpec, split_client_server
from .workspace import Workspace


def _fail(err: IncForgeError):
    payload = {"error": type(err).__name__, "message": str(err)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(getattr(err, "exit_code", 2))


def _workspace(ctx) -> Workspace:
    root = ctx.obj.get("workspace")
    if root is None:
        raise IncForgeError("no workspace: pass --workspace or set INCFORGE_WORKSPACE")
    return Workspace.open(root)


@click.group()
@click.option("--workspace", envvar="INCFORGE_WORKSPACE",
              type=click.Path(), default=None,
              help="Workspace root (or set INCFORGE_WORKSPACE).")
@click.pass_context
def main(ctx, workspace):
    """Compiler and placement toolchain for in-network computing programs."""
    ctx.ensure_object(dict)
    ctx.obj["workspace"] = workspace


@main.command()
@click.argument("topology", type=click.Path(exists=True))
@click.argument("registry", type=click.Path(exists=True))
@click.argument("base", type=click.Path(exists=True))
@click.pass_context
def init(ctx, topology, registry, base):
    """Create a workspace from a topology, a profile registry, and a base program."""
    root = ctx.obj.get("workspace")
    if root is None:
        raise click.UsageError("pass --workspace or set INCFORGE_WORKSPACE")
    try:
        ws = Workspace.init(root, topology, registry, base)
    except IncForgeError as err:
        _fail(err)
    click.echo(f"workspace at {root}: {len(ws.reduced.nodes)} device classes")


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.option("--profile", "profile_path", type=click.Path(exists=True),
              default=None, help="JSON configuration profile.")
@click.option("-o", "--out", type=click.Path(), default=None,
              help="Output directory for artifacts (default: alongside source).")
def compile(source, profile_path, out):
    """Compile a source program to IR and block-DAG artifacts."""
    src = Path(source)
    out_dir = Path(out) if out else src.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        profile = load_profile(profile_path) if profile_path else None
        prog = compile_source(src.read_text(), profile=profile,
                              footprint_model=default_footprint_model())
        dag = build_block_dag(build_dependency_graph(prog), prog)
    except IncForgeError as err:
        _fail(err)
    ir_path = out_dir / (src.stem + ".ir")
    dot_path = out_dir / (src.stem + ".dot")
    ir_path.write_text(serialize_program(prog))
    dot_path.write_text(dag.to_dot())
    diag = {
        "instructions": len(prog.instructions),
        "blocks": [{"id": b.id, "class": b.cap_class, "members": list(b.members),
                    "level": b.kahn_level} for b in dag.blocks],
        "states": sorted(prog.declared_states),
    }
    (out_dir / (src.stem + ".diag.json")).write_text(
        json.dumps(diag, indent=2, sort_keys=True) + "\n")
    click.echo(f"{len(prog.instructions)} instructions, {len(dag.blocks)} blocks "
               f"-> {ir_path}")


@main.command()
@click.argument("program_id")
@click.argument("source", type=click.Path(exists=True))
@click.option("--profile", "profile_path", type=click.Path(exists=True),
              required=True, help="JSON profile with traffic frequencies.")
@click.option("--servers", required=True,
              help="Comma-separated server host ids.")
@click.option("--commit", is_flag=True, help="Commit the plan and its resources.")
@click.pass_context
def place(ctx, program_id, source, profile_path, servers, commit):
    """Compute (and optionally commit) a placement plan for a program."""
    try:
        ws = _workspace(ctx)
        profile = load_profile(profile_path)
        prog, dag = ws.compile_program(Path(source).read_text(), profile)
        spec = ws.traffic_spec(profile, servers.split(","))
        plan, w, r = ws.place(program_id, prog, dag, spec, commit=commit)
    except IncForgeError as err:
        _fail(err)
    click.echo(f"gain {plan.gain:.6f} = {w.omega_t:.3f}*h_t({plan.h_t:.4f}) "
               f"- {w.omega_r:.3f}*h_r({plan.h_r:.4f}) "
               f"- {w.omega_p:.3f}*h_p({plan.h_p:.4f})  [residual ratio {r:.3f}]")
    for ec in plan.ecs_used():
        click.echo(f"  EC {ec}: blocks {plan.blocks_on(ec)}")
    if commit:
        click.echo(f"committed as {program_id}")


@main.command()
@click.argument("program_id")
@click.option("--monolithic", is_flag=True,
              help="Re-place and re-synthesize every deployed program.")
@click.pass_context
def deploy(ctx, program_id, monolithic):
    """Write per-device annotated programs for a committed plan."""
    try:
        ws = _workspace(ctx)
        if monolithic:
            report = ws.monolithic_deploy(program_id)
        else:
            report = ws.deploy(program_id)
    except IncForgeError as err:
        _fail(err)
    click.echo(json.dumps(report, indent=2, sort_keys=True))


@main.command()
@click.argument("program_id")
@click.option("--lazy", is_flag=True, help="Defer instruction deletion.")
@click.pass_context
def remove(ctx, program_id, lazy):
    """Remove a deployed program (immediately or lazily)."""
    try:
        ws = _workspace(ctx)
        report = ws.remove(program_id, lazy=lazy)
    except IncForgeError as err:
        _fail(err)
    click.echo(json.dumps(report, indent=2, sort_keys=True))


@main.command()
@click.argument("program_id")
@click.option("--packets", "packets_path", type=click.Path(exists=True),
              default=None, help="JSON-lines packet corpus.")
@click.option("--count", default=100, show_default=True,
              help="Generated corpus size when no file is given.")
@click.option("--seed", default=0, show_default=True)
@click.option("--inject-fault", "fault_ec", type=int, default=None,
              help="Disable one device class during distributed execution.")
@click.option("--trace-out", type=click.Path(), default=None)
@click.pass_context
def simulate(ctx, program_id, packets_path, count, seed, fault_ec, trace_out):
    """Check single-device vs distributed execution equivalence."""
    try:
        ws = _workspace(ctx)
        meta = ws.state["programs"].get(program_id)
        if meta is None:
            raise IncForgeError(f"program {program_id!r} is not deployed")
        prog = parse_program(meta["ir"])
        dag = build_block_dag(build_dependency_graph(prog), prog)
        spec = TrafficSpec(flows=[Flow(
            client_volumes=dict(meta["flow"]["clients"]),
            server_hosts=list(meta["flow"]["servers"]))])
        split = split_client_server(ws.reduced, spec)
        plan = _plan_from_json(meta["plan"], dag)
        packets = _load_or_generate_packets(packets_path, prog, count, seed)
        faults = frozenset() if fault_ec is None else frozenset({fault_ec})
        divergence = check_equivalence(prog, plan, dag, ws.reduced, split,
                                       packets, fault_ecs=faults)
    except IncForgeError as err:
        _fail(err)
    if divergence is None:
        click.echo(f"equivalent over {len(packets)} packets")
        sys.exit(0)
    click.echo(json.dumps({"divergence": divergence}, indent=2, default=str),
               err=True)
    sys.exit(5)


def _plan_from_json(data: dict, dag):
    from .devmodel import StageAssignment
    from .placer import PlacementPlan
    plan = PlacementPlan()
    assignment = {}
    for ec_text, body in data["per_ec"].items():
        ec = int(ec_text)
        for b in body["blocks"]:
            assignment.setdefault(b, []).append(ec)
        plan.stage_assignments[ec] = StageAssignment(
            stages={int(i): s for i, s in body["instruction_stages"].items()})
        for b_text, step in body["steps"].items():
            plan.steps[int(b_text)] = step
    plan.assignment = {b: tuple(sorted(ecs)) for b, ecs in assignment.items()}
    plan.gain = data["gain"]
    plan.h_t, plan.h_r, plan.h_p = data["h_t"], data["h_r"], data["h_p"]
    return plan


def _load_or_generate_packets(path, prog, count: int, seed: int) -> list:
    if path:
        packets = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                packets.append(Packet(fields=json.loads(line)))
        return packets
    rng = random.Random(seed)
    packets = []
    for _ in range(count):
        fields = {name: rng.randrange(1 << min(width, 16))
                  for name, width in prog.header_fields
                  if not name.startswith("inc.")}
        packets.append(Packet(fields=fields))
    return packets


@main.command()
@click.option("--out", type=click.Path(), default=None,
              help="Report directory (default: <workspace>/reports).")
@click.option("--seed", default=0, show_default=True)
@click.option("--quick", is_flag=True, help="Smaller sizes for smoke runs.")
@click.pass_context
def bench(ctx, out, seed, quick):
    """Run the scaling and blocking/pruning studies; write CSVs and figures."""
    from . import bench as bench_mod
    if out is None:
        root = ctx.obj.get("workspace")
        out = (Path(root) / "reports") if root else Path("reports")
    sizes = (4, 8, 16) if quick else (4, 8, 16, 32, 64)
    n_ops = 24 if quick else 50
    scaling = bench_mod.scaling_study(out, sizes=sizes, seed=seed)
    blocking = bench_mod.blocking_pruning_study(out, seed=seed, n_ops=n_ops)
    click.echo(f"scaling exponent: {scaling['exponent']:.3f} "
               f"({scaling['csv']}, {scaling['figure']})")
    click.echo(f"blocking speedup: {blocking['speedup_blocking']:.2f}x "
               f"({blocking['csv']}, {blocking['figure']})")


if __name__ == "__main__":
    main()
