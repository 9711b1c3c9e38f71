"""Command-line front end: flag parsing, stage planning and the pipeline driver.

Stages: 1 generate inputs, 2 execute runs, 3 statistics, 4 deliverables,
5 comparison across batches.  ``--pipeline`` selects any increasing subset;
the default is 1-4, and stage 5 runs only when ``--compare`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, plugins
from .compare import ComparisonSpec, compare, compare_as_lines
from .criteria import ParserRegistry, parse_batch_criteria, tokenize_cli_criteria
from .deliverables.config import GraphConfig, load_graph_config
from .deliverables.models import resolve_model
from .deliverables.stage import generate_deliverables, write_doc
from .errors import ExecError, UsageError, XBatchError
from .execution import make_adapter, parse_exp_range, run_batch
from .execution.envs import SubmitResources, emit_submit_script
from .generation import (
    AxisInfo,
    BatchLayout,
    BatchManifest,
    ExtraChanges,
    assign_seeds,
    atomic_write,
    batch_root,
    generate_batch,
    parse_exp_setup,
)
from .platform import resolve_platform
from .project import ProjectConfig, load_project
from .stats import DIST_STATS, REDUCERS, process_batch
from .storage import resolve_storage
from .xmlops import AttributeChangeSet, load_template

log = logging.getLogger("xbatch")

EXEC_ENVS = ("hpc.local", "hpc.slurm", "hpc.pbs", "hpc.adhoc")
STAGE_NAMES = {1: "generate", 2: "execute", 3: "statistics", 4: "deliverables", 5: "compare"}
# flags that only steer this invocation and are left out of the manifest snapshot
TRANSIENT = {"pipeline", "exec_dry_run", "emit_submit_script", "log_level", "force_regen"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xbatch", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"xbatch {__version__}")

    g = p.add_argument_group("stage 1: experiment generation")
    g.add_argument("--template-input-file", type=Path)
    g.add_argument("--platform", default="platform.refsim")
    g.add_argument("--project")
    g.add_argument("--batch-criteria", nargs="+", metavar="TOKEN")
    g.add_argument("--controller")
    g.add_argument("--robot")
    g.add_argument("--scenario", default="default")
    g.add_argument("--exp-setup", default="exp_setup.T100")
    g.add_argument("--n-runs", type=int)
    g.add_argument("--master-seed", type=int)
    g.add_argument("--force-regen", action="store_true")
    g.add_argument("--sierra-root", type=Path, default=Path("xbatch-out"))

    g = p.add_argument_group("pipeline")
    g.add_argument("--pipeline", nargs="+", type=int, metavar="STAGE")
    g.add_argument("--exp-range", metavar="L:H")
    g.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    g = p.add_argument_group("stage 2: execution")
    g.add_argument("--exec-env", default="hpc.local", choices=EXEC_ENVS)
    g.add_argument("--exec-jobs-per-node", type=int)
    g.add_argument("--nodefile", type=Path)
    g.add_argument("--exec-dry-run", action="store_true")
    g.add_argument("--retry", type=int, default=0)
    g.add_argument("--no-master-node", action="store_true", help="accepted for compatibility; ignored")
    g.add_argument("--emit-submit-script", type=Path, metavar="PATH",
                   help="write a SLURM/PBS script that re-runs this command inside an allocation, then exit")
    g.add_argument("--submit-nodes", type=int, default=1)
    g.add_argument("--submit-time", default="1h")

    g = p.add_argument_group("stage 3: statistics")
    g.add_argument("--storage-medium", default="storage.csv")
    g.add_argument("--dist-stats", default="conf95", choices=sorted(DIST_STATS))
    g.add_argument("--reducer", default="final", choices=REDUCERS)

    g = p.add_argument_group("stage 4: deliverables")
    g.add_argument("--platform-vc", action="store_true")
    g.add_argument("--render-cmd-opts", default="")
    g.add_argument("--render-exec", action="store_true")

    g = p.add_argument_group("stage 5: comparison")
    g.add_argument("--compare", metavar="ROOT1,ROOT2,...")
    g.add_argument("--compare-mode", default="intra", choices=["intra", "inter"])
    g.add_argument("--compare-target", metavar="GRAPH_ID")
    g.add_argument("--as-lines", choices=["row", "col"])
    g.add_argument("--compare-output-root", type=Path)
    g.add_argument("--compare-model", action="append", default=[], metavar="ID[:KEY=VALUE,...]")
    return p


@dataclass
class PipelinePlan:
    stages: tuple[int, ...]
    args: argparse.Namespace
    root: Path | None = None
    compare_spec: ComparisonSpec | None = None
    search: list[Path] = field(default_factory=list)
    argv: list[str] = field(default_factory=list)

    @property
    def layout(self) -> BatchLayout | None:
        return BatchLayout(self.root) if self.root else None

    def flags_snapshot(self) -> dict:
        out = {}
        for k, v in sorted(vars(self.args).items()):
            if k in TRANSIENT:
                continue
            out[k] = str(v) if isinstance(v, Path) else v
        return out


def _check_stages(stages: list[int]) -> tuple[int, ...]:
    for s in stages:
        if s not in STAGE_NAMES:
            raise UsageError(f"--pipeline: unknown stage {s}; stages are 1-5")
    if any(b <= a for a, b in zip(stages, stages[1:])):
        raise UsageError(f"--pipeline stages must be strictly increasing, got {' '.join(map(str, stages))}")
    return tuple(stages)


def _require(args, stage: int, *names: str) -> None:
    for name in names:
        if getattr(args, name.lstrip("-").replace("-", "_")) is None:
            raise UsageError(f"stage {stage} ({STAGE_NAMES[stage]}) needs {name}")


def parse_args(argv: list[str] | None = None) -> PipelinePlan:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.pipeline is not None:
        stages = _check_stages(args.pipeline)
    else:
        stages = (5,) if args.compare else (1, 2, 3, 4)
    if args.n_runs is not None and args.n_runs < 1:
        raise UsageError("--n-runs must be >= 1")
    if args.retry < 0:
        raise UsageError("--retry must be >= 0")
    plan = PipelinePlan(stages, args, search=plugins.plugin_path(), argv=argv)

    batch_stages = [s for s in stages if s <= 4]
    if batch_stages:
        _require(args, batch_stages[0], "--project", "--batch-criteria")
        tokenize_cli_criteria(args.batch_criteria)
        plan.root = batch_root(args.sierra_root, Path(args.project).name, args.controller, args.scenario,
                               args.batch_criteria)
    if 1 in stages:
        _require(args, 1, "--template-input-file", "--n-runs")
        parse_exp_setup(args.exp_setup)
    if 5 in stages:
        _require(args, 5, "--compare", "--compare-target", "--compare-output-root")
        roots = [Path(r) for r in args.compare.split(",") if r]
        plan.compare_spec = ComparisonSpec(args.compare_mode, tuple(roots), args.compare_target)
        if args.as_lines and args.compare_model:
            raise UsageError("--compare-model cannot be combined with --as-lines")
    elif args.compare:
        raise UsageError("--compare given but stage 5 is not in --pipeline")
    validate_prerequisites(plan)
    return plan


def validate_prerequisites(plan: PipelinePlan) -> None:
    """Each stage needs the previous stage's outputs unless that stage also runs."""
    layout, stages = plan.layout, set(plan.stages)
    if 2 in stages and 1 not in stages and not (layout.manifest_path.is_file() and layout.inputs.is_dir()):
        raise UsageError(f"stage 2 needs generated inputs under {layout.root}; run stage 1 first")
    if 3 in stages and 2 not in stages and not layout.outputs.is_dir():
        raise UsageError(f"stage 3 needs run outputs under {layout.outputs}; run stage 2 first")
    if 4 in stages and 3 not in stages and not layout.statistics.is_dir():
        raise UsageError(f"stage 4 needs statistics under {layout.statistics}; run stage 3 first")
    if 5 in stages:
        for r in plan.compare_spec.roots:
            if not r.is_dir():
                raise UsageError(f"--compare: batch root {r} does not exist")


# --- stages -----------------------------------------------------------------------


def _project(plan: PipelinePlan, name: str) -> ProjectConfig:
    return load_project(name, plan.search)


def _lookup(project: ProjectConfig, table: str, key: str | None) -> AttributeChangeSet:
    """``--controller project.name`` may carry the project prefix."""
    mapping = getattr(project, table)
    if key and key not in mapping and "." in key and key.split(".", 1)[1] in mapping:
        key = key.split(".", 1)[1]
    return project.lookup(table, key)


def stage_generate(plan: PipelinePlan) -> None:
    a = plan.args
    project = _project(plan, a.project)
    registry = ParserRegistry.build(project.criteria, plan.search)
    criteria = parse_batch_criteria(a.batch_criteria, registry)
    setup = parse_exp_setup(a.exp_setup)
    platform = resolve_platform(a.platform, plan.search)
    template = load_template(a.template_input_file)
    layout = plan.layout
    seeds = assign_seeds(a.master_seed, criteria.cardinality, a.n_runs, layout.root, a.force_regen, write=False)
    extra = ExtraChanges(
        project.batch_changes
        + _lookup(project, "controllers", a.controller)
        + _lookup(project, "robots", a.robot)
        + _lookup(project, "scenarios", a.scenario if a.scenario != "default" else None),
        dict(project.per_experiment),
    )
    manifest = BatchManifest(
        project=Path(a.project).name,
        criteria=list(criteria.tokens),
        platform=platform.id,
        exec_env=a.exec_env,
        n_runs=a.n_runs,
        exp_setup=setup.token,
        axes=[AxisInfo.from_def(d) for d in (criteria.axis_a, criteria.axis_b) if d is not None],
        master_seed=seeds.master_seed,
        controller=a.controller,
        robot=a.robot,
        scenario=a.scenario,
        template=str(a.template_input_file),
        platform_vc=a.platform_vc,
        flags=plan.flags_snapshot(),
    )
    generate_batch(layout.root, template, criteria, a.n_runs, setup, platform, manifest, seeds, extra)
    log.info("stage 1: %d experiments x %d runs under %s", criteria.cardinality, a.n_runs, layout.root)


def stage_execute(plan: PipelinePlan) -> None:
    a, layout = plan.args, plan.layout
    manifest, seeds = layout.read_manifest(), layout.read_seeds()
    platform = resolve_platform(manifest.platform, plan.search)
    env = make_adapter(a.exec_env, a.exec_jobs_per_node, a.nodefile)
    exp_range = parse_exp_range(a.exp_range, manifest.cardinality)
    out = run_batch(layout, env, exp_range, platform, manifest.n_runs, seeds, a.exec_jobs_per_node, a.retry,
                    a.exec_dry_run)
    if a.exec_dry_run:
        for job in out:
            print(f"exp{job.exp} run{job.run} [{job.host or 'local'}] {job.command}")
        return
    failed = sum(r.fail_count for r in out)
    if failed:
        raise ExecError(f"{failed} run(s) failed; see exp-outputs/exp<i>/exec.yaml, re-run with --exp-range")


def stage_statistics(plan: PipelinePlan) -> None:
    a, layout = plan.args, plan.layout
    manifest = layout.read_manifest()
    platform = resolve_platform(manifest.platform, plan.search)
    storage = resolve_storage(a.storage_medium, plan.search)
    exp_range = parse_exp_range(a.exp_range, manifest.cardinality)
    report = process_batch(layout, manifest, exp_range, a.dist_stats, a.reducer, storage, platform.index_column)
    log.info("stage 3: %d experiments, %d summaries", len(report["experiments"]), len(report["summaries"]))


def stage_deliverables(plan: PipelinePlan) -> None:
    a, layout = plan.args, plan.layout
    manifest = layout.read_manifest()
    project = _project(plan, a.project)
    path = project.graphs_path
    if path is None or not path.is_file():
        log.warning("stage 4: no graphs.yaml for project %r; nothing to do", a.project)
        config = GraphConfig()
    else:
        config = load_graph_config(path)
    platform = resolve_platform(manifest.platform, plan.search)
    exp_range = parse_exp_range(a.exp_range, manifest.cardinality)
    written = generate_deliverables(
        layout, manifest, config, exp_range, a.dist_stats, a.platform_vc or manifest.platform_vc,
        a.render_cmd_opts, a.render_exec, platform.index_column, a.reducer, plan.search,
    )
    log.info("stage 4: %d targets, %d files", len(config.targets), len(written))


def parse_model_arg(text: str) -> tuple[str, dict]:
    """``model.constant:value=10,scale=2`` -> (id, params)."""
    mid, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--compare-model: expected KEY=VALUE, got {item!r}")
        try:
            params[key] = float(value)
        except ValueError:
            params[key] = value
    return mid, params


def stage_compare(plan: PipelinePlan) -> None:
    a, spec = plan.args, plan.compare_spec
    out_root = a.compare_output_root
    if a.as_lines:
        docs = compare_as_lines(spec, a.as_lines)
        for k, doc in enumerate(docs):
            write_doc(out_root / f"{spec.output_id}.{a.as_lines}{k}", doc)
        log.info("stage 5: %d linegraphs under %s", len(docs), out_root)
        return
    models = []
    for text in a.compare_model:
        mid, params = parse_model_arg(text)
        models.append((resolve_model(mid, plan.search), params))
    doc = compare(spec, models)
    write_doc(out_root / spec.output_id, doc)
    log.info("stage 5: %s written under %s", spec.output_id, out_root)


STAGES = {1: stage_generate, 2: stage_execute, 3: stage_statistics, 4: stage_deliverables, 5: stage_compare}


def _event(path: Path | None, record: dict) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def run_pipeline(plan: PipelinePlan) -> int:
    """Run the selected stages in order; the first failure stops the rest."""
    a = plan.args
    if a.no_master_node:
        log.warning("--no-master-node is ignored: no platform here uses a master node")
    if a.emit_submit_script:
        argv = ["xbatch"] + _strip_submit_flags(plan.argv)
        res = SubmitResources(a.submit_nodes, a.submit_time, a.exec_jobs_per_node or 1)
        atomic_write(a.emit_submit_script, emit_submit_script(a.exec_env, res, argv))
        log.info("submit script written to %s", a.emit_submit_script)
        return 0
    for stage in plan.stages:
        events = plan.root / "events.jsonl" if stage <= 4 else a.compare_output_root / "events.jsonl"
        t0 = time.perf_counter()
        try:
            STAGES[stage](plan)
        except XBatchError as exc:
            wall = time.perf_counter() - t0
            log.error("stage %d (%s) failed after %.2fs: %s", stage, STAGE_NAMES[stage], wall, exc)
            _event(events, {"stage": stage, "name": STAGE_NAMES[stage], "outcome": "failed",
                            "wall_s": round(wall, 3), "error": str(exc), "time": time.time()})
            return 1
        wall = time.perf_counter() - t0
        log.info("stage %d (%s) ok in %.2fs", stage, STAGE_NAMES[stage], wall)
        _event(events, {"stage": stage, "name": STAGE_NAMES[stage], "outcome": "ok",
                        "wall_s": round(wall, 3), "time": time.time()})
    return 0


def _strip_submit_flags(argv: list[str]) -> list[str]:
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        name = tok.split("=", 1)[0]
        if name in ("--emit-submit-script", "--submit-nodes", "--submit-time"):
            skip = "=" not in tok
            continue
        out.append(tok)
    return out


def main(argv: list[str] | None = None) -> int:
    try:
        plan = parse_args(argv)
    except UsageError as exc:
        print(f"xbatch: usage error: {exc}", file=sys.stderr)
        return 2
    except XBatchError as exc:
        print(f"xbatch: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=plan.args.log_level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    return run_pipeline(plan)


if __name__ == "__main__":
    sys.exit(main())
