"""Stage 2: per-experiment command files and a bounded-parallelism dispatcher.

Command files follow the GNU parallel jobfile convention (one independent
shell command per line).  Lines are relative to the batch root, so the same
file works on every execution environment; adapters only add a prefix.
"""

from __future__ import annotations

import logging
import queue
import re
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..errors import ExecError, ExpRangeError
from ..generation import BatchLayout, atomic_write
from ..platform import PlatformPlugin
from .envs import ExecEnvAdapter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpRange:
    lo: int
    hi: int

    def __iter__(self):
        return iter(range(self.lo, self.hi + 1))

    def __len__(self) -> int:
        return self.hi - self.lo + 1

    def __contains__(self, i: int) -> bool:
        return self.lo <= i <= self.hi


def parse_exp_range(text: str | None, cardinality: int) -> ExpRange:
    """``"L:H"`` (inclusive) or ``None`` for the whole batch."""
    if text is None:
        return ExpRange(0, cardinality - 1)
    m = re.fullmatch(r"\s*(\d+)\s*:\s*(\d+)\s*", text)
    if not m:
        raise ExpRangeError(f"--exp-range must look like L:H, got {text!r}")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo > hi:
        raise ExpRangeError(f"--exp-range {text}: start {lo} is after end {hi}")
    if hi >= cardinality:
        raise ExpRangeError(f"--exp-range {text}: batch has only {cardinality} experiments (0..{cardinality - 1})")
    return ExpRange(lo, hi)


@dataclass(frozen=True)
class CommandFile:
    exp_index: int
    lines: tuple[str, ...]
    path: Path

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def run_command(layout: BatchLayout, platform: PlatformPlugin, i: int, j: int, seed: int) -> str:
    """Command core for one run, relative to the batch root."""
    in_dir = layout.run_input(i, j).relative_to(layout.root).as_posix()
    up = "/".join([".."] * len(Path(in_dir).parts))
    out_dir = f"{up}/{layout.run_output(i, j).relative_to(layout.root).as_posix()}"
    launch = platform.launch_command("input.xml", seed, out_dir)
    return f"cd {in_dir} && mkdir -p {out_dir} && {launch} > {out_dir}/run.log 2>&1"


def generate_command_file(
    layout: BatchLayout, i: int, platform: PlatformPlugin, n_runs: int, seeds
) -> CommandFile:
    if n_runs < 1:
        raise ExecError(f"experiment {i}: n_runs must be >= 1")
    missing = [j for j in range(n_runs) if not (layout.run_input(i, j) / "input.xml").is_file()]
    if missing:
        raise ExecError(f"experiment {i}: missing run inputs for runs {missing}; run stage 1 first")
    lines = tuple(run_command(layout, platform, i, j, seeds.seed(i, j)) for j in range(n_runs))
    return CommandFile(i, lines, layout.commands_path(i))


def load_command_file(layout: BatchLayout, i: int, platform: PlatformPlugin, n_runs: int, seeds) -> CommandFile:
    """Read ``commands.txt``, generating it first if absent."""
    path = layout.commands_path(i)
    if path.is_file():
        lines = tuple(ln for ln in path.read_text().splitlines() if ln.strip())
        if len(lines) == n_runs:
            return CommandFile(i, lines, path)
        log.warning("%s has %d lines, expected %d; regenerating", path, len(lines), n_runs)
    cf = generate_command_file(layout, i, platform, n_runs, seeds)
    atomic_write(path, cf.text())
    return cf


@dataclass
class RunResult:
    run: int
    exit_code: int
    wall_s: float
    started: float
    finished: float
    host: str
    log: str
    attempts: int = 1
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.exit_code == 0


@dataclass
class ExecResult:
    exp_index: int
    env: str
    runs: list[RunResult] = field(default_factory=list)

    @property
    def ok_count(self) -> int:
        return sum(r.ok for r in self.runs)

    @property
    def fail_count(self) -> int:
        return len(self.runs) - self.ok_count

    def to_dict(self) -> dict:
        return {
            "exp": self.exp_index,
            "env": self.env,
            "attempted": len(self.runs),
            "ok_count": self.ok_count,
            "fail_count": self.fail_count,
            "runs": [asdict(r) for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExecResult":
        return cls(d["exp"], d["env"], [RunResult(**r) for r in d.get("runs", [])])


@dataclass(frozen=True)
class Job:
    exp: int
    run: int
    host: str | None
    core: str
    command: str


def dispatch_plan(layout: BatchLayout, env: ExecEnvAdapter, cf: CommandFile, parallelism: int | None = None) -> list[Job]:
    """Static plan: job j goes to slot j mod n_slots.  Side-effect free."""
    slots = plan_slots(env, len(cf.lines), parallelism)
    return [
        Job(cf.exp_index, j, slots[j % len(slots)], core, env.wrap(core, slots[j % len(slots)], layout.root))
        for j, core in enumerate(cf.lines)
    ]


def plan_slots(env: ExecEnvAdapter, n_jobs: int, parallelism: int | None = None) -> list[str | None]:
    width = min(parallelism or env.parallelism, env.parallelism, max(n_jobs, 1))
    return env.slots(width)


def _execute(job: Job, root: Path, host_label: str) -> RunResult:
    started = time.time()
    t0 = time.perf_counter()
    error = None
    try:
        proc = subprocess.run(job.command, shell=True, cwd=root, stdin=subprocess.DEVNULL,
                              stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
        code = proc.returncode
        if code != 0 and proc.stdout:
            error = proc.stdout.decode(errors="replace")[-2000:]
    except OSError as exc:
        code, error = -1, f"spawn failed: {exc}"
    wall = time.perf_counter() - t0
    log_path = f"exp-outputs/exp{job.exp}/run{job.run}/run.log"
    return RunResult(job.run, code, round(wall, 6), started, time.time(), host_label, log_path, 1, error)


def run_experiment(
    layout: BatchLayout, env: ExecEnvAdapter, cf: CommandFile, parallelism: int | None = None, retry: int = 0
) -> ExecResult:
    """Run every line of one command file; failures never stop the others."""
    slots = plan_slots(env, len(cf.lines), parallelism)
    free: queue.Queue = queue.Queue()
    for s in slots:
        free.put(s)

    def work(j: int, core: str) -> RunResult:
        host = free.get()
        try:
            job = Job(cf.exp_index, j, host, core, env.wrap(core, host, layout.root))
            return _execute(job, layout.root, host or "localhost")
        finally:
            free.put(host)

    results: dict[int, RunResult] = {}
    pending = list(enumerate(cf.lines))
    attempt = 0
    while pending:
        attempt += 1
        with ThreadPoolExecutor(max_workers=len(slots)) as pool:
            futures = [(j, pool.submit(work, j, core)) for j, core in pending]
            for j, fut in futures:
                res = fut.result()
                res.attempts = attempt
                results[j] = res
        pending = [(j, core) for j, core in pending if not results[j].ok]
        if attempt > retry:
            break
        if pending:
            log.warning("exp%d: retrying %d failed runs (attempt %d)", cf.exp_index, len(pending), attempt + 1)
    return ExecResult(cf.exp_index, env.id, [results[j] for j in sorted(results)])


def run_batch(
    layout: BatchLayout,
    env: ExecEnvAdapter,
    exp_range,
    platform: PlatformPlugin,
    n_runs: int,
    seeds,
    parallelism: int | None = None,
    retry: int = 0,
    dry_run: bool = False,
) -> list[ExecResult] | list[Job]:
    """Execute experiments in index order; runs inside one experiment go in parallel.

    With ``dry_run`` the full dispatch plan is returned and nothing is written.
    """
    if dry_run:
        plan: list[Job] = []
        for i in exp_range:
            path = layout.commands_path(i)
            if path.is_file():
                cf = CommandFile(i, tuple(ln for ln in path.read_text().splitlines() if ln.strip()), path)
            else:
                cf = generate_command_file(layout, i, platform, n_runs, seeds)
            plan.extend(dispatch_plan(layout, env, cf, parallelism))
        return plan

    results = []
    for i in exp_range:
        cf = load_command_file(layout, i, platform, n_runs, seeds)
        layout.exp_output(i).mkdir(parents=True, exist_ok=True)
        res = run_experiment(layout, env, cf, parallelism, retry)
        atomic_write(layout.exec_path(i), yaml.safe_dump(res.to_dict(), sort_keys=False))
        level = logging.INFO if res.fail_count == 0 else logging.WARNING
        log.log(level, "exp%d: %d ok, %d failed", i, res.ok_count, res.fail_count)
        results.append(res)
    return results
