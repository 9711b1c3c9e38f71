"""Execution environments: where and how command lines run.

An adapter never changes a command's content.  It only decides which host runs
it (``slots``) and which prefix wraps it (``wrap``).  Remote hosts are reached
through a configurable shell template with ``{host}`` and ``{cmd}``
placeholders; a shared filesystem is assumed.
"""

from __future__ import annotations

import os
import re
import shlex
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from ..errors import ConfigError

DEFAULT_REMOTE_SHELL = "ssh -o BatchMode=yes {host} {cmd}"
LOCAL_HOSTS = {"localhost", "127.0.0.1", "::1"}

ENV_IDS = ("hpc.local", "hpc.slurm", "hpc.pbs", "hpc.adhoc")


@dataclass(frozen=True)
class ExecEnvAdapter:
    id: str
    hosts: tuple[tuple[str | None, int], ...]  # (host or None for local, slots)
    remote_shell: str = DEFAULT_REMOTE_SHELL

    def __post_init__(self):
        if not self.hosts:
            raise ConfigError(f"{self.id}: no execution hosts")
        for host, n in self.hosts:
            if n < 1:
                raise ConfigError(f"{self.id}: host {host or 'local'} has {n} slots")
        if "{host}" not in self.remote_shell or "{cmd}" not in self.remote_shell:
            raise ConfigError("remote shell template needs {host} and {cmd} placeholders")

    @property
    def parallelism(self) -> int:
        return sum(n for _, n in self.hosts)

    def slots(self, limit: int | None = None) -> list[str | None]:
        """One entry per concurrent job, hosts interleaved round-robin."""
        remaining = {i: n for i, (_, n) in enumerate(self.hosts)}
        out: list[str | None] = []
        while any(remaining.values()):
            for i, (host, _) in enumerate(self.hosts):
                if remaining[i]:
                    out.append(host)
                    remaining[i] -= 1
        return out[:limit] if limit else out

    def wrap(self, core: str, host: str | None, root: Path) -> str:
        """Full command line for ``core``; local commands run with cwd = batch root."""
        if host is None:
            return core
        inner = f"cd {shlex.quote(str(Path(root).resolve()))} && {core}"
        return self.remote_shell.replace("{host}", host).replace("{cmd}", shlex.quote(inner))

    def nodefile_text(self) -> str:
        return "".join(f"{h or 'localhost'}:{n}\n" for h, n in self.hosts)


def _host_entry(host: str, slots: int) -> tuple[str | None, int]:
    return (None if host in LOCAL_HOSTS else host, slots)


def adapter_local(parallelism: int | None = None) -> ExecEnvAdapter:
    n = parallelism if parallelism is not None else (os.cpu_count() or 1)
    return ExecEnvAdapter("hpc.local", ((None, n),))


# --- SLURM ------------------------------------------------------------------


def _split_top_level(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise ConfigError(f"unbalanced ']' in hostlist {text!r}")
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ConfigError(f"unbalanced '[' in hostlist {text!r}")
    parts.append("".join(cur))
    return [p for p in parts if p]


def _expand_ranges(body: str) -> list[str]:
    out = []
    for part in body.split(","):
        m = re.fullmatch(r"(\d+)(?:-(\d+))?", part.strip())
        if not m:
            raise ConfigError(f"bad hostlist range {part!r}")
        lo_s, hi_s = m.group(1), m.group(2)
        if hi_s is None:
            out.append(lo_s)
            continue
        lo, hi = int(lo_s), int(hi_s)
        if hi < lo:
            raise ConfigError(f"descending hostlist range {part!r}")
        out.extend(str(k).zfill(len(lo_s)) for k in range(lo, hi + 1))
    return out


def expand_hostlist(text: str) -> list[str]:
    """Expand a SLURM hostlist, e.g. ``n[01-03,07],gpu[1-2]-ib``."""
    hosts: list[str] = []
    for item in _split_top_level(text.strip()):
        partial = [""]
        for literal, body in re.findall(r"([^\[\]]*)(?:\[([^\]]*)\])?", item):
            partial = [p + literal for p in partial]
            if body:
                partial = [p + r for p in partial for r in _expand_ranges(body)]
        hosts.extend(partial)
    return hosts


def _require(env: Mapping[str, str], var: str) -> str:
    value = env.get(var)
    if not value:
        raise ConfigError(f"{var} is not set; this execution environment must run inside its scheduler allocation")
    return value


def adapter_slurm(
    env: Mapping[str, str] | None = None,
    jobs_per_node: int | None = None,
    remote_shell: str = DEFAULT_REMOTE_SHELL,
) -> ExecEnvAdapter:
    env = os.environ if env is None else env
    nodes = expand_hostlist(_require(env, "SLURM_JOB_NODELIST"))
    per_node = jobs_per_node or int(env.get("SLURM_CPUS_PER_TASK") or 1)
    return ExecEnvAdapter("hpc.slurm", tuple(_host_entry(h, per_node) for h in nodes), remote_shell)


def adapter_pbs(
    env: Mapping[str, str] | None = None,
    jobs_per_node: int | None = None,
    remote_shell: str = DEFAULT_REMOTE_SHELL,
) -> ExecEnvAdapter:
    env = os.environ if env is None else env
    path = Path(_require(env, "PBS_NODEFILE"))
    try:
        lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read PBS_NODEFILE {path}: {exc.strerror}") from None
    if not lines:
        raise ConfigError(f"PBS_NODEFILE {path} is empty")
    counts: dict[str, int] = {}
    for h in lines:
        counts[h] = counts.get(h, 0) + 1
    ppn = env.get("PBS_NUM_PPN")
    hosts = tuple(_host_entry(h, jobs_per_node or (int(ppn) if ppn else n)) for h, n in counts.items())
    return ExecEnvAdapter("hpc.pbs", hosts, remote_shell)


def parse_nodefile(text: str) -> list[tuple[str, int]]:
    entries = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        host, _, slots = line.partition(":")
        try:
            entries.append((host.strip(), int(slots) if slots else 1))
        except ValueError:
            raise ConfigError(f"bad nodefile line {raw!r}; expected host[:slots]") from None
    return entries


def adapter_adhoc(
    nodefile_path: str | Path,
    jobs_per_node: int | None = None,
    remote_shell: str = DEFAULT_REMOTE_SHELL,
) -> ExecEnvAdapter:
    try:
        entries = parse_nodefile(Path(nodefile_path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read nodefile {nodefile_path}: {exc.strerror}") from None
    if not entries:
        raise ConfigError(f"nodefile {nodefile_path} lists no hosts")
    return ExecEnvAdapter("hpc.adhoc", tuple(_host_entry(h, jobs_per_node or n) for h, n in entries), remote_shell)


def make_adapter(
    env_id: str,
    jobs_per_node: int | None = None,
    nodefile: str | Path | None = None,
    environ: Mapping[str, str] | None = None,
    remote_shell: str = DEFAULT_REMOTE_SHELL,
) -> ExecEnvAdapter:
    if env_id == "hpc.local":
        return adapter_local(jobs_per_node)
    if env_id == "hpc.slurm":
        return adapter_slurm(environ, jobs_per_node, remote_shell)
    if env_id == "hpc.pbs":
        return adapter_pbs(environ, jobs_per_node, remote_shell)
    if env_id in ("hpc.adhoc", "adhoc"):
        if nodefile is None:
            raise ConfigError("hpc.adhoc needs --nodefile")
        return adapter_adhoc(nodefile, jobs_per_node, remote_shell)
    if env_id.startswith("robots."):
        raise ConfigError(f"{env_id}: real-robot execution is not implemented")
    raise ConfigError(f"unknown execution environment {env_id!r}; known: {ENV_IDS}")


# --- submit scripts ---------------------------------------------------------


@dataclass(frozen=True)
class SubmitResources:
    nodes: int
    time: str  # "1h", "90m", "30s" or "HH:MM:SS"
    jobs_per_node: int = 1
    job_name: str = "xbatch"


def walltime(text: str) -> str:
    if re.fullmatch(r"\d+:\d{2}:\d{2}", text):
        return text
    m = re.fullmatch(r"(\d+)([hms])", text)
    if not m:
        raise ConfigError(f"bad wall time {text!r}; use e.g. 1h, 90m, or HH:MM:SS")
    secs = int(m.group(1)) * {"h": 3600, "m": 60, "s": 1}[m.group(2)]
    return f"{secs // 3600:02d}:{secs % 3600 // 60:02d}:{secs % 60:02d}"


def emit_submit_script(env_id: str, res: SubmitResources, argv: list[str]) -> str:
    """Batch script that re-invokes the tool inside the allocation."""
    if res.nodes < 1 or res.jobs_per_node < 1:
        raise ConfigError("submit script needs nodes >= 1 and jobs per node >= 1")
    cmd = shlex.join(argv)
    if env_id == "hpc.slurm":
        return (
            "#!/bin/bash\n"
            f"#SBATCH --job-name={res.job_name}\n"
            f"#SBATCH --nodes={res.nodes}\n"
            "#SBATCH --ntasks-per-node=1\n"
            f"#SBATCH --cpus-per-task={res.jobs_per_node}\n"
            f"#SBATCH --time={walltime(res.time)}\n"
            f"#SBATCH --output={res.job_name}-%j.log\n"
            "\n"
            "set -euo pipefail\n"
            f"{cmd}\n"
        )
    if env_id == "hpc.pbs":
        return (
            "#!/bin/bash\n"
            f"#PBS -N {res.job_name}\n"
            f"#PBS -l nodes={res.nodes}:ppn={res.jobs_per_node}\n"
            f"#PBS -l walltime={walltime(res.time)}\n"
            "#PBS -j oe\n"
            "\n"
            "set -euo pipefail\n"
            'cd "$PBS_O_WORKDIR"\n'
            f"{cmd}\n"
        )
    raise ConfigError(f"no submit script format for {env_id!r}")
