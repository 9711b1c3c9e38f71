"""Stage 2: command files, dispatch over execution environments, run records."""

from .engine import (
    CommandFile,
    ExecResult,
    ExpRange,
    Job,
    RunResult,
    dispatch_plan,
    generate_command_file,
    load_command_file,
    parse_exp_range,
    run_batch,
)
from .envs import (
    ExecEnvAdapter,
    SubmitResources,
    adapter_adhoc,
    adapter_local,
    adapter_pbs,
    adapter_slurm,
    emit_submit_script,
    expand_hostlist,
    make_adapter,
)

__all__ = [
    "CommandFile",
    "ExecEnvAdapter",
    "ExecResult",
    "ExpRange",
    "Job",
    "RunResult",
    "SubmitResources",
    "adapter_adhoc",
    "adapter_local",
    "adapter_pbs",
    "adapter_slurm",
    "dispatch_plan",
    "emit_submit_script",
    "expand_hostlist",
    "generate_command_file",
    "load_command_file",
    "make_adapter",
    "parse_exp_range",
    "run_batch",
]
