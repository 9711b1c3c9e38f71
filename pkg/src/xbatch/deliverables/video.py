"""Encoder command lines for frame sequences.

The tool only builds the command; encoding is delegated to whatever the
template invokes, and runs only when explicitly requested.
"""

from __future__ import annotations

import shlex
import subprocess
from pathlib import Path

from ..errors import DeliverableError

DEFAULT_TEMPLATE = "ffmpeg -y -framerate {framerate} -pattern_type glob -i {input_glob} {opts} {output}"
DEFAULT_FRAMERATE = 10


def emit_video_cmd(
    frames_dir: str | Path,
    render_cmd_opts: str = "",
    template: str = DEFAULT_TEMPLATE,
    framerate: int = DEFAULT_FRAMERATE,
    output: str | Path | None = None,
    pattern: str = "frame_*.svg",
) -> str:
    """Fill the template; user options go to ``{opts}`` or, if absent, the end."""
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir() or not any(frames_dir.glob(pattern)):
        raise DeliverableError(f"no frames matching {pattern} in {frames_dir}")
    output = output or frames_dir.parent / f"{frames_dir.name}.mp4"
    opts = render_cmd_opts.strip()
    cmd = (
        template.replace("{framerate}", str(framerate))
        .replace("{input_glob}", shlex.quote(str(frames_dir / pattern)))
        .replace("{output}", shlex.quote(str(output)))
    )
    if "{opts}" in cmd:
        cmd = cmd.replace(" {opts}", f" {opts}" if opts else "").replace("{opts}", opts)
    elif opts:
        cmd = f"{cmd} {opts}"
    return cmd.strip()


def run_video_cmd(cmd: str) -> None:
    proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
    if proc.returncode != 0:
        raise DeliverableError(f"render command failed ({proc.returncode}): {proc.stderr.strip()[-500:]}")
