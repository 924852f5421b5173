"""
Drive an external encoder and decoder through argv templates.

Templates are split with shell rules but never run through a shell; each
token is formatted with the placeholders below. The encoder is expected to
accept the lambda modifiers directly (a patched build).
"""

import hashlib
import logging
import os
import shlex
import subprocess
import time
from string import Formatter

from ..errors import ConfigurationError, EncodeError, EncodeTimeoutError
from ..harness import Clip, EncodeResult, EncodeSpec
from ..params import ParamsBase
from ..y4m import iter_frames, parse_y4m_header

logger = logging.getLogger(__name__)

ENCODER_PLACEHOLDERS = ("input", "output", "qp", "k1", "k2", "cb_offset", "cr_offset")
DECODER_PLACEHOLDERS = ("input", "output")
STDERR_TAIL = 2000


class Params(ParamsBase):
    encoder: str = ""
    decoder: str = ""
    timeout: float = 3600.0
    extension: str = "ivf"


def placeholders(template: str) -> set[str]:
    names = set()
    for token in shlex.split(template):
        for _, name, _, _ in Formatter().parse(token):
            if name is not None:
                names.add(name)
    return names


def _check_template(kind: str, template: str, required: tuple[str, ...]) -> None:
    if not template.strip():
        raise ConfigurationError(f"invalid template; {kind} command is empty")
    try:
        found = placeholders(template)
    except ValueError as e:
        raise ConfigurationError(f"invalid template; {kind} command: {e}") from e
    missing = [p for p in required if p not in found]
    if missing:
        raise ConfigurationError(
            f"invalid template; missing placeholder {', '.join('{' + p + '}' for p in missing)}"
        )
    unknown = sorted(found - set(required))
    if unknown:
        raise ConfigurationError(
            f"invalid template; unknown placeholder {', '.join('{' + p + '}' for p in unknown)}"
        )


def validate(params: Params) -> None:
    _check_template("encoder", params.encoder, ENCODER_PLACEHOLDERS)
    _check_template("decoder", params.decoder, DECODER_PLACEHOLDERS)
    if params.timeout <= 0:
        raise ConfigurationError("invalid timeout; must be positive")


def render(template: str, **values: object) -> list[str]:
    return [token.format(**values) for token in shlex.split(template)]


def _tail(data: bytes) -> str:
    return data[-STDERR_TAIL:].decode("utf-8", errors="replace")


def run(argv: list[str], timeout: float) -> subprocess.CompletedProcess:
    logger.debug("running %s", shlex.join(argv))
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout, check=False)
    except subprocess.TimeoutExpired as e:
        raise EncodeTimeoutError(
            f"command timed out after {timeout:g}s; {argv[0]}",
            diagnostics=_tail(e.stderr or b""),
        ) from e
    except FileNotFoundError as e:
        raise EncodeError(f"command not found; {argv[0]}") from e
    if proc.returncode != 0:
        raise EncodeError(
            f"command failed with status {proc.returncode}; {argv[0]}",
            diagnostics=_tail(proc.stderr),
        )
    return proc


def _stream_timing(path: str) -> tuple[int, float]:
    with open(path, "rb") as f:
        head = f.read(4096)
        info, offset = parse_y4m_header(head)
        f.seek(offset)
        frames = sum(1 for _ in iter_frames(f, info))
    return frames, float(info.fps)


def encode(params: Params, spec: EncodeSpec, clip: Clip, *, workdir: str = "") -> EncodeResult:
    if clip.path is None:
        raise ConfigurationError(f"clip {clip.id} has no source path")
    frames, fps = _stream_timing(clip.path)
    if frames == 0:
        raise EncodeError(f"clip {clip.id} has no frames")

    os.makedirs(workdir, exist_ok=True)
    encoded = os.path.join(workdir, f"encoded.{params.extension}")
    decoded = os.path.join(workdir, "decoded.y4m")

    start = time.monotonic()
    enc = run(
        render(
            params.encoder,
            input=clip.path,
            output=encoded,
            qp=spec.qp,
            k1=spec.k1,
            k2=spec.k2,
            cb_offset=spec.cb_offset,
            cr_offset=spec.cr_offset,
        ),
        params.timeout,
    )
    if not os.path.isfile(encoded):
        raise EncodeError(
            f"encoder produced no output; expected {encoded}", diagnostics=_tail(enc.stderr)
        )
    size = os.path.getsize(encoded)

    dec = run(render(params.decoder, input=encoded, output=decoded), params.timeout)
    if not os.path.isfile(decoded):
        raise EncodeError(
            f"decoder produced no output; expected {decoded}", diagnostics=_tail(dec.stderr)
        )
    wall_ms = 1000.0 * (time.monotonic() - start)

    log = hashlib.sha256(enc.stdout + enc.stderr + dec.stdout + dec.stderr).hexdigest()
    return EncodeResult(
        bitrate_bps=size * 8.0 * fps / frames,
        frames=frames,
        adapter="external",
        wall_ms=wall_ms,
        log_digest=log,
        decoded=decoded,
    )
