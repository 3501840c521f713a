"""
vega-align - Checkpoint files

Layout:

    b"VEGC" | u32 version | u32 section count
    repeated: u32 name length | utf-8 name | u64 payload length | tensor bytes

Sections appear in a fixed order: ``meta``, ``encoder_config``,
``student.*``, ``head.*``, ``projector.*``, ``optim.*``, ``rng``.
Parameters and optimizer moments are float64 (VEGD), counters and
generator words uint64 (VEGU), so save -> load -> save reproduces the
same bytes and resumed runs continue bit-exactly. Inference checkpoints
carry no projector and no optimizer state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .alignment import PROJECTOR_NAMES, ProjectorParams
from .config import EncoderConfig
from .encoder import EncoderParams, parameter_shapes
from .errors import CheckpointError, DatasetError
from .policy_head import HEAD_NAMES, ActionHeadParams
from .rng import MASK64
from .tensor_io import decode_tensor, encode_tensor

CHECKPOINT_MAGIC = b"VEGC"
CHECKPOINT_VERSION = 1

ENCODER_CONFIG_FIELDS: tuple[str, ...] = (
    "image_size",
    "patch_size",
    "channels",
    "embed_dim",
    "num_blocks",
    "num_heads",
    "mlp_ratio",
    "seed",
)


class CheckpointKind(str, Enum):
    TRAIN = "train"
    INFERENCE = "inference"
    TEACHER = "teacher"


_KIND_CODES = {CheckpointKind.TRAIN: 0, CheckpointKind.INFERENCE: 1, CheckpointKind.TEACHER: 2}
_KIND_BY_CODE = {code: kind for kind, code in _KIND_CODES.items()}


@dataclass
class Checkpoint:
    kind: CheckpointKind
    encoder_config: EncoderConfig
    student: dict[str, np.ndarray]
    frozen: bool = False
    step: int = 0
    head: dict[str, np.ndarray] | None = None
    projector: dict[str, np.ndarray] | None = None
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: tuple[int, ...] | None = None

    def encoder_params(self) -> EncoderParams:
        return EncoderParams.from_state(self.encoder_config, self.student, frozen=self.frozen)

    def head_params(self) -> ActionHeadParams:
        if self.head is None:
            raise CheckpointError(f"{self.kind.value} checkpoint has no action head")
        return ActionHeadParams.from_state(self.head)

    def projector_params(self) -> ProjectorParams | None:
        if self.projector is None:
            return None
        return ProjectorParams.from_state(self.encoder_config.embed_dim, self.projector)


# ─── Encoding ─────────────────────────────────────────────


def _section(name: str, payload: bytes) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload


def _sections(ckpt: Checkpoint) -> list[tuple[str, bytes]]:
    if ckpt.kind is CheckpointKind.INFERENCE and (ckpt.projector is not None or ckpt.optimizer):
        raise CheckpointError("inference checkpoints carry no projector or optimizer state")
    cfg = ckpt.encoder_config
    meta = np.array([ckpt.step, int(ckpt.frozen), _KIND_CODES[ckpt.kind]], dtype=np.uint64)
    config_words = np.array(
        [getattr(cfg, name) & MASK64 for name in ENCODER_CONFIG_FIELDS], dtype=np.uint64
    )
    out = [
        ("meta", encode_tensor(meta, "u64")),
        ("encoder_config", encode_tensor(config_words, "u64")),
    ]
    for name in parameter_shapes(cfg):
        out.append((f"student.{name}", encode_tensor(ckpt.student[name], "f64")))
    if ckpt.head is not None:
        for name in HEAD_NAMES:
            out.append((f"head.{name}", encode_tensor(ckpt.head[name], "f64")))
    if ckpt.projector is not None:
        for name in PROJECTOR_NAMES:
            out.append((f"projector.{name}", encode_tensor(ckpt.projector[name], "f64")))
    for key, value in ckpt.optimizer.items():
        kind = "u64" if key == "t" else "f64"
        out.append((f"optim.{key}", encode_tensor(value, kind)))
    if ckpt.rng_state is not None:
        out.append(("rng", encode_tensor(np.array(ckpt.rng_state, dtype=np.uint64), "u64")))
    return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    sections = _sections(ckpt)
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(sections))
    return header + b"".join(_section(name, payload) for name, payload in sections)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_checkpoint(ckpt))


# ─── Decoding ─────────────────────────────────────────────


def _read_sections(data: bytes, source: str) -> list[tuple[str, np.ndarray]]:
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{source}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    offset = 12
    sections = []
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", data, offset)
            name = data[offset + 4 : offset + 4 + name_len].decode("utf-8")
            offset += 4 + name_len
            (size,) = struct.unpack_from("<Q", data, offset)
            offset += 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{source}: truncated section header") from exc
        payload = data[offset : offset + size]
        if len(payload) != size:
            raise CheckpointError(f"{source}: section {name!r} truncated")
        offset += size
        try:
            sections.append((name, decode_tensor(payload, f"{source}:{name}")))
        except DatasetError as exc:
            raise CheckpointError(str(exc)) from exc
    if offset != len(data):
        raise CheckpointError(f"{source}: {len(data) - offset} trailing bytes after last section")
    return sections


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    sections = dict(_read_sections(data, source))
    for required in ("meta", "encoder_config"):
        if required not in sections:
            raise CheckpointError(f"{source}: missing {required!r} section")
    step, frozen, kind_code = (int(x) for x in sections["meta"])
    if kind_code not in _KIND_BY_CODE:
        raise CheckpointError(f"{source}: unknown checkpoint kind code {kind_code}")
    words = [int(x) for x in sections["encoder_config"]]
    try:
        cfg = EncoderConfig(**dict(zip(ENCODER_CONFIG_FIELDS, words)))
    except ValueError as exc:
        raise CheckpointError(f"{source}: invalid encoder config ({exc})") from exc

    def group(prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in sections.items() if k.startswith(prefix)}

    student = group("student.")
    missing = [n for n in parameter_shapes(cfg) if n not in student]
    if missing:
        raise CheckpointError(f"{source}: student parameters missing: {missing[:3]}")
    head = group("head.") or None
    projector = group("projector.") or None
    optimizer = group("optim.")
    rng = tuple(int(x) for x in sections["rng"]) if "rng" in sections else None
    return Checkpoint(
        kind=_KIND_BY_CODE[kind_code],
        encoder_config=cfg,
        student=student,
        frozen=bool(frozen),
        step=step,
        head=head,
        projector=projector,
        optimizer=optimizer,
        rng_state=rng,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint missing")
    return decode_checkpoint(path.read_bytes(), str(path))
