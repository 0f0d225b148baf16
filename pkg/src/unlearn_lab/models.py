"""Network shapes: feature extractor, linear heads, the MINE statistics network,
and checkpoints that bundle a backbone with its classifier head."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import Layer, MlpCache, ParameterSet, ShapeError, backward_mlp, forward_mlp

ROLES = ("init", "pretrained", "retrained", "unlearned")
_MAGIC = b"ULCKPT1\n"


@dataclass(frozen=True)
class ModelShape:
    in_dim: int = 16
    hidden: int = 64
    z_dim: int = 16
    num_classes: int = 2
    mine_hidden: int = 100


def init_backbone(shape: ModelShape, rng: np.random.Generator) -> ParameterSet:
    return ParameterSet.init_mlp([shape.in_dim, shape.hidden, shape.z_dim], rng, prefix="backbone")


def init_head(shape: ModelShape, rng: np.random.Generator) -> ParameterSet:
    return ParameterSet.init_mlp([shape.z_dim, shape.num_classes], rng, prefix="head")


def init_group_probe(z_dim: int, num_groups: int, rng: np.random.Generator) -> ParameterSet:
    return ParameterSet.init_mlp([z_dim, num_groups], rng, prefix="probe")


def init_mine(z_dim: int, num_groups: int, hidden: int, rng: np.random.Generator) -> ParameterSet:
    return ParameterSet.init_mlp([z_dim + num_groups, hidden, 1], rng, prefix="mine")


@dataclass
class ModelCheckpoint:
    backbone: ParameterSet
    head: ParameterSet
    role: str = "init"
    config_hash: str = ""

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown checkpoint role {self.role!r}")
        if self.backbone.out_dim != self.head.in_dim:
            raise ShapeError("backbone feature dim does not match head input dim")

    @classmethod
    def init(cls, shape: ModelShape, rng: np.random.Generator, config_hash: str = "") -> "ModelCheckpoint":
        return cls(init_backbone(shape, rng), init_head(shape, rng), "init", config_hash)

    @property
    def z_dim(self) -> int:
        return self.backbone.out_dim

    @property
    def num_classes(self) -> int:
        return self.head.out_dim

    def clone(self, role: str | None = None) -> "ModelCheckpoint":
        return ModelCheckpoint(self.backbone.copy(), self.head.copy(), role or self.role, self.config_hash)

    def equals(self, other: "ModelCheckpoint") -> bool:
        return self.backbone.equals(other.backbone) and self.head.equals(other.head)

    def reset_momentum(self) -> None:
        self.backbone.reset_momentum()
        self.head.reset_momentum()

    def parameter_sets(self) -> tuple[ParameterSet, ParameterSet]:
        return self.backbone, self.head

    # -- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        layers = []
        payload = []
        for part, params in (("backbone", self.backbone), ("head", self.head)):
            for layer in params.layers:
                layers.append({"part": part, "name": layer.name, "shape": list(layer.weight.shape)})
                payload.append(layer.weight.astype("<f8").tobytes())
                payload.append(layer.bias.astype("<f8").tobytes())
        header = json.dumps(
            {"role": self.role, "config_hash": self.config_hash, "layers": layers},
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        return _MAGIC + struct.pack("<Q", len(header)) + header + b"".join(payload)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelCheckpoint":
        if not blob.startswith(_MAGIC):
            raise ValueError("not a checkpoint file")
        offset = len(_MAGIC)
        (hlen,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        header = json.loads(blob[offset : offset + hlen])
        offset += hlen
        parts: dict[str, list[Layer]] = {"backbone": [], "head": []}
        for spec in header["layers"]:
            rows, cols = spec["shape"]
            w = np.frombuffer(blob, "<f8", rows * cols, offset).reshape(rows, cols).astype(np.float64)
            offset += 8 * rows * cols
            b = np.frombuffer(blob, "<f8", cols, offset).astype(np.float64)
            offset += 8 * cols
            parts[spec["part"]].append(Layer(spec["name"], w, b))
        if offset != len(blob):
            raise ValueError("trailing bytes in checkpoint")
        return cls(
            ParameterSet(parts["backbone"]), ParameterSet(parts["head"]), header["role"], header["config_hash"]
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())


def checkpoint_clone(ckpt: ModelCheckpoint) -> ModelCheckpoint:
    return ckpt.clone()


def features(backbone: ParameterSet, x: np.ndarray) -> np.ndarray:
    return forward_mlp(backbone, x)[1]


def predict_logits(ckpt: ModelCheckpoint, x: np.ndarray) -> np.ndarray:
    return forward_mlp(ckpt.head, features(ckpt.backbone, x))[1]


@dataclass
class ModelCache:
    backbone: MlpCache
    head: MlpCache
    z: np.ndarray


def forward_model(ckpt: ModelCheckpoint, x: np.ndarray) -> tuple[ModelCache, np.ndarray]:
    bcache, z = forward_mlp(ckpt.backbone, x)
    hcache, logits = forward_mlp(ckpt.head, z)
    return ModelCache(bcache, hcache, z), logits


def backward_model(
    ckpt: ModelCheckpoint,
    cache: ModelCache,
    grad_logits: np.ndarray | None,
    grad_z: np.ndarray | None = None,
) -> tuple[ParameterSet, ParameterSet]:
    """Gradients for (backbone, head); ``grad_z`` adds a direct feature-space gradient."""
    if grad_logits is None:
        head_grads = ckpt.head.zeros_like()
        dz = np.zeros_like(cache.z)
    else:
        head_grads, dz = backward_mlp(ckpt.head, cache.head, grad_logits)
    if grad_z is not None:
        dz = dz + grad_z
    backbone_grads, _ = backward_mlp(ckpt.backbone, cache.backbone, dz)
    return backbone_grads, head_grads


def one_hot(g: np.ndarray, num_groups: int) -> np.ndarray:
    g = np.asarray(g)
    if g.size and (g.min() < 0 or g.max() >= num_groups):
        raise IndexError(f"group index outside [0, {num_groups})")
    out = np.zeros((g.shape[0], num_groups))
    out[np.arange(g.shape[0]), g] = 1.0
    return out


def mine_input(z: np.ndarray, g: np.ndarray, num_groups: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != len(g):
        raise ShapeError(f"{z.shape[0]} feature rows vs {len(g)} group labels")
    return np.concatenate([z, one_hot(g, num_groups)], axis=1)


def t_statistic(psi: ParameterSet, z: np.ndarray, g: np.ndarray, num_groups: int) -> np.ndarray:
    """Score each ``(z_i, g_i)`` pair with the statistics network (one value per row)."""
    return forward_mlp(psi, mine_input(z, g, num_groups))[1][:, 0]


def config_hash(obj) -> str:
    """Short stable hash of any JSON-serializable configuration."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]
