"""Student network: per-modality projections, self/cross attention, MMIL pooling.

Segment features of each modality are projected to a shared width, refined
by multi-head self-attention over their own segments plus cross-attention
over the other modality (residual form, no positional encoding, no dropout
or normalization so gradient checks stay exact), then turned into per
segment class probabilities and an attention-pooled video-level prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor

ATTENTION_BLOCKS = ("self_audio", "self_visual", "cross_audio", "cross_visual")


class CheckpointError(ValueError):
    """Checkpoint file is malformed or incompatible."""


@dataclass(frozen=True)
class ModelConfig:
    T: int
    C: int
    d_a: int
    d_v: int
    d_model: int = 64
    n_heads: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.T, self.C, self.d_a, self.d_v, self.d_model, self.n_heads) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")


class ModelParams:
    """Ordered name -> Tensor map for all trainable weights.

    The listing order is fixed by construction, so the parameter set
    flattens to one well-defined vector (needed by the EMA update and the
    checkpoint format).
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self._tensors = dict(tensors)

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return list(self._tensors.values())

    def spec(self):
        return [(name, t.data.shape) for name, t in self._tensors.items()]

    def n_elements(self):
        return int(np.sum([t.data.size for t in self._tensors.values()]))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._tensors.values()])

    def assign_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_elements():
            raise ValueError(f"flat vector has {vec.size} elements, expected {self.n_elements()}")
        offset = 0
        for t in self._tensors.values():
            n = t.data.size
            t.data = vec[offset:offset + n].reshape(t.data.shape).copy()
            offset += n

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: Tensor(t.data.copy()) for n, t in self._tensors.items()})

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None


@dataclass
class ForwardOutput:
    refined_audio: Tensor   # (T, d_model)
    refined_visual: Tensor  # (T, d_model)
    p_audio: Tensor         # (T, C) segment probabilities
    p_visual: Tensor        # (T, C)
    p_video: Tensor         # (C,) video-level probabilities
    tape: tn.Tape | None


def init_params(config: ModelConfig) -> ModelParams:
    """Scaled uniform init, +-1/sqrt(fan_in), reproducible from config.seed."""
    rng = np.random.default_rng(config.seed)
    d = config.d_model
    t: dict[str, Tensor] = {}

    def linear(name, fan_in, fan_out, bias=True):
        bound = 1.0 / math.sqrt(fan_in)
        t[name + ".W"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        if bias:
            t[name + ".b"] = Tensor(rng.uniform(-bound, bound, size=(fan_out,)))

    linear("proj_audio", config.d_a, d)
    linear("proj_visual", config.d_v, d)
    for blk in ATTENTION_BLOCKS:
        linear(blk + ".q", d, d, bias=False)
        linear(blk + ".k", d, d, bias=False)
        linear(blk + ".v", d, d, bias=False)
        linear(blk + ".out", d, d)
    linear("cls_audio", d, config.C)
    linear("cls_visual", d, config.C)
    linear("seg_att", d, config.C)
    linear("mod_att", d, config.C)
    return ModelParams(config, t)


def _attention(params, block, query, keyval):
    """Multi-head scaled dot-product attention; query attends over keyval rows."""
    cfg = params.config
    n_heads = cfg.n_heads
    dh = cfg.d_model // n_heads
    scale = 1.0 / math.sqrt(dh)
    q = query @ params[block + ".q.W"]
    k = keyval @ params[block + ".k.W"]
    v = keyval @ params[block + ".v.W"]
    heads = []
    for h in range(n_heads):
        qh = tn.narrow(q, 1, h * dh, dh)
        kh = tn.narrow(k, 1, h * dh, dh)
        vh = tn.narrow(v, 1, h * dh, dh)
        att = tn.softmax((qh @ tn.transpose(kh)) * scale, axis=1)
        heads.append(att @ vh)
    mixed = tn.concatenate(heads, axis=1)
    return mixed @ params[block + ".out.W"] + params[block + ".out.b"]


def _check_features(config, audio_features, visual_features):
    audio_features = np.asarray(audio_features, dtype=np.float64)
    visual_features = np.asarray(visual_features, dtype=np.float64)
    if audio_features.shape != (config.T, config.d_a):
        raise ValueError(
            f"audio features have shape {audio_features.shape}, expected {(config.T, config.d_a)}")
    if visual_features.shape != (config.T, config.d_v):
        raise ValueError(
            f"visual features have shape {visual_features.shape}, expected {(config.T, config.d_v)}")
    if not (np.isfinite(audio_features).all() and np.isfinite(visual_features).all()):
        raise ValueError("input features contain non-finite values")
    return audio_features, visual_features


def han_forward(params: ModelParams, audio_features, visual_features):
    """Refine segment features: projection + self-attention + cross-attention.

    Returns (refined_audio, refined_visual), each (T, d_model).
    """
    audio_features, visual_features = _check_features(params.config, audio_features, visual_features)
    xa, xv = Tensor(audio_features), Tensor(visual_features)
    ha = xa @ params["proj_audio.W"] + params["proj_audio.b"]
    hv = xv @ params["proj_visual.W"] + params["proj_visual.b"]
    sa = ha + _attention(params, "self_audio", ha, ha)
    sv = hv + _attention(params, "self_visual", hv, hv)
    ea = sa + _attention(params, "cross_audio", sa, sv)
    ev = sv + _attention(params, "cross_visual", sv, sa)
    return ea, ev


def mmil_pool(refined_audio, refined_visual, params: ModelParams):
    """Segment probabilities plus attention-pooled video-level probabilities.

    Per class, softmax attention over segments weights each modality's
    segment probabilities; a second per-class softmax over the two
    modalities mixes the pooled values. The result is a convex combination
    of the segment probabilities, so p_video stays inside their range.
    """
    C = params.config.C
    p_audio = tn.sigmoid(refined_audio @ params["cls_audio.W"] + params["cls_audio.b"])
    p_visual = tn.sigmoid(refined_visual @ params["cls_visual.W"] + params["cls_visual.b"])

    att_audio = tn.softmax(refined_audio @ params["seg_att.W"] + params["seg_att.b"], axis=0)
    att_visual = tn.softmax(refined_visual @ params["seg_att.W"] + params["seg_att.b"], axis=0)
    pooled_audio = tn.sum(att_audio * p_audio, axis=0)
    pooled_visual = tn.sum(att_visual * p_visual, axis=0)

    gate_audio = tn.mean(refined_audio @ params["mod_att.W"] + params["mod_att.b"], axis=0)
    gate_visual = tn.mean(refined_visual @ params["mod_att.W"] + params["mod_att.b"], axis=0)
    modality = tn.softmax(tn.stack([gate_audio, gate_visual], axis=0), axis=0)  # (2, C)
    beta_audio = tn.reshape(tn.narrow(modality, 0, 0, 1), (C,))
    beta_visual = tn.reshape(tn.narrow(modality, 0, 1, 1), (C,))

    p_video = beta_audio * pooled_audio + beta_visual * pooled_visual
    return p_audio, p_visual, p_video


def forward(params: ModelParams, audio_features, visual_features) -> ForwardOutput:
    ea, ev = han_forward(params, audio_features, visual_features)
    p_audio, p_visual, p_video = mmil_pool(ea, ev, params)
    return ForwardOutput(ea, ev, p_audio, p_visual, p_video, tape=tn._tape())


def fuse_probs(p_x, p_y):
    """Elementwise arithmetic mean of two probability grids."""
    p_x, p_y = tn.as_tensor(p_x), tn.as_tensor(p_y)
    if p_x.data.shape != p_y.data.shape:
        raise tn.ShapeError(
            f"fuse_probs: shapes {p_x.data.shape} and {p_y.data.shape} differ")
    return (p_x + p_y) * 0.5


# ---------------------------------------------------------------------------
# checkpoint format: text header + raw little-endian float64 vectors

CHECKPOINT_MAGIC = "AVPARSE-CKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, student: ModelParams, teacher: ModelParams):
    if student.spec() != teacher.spec():
        raise CheckpointError("student and teacher parameter layouts differ")
    cfg = student.config
    lines = [
        f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}",
        (f"config T={cfg.T} C={cfg.C} d_a={cfg.d_a} d_v={cfg.d_v} "
         f"d_model={cfg.d_model} n_heads={cfg.n_heads} seed={cfg.seed}"),
        f"groups {len(student.names())}",
    ]
    for name, shape in student.spec():
        dims = "x".join(str(s) for s in shape)
        count = int(np.prod(shape))
        lines.append(f"{name} {dims} {count}")
    lines.append(f"total {student.n_elements()}")
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(student.flat().astype("<f8").tobytes())
        fh.write(teacher.flat().astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (student ModelParams, teacher ModelParams)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head, sep, rest = blob.partition(b"\n\n")
    if not sep:
        raise CheckpointError("checkpoint is truncated: header terminator missing")
    lines = head.decode("ascii", errors="replace").splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    if lines[0] != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
        raise CheckpointError(f"unsupported checkpoint version: {lines[0]!r}")
    try:
        cfg_fields = dict(kv.split("=") for kv in lines[1].split()[1:])
        config = ModelConfig(**{k: int(v) for k, v in cfg_fields.items()})
        n_groups = int(lines[2].split()[1])
        names = lines[3:3 + n_groups]
        total = int(lines[3 + n_groups].split()[1])
    except (IndexError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from None
    expected = init_params(config)
    if [ln.split()[0] for ln in names] != expected.names():
        raise CheckpointError("checkpoint parameter groups do not match the config")
    if total != expected.n_elements():
        raise CheckpointError(f"checkpoint declares {total} elements, config implies {expected.n_elements()}")
    need = 2 * total * 8
    if len(rest) != need:
        raise CheckpointError(f"checkpoint payload has {len(rest)} bytes, expected {need}")
    vec = np.frombuffer(rest, dtype="<f8")
    student = init_params(config)
    teacher = init_params(config)
    student.assign_flat(vec[:total])
    teacher.assign_flat(vec[total:])
    return student, teacher
