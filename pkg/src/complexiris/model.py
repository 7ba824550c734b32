"""ComplexIrisNet: Gabor block, densely connected complex blocks and
spectral-pooling transition blocks, plus checkpoint I/O."""
from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from . import layers as L
from .autograd import Node, Parameter
from .ctensor import ComplexTensor, resolve_dtype


@dataclass
class ModelConfig:
    gabor_size: int = 7
    gabor_filters: int = 16
    gabor_trainable: bool = True
    dense_layers: tuple = (3, 3)
    growth_rate: int = 8
    bottleneck_factor: int = 4
    transitions: tuple = (12, 8)
    input_h: int = 64
    input_w: int = 256
    precision: int = 32
    real_valued: bool = False
    backbone: str = "dense"
    pool_jitter: float = 0.0

    def __post_init__(self):
        self.dense_layers = tuple(int(v) for v in self.dense_layers)
        self.transitions = tuple(int(v) for v in self.transitions)
        self.validate()

    def validate(self):
        if len(self.dense_layers) < 1:
            raise ValueError("at least one dense block is required")
        if len(self.transitions) != len(self.dense_layers):
            raise ValueError("every dense block needs a transition block")
        if any(n < 1 for n in self.dense_layers) or self.growth_rate < 1:
            raise ValueError("dense blocks need positive layer counts and growth rate")
        if any(c < 1 for c in self.transitions) or self.gabor_filters < 1:
            raise ValueError("channel counts must be positive")
        factor = 2 ** len(self.transitions)
        if self.input_h % factor or self.input_w % factor:
            raise ValueError(f"input {self.input_h}x{self.input_w} is not divisible by {factor}")
        if self.gabor_size % 2 == 0:
            raise ValueError("Gabor kernel size must be odd")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")

    @property
    def output_shape(self):
        f = 2 ** len(self.transitions)
        return self.input_h // f, self.input_w // f, self.transitions[-1]

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in kinds:
                raise ValueError(f"unknown model config key {key!r}")
            kw[key] = _parse_value(kinds[key], val.strip())
        return cls(**kw)


def _parse_value(kind, val):
    if kind in ("bool", bool):
        return val.lower() in ("1", "true", "yes")
    if kind in ("int", int):
        return int(val)
    if kind in ("float", float):
        return float(val)
    if kind in ("tuple", tuple):
        return tuple(int(v) for v in val.split(",") if v)
    return val


def tiny_preset(**kw) -> ModelConfig:
    return ModelConfig(**kw)


def paper_preset(**kw) -> ModelConfig:
    base = dict(gabor_filters=64, dense_layers=(6, 6, 6), growth_rate=12,
                transitions=(68, 70, 20))
    base.update(kw)
    return ModelConfig(**base)


PRESETS = {"tiny": tiny_preset, "paper": paper_preset,
           "paper2": lambda **kw: paper_preset(dense_layers=(6, 6), transitions=(68, 20), **kw)}


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

def _init_weight(rng, kh, kw, cin, cout, dtype, real):
    a = math.sqrt(3.0 / (kh * kw * cin * 2))
    re = rng.uniform(-a, a, size=(kh, kw, cin, cout))
    im = np.zeros_like(re) if real else rng.uniform(-a, a, size=(kh, kw, cin, cout))
    return ComplexTensor(re, im, dtype=dtype)


class Block:
    def named_parameters(self, prefix=""):
        return []

    def named_buffers(self, prefix=""):
        return []


class GaborBlock(Block):
    def __init__(self, cfg: ModelConfig, dtype):
        bank = L.gabor_bank(cfg.gabor_size, cfg.gabor_size, cfg.gabor_filters, dtype=dtype)
        if cfg.real_valued:
            bank = ComplexTensor(bank.re, np.zeros_like(bank.im))
        self.weight = Parameter(bank, name="gabor.weight", real_only=cfg.real_valued,
                                trainable=cfg.gabor_trainable)
        self.pad = cfg.gabor_size // 2
        self.out_channels = cfg.gabor_filters

    def __call__(self, x, train):
        return L.conv2d(x, self.weight, padding=self.pad)

    def named_parameters(self, prefix=""):
        return [("gabor.weight", self.weight)]


class _BN:
    def __init__(self, channels, dtype, real):
        self.state = L.BNState(channels, dtype=dtype, real_only=real)

    def __call__(self, x, train):
        return L.batchnorm(x, self.state, train)

    def named_parameters(self, prefix):
        st = self.state
        return [(f"{prefix}.gamma_diag", st.gamma_diag), (f"{prefix}.gamma_off", st.gamma_off),
                (f"{prefix}.beta", st.beta)]

    def named_buffers(self, prefix):
        return [(f"{prefix}.{k}", k) for k in self.state.buffers()]


class CompositeLayer(Block):
    """BN - zReLU - CONV(1x1) - BN - zReLU - CONV(3x3)."""

    def __init__(self, cin, growth, bottleneck, rng, dtype, real):
        mid = bottleneck * growth
        self.bn1 = _BN(cin, dtype, real)
        self.w1 = Parameter(_init_weight(rng, 1, 1, cin, mid, dtype, real), real_only=real)
        self.bn2 = _BN(mid, dtype, real)
        self.w2 = Parameter(_init_weight(rng, 3, 3, mid, growth, dtype, real), real_only=real)
        self.in_channels = cin

    def __call__(self, x, train):
        h = L.zrelu_node(self.bn1(x, train))
        h = L.conv2d(h, self.w1)
        h = L.zrelu_node(self.bn2(h, train))
        return L.conv2d(h, self.w2, padding=1)

    def named_parameters(self, prefix=""):
        return (self.bn1.named_parameters(f"{prefix}.bn1") + [(f"{prefix}.conv1", self.w1)]
                + self.bn2.named_parameters(f"{prefix}.bn2") + [(f"{prefix}.conv2", self.w2)])

    def named_buffers(self, prefix=""):
        return self.bn1.named_buffers(f"{prefix}.bn1") + self.bn2.named_buffers(f"{prefix}.bn2")


class DenseBlock(Block):
    def __init__(self, cin, n_layers, growth, bottleneck, rng, dtype, real):
        self.layers = [CompositeLayer(cin + i * growth, growth, bottleneck, rng, dtype, real)
                       for i in range(n_layers)]
        self.out_channels = cin + n_layers * growth

    def __call__(self, x, train):
        feats = [x]
        for layer in self.layers:
            inp = feats[0] if len(feats) == 1 else ag.concat(feats, axis=-1)
            feats.append(layer(inp, train))
        return ag.concat(feats, axis=-1)

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.named_parameters(f"{prefix}.layer{i}")
        return out

    def named_buffers(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.named_buffers(f"{prefix}.layer{i}")
        return out


class TransitionBlock(Block):
    """BN - CONV(1x1) - zReLU - spectral pooling to half size."""

    def __init__(self, cin, cout, rng, dtype, real, jitter=0.0):
        self.bn = _BN(cin, dtype, real)
        self.w = Parameter(_init_weight(rng, 1, 1, cin, cout, dtype, real), real_only=real)
        self.real = real
        self.jitter = jitter
        self.out_channels = cout
        self.rng = np.random.default_rng(0)

    def __call__(self, x, train):
        h = L.conv2d(self.bn(x, train), self.w)
        h = L.zrelu_node(h)
        oh, ow = h.shape[1] // 2, h.shape[2] // 2
        jitter = self.jitter if train else 0.0
        h = L.spectral_pool_node(h, oh, ow, rng=self.rng, jitter_p=jitter)
        if self.real:
            h = ag.real_part(h)
        return h

    def named_parameters(self, prefix=""):
        return self.bn.named_parameters(f"{prefix}.bn") + [(f"{prefix}.conv", self.w)]

    def named_buffers(self, prefix=""):
        return self.bn.named_buffers(f"{prefix}.bn")


def dense_backbone(cfg: ModelConfig, cin, rng, dtype):
    blocks = []
    for i, (n, cout) in enumerate(zip(cfg.dense_layers, cfg.transitions)):
        dense = DenseBlock(cin, n, cfg.growth_rate, cfg.bottleneck_factor, rng, dtype,
                           cfg.real_valued)
        trans = TransitionBlock(dense.out_channels, cout, rng, dtype, cfg.real_valued,
                                cfg.pool_jitter)
        blocks += [(f"dense{i}", dense), (f"transition{i}", trans)]
        cin = cout
    return blocks


# other complex backbones register here
BACKBONES = {"dense": dense_backbone}


class Model:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.config = cfg
        self.dtype = resolve_dtype(cfg.precision)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.gabor = GaborBlock(cfg, self.dtype)
        self.blocks = BACKBONES[cfg.backbone](cfg, self.gabor.out_channels, rng, self.dtype)
        # parameter objects get their checkpoint names
        for name, p in self.named_parameters():
            p.name = name

    # parameters -----------------------------------------------------------
    def named_parameters(self):
        out = list(self.gabor.named_parameters())
        for name, blk in self.blocks:
            out += blk.named_parameters(name)
        return out

    def parameters(self, trainable_only=False):
        ps = [p for _, p in self.named_parameters()]
        return [p for p in ps if p.trainable] if trainable_only else ps

    def _bn_states(self):
        states = []

        def visit(prefix, obj):
            for attr, val in vars(obj).items():
                if isinstance(val, _BN):
                    states.append((f"{prefix}.{attr}", val.state))
                elif isinstance(val, list):
                    for i, item in enumerate(val):
                        if isinstance(item, Block):
                            visit(f"{prefix}.layer{i}", item)

        for name, blk in self.blocks:
            visit(name, blk)
        return states

    def state_dict(self) -> dict:
        sd = {name: p.value for name, p in self.named_parameters()}
        for prefix, st in self._bn_states():
            for k, v in st.buffers().items():
                sd[f"{prefix}.{k}"] = v
        return sd

    def load_state_dict(self, sd: dict):
        params = dict(self.named_parameters())
        buffers = {}
        for prefix, st in self._bn_states():
            for k in st.buffers():
                buffers[f"{prefix}.{k}"] = (st, k)
        expected = set(params) | set(buffers)
        missing = expected - set(sd)
        extra = set(sd) - expected
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)[:3]}, "
                             f"unexpected {sorted(extra)[:3]}")
        for name, val in sd.items():
            if name in params:
                p = params[name]
                if val.shape != p.value.shape:
                    raise ValueError(f"shape mismatch for {name}: {val.shape} vs {p.value.shape}")
                p.value = val
            else:
                st, k = buffers[name]
                setattr(st, k, val)

    def num_parameters(self) -> int:
        """Real-valued parameter count (each complex weight counts twice)."""
        total = 0
        for p in self.parameters():
            total += p.value.size * (1 if p.real_only else 2)
        return total

    # forward --------------------------------------------------------------
    def _lift(self, batch):
        if isinstance(batch, Node):
            return batch
        if isinstance(batch, ComplexTensor):
            v = batch
        else:
            arr = np.asarray(batch)
            if arr.ndim == 3:
                arr = arr[..., None]
            v = ComplexTensor(arr, np.zeros_like(arr, dtype=self.dtype), dtype=self.dtype)
        if v.ndim == 3:
            v = v.reshape(v.shape + (1,))
        cfg = self.config
        if v.shape[1:] != (cfg.input_h, cfg.input_w, 1):
            raise ValueError(f"expected N x {cfg.input_h} x {cfg.input_w} x 1 input, got {v.shape}")
        return ag.constant(v.astype(self.dtype))

    def forward_node(self, batch, train: bool = False, until: str | None = None) -> Node:
        h = self.gabor(self._lift(batch), train)
        if until == "gabor":
            return h
        for name, blk in self.blocks:
            h = blk(h, train)
            if name == until:
                return h
        return h

    def forward(self, batch, train: bool = False) -> ComplexTensor:
        return self.forward_node(batch, train).value

    def trace(self, batch, train: bool = False) -> dict:
        outs = {}
        h = self.gabor(self._lift(batch), train)
        outs["gabor"] = h.value
        for name, blk in self.blocks:
            h = blk(h, train)
            outs[name] = h.value
        return outs

    def features(self, batch, chunk: int = 16) -> ComplexTensor:
        """Eval-mode features in chunks, detached from any graph."""
        frozen = [(p, p.requires_grad) for p in self.parameters()]
        for p, _ in frozen:
            p.requires_grad = False
        try:
            arr = np.asarray(batch)
            parts = [self.forward(arr[i:i + chunk], train=False) for i in range(0, len(arr), chunk)]
        finally:
            for p, flag in frozen:
                p.requires_grad = flag
        return ComplexTensor(np.concatenate([q.re for q in parts]),
                             np.concatenate([q.im for q in parts]))


def build(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"CIRN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _record_bytes(name: str, t: ComplexTensor) -> bytes:
    prec = 32 if t.dtype == np.float32 else 64
    dt = "<f4" if prec == 32 else "<f8"
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", prec, t.ndim)
    head += struct.pack(f"<{t.ndim}I", *t.shape)
    return head + t.re.astype(dt).tobytes() + t.im.astype(dt).tobytes()


def checkpoint_bytes(model: Model) -> bytes:
    cfg = model.config.to_text().encode("utf-8")
    sd = model.state_dict()
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
           struct.pack("<I", len(sd))]
    for name, t in sd.items():
        out.append(_record_bytes(name, t))
    return b"".join(out)


def save(model: Model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes):
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (clen,) = r.unpack("<I")
    cfg = ModelConfig.from_text(r.take(clen).decode("utf-8"))
    (count,) = r.unpack("<I")
    records = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        prec, ndim = r.unpack("<BB")
        if prec not in (32, 64):
            raise CheckpointError(f"bad precision {prec} in record {name!r}")
        dims = r.unpack(f"<{ndim}I")
        itemsize = prec // 8
        size = 1
        for d in dims:
            size *= d
        if 2 * size * itemsize > len(data) - r.pos:
            raise CheckpointError(f"dimension overflow in record {name!r}")
        dt = "<f4" if prec == 32 else "<f8"
        re = np.frombuffer(r.take(size * itemsize), dt).reshape(dims)
        im = np.frombuffer(r.take(size * itemsize), dt).reshape(dims)
        native = np.float32 if prec == 32 else np.float64
        records[name] = ComplexTensor(re.astype(native), im.astype(native))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last record")
    return cfg, records


def load(path) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    cfg, records = parse_checkpoint(data)
    model = Model(cfg)
    model.load_state_dict(records)
    return model
