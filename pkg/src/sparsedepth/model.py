"""U-Net style encoder/decoder with removable intermediate prediction heads.

The encoder has five stride-2 stages. The decoder mirrors it with five x2
upsampling stages; each decoder stage adds a skip from the matching encoder
resolution (the last one from the input image) after a 1x1 channel-matching
convolution. Heads are 1x1 convolutions to one channel followed by bilinear
upsampling to input size and never feed back into the trunk.
"""
import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .arrays import read_array, write_array
from .exceptions import FormatError

logger = logging.getLogger(__name__)

ENCODER_KINDS = ("toy", "inverted_residual")
DECODER_KINDS = ("fbnet_like", "nnconv5_like")
CHECKPOINT_VERSION = 1
N_STAGES = 5
# inverted-residual expansion and pointwise group count of fbnet_like blocks
EXPANSION = 2
FBNET_GROUPS = 4


@dataclass
class ModelConfig:
    encoder_kind: str = "inverted_residual"
    encoder_widths: List[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    decoder_kind: str = "fbnet_like"
    x112_variant: bool = True
    head_positions: List[int] = field(default_factory=lambda: [2, 3])
    input_size: Tuple[int, int] = (64, 64)

    def __post_init__(self):
        self.encoder_widths = [int(w) for w in self.encoder_widths]
        self.head_positions = sorted(int(p) for p in self.head_positions)
        self.input_size = tuple(int(s) for s in self.input_size)
        self.x112_variant = bool(self.x112_variant)

    def validate(self):
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.decoder_kind not in DECODER_KINDS:
            raise ValueError(f"decoder_kind must be one of {DECODER_KINDS}")
        if len(self.encoder_widths) != N_STAGES or min(self.encoder_widths) < 1:
            raise ValueError(f"encoder_widths must list {N_STAGES} positive integers")
        if self.decoder_kind == "fbnet_like" and any(w % FBNET_GROUPS for w in self.encoder_widths):
            raise ValueError(f"fbnet_like decoder needs widths divisible by {FBNET_GROUPS}")
        if len(set(self.head_positions)) != len(self.head_positions):
            raise ValueError("duplicate head positions")
        if any(p < 1 or p >= N_STAGES for p in self.head_positions):
            raise ValueError(f"head positions must be decoder stages 1..{N_STAGES - 1}")
        h, w = self.input_size
        if h % 32 or w % 32 or h <= 0 or w <= 0:
            raise ValueError(f"input size {self.input_size} is not divisible by 32")

    def to_dict(self):
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


@dataclass
class ModelOutputs:
    final: torch.Tensor
    intermediates: List[torch.Tensor]
    penultimate_features: torch.Tensor

    @property
    def predictions(self):
        """Final prediction followed by the intermediates."""
        return [self.final] + list(self.intermediates)


def _conv(cin, cout, k=1, stride=1, groups=1):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, groups=groups)


class ToyStage(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = _conv(cin, cout, 3, stride=2)

    def forward(self, x):
        return F.relu6(self.conv(x))


class InvertedResidual(nn.Module):
    def __init__(self, cin, cout, stride, expansion=EXPANSION):
        super().__init__()
        hidden = cin * expansion
        self.expand = _conv(cin, hidden)
        self.depthwise = _conv(hidden, hidden, 3, stride=stride, groups=hidden)
        self.project = _conv(hidden, cout)
        self.residual = stride == 1 and cin == cout

    def forward(self, x):
        y = self.project(F.relu6(self.depthwise(F.relu6(self.expand(x)))))
        return x + y if self.residual else y


class IRStage(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.down = InvertedResidual(cin, cout, stride=2)
        self.refine = InvertedResidual(cout, cout, stride=1)

    def forward(self, x):
        return self.refine(self.down(x))


def _channel_shuffle(x, groups):
    b, c, h, w = x.shape
    return x.view(b, groups, c // groups, h, w).transpose(1, 2).reshape(b, c, h, w)


class FBNetBlock(nn.Module):
    """Upsample, grouped pointwise expand, depthwise 3x3, grouped pointwise project."""

    def __init__(self, cin, cout):
        super().__init__()
        hidden = cout * EXPANSION
        self.expand = _conv(cin, hidden, groups=FBNET_GROUPS)
        self.depthwise = _conv(hidden, hidden, 3, groups=hidden)
        self.project = _conv(hidden, cout, groups=FBNET_GROUPS)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu6(self.expand(x))
        x = _channel_shuffle(x, FBNET_GROUPS)
        x = F.relu6(self.depthwise(x))
        return self.project(x)


class NNConv5Block(nn.Module):
    """Depthwise 5x5, pointwise, then nearest-neighbour x2 upsampling."""

    def __init__(self, cin, cout):
        super().__init__()
        self.depthwise = _conv(cin, cin, 5, groups=cin)
        self.pointwise = _conv(cin, cout)

    def forward(self, x):
        x = F.relu(self.depthwise(x))
        x = F.relu(self.pointwise(x))
        return F.interpolate(x, scale_factor=2, mode="nearest")


class Upsample2x(nn.Module):
    def forward(self, x):
        return F.interpolate(x, scale_factor=2, mode="nearest")


class DepthNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w = cfg.encoder_widths
        stage_cls = ToyStage if cfg.encoder_kind == "toy" else IRStage
        ins = [3] + w[:-1]
        self.encoder = nn.ModuleList(stage_cls(ci, co) for ci, co in zip(ins, w))

        # decoder stage k (1-based) upsamples to the resolution of encoder stage
        # N_STAGES - k, or to the input for k = N_STAGES
        dec_out = [w[3], w[2], w[1], w[0], w[0]]
        dec_in = [w[4]] + dec_out[:-1]
        block_cls = FBNetBlock if cfg.decoder_kind == "fbnet_like" else NNConv5Block
        blocks = [block_cls(ci, co) for ci, co in zip(dec_in, dec_out)]
        if cfg.x112_variant:
            blocks[-1] = Upsample2x()
            dec_out[-1] = dec_in[-1]
        self.decoder = nn.ModuleList(blocks)
        skip_in = [w[3], w[2], w[1], w[0], 3]
        self.skips = nn.ModuleList(_conv(ci, co) for ci, co in zip(skip_in, dec_out))
        self.head = _conv(dec_out[-1], 1)
        self.aux_heads = nn.ModuleDict(
            {str(p): _conv(dec_out[p - 1], 1) for p in cfg.head_positions}
        )
        self.feature_channels = dec_out[-1]

    @property
    def stripped(self):
        return len(self.aux_heads) == 0

    def forward(self, x, with_heads=True):
        size = x.shape[-2:]
        feats = []
        h = x
        for stage in self.encoder:
            h = stage(h)
            feats.append(h)
        skip_src = [feats[3], feats[2], feats[1], feats[0], x]
        intermediates = []
        for k, (block, skip, src) in enumerate(zip(self.decoder, self.skips, skip_src), 1):
            h = block(h) + skip(src)
            key = str(k)
            if with_heads and key in self.aux_heads:
                y = self.aux_heads[key](h)
                y = F.interpolate(y, size=size, mode="bilinear", align_corners=False)
                intermediates.append(y[:, 0])
        final = self.head(h)[:, 0]
        return ModelOutputs(final=final, intermediates=intermediates, penultimate_features=h)


HEAD_INIT_STD = 0.01


def _init_weights(model):
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            nn.init.zeros_(m.bias)
    # small heads start near zero output; ordering sign stays random
    for head in [model.head, *model.aux_heads.values()]:
        nn.init.normal_(head.weight, 0.0, HEAD_INIT_STD)


def build_model(cfg: ModelConfig, seed=0):
    """Build a :class:`DepthNet` whose parameters depend only on ``(cfg, seed)``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DepthNet(cfg)
        _init_weights(model)
    return model


def _as_batch(image, cfg, device=None):
    x = torch.as_tensor(np.asarray(image) if not torch.is_tensor(image) else image)
    x = x.to(torch.float32)
    single = x.dim() == 3
    if single:
        x = x[None]
    if x.dim() != 4 or x.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) or (B, H, W, 3) images, got {tuple(x.shape)}")
    if tuple(x.shape[1:3]) != tuple(cfg.input_size):
        raise ValueError(f"image size {tuple(x.shape[1:3])} does not match model input {cfg.input_size}")
    x = x.permute(0, 3, 1, 2).contiguous()
    return (x.to(device) if device is not None else x), single


def forward(model: DepthNet, image, training=False):
    """Run the network on channels-last image(s).

    With ``training=False`` no intermediate heads are evaluated and gradients
    are not tracked; single images return unbatched ``(H, W)`` maps.
    """
    x, single = _as_batch(image, model.cfg)
    if training:
        out = model(x, with_heads=True)
    else:
        with torch.no_grad():
            out = model(x, with_heads=False)
    if single:
        out = ModelOutputs(
            final=out.final[0],
            intermediates=[t[0] for t in out.intermediates],
            penultimate_features=out.penultimate_features[0],
        )
    return out


def predict(model: DepthNet, images, batch_size=32):
    """Closeness maps for a stack of images, ``(N, H, W)`` numpy array."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        return forward(model, images).final.numpy()
    chunks = [
        forward(model, images[i:i + batch_size]).final.numpy()
        for i in range(0, len(images), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def strip_heads(model: DepthNet):
    """Copy of ``model`` with intermediate heads removed; idempotent."""
    stripped = copy.deepcopy(model)
    stripped.aux_heads = nn.ModuleDict()
    stripped.cfg = copy.deepcopy(model.cfg)
    stripped.cfg.head_positions = []
    return stripped


def count_params(model: nn.Module):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_vector(model: nn.Module):
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: DepthNet, path):
    """Write ``model.json`` plus one SDT1 array per tensor into directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, tensor) in enumerate(model.state_dict().items()):
        fname = f"p{i:04d}.sdt"
        write_array(root / fname, tensor.detach().cpu().numpy())
        entries.append({"name": name, "file": fname, "shape": list(tensor.shape)})
    meta = {"format_version": CHECKPOINT_VERSION, "config": model.cfg.to_dict(), "parameters": entries}
    (root / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root


def load_checkpoint(path):
    root = Path(path)
    meta_path = root / "model.json"
    if not meta_path.is_file():
        raise FormatError(meta_path, "missing model.json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        version = meta["format_version"]
        cfg = ModelConfig(**meta["config"])
        entries = meta["parameters"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(meta_path, f"unreadable checkpoint metadata: {exc}") from None
    if version != CHECKPOINT_VERSION:
        raise FormatError(meta_path, f"unsupported format version {version}")
    try:
        model = DepthNet(cfg)
    except ValueError as exc:
        raise FormatError(meta_path, f"invalid config: {exc}") from None
    expected = model.state_dict()
    names = [e["name"] for e in entries]
    if sorted(names) != sorted(expected):
        raise FormatError(meta_path, "parameter names do not match the stored config")
    state = {}
    for e in entries:
        arr = read_array(root / e["file"])
        if tuple(arr.shape) != tuple(expected[e["name"]].shape):
            raise FormatError(root / e["file"], f"shape {arr.shape} does not match config for {e['name']}")
        state[e["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model
