"""The two network designs and their complexity accounting.

Classification route: stacked 3-D convolution blocks (batch norm, ReLU,
spatial-only max pooling) whose per-frame features feed a two-layer
recurrent stage and a temporal 1-D convolution head with per-frame softmax.
Regression route: a per-frame 2-D backbone feeding recurrent layers with an
intermediate dense bottleneck and a sigmoid head emitting one proximity
curve per event.

Complexity figures (count_parameters, estimate_flops, receptive_field) are
computed from the built model or config, with the conventions documented on
each function.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

__all__ = [
    "ConfigError",
    "ClassificationNetConfig",
    "RegressionNetConfig",
    "ClassificationNet",
    "RegressionNet",
    "build_classification_net",
    "build_regression_net",
    "count_parameters",
    "recurrent_param_count",
    "estimate_flops",
    "receptive_field",
    "save_checkpoint",
    "load_checkpoint",
]

_CELLS = {"lstm": nn.LSTM, "gru": nn.GRU}


class ConfigError(ValueError):
    """A model configuration that cannot be built."""


@dataclass(frozen=True)
class ClassificationNetConfig:
    """3-D CNN + recurrent phase classifier.

    Block b uses base_filters * 2**b channels, a (temporal x spatial x
    spatial) convolution with stride 1 and same padding, batch norm, ReLU,
    and 2x2 spatial-only max pooling. The first block uses the wide spatial
    kernel. Per-frame features are flattened into the recurrent stage.
    """

    n_blocks: int = 5
    base_filters: int = 16
    first_spatial_kernel: int = 7
    spatial_kernel: int = 3
    temporal_kernel: int = 3
    pool: int = 2
    recurrent_layers: int = 2
    recurrent_width: int = 32
    cell: str = "lstm"
    bidirectional: bool = False
    n_classes: int = 6
    image_size: int = 128
    in_channels: int = 1

    def __post_init__(self) -> None:
        if self.cell not in _CELLS:
            raise ConfigError(f"cell must be one of {sorted(_CELLS)}, got '{self.cell}'")
        if self.image_size % (self.pool**self.n_blocks) != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by pool^n_blocks = {self.pool**self.n_blocks}"
            )
        for name in ("n_blocks", "base_filters", "recurrent_layers", "recurrent_width", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def filters(self, block: int) -> int:
        return self.base_filters * 2**block

    @property
    def feature_width(self) -> int:
        """Flattened per-frame feature size after the convolutional stage."""
        side = self.image_size // self.pool**self.n_blocks
        return self.filters(self.n_blocks - 1) * side * side

    @staticmethod
    def toy(**overrides) -> "ClassificationNetConfig":
        base = dict(n_blocks=4, base_filters=4, image_size=64)
        base.update(overrides)
        return ClassificationNetConfig(**base)


@dataclass(frozen=True)
class RegressionNetConfig:
    """Per-frame backbone + recurrent event-curve regressor.

    backbone "resnet50" is the 50-layer residual network without its
    classifier head (feature width fixed at 2048); backbone "toy" is a small
    6-layer CNN whose output width matches the first recurrent layer's
    input, for desk-scale runs.
    """

    backbone: str = "resnet50"
    backbone_width: int = 2048
    recurrent_1: int = 2048
    dense: int = 512
    recurrent_2: int = 512
    n_events: int = 6
    cell: str = "lstm"
    bidirectional: bool = True
    image_size: int = 112
    in_channels: int = 3
    pretrained_weights: str | None = None

    def __post_init__(self) -> None:
        if self.cell not in _CELLS:
            raise ConfigError(f"cell must be one of {sorted(_CELLS)}, got '{self.cell}'")
        if self.backbone not in ("resnet50", "toy"):
            raise ConfigError(f"backbone must be 'resnet50' or 'toy', got '{self.backbone}'")
        if self.backbone == "resnet50" and self.backbone_width != 2048:
            raise ConfigError("resnet50 backbone has a fixed feature width of 2048")
        for name in ("backbone_width", "recurrent_1", "dense", "recurrent_2", "n_events"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @staticmethod
    def toy(**overrides) -> "RegressionNetConfig":
        base = dict(
            backbone="toy",
            backbone_width=96,
            recurrent_1=96,
            dense=48,
            recurrent_2=48,
            image_size=64,
        )
        base.update(overrides)
        return RegressionNetConfig(**base)


class ClassificationNet(nn.Module):
    def __init__(self, cfg: ClassificationNetConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        in_ch = cfg.in_channels
        for b in range(cfg.n_blocks):
            out_ch = cfg.filters(b)
            ks = cfg.first_spatial_kernel if b == 0 else cfg.spatial_kernel
            kt = cfg.temporal_kernel
            blocks += [
                nn.Conv3d(in_ch, out_ch, (kt, ks, ks), padding=(kt // 2, ks // 2, ks // 2)),
                nn.BatchNorm3d(out_ch),
                nn.ReLU(inplace=True),
                nn.MaxPool3d((1, cfg.pool, cfg.pool)),
            ]
            in_ch = out_ch
        self.conv = nn.Sequential(*blocks)
        self.rnn = _CELLS[cfg.cell](
            cfg.feature_width,
            cfg.recurrent_width,
            num_layers=cfg.recurrent_layers,
            batch_first=True,
            bidirectional=cfg.bidirectional,
        )
        rnn_out = cfg.recurrent_width * (2 if cfg.bidirectional else 1)
        self.head = nn.Conv1d(rnn_out, cfg.n_classes, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, H, W) -> per-frame class probabilities (B, T, n_classes)."""
        if x.ndim == 4:
            x = x.unsqueeze(1)  # channel axis
        elif x.ndim == 5 and x.shape[2] == self.cfg.in_channels:
            x = x.permute(0, 2, 1, 3, 4)
        b, _, t = x.shape[:3]
        feats = self.conv(x)  # (B, C, T, h, w)
        feats = feats.permute(0, 2, 1, 3, 4).reshape(b, t, -1)
        seq, _ = self.rnn(feats)
        logits = self.head(seq.permute(0, 2, 1)).permute(0, 2, 1)
        return torch.softmax(logits, dim=-1)


class _ToyBackbone(nn.Module):
    """Six convolution layers with interleaved pooling and a global average
    pool; a stand-in for the residual backbone at desk scale."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        chans = [16, 16, 32, 32, 64, width]
        layers = []
        prev = in_channels
        for i, ch in enumerate(chans):
            layers += [nn.Conv2d(prev, ch, 3, padding=1), nn.BatchNorm2d(ch), nn.ReLU(inplace=True)]
            if i % 2 == 1:
                layers.append(nn.MaxPool2d(2))
            prev = ch
        self.body = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.body(x)).flatten(1)


def _resnet50_backbone(cfg: RegressionNetConfig) -> nn.Module:
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    if cfg.pretrained_weights:
        state = torch.load(cfg.pretrained_weights, map_location="cpu")
        net.load_state_dict(state, strict=False)
    net.fc = nn.Identity()
    return net


class RegressionNet(nn.Module):
    def __init__(self, cfg: RegressionNetConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.backbone == "resnet50":
            self.backbone = _resnet50_backbone(cfg)
        else:
            self.backbone = _ToyBackbone(cfg.in_channels, cfg.backbone_width)
        cell = _CELLS[cfg.cell]
        dirs = 2 if cfg.bidirectional else 1
        self.rnn1 = cell(cfg.backbone_width, cfg.recurrent_1, batch_first=True, bidirectional=cfg.bidirectional)
        self.fc1 = nn.Linear(cfg.recurrent_1 * dirs, cfg.dense)
        self.rnn2 = cell(cfg.dense, cfg.recurrent_2, batch_first=True, bidirectional=cfg.bidirectional)
        self.out = nn.Linear(cfg.recurrent_2 * dirs, cfg.n_events)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, C, H, W) -> per-frame event proximities (B, T, n_events) in (0, 1)."""
        b, t = x.shape[:2]
        feats = self.backbone(x.reshape(b * t, *x.shape[2:])).reshape(b, t, -1)
        seq, _ = self.rnn1(feats)
        seq = torch.relu(self.fc1(seq))
        seq, _ = self.rnn2(seq)
        return torch.sigmoid(self.out(seq))


def build_classification_net(cfg: ClassificationNetConfig) -> ClassificationNet:
    return ClassificationNet(cfg)


def build_regression_net(cfg: RegressionNetConfig) -> RegressionNet:
    return RegressionNet(cfg)


def count_parameters(model: nn.Module) -> int:
    """Exact number of learnable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def recurrent_param_count(
    cell: str, input_size: int, hidden_size: int, num_layers: int = 1, bidirectional: bool = False
) -> int:
    """Closed-form recurrent-stage parameter count.

    Per layer and direction: gates * (hidden*input + hidden*hidden + 2*hidden),
    with 4 gates for LSTM and 3 for GRU, two bias vectors per gate stack, and
    layer l > 0 consuming hidden_size * n_directions inputs.
    """
    gates = {"lstm": 4, "gru": 3}[cell]
    dirs = 2 if bidirectional else 1
    total = 0
    for layer in range(num_layers):
        in_size = input_size if layer == 0 else hidden_size * dirs
        total += dirs * gates * (hidden_size * in_size + hidden_size * hidden_size + 2 * hidden_size)
    return total


def estimate_flops(
    model: nn.Module,
    input_shape: tuple[int, ...],
    flops_per_mac: int = 2,
    include_bias: bool = True,
    per_frame: bool = False,
) -> int:
    """Multiply-accumulate-based FLOP estimate for one input of `input_shape`
    (no batch axis; classification (T, H, W), regression (T, C, H, W)).

    Conventions: convolutions and linear layers count out_elements *
    in_channels/groups * prod(kernel) MACs; recurrent layers count
    gates * hidden * (input + hidden) MACs per direction, layer, and step;
    each MAC contributes `flops_per_mac` FLOPs (2 by default: one multiply,
    one add) and each biased output one extra add. Normalization,
    activations, and pooling are excluded. `per_frame=True` divides by the
    temporal length, giving the per-frame cost (sequence-length independent
    for same-padded stages).
    """
    macs = 0
    bias_adds = 0

    def record(module, inputs, output):
        nonlocal macs, bias_adds
        if isinstance(module, (nn.Conv1d, nn.Conv2d, nn.Conv3d)):
            out_elems = output.numel()
            k = 1
            for s in module.kernel_size:
                k *= s
            macs += out_elems * (module.in_channels // module.groups) * k
            if include_bias and module.bias is not None:
                bias_adds += out_elems
        elif isinstance(module, nn.Linear):
            out_elems = output.numel()
            macs += out_elems * module.in_features
            if include_bias and module.bias is not None:
                bias_adds += out_elems
        elif isinstance(module, (nn.LSTM, nn.GRU)):
            gates = 4 if isinstance(module, nn.LSTM) else 3
            x = inputs[0]
            steps = x.shape[1] if module.batch_first else x.shape[0]
            batch = x.shape[0] if module.batch_first else x.shape[1]
            dirs = 2 if module.bidirectional else 1
            h = module.hidden_size
            for layer in range(module.num_layers):
                in_size = module.input_size if layer == 0 else h * dirs
                macs += batch * steps * dirs * gates * h * (in_size + h)
                if include_bias and module.bias:
                    bias_adds += batch * steps * dirs * gates * h

    hooks = [m.register_forward_hook(record) for m in model.modules()]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(torch.zeros((1, *input_shape)))
    finally:
        for hk in hooks:
            hk.remove()
        model.train(was_training)
    total = macs * flops_per_mac + bias_adds
    if per_frame:
        total = round(total / input_shape[0])
    return int(total)


def receptive_field(cfg: ClassificationNetConfig) -> tuple[int, int, int]:
    """Receptive field (t, h, w) of the convolutional stage.

    Standard recurrence with stride-1 same-padded convolutions: each kernel k
    grows the field by (k - 1) * jump, and each pooling stage multiplies the
    jump by its stride (pooling treated as subsampling). Pooling is
    spatial-only, so the temporal field grows by kernel extent alone.
    """
    rf = [1, 1, 1]
    jump = [1, 1, 1]
    for b in range(cfg.n_blocks):
        ks = cfg.first_spatial_kernel if b == 0 else cfg.spatial_kernel
        for axis, k in enumerate((cfg.temporal_kernel, ks, ks)):
            rf[axis] += (k - 1) * jump[axis]
        for axis in (1, 2):
            jump[axis] *= cfg.pool
    return tuple(rf)  # type: ignore[return-value]


# --- checkpoints -----------------------------------------------------------

_CONFIG_KINDS = {
    "classification": ClassificationNetConfig,
    "regression": RegressionNetConfig,
}


def _kind_of(cfg) -> str:
    for kind, cls in _CONFIG_KINDS.items():
        if isinstance(cfg, cls):
            return kind
    raise ConfigError(f"unknown config type {type(cfg).__name__}")


def save_checkpoint(path: str | Path, model: nn.Module, cfg, metadata: dict | None = None) -> None:
    """Persist config + weights + metadata; load_checkpoint rebuilds the model."""
    payload = {
        "kind": _kind_of(cfg),
        "config": asdict(cfg),
        "weights": model.state_dict(),
        "metadata": dict(metadata or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path):
    """Returns (model, cfg, metadata) with weights restored."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ConfigError(f"{path}: unreadable checkpoint ({exc})") from exc
    for key in ("kind", "config", "weights"):
        if key not in payload:
            raise ConfigError(f"{path}: checkpoint missing field '{key}'")
    kind = payload["kind"]
    if kind not in _CONFIG_KINDS:
        raise ConfigError(f"{path}: unknown checkpoint kind '{kind}'")
    cfg = _CONFIG_KINDS[kind](**payload["config"])
    model = build_classification_net(cfg) if kind == "classification" else build_regression_net(cfg)
    model.load_state_dict(payload["weights"])
    return model, cfg, payload.get("metadata", {})
