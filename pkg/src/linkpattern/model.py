"""EffNet: a cut-down EfficientNetV2-S trunk for small attention images, plus CAM."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

NEGATIVE, POSITIVE = 0, 1


@dataclass(frozen=True)
class EffNetSpec:
    in_channels: int = 5
    width: int = 64
    stage1_layers: int = 3
    stage2_layers: int = 7
    expansion: int = 4
    head_channels: int = 1280
    num_classes: int = 2

    def to_dict(self) -> dict:
        return asdict(self)


def conv_bn(c_in: int, c_out: int, k: int, act: bool = True) -> nn.Sequential:
    layers = [nn.Conv2d(c_in, c_out, k, stride=1, padding=k // 2, bias=False),
              nn.BatchNorm2d(c_out, eps=1e-5, momentum=0.1)]
    if act:
        layers.append(nn.SiLU())
    return nn.Sequential(*layers)


class FusedMBConv(nn.Module):
    """Stride-1 Fused-MBConv with an additive skip.

    With ``expansion == 1`` the block is a single 3x3 conv-BN-SiLU; otherwise
    a 3x3 conv expands to ``expansion * c`` channels and a 1x1 conv-BN
    projects back.
    """

    def __init__(self, channels: int, expansion: int):
        super().__init__()
        if expansion == 1:
            self.body = conv_bn(channels, channels, 3)
        else:
            hidden = channels * expansion
            self.body = nn.Sequential(conv_bn(channels, hidden, 3),
                                      conv_bn(hidden, channels, 1, act=False))

    @property
    def projection(self) -> nn.Conv2d:
        last = self.body[-1]
        return last[0] if isinstance(last, nn.Sequential) else self.body[0]

    def forward(self, x):
        return x + self.body(x)


class EffNet(nn.Module):
    def __init__(self, spec: EffNetSpec = EffNetSpec()):
        super().__init__()
        self.spec = spec
        w = spec.width
        self.stem = conv_bn(spec.in_channels, w, 3)
        self.stage1 = nn.Sequential(*[FusedMBConv(w, 1) for _ in range(spec.stage1_layers)])
        self.stage2 = nn.Sequential(*[FusedMBConv(w, spec.expansion)
                                      for _ in range(spec.stage2_layers)])
        self.head = conv_bn(w, spec.head_channels, 1)
        self.fc = nn.Linear(spec.head_channels, spec.num_classes)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                with torch.no_grad():
                    m.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=generator)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Linear):
                bound = 1.0 / m.in_features ** 0.5
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=generator)
                nn.init.zeros_(m.bias)

    def stage_outputs(self, x: torch.Tensor) -> list[torch.Tensor]:
        outs = []
        for stage in (self.stem, self.stage1, self.stage2, self.head):
            x = stage(x)
            outs.append(x)
        return outs

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Head feature maps, shape (B, head_channels, l, l)."""
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected (B, {self.spec.in_channels}, l, l) input, got {tuple(x.shape)}")
        return self.head(self.stage2(self.stage1(self.stem(x))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x).mean(dim=(2, 3)))

    def cam(self, x: torch.Tensor, cls: int = POSITIVE) -> torch.Tensor:
        """Class activation maps ``sum_k w[cls, k] * f_k``, shape (B, l, l)."""
        return torch.einsum("bkhw,k->bhw", self.features(x), self.fc.weight[cls])


def predict_score(logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(logits, dim=-1)[..., POSITIVE]


def link_importance(cam_map, pad_count: int = 0) -> list[float | None]:
    """Row sum plus column sum per slot, diagonal counted once; PAD slots are None."""
    m = np.asarray(cam_map, dtype=np.float64)
    scores = m.sum(axis=1) + m.sum(axis=0) - np.diag(m)
    return [None if i < pad_count else float(s) for i, s in enumerate(scores)]
