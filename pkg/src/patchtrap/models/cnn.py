"""Compact convolutional classifier for small square images."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class ConvNetConfig:
    """Architecture knobs; the default is the standard toy victim."""

    channels: tuple[int, ...] = (32, 64, 128, 128)
    num_classes: int = 10
    in_channels: int = 3

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
        }

    @staticmethod
    def from_dict(payload: dict) -> "ConvNetConfig":
        return ConvNetConfig(
            channels=tuple(int(c) for c in payload["channels"]),
            num_classes=int(payload["num_classes"]),
            in_channels=int(payload.get("in_channels", 3)),
        )


class SmallConvNet(nn.Module):
    """Stacked conv-norm-relu-pool blocks, global average pool, linear head.

    Each block halves the spatial resolution, so ``len(channels)`` blocks fit
    any input that is at least ``2 ** len(channels)`` pixels on a side.
    """

    def __init__(self, config: ConvNetConfig = ConvNetConfig()):
        super().__init__()
        self.config = config
        blocks = []
        cin = config.in_channels
        for cout in config.channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(cin, cout, kernel_size=3, padding=1, bias=False),
                    nn.BatchNorm2d(cout),
                    nn.ReLU(inplace=True),
                    nn.MaxPool2d(2),
                )
            )
            cin = cout
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(cin, config.num_classes)
        self._init_weights()

    def _init_weights(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, std=0.01)
                nn.init.zeros_(module.bias)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate activations: (B, channels[-1])."""
        return self.pool(self.blocks(x)).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))
