"""Convolutional building blocks shared by the analog codec and the compressor."""
from __future__ import annotations

from torch import nn


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act1 = nn.PReLU(channels)
        self.act2 = nn.PReLU(channels)

    def forward(self, x):
        return self.act2(x + self.conv2(self.act1(self.conv1(x))))


def _stage(channels: int, n_res: int) -> list[nn.Module]:
    return [ResidualBlock(channels) for _ in range(n_res)]


class Analysis(nn.Module):
    """``n_down`` stride-2 stages, each followed by ``n_res`` residual blocks."""

    def __init__(self, c_in: int, c_feat: int, c_out: int, n_down: int = 2, n_res: int = 2):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(c_in, c_feat, 3, padding=1), nn.PReLU(c_feat)]
        layers += _stage(c_feat, n_res)
        for _ in range(n_down):
            layers += [nn.Conv2d(c_feat, c_feat, 3, stride=2, padding=1), nn.PReLU(c_feat)]
            layers += _stage(c_feat, n_res)
        layers.append(nn.Conv2d(c_feat, c_out, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Synthesis(nn.Module):
    """Mirror of :class:`Analysis` with pixel-shuffle upsampling.

    ``head='sigmoid'`` bounds the output to [0, 1] for image reconstruction.
    """

    def __init__(self, c_in: int, c_feat: int, c_out: int, n_up: int = 2, n_res: int = 2,
                 head: str | None = "sigmoid"):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(c_in, c_feat, 3, padding=1), nn.PReLU(c_feat)]
        layers += _stage(c_feat, n_res)
        for _ in range(n_up):
            layers += [nn.Conv2d(c_feat, 4 * c_feat, 3, padding=1), nn.PixelShuffle(2),
                       nn.PReLU(c_feat)]
            layers += _stage(c_feat, n_res)
        layers.append(nn.Conv2d(c_feat, c_out, 3, padding=1))
        if head == "sigmoid":
            layers.append(nn.Sigmoid())
        elif head is not None:
            raise ValueError(f"unknown head {head!r}")
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)
