"""Model registry: one small residual victim and two plain-CNN surrogates.

The victim and surrogate architectures are deliberately distinct so the
black-box assumption (attacker never sees the victim architecture) is
structurally enforced. All models take float images in [0, 1], NCHW, and
normalize internally with per-channel statistics stored as buffers.
"""

import torch
import torch.nn as nn


class InputNorm(nn.Module):
    """Per-channel (x - mean) / std with stats stored in the state dict."""

    def __init__(self):
        super().__init__()
        self.register_buffer("mean", torch.zeros(1, 3, 1, 1))
        self.register_buffer("std", torch.ones(1, 3, 1, 1))

    def set_stats(self, mean, std):
        self.mean.copy_(torch.as_tensor(mean).view(1, 3, 1, 1))
        self.std.copy_(torch.as_tensor(std).view(1, 3, 1, 1))

    def forward(self, x):
        return (x - self.mean) / self.std


def _conv_bn(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
    )


class ResBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.c1 = _conv_bn(cin, cout, stride)
        self.c2 = _conv_bn(cout, cout)
        self.short = (
            nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
            if (stride != 1 or cin != cout)
            else nn.Identity()
        )
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        h = self.act(self.c1(x))
        h = self.c2(h)
        return self.act(h + self.short(x))


class VictimSmallResNet(nn.Module):
    """~6 conv layers with residual connections, for 32x32 inputs."""

    def __init__(self, num_classes: int):
        super().__init__()
        self.norm = InputNorm()
        self.stem = nn.Sequential(_conv_bn(3, 16), nn.ReLU(inplace=True))
        self.block1 = ResBlock(16, 32, stride=2)
        self.block2 = ResBlock(32, 64, stride=2)
        self.head = nn.Linear(64, num_classes)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x, return_latent=False):
        h = self.stem(self.norm(x))
        h = self.block2(self.block1(h))
        latent = self.pool(h).flatten(1)
        logits = self.head(latent)
        if return_latent:
            return logits, latent
        return logits


class PlainCnn(nn.Module):
    """VGG-style CNN without residual connections."""

    def __init__(self, num_classes: int, widths):
        super().__init__()
        self.norm = InputNorm()
        layers = []
        cin = 3
        for w in widths:
            if w == "pool":
                layers.append(nn.MaxPool2d(2))
            else:
                layers += [_conv_bn(cin, w), nn.ReLU(inplace=True)]
                cin = w
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(cin, num_classes)

    def forward(self, x, return_latent=False):
        h = self.features(self.norm(x))
        latent = self.pool(h).flatten(1)
        logits = self.head(latent)
        if return_latent:
            return logits, latent
        return logits


MODEL_REGISTRY = {
    "victim_small_resnet": lambda n: VictimSmallResNet(n),
    "surrogate_cnn_narrow": lambda n: PlainCnn(n, [16, 16, "pool", 32, 32, "pool", 64]),
    "surrogate_cnn_wide": lambda n: PlainCnn(n, [48, "pool", 96, "pool", 192]),
}


def build_model(model_id: str, num_classes: int) -> nn.Module:
    if model_id not in MODEL_REGISTRY:
        raise KeyError(
            f"unknown model_id {model_id!r}; known: {sorted(MODEL_REGISTRY)}"
        )
    return MODEL_REGISTRY[model_id](num_classes)
