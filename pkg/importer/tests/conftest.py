"""Shared fixtures: a briefly trained LeNet-5 checkpoint plus its manifest.

Training on a quick prototype task keeps the parity comparison meaningful
(logits spread over several units instead of hovering near zero).
"""

import json

import numpy as np
import pytest
import torch
import torch.nn as nn


class LeNet5(nn.Module):
    def __init__(self, classes=10):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 6, 5, padding=2)
        self.conv2 = nn.Conv2d(6, 16, 5)
        self.pool = nn.MaxPool2d(2)
        self.fc1 = nn.Linear(400, 120)
        self.fc2 = nn.Linear(120, 84)
        self.fc3 = nn.Linear(84, classes)

    def forward(self, x):
        x = self.pool(torch.relu(self.conv1(x)))
        x = self.pool(torch.relu(self.conv2(x)))
        x = x.flatten(1)
        x = torch.relu(self.fc1(x))
        x = torch.relu(self.fc2(x))
        return self.fc3(x)


MANIFEST_LAYERS = [
    {"kind": "conv2d", "in_channels": 1, "out_channels": 6, "kernel": [5, 5],
     "stride": 1, "padding": 2,
     "params": {"weight": "conv1.weight", "bias": "conv1.bias"}},
    {"kind": "relu"},
    {"kind": "maxpool2d", "window": [2, 2], "stride": 2},
    {"kind": "conv2d", "in_channels": 6, "out_channels": 16, "kernel": [5, 5],
     "stride": 1, "padding": 0,
     "params": {"weight": "conv2.weight", "bias": "conv2.bias"}},
    {"kind": "relu"},
    {"kind": "maxpool2d", "window": [2, 2], "stride": 2},
    {"kind": "flatten"},
    {"kind": "linear", "in_features": 400, "out_features": 120,
     "params": {"weight": "fc1.weight", "bias": "fc1.bias"}},
    {"kind": "relu"},
    {"kind": "linear", "in_features": 120, "out_features": 84,
     "params": {"weight": "fc2.weight", "bias": "fc2.bias"}},
    {"kind": "relu"},
    {"kind": "linear", "in_features": 84, "out_features": 10,
     "params": {"weight": "fc3.weight", "bias": "fc3.bias"}},
]


def train_prototype_task(model: nn.Module, steps=250) -> None:
    """Ten noisy prototype images; enough signal for confident logits."""
    generator = torch.Generator().manual_seed(0)
    prototypes = torch.rand(10, 1, 28, 28, generator=generator)
    optimizer = torch.optim.SGD(model.parameters(), lr=0.05, momentum=0.9)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(steps):
        labels = torch.randint(0, 10, (32,), generator=generator)
        batch = prototypes[labels] + 0.1 * torch.randn(
            32, 1, 28, 28, generator=generator)
        optimizer.zero_grad()
        loss = loss_fn(model(batch.clamp(0, 1)), labels)
        loss.backward()
        optimizer.step()


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("importer")
    torch.manual_seed(7)
    model = LeNet5()
    train_prototype_task(model)
    model.eval()

    checkpoint = root / "lenet.pt"
    torch.save(model.state_dict(), str(checkpoint))

    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps({
        "source": str(checkpoint),
        "input_shape": [1, 28, 28],
        "class_names": [str(d) for d in range(10)],
        "protection_points": [1, 2, 4, 5, 8, 10],
        "layers": MANIFEST_LAYERS,
    }, indent=1))

    rng = np.random.default_rng(123)
    inputs = rng.random((100, 1, 28, 28), dtype=np.float32)
    return {"root": root, "model": model, "checkpoint": checkpoint,
            "manifest": manifest_path, "inputs": inputs}
