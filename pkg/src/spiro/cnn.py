"""Two-layer 1-D CNN over mel-energy maps, with seed-deterministic training.

Architecture: conv(8, k=3) -> maxpool(2) -> conv(16, k=3) -> maxpool(2) ->
dropout(0.25) -> dense softmax over three classes. Trained with momentum
SGD on cross-entropy for a fixed number of epochs. Training pins the torch
seed and runs single-threaded so that identical seeds give identical
weights.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InvalidInput


@dataclass(frozen=True)
class TrainConfig:
    conv1_filters: int = 8
    conv2_filters: int = 16
    kernel_size: int = 3
    dropout: float = 0.25
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9


class _Net(nn.Module):
    def __init__(self, bands: int, frames: int, n_classes: int, cfg: TrainConfig):
        super().__init__()
        if frames // 4 < 1:
            raise InvalidInput(f"{frames} frames too few for two pooling stages")
        pad = cfg.kernel_size // 2
        self.conv1 = nn.Conv1d(bands, cfg.conv1_filters, cfg.kernel_size, padding=pad)
        self.conv2 = nn.Conv1d(cfg.conv1_filters, cfg.conv2_filters, cfg.kernel_size, padding=pad)
        self.pool = nn.MaxPool1d(2)
        self.dropout = nn.Dropout(cfg.dropout)
        self.fc = nn.Linear(cfg.conv2_filters * ((frames // 2) // 2), n_classes)

    def forward(self, x):
        x = self.pool(torch.relu(self.conv1(x)))
        x = self.pool(torch.relu(self.conv2(x)))
        x = self.dropout(torch.flatten(x, 1))
        return self.fc(x)


def train_network(
    inputs: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    cfg: TrainConfig,
    seed: int,
) -> dict:
    """Fit the net on (n, bands, frames) inputs; returns weights as numpy arrays."""
    if inputs.ndim != 3 or inputs.shape[0] != labels.size:
        raise InvalidInput("inputs must be (n, bands, frames) matching labels")
    n, bands, frames = inputs.shape
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        torch.manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
        net = _Net(bands, frames, n_classes, cfg)
        optimizer = torch.optim.SGD(net.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum)
        loss_fn = nn.CrossEntropyLoss()
        x = torch.from_numpy(inputs.astype(np.float32))
        y = torch.from_numpy(labels.astype(np.int64))
        net.train()
        for _ in range(cfg.epochs):
            order = torch.randperm(n)
            for start in range(0, n, cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                optimizer.zero_grad()
                loss = loss_fn(net(x[batch]), y[batch])
                loss.backward()
                optimizer.step()
        return {k: v.detach().numpy().copy() for k, v in net.state_dict().items()}
    finally:
        torch.set_num_threads(prev_threads)


def predict_proba(
    weights: dict, inputs: np.ndarray, n_classes: int, cfg: TrainConfig
) -> np.ndarray:
    """Class probabilities per window; rows sum to 1."""
    if inputs.ndim != 3:
        raise InvalidInput("inputs must be (n, bands, frames)")
    _, bands, frames = inputs.shape
    net = _Net(bands, frames, n_classes, cfg)
    try:
        net.load_state_dict({k: torch.from_numpy(v) for k, v in weights.items()})
    except RuntimeError as exc:
        raise InvalidInput(f"weights incompatible with input shape: {exc}")
    net.eval()
    with torch.no_grad():
        logits = net(torch.from_numpy(inputs.astype(np.float32)))
        return torch.softmax(logits, dim=1).numpy().astype(np.float64)
