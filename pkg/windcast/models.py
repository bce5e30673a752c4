"""
The four stage-1 networks (SISO, SIMO, MISO, MIMO): construction,
training with early stopping, prediction and serialization.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import nnkernel as nn
from .container import read_container, write_container
from .data import DEFAULT_HISTORY, NormStats, WindowSet, denorm_power, denorm_speed
from .errors import ConfigError, DataError, FitError
from .metrics import rmse

logger = logging.getLogger(__name__)

# Column order of the stage-2 feature matrix.
ARCHITECTURES = ('MIMO', 'MISO', 'SIMO', 'SISO')
MULTI_INPUT = frozenset({'MISO', 'MIMO'})
MULTI_OUTPUT = frozenset({'SIMO', 'MIMO'})

MODEL_MAGIC = b'WCM1'


@dataclass(frozen=True)
class ArchConfig:
    """Layer sizes shared by all four architectures."""

    hidden_dim: int = 64
    conv_kernels: Tuple[int, int] = (4, 8)
    fc_sizes: Tuple[int, ...] = (256, 64, 16)


@dataclass
class TrainConfig:
    """Stage-1 training settings; alpha and beta weight the power and speed losses."""

    alpha: float = 1.0
    beta: float = 0.9
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")


class Trunk:
    """LSTM over the rows of a map, then two 3x3 convolutions with ELU."""

    def __init__(self, rows: int, cols: int, arch: ArchConfig, rng: np.random.Generator):
        if rows < 5 or arch.hidden_dim < 5:
            raise ConfigError(f"a {rows}-row map with hidden size {arch.hidden_dim} "
                              "is too small for two 3x3 convolutions")
        k1, k2 = arch.conv_kernels
        self.rows = rows
        self.lstm = nn.LstmParams.create(cols, arch.hidden_dim, rng)
        self.conv1 = nn.Conv2dParams.create(1, k1, rng)
        self.conv2 = nn.Conv2dParams.create(k1, k2, rng)
        self.out_dim = k2 * (rows - 4) * (arch.hidden_dim - 4)

    def forward(self, x: nn.Tensor) -> nn.Tensor:
        states = nn.lstm_forward(self.lstm, x)
        batch, rows, hidden = states.shape
        maps = nn.reshape(states, (batch, 1, rows, hidden))
        maps = nn.elu(nn.conv2d_forward(self.conv1, maps))
        maps = nn.elu(nn.conv2d_forward(self.conv2, maps))
        return nn.reshape(maps, (batch, self.out_dim))

    def parameters(self) -> List[nn.Tensor]:
        return self.lstm.parameters() + self.conv1.parameters() + self.conv2.parameters()


class Network:
    """
    Feature extractor plus FC stack and one or two linear heads.

    Single-input networks run one trunk over the whole 7-row matrix.
    Multi-input networks run the trunk over the 5 NWP rows and a separate
    LSTM over each history row, then concatenate the three feature vectors.
    """

    def __init__(self, architecture: str, arch: ArchConfig, rng: np.random.Generator,
                 n_hist: int = DEFAULT_HISTORY):
        self.architecture = architecture
        self.multi_input = architecture in MULTI_INPUT
        self.multi_output = architecture in MULTI_OUTPUT
        if self.multi_input:
            self.trunk = Trunk(5, n_hist, arch, rng)
            self.speed_lstm = nn.LstmParams.create(n_hist, arch.hidden_dim, rng)
            self.power_lstm = nn.LstmParams.create(n_hist, arch.hidden_dim, rng)
            features = self.trunk.out_dim + 2 * arch.hidden_dim
        else:
            self.trunk = Trunk(7, n_hist, arch, rng)
            features = self.trunk.out_dim

        self.fc: List[nn.FcParams] = []
        for size in arch.fc_sizes:
            self.fc.append(nn.FcParams.create(features, size, rng))
            features = size
        self.power_head = nn.FcParams.create(features, 1, rng)
        self.speed_head = nn.FcParams.create(features, 1, rng) if self.multi_output else None

    def forward(self, matrix: np.ndarray) -> Tuple[nn.Tensor, Optional[nn.Tensor]]:
        x = nn.Tensor(matrix)
        batch = matrix.shape[0]
        if self.multi_input:
            nwp = self.trunk.forward(x[:, :5, :])
            speed = nn.lstm_forward(self.speed_lstm, x[:, 5:6, :])
            power = nn.lstm_forward(self.power_lstm, x[:, 6:7, :])
            hidden = self.speed_lstm.hidden_dim
            features = nn.concat([nwp, nn.reshape(speed, (batch, hidden)),
                                  nn.reshape(power, (batch, hidden))], axis=1)
        else:
            features = self.trunk.forward(x)

        for layer in self.fc:
            features = nn.elu(nn.fc_forward(layer, features))
        power_out = nn.reshape(nn.fc_forward(self.power_head, features), (batch,))
        speed_out = None
        if self.speed_head is not None:
            speed_out = nn.reshape(nn.fc_forward(self.speed_head, features), (batch,))
        return power_out, speed_out

    def parameters(self) -> List[nn.Tensor]:
        params = self.trunk.parameters()
        if self.multi_input:
            params += self.speed_lstm.parameters() + self.power_lstm.parameters()
        for layer in self.fc:
            params += layer.parameters()
        params += self.power_head.parameters()
        if self.speed_head is not None:
            params += self.speed_head.parameters()
        return params


@dataclass
class Stage1Model:
    """
    A stage-1 network with the normalization it was trained under.

    ``history`` holds the validation RMSE (MW) of every epoch and
    ``train_history`` the mean training loss of every epoch.
    """

    architecture: str
    network: Network
    arch: ArchConfig
    seed: int
    n_hist: int = DEFAULT_HISTORY
    norm_stats: Optional[NormStats] = None
    capacity: float = math.inf
    epochs_run: int = 0
    best_val_rmse: float = math.inf
    history: List[float] = field(default_factory=list)
    train_history: List[float] = field(default_factory=list)

    @property
    def outputs(self) -> int:
        return 2 if self.architecture in MULTI_OUTPUT else 1

    def parameters(self) -> List[nn.Tensor]:
        return self.network.parameters()

    def snapshot(self) -> List[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, values: Sequence[np.ndarray]) -> None:
        for p, value in zip(self.parameters(), values):
            p.data = value.copy()

    def __repr__(self) -> str:
        return f"Stage1Model('{self.architecture}', seed={self.seed}, epochs={self.epochs_run})"


class Prediction(NamedTuple):
    power: np.ndarray
    speed: Optional[np.ndarray]
    raw_power: np.ndarray


def build_model(architecture: str, seed: int, arch: Optional[ArchConfig] = None,
                n_hist: int = DEFAULT_HISTORY) -> Stage1Model:
    """
    Build an untrained stage-1 model.

    Weights are drawn uniformly in +-sqrt(6 / (fan_in + fan_out)) from a
    generator seeded with ``seed``, in a fixed layer order, so SISO/SIMO (and
    MISO/MIMO) built from one seed share every layer except the speed head.

    Raises:
        ConfigError: For an unknown architecture tag.
    """
    architecture = architecture.upper()
    if architecture not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture '{architecture}', expected one of "
                          f"{', '.join(ARCHITECTURES)}")
    arch = arch or ArchConfig()
    rng = np.random.default_rng(seed)
    return Stage1Model(architecture, Network(architecture, arch, rng, n_hist), arch, seed, n_hist)


def batch_loss(model: Stage1Model, windows: WindowSet, cfg: TrainConfig) -> nn.Tensor:
    """The training loss on a batch: MSE on power, plus weighted speed MSE for multi-output."""
    power, speed = model.network.forward(windows.matrix)
    if speed is None:
        return nn.mse_loss(power, windows.target_power)
    return nn.combined_loss(power, windows.target_power, speed, windows.target_speed,
                            cfg.alpha, cfg.beta)


def train_stage1(model: Stage1Model, train_windows: WindowSet, val_windows: WindowSet,
                 cfg: TrainConfig) -> Stage1Model:
    """
    Train with minibatch Adam and early stopping on validation power RMSE.

    The model keeps the parameters of its best validation epoch.

    Raises:
        DataError: If either window set is empty.
        FitError: If the loss becomes non-finite.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise DataError("training and validation windows must be non-empty")
    if model.norm_stats is None:
        model.norm_stats = train_windows.stats
    model.capacity = train_windows.capacity

    rng = np.random.default_rng(cfg.seed)
    optimizer = nn.Adam(model.parameters(), learning_rate=cfg.learning_rate)
    best_rmse = math.inf
    best_params = model.snapshot()
    stale = 0
    model.history = []
    model.train_history = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_windows))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = train_windows.select(order[start:start + cfg.batch_size])
            optimizer.zero_grad()
            loss = batch_loss(model, batch, cfg)
            if not np.isfinite(loss.item()):
                raise FitError(f"{model.architecture}: non-finite loss at epoch {epoch + 1}")
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)

        val_rmse = power_rmse(model, val_windows)
        model.history.append(val_rmse)
        model.train_history.append(total / len(order))
        model.epochs_run = epoch + 1
        logger.debug("%s epoch %d: train loss %.6f, val RMSE %.4f MW",
                     model.architecture, epoch + 1, total / len(order), val_rmse)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_params = model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    model.restore(best_params)
    model.best_val_rmse = best_rmse
    logger.info("%s trained %d epoch(s), best validation RMSE %.4f MW",
                model.architecture, model.epochs_run, best_rmse)
    return model


def predict(model: Stage1Model, windows: WindowSet, batch_size: int = 2048) -> Prediction:
    """
    Forecast power (MW, clipped to [0, capacity]) and, for multi-output
    models, wind speed (m/s).

    Raises:
        DataError: If the windows were normalized with other statistics.
    """
    if len(windows) == 0:
        empty = np.zeros(0)
        return Prediction(empty, empty.copy() if model.outputs == 2 else None, empty.copy())
    if model.norm_stats is None or windows.stats != model.norm_stats:
        raise DataError(f"{model.architecture}: windows use a different normalization "
                        "than the model was trained with")

    powers, speeds = [], []
    with nn.no_grad():
        for start in range(0, len(windows), batch_size):
            power, speed = model.network.forward(windows.matrix[start:start + batch_size])
            powers.append(power.data)
            if speed is not None:
                speeds.append(speed.data)

    raw_power = denorm_power(np.concatenate(powers), model.norm_stats)
    power = np.clip(raw_power, 0.0, model.capacity)
    speed = None
    if speeds:
        speed = np.maximum(denorm_speed(np.concatenate(speeds), model.norm_stats), 0.0)
    return Prediction(power, speed, raw_power)


def power_rmse(model: Stage1Model, windows: WindowSet) -> float:
    """Power RMSE (MW) of the model's forecasts on ``windows``."""
    truth = denorm_power(windows.target_power, windows.stats)
    return rmse(truth, predict(model, windows).power)


def save_model(model: Stage1Model, path: str) -> None:
    """Write the model to a binary container."""
    if model.norm_stats is None:
        raise DataError("cannot save a model without normalization statistics")
    meta = [model.seed, model.n_hist, model.capacity, model.epochs_run, model.best_val_rmse,
            model.arch.hidden_dim, *model.arch.conv_kernels, len(model.arch.fc_sizes),
            *model.arch.fc_sizes]
    arrays = [p.data for p in model.parameters()] + [model.norm_stats.to_array()]
    write_container(path, MODEL_MAGIC, model.architecture, meta, arrays)


def load_model(path: str) -> Stage1Model:
    """
    Read a model written by ``save_model``.

    Raises:
        DataError: If the file is not a model container or shapes disagree.
    """
    tag, meta, arrays = read_container(path, MODEL_MAGIC)
    seed, n_hist, capacity, epochs_run, best_val = meta[:5]
    hidden, k1, k2, n_fc = (int(v) for v in meta[5:9])
    fc_sizes = tuple(int(v) for v in meta[9:9 + n_fc])
    model = build_model(tag, int(seed), ArchConfig(hidden, (k1, k2), fc_sizes), int(n_hist))

    params = model.parameters()
    if len(arrays) != len(params) + 1:
        raise DataError(f"{path}: expected {len(params)} parameter arrays, found {len(arrays) - 1}")
    for p, value in zip(params, arrays):
        if p.shape != value.shape:
            raise DataError(f"{path}: parameter shape {value.shape} != expected {p.shape}")
        p.data = value
    model.norm_stats = NormStats.from_array(arrays[-1])
    model.capacity = capacity
    model.epochs_run = int(epochs_run)
    model.best_val_rmse = best_val
    return model
