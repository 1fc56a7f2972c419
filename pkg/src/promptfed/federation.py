"""Round-by-round federated simulation with a warmup phase and layer selection.

Each round samples devices, ships the synchronised prompt layers down, runs
local updates, ships deltas up and lets the server aggregate. After
``warmup_rounds`` rounds the synchronised set shrinks to the selected layers;
the remaining prompt layers stay private to each device from then on.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .datasets import Dataset, PartitionSpec, dirichlet_partition, synth_task
from .errors import InvalidK, InvalidParams
from .model import Backbone, run_batch
from .optim import (
    OptimHyper,
    ServerOptState,
    local_update,
    make_optimizer,
    server_round,
    sync_coords,
)
from .selection import DeviceView, SelectionConfig, SelectionResult, run_selection

WARMUP = "warmup"
SELECTED = "selected"


@dataclass(frozen=True)
class ModelDims:
    num_layers: int = 6
    hidden_dim: int = 16
    prompt_dim: int = 4
    init_seed: int = 0


@dataclass(frozen=True)
class DataSpec:
    num_classes: int = 4
    input_dim: int = 16
    num_examples: int = 4000
    margin: float = 3.0
    noise: float = 1.0
    label_alpha: float = 1.0
    size_alpha: float = 5.0
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class FederationConfig:
    num_devices: int = 100
    sample_size: int = 10
    rounds: int = 60
    warmup_rounds: int = 5
    local_steps: int = 10
    seed: int = 0
    optimizer: str = "fedpeptao"
    hyper: OptimHyper = OptimHyper()
    selection: SelectionConfig = SelectionConfig()
    model: ModelDims = ModelDims()
    data: DataSpec = DataSpec()

    def __post_init__(self):
        if not 1 <= self.sample_size <= self.num_devices:
            raise InvalidParams("need 1 <= sample_size <= num_devices")
        if not 1 <= self.warmup_rounds <= self.rounds:
            raise InvalidParams("need 1 <= warmup_rounds <= rounds")
        if self.local_steps < 1:
            raise InvalidParams("local_steps must be >= 1")
        make_optimizer(self.optimizer)


@dataclass
class CommLedger:
    uplink: List[int] = field(default_factory=list)
    downlink: List[int] = field(default_factory=list)
    per_device: List[int] = field(default_factory=list)
    # one-off messages of the selection event: scores + ratio up, model down
    selection_uplink: int = 0
    selection_downlink: int = 0

    def record(self, per_device_payload, num_devices):
        self.per_device.append(per_device_payload)
        self.uplink.append(per_device_payload * num_devices)
        self.downlink.append(per_device_payload * num_devices)

    @property
    def total_uplink(self):
        return sum(self.uplink) + self.selection_uplink

    @property
    def total_downlink(self):
        return sum(self.downlink) + self.selection_downlink


@dataclass
class RoundMetrics:
    round: int
    phase: str
    accuracy: float
    loss: float
    uplink_params: int
    downlink_params: int
    sampled: List[int]
    global_accuracy: float = float("nan")
    correct: Optional[np.ndarray] = field(default=None, repr=False)


def sample_devices(rng, num_devices, k):
    """``k`` distinct device ids drawn uniformly, returned sorted."""
    if not 1 <= k <= num_devices:
        raise InvalidK(f"cannot sample {k} of {num_devices} devices")
    return sorted(int(i) for i in rng.choice(num_devices, size=k, replace=False))


@dataclass
class Device:
    device_id: int
    train: Dataset
    holdout: Dataset
    prompts: np.ndarray
    score_batch: Dataset


class Federation:
    """Mutable simulation state: backbone, devices, server vector and ledger."""

    def __init__(self, cfg: FederationConfig, dataset: Optional[Dataset] = None):
        self.cfg = cfg
        self.opt = make_optimizer(cfg.optimizer)
        data = dataset if dataset is not None else synth_task(
            cfg.seed, cfg.data.num_classes, cfg.data.input_dim, cfg.data.num_examples,
            cfg.data.margin, cfg.data.noise)
        dims = cfg.model
        self.backbone = Backbone.init(dims.num_layers, dims.hidden_dim, data.input_dim, dims.prompt_dim,
                                      data.num_classes, (cfg.seed, dims.init_seed))
        shards = dirichlet_partition(data, PartitionSpec(
            cfg.num_devices, cfg.data.label_alpha, cfg.data.size_alpha, cfg.seed, cfg.data.holdout_fraction))
        score_rng = np.random.default_rng((cfg.seed, 1))
        bs = cfg.selection.scoring.score_batch_size
        self.devices = []
        for i, sh in enumerate(shards):
            take = min(bs, len(sh.train))
            pick = np.sort(score_rng.choice(len(sh.train), size=take, replace=False))
            self.devices.append(Device(i, sh.train, sh.holdout, self.backbone.zero_prompts(),
                                       sh.train.subset(pick)))
        self.initial_prompts = self.backbone.zero_prompts()
        self.global_prompts = self.initial_prompts.copy()
        self.sync_layers = list(range(dims.num_layers))
        self.server = ServerOptState(self.backbone.num_prompt_params)
        self.selection: Optional[SelectionResult] = None
        self.ledger = CommLedger()
        self.rng = np.random.default_rng((cfg.seed, 2))
        self.round = 0

    @property
    def phase(self):
        return WARMUP if self.selection is None else SELECTED

    def _coords(self):
        return sync_coords(self.sync_layers, self.backbone.prompt_dim)

    def global_vector(self):
        return self.global_prompts.ravel()[self._coords()]

    def composite_prompts(self, device: Device):
        p = device.prompts.copy()
        p[self.sync_layers] = self.global_prompts[self.sync_layers]
        return p

    def evaluate(self):
        """Sample-weighted accuracy/loss over every device's holdout shard."""
        b = self.backbone
        correct, losses, sizes = [], [], []
        global_only = self.global_prompts.copy()
        private = [l for l in range(b.num_layers) if l not in self.sync_layers]
        global_only[private] = 0.0
        g_correct = 0
        for dev in self.devices:
            X, y = dev.holdout.X, dev.holdout.y
            ls, _, _, logits = run_batch(b, self.composite_prompts(dev), X, y, want_grad=False)
            correct.append(np.argmax(logits, axis=1) == y)
            losses.append(ls.sum())
            sizes.append(len(y))
            _, _, _, g_logits = run_batch(b, global_only, X, y, want_grad=False)
            g_correct += int(np.sum(np.argmax(g_logits, axis=1) == y))
        total = sum(sizes)
        hits = np.concatenate(correct)
        return hits.sum() / total, sum(losses) / total, g_correct / total, hits

    def run_round(self):
        cfg = self.cfg
        self.round += 1
        r = self.round
        phase = self.phase
        sampled = sample_devices(self.rng, cfg.num_devices, cfg.sample_size)
        coords = self._coords()
        payload = len(coords)
        updates = []
        for i in sampled:
            dev = self.devices[i]
            # download: synchronised rows replaced by the server copy
            dev.prompts[self.sync_layers] = self.global_prompts[self.sync_layers]
            step_rng = np.random.default_rng((cfg.seed, 3, r, i))
            upd = local_update(self.backbone, dev.prompts, self.sync_layers, dev.train, cfg.local_steps,
                               self.opt.device_rule, cfg.hyper, step_rng, device_id=i)
            assert upd.delta.size == payload
            updates.append(upd)
        self.ledger.record(payload, len(sampled))
        new_w, self.server = server_round(self.server, updates, sampled, cfg.num_devices,
                                          self.global_vector(), self.opt, cfg.hyper)
        flat = self.global_prompts.ravel().copy()
        flat[coords] = new_w
        self.global_prompts = flat.reshape(self.global_prompts.shape)

        if phase == WARMUP and r == cfg.warmup_rounds and r < cfg.rounds:
            self._select()

        acc, loss, g_acc, hits = self.evaluate()
        return RoundMetrics(r, phase, float(acc), float(loss), self.ledger.uplink[-1],
                            self.ledger.downlink[-1], sampled, float(g_acc), hits)

    def _select(self):
        b = self.backbone
        # every device evaluates the current global prompts and keeps them
        for dev in self.devices:
            dev.prompts[...] = self.global_prompts
        views = [DeviceView(b, dev.prompts, dev.score_batch, dev.device_id) for dev in self.devices]
        result = run_selection(views, self.initial_prompts, self.cfg.selection)
        self.selection = result
        self.ledger.selection_downlink = b.num_prompt_params * len(self.devices)
        self.ledger.selection_uplink = (b.num_layers + 1) * len(self.devices)
        old = self._coords()
        self.sync_layers = sorted(result.selected_layers)
        keep = np.searchsorted(old, self._coords())
        self.server = self.server.project(keep)


@dataclass
class ExperimentResult:
    metrics: List[RoundMetrics]
    selection: Optional[SelectionResult]
    ledger: CommLedger
    federation: Federation = field(repr=False, default=None)


def run_experiment(cfg: FederationConfig, dataset: Optional[Dataset] = None):
    fed = Federation(cfg, dataset)
    metrics = [fed.run_round() for _ in range(cfg.rounds)]
    return ExperimentResult(metrics, fed.selection, fed.ledger, fed)

