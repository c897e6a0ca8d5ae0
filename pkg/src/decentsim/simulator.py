"""Synchronous round engine with byte-exact communication accounting.

Every round runs in phases with barriers between them: parameter
exchange, local gradient work, optional cross-gradient exchange, then
update and gossip. Per-agent work inside a phase may fan out over a
thread pool; inputs are snapshotted at the phase barrier and results are
assembled in agent order, so outputs are bitwise independent of the
worker count.

Byte accounting models 32-bit wire floats: a parameter or raw gradient
message costs 4*d bytes per directed edge, a compressed cross-gradient
costs its serialized size. Self-loops are local and cost nothing.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .algorithms import (
    AgentState,
    HyperParams,
    apply_lr_schedule,
    compngc_prepare,
    dpsgd_finalize,
    dpsgd_prepare,
    ngc_apply,
    ngc_prepare,
    ngc_update,
)
from .compression import wire_size_bytes
from .errors import ConfigurationError, RunAbortError
from .metrics import MetricsRow, consensus_error, consensus_model
from .models import (
    Dataset,
    ModelSpec,
    evaluate,
    generate_synthetic,
    init_params,
    load_csv,
    loss_and_gradient,
)
from .partition import partition_iid, partition_label_skew
from .topology import (
    TopologySpec,
    build_mixing_matrix,
    neighbors,
    spectral_gap,
    validate_doubly_stochastic,
)

ALGORITHMS = ("dpsgd", "ngc", "compngc")
_VAL_SEED_OFFSET = 10_000_019


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run depends on; flat so config files stay flat."""

    algorithm: str = "ngc"
    agents: int = 5
    topology: str = "ring"
    torus_rows: int | None = None
    partition: str = "skew"
    alpha: float = 1.0
    beta: float = 0.9
    eta: float = 0.01
    gamma: float = 0.5
    schedule: str = "step"
    epochs: int = 60
    batch_size: int = 32
    seed: int = 1
    dataset: str = "synthetic"
    data_seed: int | None = None
    classes: int = 10
    dim: int = 16
    per_class: int = 200
    spread: float = 0.15
    val_per_class: int = 50
    val_fraction: float = 0.2
    model: str = "mlp"
    hidden_dim: int = 32
    activation: str = "tanh"
    workers: int = 1
    gossip_post_update: bool = False
    metric_every: int = 1

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.partition not in ("iid", "skew"):
            raise ConfigurationError(f"unknown partition {self.partition!r}")
        if self.model not in ("logistic", "mlp"):
            raise ConfigurationError(f"unknown model {self.model!r}")
        if self.model == "mlp" and self.hidden_dim < 1:
            raise ConfigurationError("mlp needs a positive hidden_dim")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.workers < 1:
            raise ConfigurationError("workers must be positive")
        if self.metric_every < 1:
            raise ConfigurationError("metric_every must be positive")
        if self.dataset == "synthetic" and self.val_per_class < 1:
            raise ConfigurationError("val_per_class must be positive")
        if self.dataset != "synthetic" and not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must lie in (0, 1)")
        self.hyper_params()  # range-checks alpha/beta/eta/gamma

    def hyper_params(self) -> HyperParams:
        return HyperParams(self.alpha, self.beta, self.eta, self.gamma, self.schedule)


@dataclass
class CommLedger:
    """Cumulative and per-round byte counts for all network traffic."""

    num_agents: int
    param_bytes: int = 0
    crossgrad_bytes: int = 0
    messages: int = 0
    per_agent_sent: np.ndarray | None = None
    round_param_bytes: list = field(default_factory=list)
    round_crossgrad_bytes: list = field(default_factory=list)

    def __post_init__(self):
        if self.per_agent_sent is None:
            self.per_agent_sent = np.zeros(self.num_agents, dtype=np.int64)

    @property
    def total_bytes(self) -> int:
        return self.param_bytes + self.crossgrad_bytes

    def record_round(self, param_bytes: int, crossgrad_bytes: int, messages: int,
                     per_agent: np.ndarray):
        self.param_bytes += param_bytes
        self.crossgrad_bytes += crossgrad_bytes
        self.messages += messages
        self.per_agent_sent += per_agent
        self.round_param_bytes.append(param_bytes)
        self.round_crossgrad_bytes.append(crossgrad_bytes)


class _RoundTally:
    """Accumulates one round's traffic before it lands in the ledger."""

    def __init__(self, num_agents: int):
        self.param_bytes = 0
        self.crossgrad_bytes = 0
        self.messages = 0
        self.per_agent = np.zeros(num_agents, dtype=np.int64)

    def add(self, param_bytes: int, crossgrad_bytes: int, messages: int,
            per_agent: np.ndarray):
        self.param_bytes += param_bytes
        self.crossgrad_bytes += crossgrad_bytes
        self.messages += messages
        self.per_agent += per_agent

    def commit(self, ledger: CommLedger | None):
        if ledger is not None:
            ledger.record_round(self.param_bytes, self.crossgrad_bytes,
                                self.messages, self.per_agent)


@dataclass(frozen=True)
class SeedStreams:
    """Independent RNG streams derived from one master seed.

    Derivation: numpy SeedSequence(master, spawn_key=(k,)) with k = 0 for
    partitioning, 1 for shared parameter init, (2, i) for agent i's batch
    shuffles, 3 for validation splitting, 4 for diagnostics. Streams are
    stable across runs and mutually independent.
    """

    partition_seed: int
    init_rng: np.random.Generator
    agent_rngs: list
    val_seed: int
    diag_seed: int


def seed_streams(master_seed: int, num_agents: int) -> SeedStreams:
    """Spawn the per-purpose RNG streams for one run."""

    def sub(*key):
        return np.random.SeedSequence(master_seed, spawn_key=key)

    return SeedStreams(
        partition_seed=int(sub(0).generate_state(1)[0]),
        init_rng=np.random.default_rng(sub(1)),
        agent_rngs=[np.random.default_rng(sub(2, i)) for i in range(num_agents)],
        val_seed=int(sub(3).generate_state(1)[0]),
        diag_seed=int(sub(4).generate_state(1)[0]),
    )


@dataclass(frozen=True)
class RunResult:
    config: RunConfig
    rows: list
    ledger: CommLedger
    states: list
    spec: ModelSpec
    val_data: Dataset
    sqrt_rho: float

    @property
    def final_row(self) -> MetricsRow:
        return self.rows[-1]


def _map_agents(fn, count: int, workers: int):
    """Apply fn(i) for each agent, results in agent order regardless of pool."""
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(workers, count)) as pool:
        return list(pool.map(fn, range(count)))


def _neighbor_tables(w: np.ndarray):
    """Per-agent neighbor lists (excluding self) and weight maps (including)."""
    n = w.shape[0]
    peers = []
    weight_maps = []
    for i in range(n):
        nb = neighbors(w, i)
        peers.append([j for j in nb if j != i])
        weight_maps.append({j: float(w[i, j]) for j in nb})
    return peers, weight_maps


def _tally_exchange(peers, bytes_per_msg: int, num_agents: int):
    """Directed-edge traffic: every agent sends one message per peer."""
    per_agent = np.array([len(nb) * bytes_per_msg for nb in peers], dtype=np.int64)
    return int(per_agent.sum()), int(sum(len(nb) for nb in peers)), per_agent


def exchange_params(states: list[AgentState], peers, tally: _RoundTally) -> list[dict]:
    """Deliver current params along every directed edge; 4 bytes per coordinate."""
    dim = states[0].params.size
    total, msgs, per_agent = _tally_exchange(peers, 4 * dim, len(states))
    tally.add(total, 0, msgs, per_agent)
    return [{j: states[j].params for j in peers[i]} for i in range(len(states))]


def exchange_cross_gradients(works, peers, dim: int, compressed: bool,
                             tally: _RoundTally) -> list[dict]:
    """Deliver each agent's outgoing cross-gradients to their addressees."""
    per_msg = wire_size_bytes(dim) if compressed else 4 * dim
    total, msgs, per_agent = _tally_exchange(peers, per_msg, len(works))
    tally.add(0, total, msgs, per_agent)
    return [{j: works[j].outgoing[i] for j in peers[i]} for i in range(len(works))]


def run_round(states: list[AgentState], w: np.ndarray, hp: HyperParams, algorithm: str,
              batch_size: int, ledger: CommLedger | None = None, workers: int = 1,
              gossip_post_update: bool = False, tables=None):
    """One synchronous round for every agent; returns (states, losses, bundles)."""
    n = len(states)
    peers, weight_maps = tables if tables is not None else _neighbor_tables(w)
    tally = _RoundTally(n)
    dim = states[0].params.size

    if algorithm == "dpsgd":
        works = _map_agents(lambda i: dpsgd_prepare(states[i], hp, batch_size), n, workers)
        total, msgs, per_agent = _tally_exchange(peers, 4 * dim, n)
        tally.add(total, 0, msgs, per_agent)
        tilde_in = [{j: works[j].x_tilde for j in peers[i]} for i in range(n)]
        new_states = _map_agents(
            lambda i: dpsgd_finalize(states[i], works[i], tilde_in[i], weight_maps[i], hp),
            n, workers,
        )
        tally.commit(ledger)
        return new_states, [wk.batch_loss for wk in works], None

    if algorithm not in ("ngc", "compngc"):
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    compressed = algorithm == "compngc"
    prepare = compngc_prepare if compressed else ngc_prepare

    params_in = exchange_params(states, peers, tally)
    works = _map_agents(lambda i: prepare(states[i], params_in[i], hp, batch_size), n, workers)

    if hp.alpha != 0.0:
        cross_in = exchange_cross_gradients(works, peers, dim, compressed, tally)
    else:
        cross_in = [{} for _ in range(n)]

    updates = _map_agents(
        lambda i: ngc_update(states[i], works[i], cross_in[i], hp, weight_maps[i]),
        n, workers,
    )

    if gossip_post_update:
        # Variant: average the freshly updated parameters; costs one more
        # parameter exchange along every directed edge.
        total, msgs, per_agent = _tally_exchange(peers, 4 * dim, n)
        tally.add(total, 0, msgs, per_agent)
        gossip_params = [
            {**{j: updates[j][0] for j in peers[i]}, i: updates[i][0]} for i in range(n)
        ]
    else:
        gossip_params = [dict(params_in[i]) for i in range(n)]

    new_states = _map_agents(
        lambda i: ngc_apply(states[i], works[i], updates[i][0], updates[i][1],
                            gossip_params[i], weight_maps[i], hp),
        n, workers,
    )
    tally.commit(ledger)
    return new_states, [wk.batch_loss for wk in works], [u[2] for u in updates]


def _load_data(config: RunConfig) -> tuple[Dataset, Dataset]:
    if config.dataset == "synthetic":
        base = config.seed if config.data_seed is None else config.data_seed
        train = generate_synthetic(config.classes, config.dim, config.per_class,
                                   config.spread, base)
        val = generate_synthetic(config.classes, config.dim, config.val_per_class,
                                 config.spread, base + _VAL_SEED_OFFSET)
        return train, val
    full = load_csv(config.dataset)
    streams = seed_streams(config.seed, config.agents)
    rng = np.random.default_rng(streams.val_seed)
    perm = rng.permutation(full.n)
    n_val = max(1, int(full.n * config.val_fraction))
    if n_val >= full.n:
        raise ConfigurationError("validation split leaves no training data")
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    train = Dataset(full.features[train_idx], full.labels[train_idx], full.num_classes)
    val = Dataset(full.features[val_idx], full.labels[val_idx], full.num_classes)
    return train, val


def initial_states(config: RunConfig) -> tuple[list[AgentState], np.ndarray, Dataset]:
    """Validated mixing matrix and freshly initialized agents, before any round.

    Returns (states, w, validation_data); useful for diagnostics that probe
    the pre-training configuration directly.
    """
    config.validate()
    topo = TopologySpec(config.topology, config.agents, config.torus_rows)
    w = build_mixing_matrix(topo)
    if not validate_doubly_stochastic(w).passed:
        raise ConfigurationError("generated mixing matrix failed validation")
    gap = spectral_gap(w)
    if config.agents > 1 and not gap.connected:
        raise ConfigurationError("topology is disconnected")

    train, val = _load_data(config)
    streams = seed_streams(config.seed, config.agents)
    if config.partition == "iid":
        shards = partition_iid(train, config.agents, streams.partition_seed)
    else:
        shards = partition_label_skew(train, config.agents, topo, streams.partition_seed)

    hidden = config.hidden_dim if config.model == "mlp" else 0
    spec = ModelSpec(train.dim, train.num_classes, hidden, config.activation)
    x0 = init_params(spec, streams.init_rng)
    peers, _ = _neighbor_tables(w)

    states = []
    for i in range(config.agents):
        err_self = np.zeros(spec.param_count) if config.algorithm == "compngc" else None
        err_out = (
            {j: np.zeros(spec.param_count) for j in peers[i]}
            if config.algorithm == "compngc"
            else {}
        )
        states.append(
            AgentState(
                agent_id=i, spec=spec, data=train, shard=shards[i],
                params=x0.copy(), momentum=np.zeros(spec.param_count),
                rng=streams.agent_rngs[i], err_self=err_self, err_out=err_out,
            )
        )
    return states, w, val


def run(config: RunConfig) -> RunResult:
    """Execute one full training run; deterministic in config alone."""
    states, w, val = initial_states(config)
    hp = config.hyper_params()
    spec = states[0].spec
    train = states[0].data
    peers, weight_maps = _neighbor_tables(w)

    rounds_per_epoch = min(s.shard.size // config.batch_size for s in states)
    if rounds_per_epoch < 1:
        raise ConfigurationError("batch_size exceeds the smallest shard")

    ledger = CommLedger(config.agents)
    uniform = all(max(wm.values()) == min(wm.values()) for wm in weight_maps)
    bias_ok = uniform and config.algorithm in ("ngc", "compngc")

    rows: list[MetricsRow] = []

    def emit(round_idx, epoch_count, train_loss, eps_l1, omega_l1):
        center = consensus_model(states)
        val_loss, val_acc = evaluate(spec, center, val)
        rows.append(MetricsRow(
            round=round_idx, epoch=epoch_count, train_loss=train_loss,
            val_loss=float(val_loss), val_acc=float(val_acc),
            consensus_error=consensus_error(states),
            eps_l1=eps_l1, omega_l1=omega_l1,
            param_bytes=ledger.param_bytes, crossgrad_bytes=ledger.crossgrad_bytes,
        ))

    init_loss = float(np.mean([
        loss_and_gradient(spec, s.params, train, s.shard)[0] for s in states
    ]))
    emit(0, 0, init_loss, 0.0, 0.0)

    round_idx = 0
    for epoch in range(config.epochs):
        hp_eff = replace(hp, eta=apply_lr_schedule(hp, epoch, config.epochs))
        loss_accum = 0.0
        eps_accum = 0.0
        omega_accum = 0.0
        for _ in range(rounds_per_epoch):
            round_idx += 1
            states, losses, bundles = run_round(
                states, w, hp_eff, config.algorithm, config.batch_size,
                ledger=ledger, workers=config.workers,
                gossip_post_update=config.gossip_post_update,
                tables=(peers, weight_maps),
            )
            for s in states:
                if not np.isfinite(s.params).all():
                    raise RunAbortError(round_idx)
            loss_accum += float(np.mean(losses))
            if bias_ok and bundles is not None:
                eps_accum += _mean_cluster_norm(bundles, "model_variant")
                if hp.alpha != 0.0:
                    omega_accum += _mean_cluster_norm(bundles, "data_variant")
        if (epoch + 1) % config.metric_every == 0 or epoch + 1 == config.epochs:
            emit(round_idx, epoch + 1, loss_accum / rounds_per_epoch,
                 eps_accum / rounds_per_epoch, omega_accum / rounds_per_epoch)

    return RunResult(config, rows, ledger, states, spec, val,
                     spectral_gap(w).sqrt_rho)


def _mean_cluster_norm(bundles, attr: str) -> float:
    """Mean l1 norm of one cluster's mean deviation from the self gradient."""
    norms = []
    for b in bundles:
        terms = getattr(b, attr)
        m = len(b.weights)
        dev = np.zeros_like(b.self_grad)
        for g in terms.values():
            dev += g - b.self_grad
        norms.append(np.abs(dev / m).sum())
    return float(np.mean(norms))
