"""Speaker-listener referential game: message generation, candidate scoring,
loss, the training loop, and validation accuracy.

Token id 0 is a plain null/EOS-like vocabulary item (emittable); id 1 is the
message-start token, fed as the speaker's first input and never emitted, so
the emittable vocabulary is {0} + {2..V-1}.  Messages are always exactly T
tokens; corpus writers may truncate at the first 0.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import DataError, DivergenceError
from .nn import (
    NEG_INF,
    affine,
    embedding_lookup,
    gru_cell,
    gru_params,
    gumbel_softmax,
    init_affine,
    init_gru,
    uniform_init,
)
from .optim import AdamState, adam_step
from .rng import Prng
from .tensor import (
    Tensor,
    backward,
    log_softmax,
    no_grad,
    pow_const,
    softmax,
    tmean,
    tsum,
)

TOKEN_NULL = 0
TOKEN_START = 1
SCORE_EPS = 1e-10  # keeps the inverse-square score finite


@dataclass
class GameConfig:
    vocab_size: int
    seq_len: int
    distractors: int
    hidden_dim: int
    feature_dim: int
    temperature: float = 1.0
    batch_size: int = 256
    pool_size: int = 50_000
    learning_rate: float = 1e-3
    total_steps: int = 1000
    checkpoint_interval: int = 200
    seed: int = 0

    def validate(self) -> None:
        if self.vocab_size < 3:
            raise DataError(f"vocab_size must be >= 3 (ids 0 and 1 are reserved), "
                            f"got {self.vocab_size}")
        if self.seq_len < 1:
            raise DataError(f"seq_len must be >= 1, got {self.seq_len}")
        if not (1 <= self.distractors < self.batch_size <= self.pool_size):
            raise DataError(
                f"need 1 <= distractors < batch_size <= pool_size, got "
                f"{self.distractors}/{self.batch_size}/{self.pool_size}")
        if self.temperature <= 0:
            raise DataError(f"temperature must be > 0, got {self.temperature}")

    def to_dict(self) -> dict:
        return asdict(self)


def config_echo(cfg: GameConfig) -> dict:
    return {
        "game": cfg.to_dict(),
        "embed_dim": cfg.hidden_dim,
        "init": "uniform(-1/sqrt(H), 1/sqrt(H)), zero biases",
        "reserved_tokens": {"null": TOKEN_NULL, "start": TOKEN_START},
        "output_head_depth": 1,
        "image_head_depth": 1,
        "score_eps": SCORE_EPS,
    }


# -- parameters -----------------------------------------------------------------


def init_speaker(cfg: GameConfig, prng: Prng, dtype=np.float32) -> dict[str, Tensor]:
    h = cfg.hidden_dim
    scale = 1.0 / np.sqrt(h)
    params: dict[str, Tensor] = {}
    params["spk.embed"] = Tensor(uniform_init(prng, (cfg.vocab_size, h), scale, dtype),
                                 requires_grad=True)
    init_gru(params, "spk.gru", h, h, prng, dtype)
    init_affine(params, "spk.out", h, cfg.vocab_size, prng, dtype, scale=scale)
    if cfg.feature_dim != h:
        init_affine(params, "spk.proj", cfg.feature_dim, h, prng, dtype, scale=scale)
    return params


def init_listener(cfg: GameConfig, prng: Prng, dtype=np.float32) -> dict[str, Tensor]:
    h = cfg.hidden_dim
    scale = 1.0 / np.sqrt(h)
    params: dict[str, Tensor] = {}
    params["lsn.embed"] = Tensor(uniform_init(prng, (cfg.vocab_size, h), scale, dtype),
                                 requires_grad=True)
    init_gru(params, "lsn.gru", h, h, prng, dtype)
    init_affine(params, "lsn.img", cfg.feature_dim, h, prng, dtype, scale=scale)
    return params


def init_game(cfg: GameConfig, prng: Prng, dtype=np.float32) -> dict[str, Tensor]:
    params = init_speaker(cfg, prng, dtype)
    params.update(init_listener(cfg, prng, dtype))
    return params


def _start_mask(vocab_size: int, dtype) -> np.ndarray:
    mask = np.zeros(vocab_size, dtype=dtype)
    mask[TOKEN_START] = NEG_INF
    return mask


# -- speaker ----------------------------------------------------------------------


@dataclass
class SpeakerRollout:
    tokens: np.ndarray                      # (B, T) int64
    step_dists: list = field(repr=False)    # per step: Tensor (soft) or ndarray probs


def speaker_forward(params: dict, features: np.ndarray, cfg: GameConfig,
                    mode: str, prng: Prng | None = None,
                    temperature: float | None = None) -> SpeakerRollout:
    """Roll the speaker for exactly T tokens.

    soft:   gumbel-softmax vectors, fed back through the soft embedding
            (training path; gradient flows).
    sample: categorical draws from softmax(logits).
    greedy: argmax(logits); fully deterministic.
    """
    if mode not in ("soft", "sample", "greedy"):
        raise DataError(f"unknown speaker mode {mode!r}")
    if mode in ("soft", "sample") and prng is None:
        raise DataError(f"mode {mode!r} needs a prng")
    tau = cfg.temperature if temperature is None else temperature
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != cfg.feature_dim:
        raise DataError(f"features shape {features.shape} incompatible with "
                        f"feature_dim={cfg.feature_dim}")
    dtype = params["spk.embed"].dtype
    b = features.shape[0]

    feats = Tensor(features.astype(dtype, copy=False))
    h = affine(params, "spk.proj", feats) if "spk.proj.w" in params else feats
    mask = _start_mask(cfg.vocab_size, dtype)
    gru = gru_params(params, "spk.gru")

    tokens = np.empty((b, cfg.seq_len), dtype=np.int64)
    dists: list = []
    prev: np.ndarray | Tensor = np.full(b, TOKEN_START, dtype=np.int64)
    for t in range(cfg.seq_len):
        x = embedding_lookup(params["spk.embed"], prev)
        h = gru_cell(x, h, gru)
        logits = affine(params, "spk.out", h) + Tensor(mask)
        if not np.all(np.isfinite(logits.data)):
            raise DivergenceError(f"speaker logits diverged (NaN/inf) at step {t}")
        if mode == "soft":
            y = gumbel_softmax(logits, tau, prng)
            tokens[:, t] = y.data.argmax(axis=-1)
            dists.append(y)
            prev = y
        else:
            probs = softmax(logits).data
            if mode == "sample":
                ids = prng.categorical(probs)
            else:
                ids = probs.argmax(axis=-1)
            tokens[:, t] = ids
            dists.append(probs)
            prev = ids
    return SpeakerRollout(tokens=tokens, step_dists=dists)


# -- listener ----------------------------------------------------------------------


@dataclass
class SelectionDistribution:
    candidate_ids: np.ndarray
    scores: np.ndarray
    probabilities: np.ndarray
    correct_index: int


@dataclass
class ListenerResult:
    scores: Tensor
    probabilities: Tensor
    log_probabilities: Tensor
    hidden: Tensor  # hl_T, exposed for recomputation checks


def listener_forward(params: dict, message, candidates: np.ndarray,
                     cfg: GameConfig) -> ListenerResult:
    """Score K+1 candidates per batch row from the message GRU state.

    `message` is either an int array (B, T) or the speaker's list of soft
    step distributions.  score(i) = 1 / (||hl_T - img(i)||^2 + eps);
    probabilities are a max-subtracted softmax over scores.
    """
    dtype = params["lsn.embed"].dtype
    candidates = np.asarray(candidates, dtype=dtype)
    if candidates.ndim != 3 or candidates.shape[2] != cfg.feature_dim:
        raise DataError(f"candidates shape {candidates.shape} incompatible with "
                        f"feature_dim={cfg.feature_dim}")
    b = candidates.shape[0]
    gru = gru_params(params, "lsn.gru")

    if isinstance(message, np.ndarray):
        steps = [message[:, t] for t in range(message.shape[1])]
    else:
        steps = list(message)
    h = Tensor(np.zeros((b, cfg.hidden_dim), dtype=dtype))
    for step in steps:
        x = embedding_lookup(params["lsn.embed"], step)
        h = gru_cell(x, h, gru)

    cand_emb = affine(params, "lsn.img", Tensor(candidates))  # (B, K+1, H)
    diff = h.reshape((b, 1, cfg.hidden_dim)) - cand_emb
    sq = tsum(diff * diff, axis=-1)
    scores = pow_const(sq + SCORE_EPS, -1.0)
    return ListenerResult(scores=scores,
                          probabilities=softmax(scores, axis=-1),
                          log_probabilities=log_softmax(scores, axis=-1),
                          hidden=h)


# -- loss & batches -------------------------------------------------------------------


def check_candidate_rows(cand_ids: np.ndarray) -> None:
    """Reject duplicate candidates within a row (target is column 0)."""
    for row in cand_ids:
        if np.unique(row).size != row.size:
            raise DataError(f"duplicate candidate in batch row: {row.tolist()}")


def game_loss(params: dict, features: np.ndarray, cand_ids: np.ndarray,
              cfg: GameConfig, prng: Prng) -> tuple[Tensor, dict]:
    """Cross-entropy of picking the true input among its distractors,
    with soft (gumbel) speaker messages so the gradient reaches the speaker."""
    check_candidate_rows(cand_ids)
    targets = cand_ids[:, 0]
    rollout = speaker_forward(params, features[targets], cfg, "soft", prng)
    result = listener_forward(params, rollout.step_dists, features[cand_ids], cfg)
    loss = -tmean(result.log_probabilities[:, 0])
    acc = float((result.probabilities.data.argmax(axis=-1) == 0).mean())
    return loss, {"accuracy": acc, "tokens": rollout.tokens}


def sample_candidate_batch(prng: Prng, n_rows: int, cfg: GameConfig) -> np.ndarray:
    """Pool-then-batch sampling: draw a pool, then per-element distractors
    uniformly without replacement from the pool excluding the target.
    Returns (B, K+1) row ids with the target in column 0."""
    if n_rows < cfg.pool_size:
        raise DataError(f"need at least pool_size={cfg.pool_size} rows, got {n_rows}")
    pool = np.sort(prng.choice(n_rows, cfg.pool_size, replace=False)) \
        if cfg.pool_size < n_rows else np.arange(n_rows)
    picks = prng.choice(cfg.pool_size, cfg.batch_size, replace=False)
    targets = pool[picks]
    cand = np.empty((cfg.batch_size, cfg.distractors + 1), dtype=np.int64)
    cand[:, 0] = targets
    for b in range(cfg.batch_size):
        others = pool[pool != targets[b]]
        sel = prng.choice(others.size, cfg.distractors, replace=False)
        cand[b, 1:] = others[sel]
    return cand


# -- training -----------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_paths: list
    log: list
    final_params: dict


def _ckpt_dir(out_dir: str, step: int) -> str:
    return os.path.join(out_dir, f"step_{step:06d}")


def train_game(cfg: GameConfig, features: np.ndarray, out_dir: str) -> TrainResult:
    """Run the full training loop, checkpointing every `checkpoint_interval`
    steps and at the final step; writes train_log.json next to the checkpoints."""
    cfg.validate()
    features = np.asarray(features, dtype=np.float32)
    if features.shape[0] <= cfg.batch_size:
        raise DataError(f"need more feature rows ({features.shape[0]}) than "
                        f"batch_size ({cfg.batch_size})")
    if features.shape[0] < cfg.pool_size:
        raise DataError(f"need >= pool_size={cfg.pool_size} feature rows, "
                        f"got {features.shape[0]}")
    root = Prng(cfg.seed)
    data_rng = root.child("game-data")
    gumbel_rng = root.child("game-gumbel")
    params = init_game(cfg, root.child("game-init"))
    adam = AdamState(lr=cfg.learning_rate)
    echo = config_echo(cfg)

    os.makedirs(out_dir, exist_ok=True)
    paths: list[str] = []
    log: list[dict] = []

    def write_ckpt(step: int) -> None:
        path = _ckpt_dir(out_dir, step)
        save_checkpoint(path, params, step=step, config=echo)
        paths.append(path)

    if cfg.total_steps == 0:
        write_ckpt(0)
    for step in range(1, cfg.total_steps + 1):
        cand = sample_candidate_batch(data_rng, features.shape[0], cfg)
        loss, stats = game_loss(params, features, cand, cfg, gumbel_rng)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(
                f"game loss diverged at step {step}; last good checkpoint: "
                f"{paths[-1] if paths else 'none'}")
        backward(loss)
        adam_step(params, adam)
        log.append({"step": step, "loss": value, "accuracy": stats["accuracy"]})
        if step % cfg.checkpoint_interval == 0 or step == cfg.total_steps:
            write_ckpt(step)

    with open(os.path.join(out_dir, "train_log.json"), "w", encoding="utf-8") as f:
        json.dump({"config": echo, "entries": log}, f, sort_keys=True, indent=2)
        f.write("\n")
    return TrainResult(checkpoint_paths=paths, log=log, final_params=params)


# -- evaluation ---------------------------------------------------------------------


def load_game_params(source) -> tuple[dict, GameConfig]:
    """Accept a checkpoint path or a loaded Checkpoint; returns (params, config)."""
    if isinstance(source, str):
        source = load_checkpoint(source)
    if isinstance(source, Checkpoint):
        cfg = GameConfig(**source.config["game"])
        return source.params(), cfg
    raise DataError(f"cannot load game params from {type(source)!r}")


def eval_accuracy(params: dict, cfg: GameConfig, features: np.ndarray, k: int,
                  trials: int, prng: Prng, decode: str = "sample",
                  chunk: int = 512, collect: bool = False):
    """Fraction of trials where the listener's argmax hits the true input.

    Ties break toward the lowest candidate index.  `features` should be rows
    held out from training when measuring generalization (caller's call).
    Returns accuracy, or (accuracy, [SelectionDistribution]) with collect=True.
    """
    if trials <= 0:
        raise DataError(f"trials must be > 0, got {trials}")
    features = np.asarray(features, dtype=np.float32)
    n = features.shape[0]
    if n < k + 1:
        raise DataError(f"need >= {k + 1} rows for {k} distractors, got {n}")
    data_rng = prng.child("eval-data")
    decode_rng = prng.child("eval-decode")
    hits = 0
    dists: list[SelectionDistribution] = []
    done = 0
    with no_grad():
        while done < trials:
            b = min(chunk, trials - done)
            cand = np.empty((b, k + 1), dtype=np.int64)
            cand[:, 0] = data_rng.integers(n, size=b)
            for row in range(b):
                others = np.delete(np.arange(n), cand[row, 0])
                cand[row, 1:] = others[data_rng.choice(n - 1, k, replace=False)]
            rollout = speaker_forward(params, features[cand[:, 0]], cfg, decode,
                                      decode_rng)
            result = listener_forward(params, rollout.tokens, features[cand], cfg)
            pred = result.probabilities.data.argmax(axis=-1)
            hits += int((pred == 0).sum())
            if collect:
                for row in range(b):
                    dists.append(SelectionDistribution(
                        candidate_ids=cand[row].copy(),
                        scores=result.scores.data[row].copy(),
                        probabilities=result.probabilities.data[row].copy(),
                        correct_index=0))
            done += b
    acc = hits / trials
    return (acc, dists) if collect else acc
