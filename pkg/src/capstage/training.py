"""Three-stage training: cross-entropy warmup, word-level oracle with
Gumbel-Max selection and decaying teacher forcing, then self-critical
policy-gradient training on a CIDEr+BLEU reward.

The stage scheduler moves from XE to ORACLE after a fixed warmup and from
ORACLE to SCST (permanently) once validation CIDEr has failed to beat its
best for `patience` consecutive epochs. All stochastic choices flow through
a single torch.Generator whose state is serialized in checkpoints, so runs
are reproducible byte-for-byte.
"""

from __future__ import annotations

import base64
import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .corpus import PAD, Vocabulary, VideoRecord, encode_caption
from .metrics import DocFreq, MetricReport, bleu4_sentence, cider, compute_df, evaluate_corpus
from .model import (
    EncodedVideo,
    ModelConfig,
    decoder_step,
    encode,
    greedy_decode_batch,
    initial_state,
    init_params,
    param_shapes,
    sample_decode_batch,
)

STAGE_XE = "XE"
STAGE_ORACLE = "ORACLE"
STAGE_SCST = "SCST"
STAGES = (STAGE_XE, STAGE_ORACLE, STAGE_SCST)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericError(RuntimeError):
    """Loss or gradient left the finite range; the run cannot continue."""


@dataclass
class StageConfig:
    """Schedule and optimization knobs for the three-stage run."""

    warmup_epochs: int = 5
    max_epochs: int = 30
    learning_rate: float = 5e-3
    scst_learning_rate: float | None = 1e-4
    batch_size: int = 5  # videos per step; all their captions train together
    mu: float = 12.0
    tau: float = 1.0
    patience: int = 3
    w_cider: float = 0.5
    w_bleu: float = 0.5
    target_token_acc: float | None = None  # optional early stop during warmup

    def validate(self) -> "StageConfig":
        if self.mu <= 0 or self.tau <= 0:
            raise ValueError("mu and tau must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if abs(self.w_cider + self.w_bleu - 1.0) > 1e-12:
            raise ValueError("reward weights must sum to 1")
        if self.warmup_epochs < 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("epoch and batch settings must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "StageConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown stage config keys {sorted(unknown)}")
        return cls(**obj).validate()


@dataclass
class TrainState:
    epoch: int = 0  # completed epochs
    stage: str = STAGE_XE
    oracle_epochs: int = 0  # completed ORACLE epochs, indexes the decay
    val_cider_history: list[float] = field(default_factory=list)
    best_cider: float = float("-inf")


# ---------------------------------------------------------------------------
# Losses and stage primitives
# ---------------------------------------------------------------------------

def xe_loss(step_logits: torch.Tensor, target_ids: torch.Tensor, pad_mask: torch.Tensor):
    """Mean negative log-likelihood of targets over unmasked positions."""
    logp = torch.log_softmax(step_logits, dim=-1)
    picked = logp.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)
    mask = pad_mask.to(picked.dtype)
    n = mask.sum()
    if float(n) == 0.0:
        raise ValueError("all positions are masked")
    return -(picked * mask).sum() / n


def token_accuracy(step_logits: torch.Tensor, target_ids: torch.Tensor, pad_mask: torch.Tensor) -> float:
    hits = (step_logits.argmax(dim=-1) == target_ids) & pad_mask
    return float(hits.sum()) / float(pad_mask.sum())


def gumbel_noise(u):
    """Standard Gumbel noise from a uniform(0,1) draw: -log(-log u)."""
    t = torch.as_tensor(u, dtype=torch.float64)
    if not bool(((t > 0) & (t < 1)).all()):
        raise ValueError("u must lie strictly inside (0, 1)")
    return -torch.log(-torch.log(t))


def _gumbel_argmax(logits: torch.Tensor, tau: float, rng: torch.Generator) -> torch.Tensor:
    u = torch.rand(logits.shape, dtype=torch.float64, generator=rng)
    u = u.clamp(1e-12, 1.0 - 1e-12)
    perturbed = (logits.detach().to(torch.float64) + gumbel_noise(u)) / tau
    return perturbed.argmax(dim=-1)


def oracle_select(prev_logits: torch.Tensor, tau: float, rng: torch.Generator) -> int:
    """Gumbel-Max word selection: argmax((logits + noise) / tau).

    At tau=1 the returned ids are distributed as softmax(prev_logits).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    return int(_gumbel_argmax(prev_logits.reshape(-1), tau, rng))


def teacher_force_prob(epoch: int, mu: float) -> float:
    """Decaying probability of feeding the ground-truth previous word."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return mu / (mu + math.exp(epoch / mu))


def stage_scheduler(state: TrainState, config: StageConfig) -> str:
    """Stage for the next epoch given completed-epoch validation history.

    XE during warmup; afterwards ORACLE until validation CIDEr fails to
    exceed its running best for `patience` consecutive epochs, then SCST
    forever (ties count as non-improving).
    """
    if state.epoch < config.warmup_epochs:
        return STAGE_XE
    if state.stage == STAGE_SCST:
        return STAGE_SCST
    best = float("-inf")
    streak = 0
    for v in state.val_cider_history[config.warmup_epochs :]:
        if v > best:
            best = v
            streak = 0
        else:
            streak += 1
            if streak >= config.patience:
                return STAGE_SCST
    return STAGE_ORACLE


def sequence_reward(ids, refs, df: DocFreq, w_cider: float, w_bleu: float) -> float:
    """SCST reward: w_cider * CIDEr/10 + w_bleu * sentence BLEU-4.

    Empty candidates fall out as zero reward from both metrics.
    """
    return w_cider * cider(ids, refs, df) / 10.0 + w_bleu * bleu4_sentence(ids, refs)


def scst_loss(sampled_ids, sampled_logps: torch.Tensor, greedy_ids, refs, df: DocFreq,
              w_cider: float = 0.5, w_bleu: float = 0.5):
    """Self-critical loss for one video: -(r_sampled - r_greedy) * sum(logp).

    Returns (loss, stats) where stats carries both rewards and the advantage.
    """
    r_sampled = sequence_reward(sampled_ids, refs, df, w_cider, w_bleu)
    r_greedy = sequence_reward(greedy_ids, refs, df, w_cider, w_bleu)
    advantage = r_sampled - r_greedy
    loss = -advantage * sampled_logps.sum()
    return loss, {"r_sampled": r_sampled, "r_greedy": r_greedy, "advantage": advantage}


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def adam_init(params: dict[str, torch.Tensor]) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
    return {k: (torch.zeros_like(t), torch.zeros_like(t)) for k, t in params.items()}


def adam_update(params, grads, moments, lr: float, beta1: float = ADAM_BETA1,
                beta2: float = ADAM_BETA2, eps: float = ADAM_EPS, t: int = 1) -> None:
    """In-place bias-corrected Adam step. t is the 1-based step count."""
    if t < 1:
        raise ValueError("step count t must be >= 1")
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if not bool(torch.isfinite(g).all()):
                raise NumericError(f"non-finite gradient in {name}")
            m, v = moments[name]
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = m / (1 - beta1 ** t)
            v_hat = v / (1 - beta2 ** t)
            p.add_(-lr * m_hat / (v_hat.sqrt() + eps))


# ---------------------------------------------------------------------------
# Split tensors
# ---------------------------------------------------------------------------

@dataclass
class SplitTensors:
    """A split loaded into memory: stacked features plus encoded captions."""

    video_ids: list[str]
    appearance: torch.Tensor  # (N, T, d_app)
    motion: torch.Tensor
    audio: torch.Tensor
    topics: torch.Tensor  # (N,) long
    captions: list[list[list[int]]]  # per video: encoded [BOS..EOS] rows
    refs: list[list[list[int]]]  # per video: reference content ids, untruncated

    def __len__(self) -> int:
        return len(self.video_ids)


def prepare_split(records: list[VideoRecord], root: Path, vocab: Vocabulary,
                  track: str, config: ModelConfig) -> SplitTensors:
    if not records:
        raise ValueError("split has no records")
    apps, mots, auds, topics, caps, refs = [], [], [], [], [], []
    for rec in records:
        if track not in rec.captions:
            raise ValueError(f"{rec.video_id}: no captions for track {track!r}")
        bundle = rec.load_features(root)
        apps.append(torch.tensor(bundle.appearance, dtype=torch.float32))
        mots.append(torch.tensor(bundle.motion, dtype=torch.float32))
        auds.append(torch.tensor(bundle.audio, dtype=torch.float32))
        topics.append(rec.topic_id)
        caps.append([encode_caption(t, vocab, config.max_len + 2) for t in rec.captions[track]])
        refs.append([vocab.encode_tokens(t) for t in rec.captions[track]])
    return SplitTensors(
        video_ids=[r.video_id for r in records],
        appearance=torch.stack(apps),
        motion=torch.stack(mots),
        audio=torch.stack(auds),
        topics=torch.tensor(topics, dtype=torch.long),
        captions=caps,
        refs=refs,
    )


def _pad_rows(rows: list[list[int]]) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return out


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------

class Trainer:
    """Owns parameters, optimizer moments, the RNG, and the stage loop."""

    def __init__(self, model_config: ModelConfig, stage_config: StageConfig,
                 vocab: Vocabulary, track: str, train_data: SplitTensors,
                 val_data: SplitTensors | None, seed: int = 0,
                 params: dict[str, torch.Tensor] | None = None):
        self.config = model_config.validate()
        self.stage_config = stage_config.validate()
        self.vocab = vocab
        self.track = track
        self.train_data = train_data
        self.val_data = val_data
        self.params = params if params is not None else init_params(model_config, seed)
        for p in self.params.values():
            p.requires_grad_(True)
        self.moments = adam_init(self.params)
        self.adam_t = 0
        self.gen = torch.Generator().manual_seed(seed)
        self.state = TrainState()
        self.reward_df = compute_df(train_data.refs)

    # -- shared plumbing ----------------------------------------------------

    def _encode_videos(self, idx: torch.Tensor) -> EncodedVideo:
        d = self.train_data
        return encode(d.appearance[idx], d.motion[idx], d.audio[idx],
                      d.topics[idx], self.params, self.config)

    def _step(self, loss: torch.Tensor, lr: float) -> None:
        if not bool(torch.isfinite(loss)):
            raise NumericError(f"non-finite loss at epoch {self.state.epoch + 1}")
        for p in self.params.values():
            if p.grad is not None:
                p.grad = None
        loss.backward()
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        self.adam_t += 1
        adam_update(self.params, grads, self.moments, lr, t=self.adam_t)

    def _video_batches(self):
        n = len(self.train_data)
        perm = torch.randperm(n, generator=self.gen)
        bs = self.stage_config.batch_size
        for i in range(0, n, bs):
            yield perm[i : i + bs]

    def _teacher_batch(self, vid_idx: torch.Tensor):
        """Expand a video batch to all its captions, teacher-forcing layout."""
        rows, owner = [], []
        for j, v in enumerate(vid_idx.tolist()):
            for row in self.train_data.captions[v]:
                rows.append(row)
                owner.append(j)
        tokens = _pad_rows(rows)
        enc = self._encode_videos(vid_idx).index(torch.tensor(owner, dtype=torch.long))
        inputs = tokens[:, :-1]
        targets = tokens[:, 1:]
        return enc, inputs, targets, targets != PAD

    # -- stage epochs ---------------------------------------------------------

    def xe_epoch(self) -> dict:
        total_loss, total_acc, steps = 0.0, 0.0, 0
        for vid_idx in self._video_batches():
            enc, inputs, targets, mask = self._teacher_batch(vid_idx)
            state = initial_state(enc, self.config)
            logits = []
            for t in range(inputs.shape[1]):
                state = state.with_word(inputs[:, t])
                step_logits, state = decoder_step(state, enc, self.params, self.config)
                logits.append(step_logits)
            logits = torch.stack(logits, dim=1)
            loss = xe_loss(logits, targets, mask)
            self._step(loss, self.stage_config.learning_rate)
            total_loss += float(loss.detach())
            total_acc += token_accuracy(logits.detach(), targets, mask)
            steps += 1
        return {"loss": total_loss / steps, "token_acc": total_acc / steps}

    def oracle_epoch(self) -> dict:
        p = teacher_force_prob(self.state.oracle_epochs, self.stage_config.mu)
        tau = self.stage_config.tau
        total_loss, total_acc, steps = 0.0, 0.0, 0
        for vid_idx in self._video_batches():
            enc, inputs, targets, mask = self._teacher_batch(vid_idx)
            state = initial_state(enc, self.config)
            prev_logits = None
            logits = []
            for t in range(inputs.shape[1]):
                words = inputs[:, t]
                if t > 0:
                    use_gt = torch.rand(words.shape, dtype=torch.float64, generator=self.gen) < p
                    oracle_words = _gumbel_argmax(prev_logits, tau, self.gen)
                    words = torch.where(use_gt, words, oracle_words)
                state = state.with_word(words)
                step_logits, state = decoder_step(state, enc, self.params, self.config)
                prev_logits = step_logits
                logits.append(step_logits)
            logits = torch.stack(logits, dim=1)
            loss = xe_loss(logits, targets, mask)
            self._step(loss, self.stage_config.learning_rate)
            total_loss += float(loss.detach())
            total_acc += token_accuracy(logits.detach(), targets, mask)
            steps += 1
        return {"loss": total_loss / steps, "token_acc": total_acc / steps, "p": p}

    def scst_epoch(self) -> dict:
        cfg = self.stage_config
        lr = cfg.scst_learning_rate if cfg.scst_learning_rate is not None else cfg.learning_rate
        total_loss, r_sampled_sum, r_greedy_sum = 0.0, 0.0, 0.0
        n_videos, n_equal, steps = 0, 0, 0
        max_abs_adv_equal = 0.0
        for vid_idx in self._video_batches():
            enc = self._encode_videos(vid_idx)
            sampled, logp_sum = sample_decode_batch(enc, self.params, self.config, self.gen)
            greedy = greedy_decode_batch(enc, self.params, self.config)
            advs = []
            for j, v in enumerate(vid_idx.tolist()):
                refs = self.train_data.refs[v]
                r_s = sequence_reward(sampled[j], refs, self.reward_df, cfg.w_cider, cfg.w_bleu)
                r_g = sequence_reward(greedy[j], refs, self.reward_df, cfg.w_cider, cfg.w_bleu)
                advs.append(r_s - r_g)
                r_sampled_sum += r_s
                r_greedy_sum += r_g
                if sampled[j] == greedy[j]:
                    n_equal += 1
                    max_abs_adv_equal = max(max_abs_adv_equal, abs(r_s - r_g))
            adv = torch.tensor(advs, dtype=logp_sum.dtype)
            loss = -(adv * logp_sum).mean()
            self._step(loss, lr)
            total_loss += float(loss.detach())
            n_videos += len(advs)
            steps += 1
        return {
            "loss": total_loss / steps,
            "mean_sampled_reward": r_sampled_sum / n_videos,
            "mean_greedy_reward": r_greedy_sum / n_videos,
            "n_sampled_equals_greedy": n_equal,
            "max_abs_advantage_when_equal": max_abs_adv_equal,
        }

    # -- evaluation -----------------------------------------------------------

    def greedy_hypotheses(self, data: SplitTensors, chunk: int = 64) -> list[list[int]]:
        hyps: list[list[int]] = []
        for i in range(0, len(data), chunk):
            enc = encode(data.appearance[i : i + chunk], data.motion[i : i + chunk],
                         data.audio[i : i + chunk], data.topics[i : i + chunk],
                         self.params, self.config)
            hyps.extend(greedy_decode_batch(enc, self.params, self.config))
        return hyps

    def evaluate(self, data: SplitTensors) -> MetricReport:
        return evaluate_corpus(self.greedy_hypotheses(data), data.refs)

    def mean_greedy_reward(self, data: SplitTensors) -> float:
        cfg = self.stage_config
        hyps = self.greedy_hypotheses(data)
        return sum(
            sequence_reward(h, refs, self.reward_df, cfg.w_cider, cfg.w_bleu)
            for h, refs in zip(hyps, data.refs)
        ) / len(data)

    # -- full run -------------------------------------------------------------

    def run_epoch(self, stage: str) -> dict:
        if stage == STAGE_XE:
            stats = self.xe_epoch()
        elif stage == STAGE_ORACLE:
            stats = self.oracle_epoch()
        elif stage == STAGE_SCST:
            stats = self.scst_epoch()
        else:
            raise ValueError(f"unknown stage {stage!r}")
        self.state.epoch += 1
        self.state.stage = stage
        if stage == STAGE_ORACLE:
            self.state.oracle_epochs += 1
        return stats

    def train(self, out_dir: Path | None = None, log_lines: list | None = None) -> list[dict]:
        """Scheduler-driven run for up to max_epochs; returns per-epoch stats.

        When out_dir is given, writes train_log.jsonl plus per-epoch, last,
        and best checkpoints under out_dir/checkpoints/.
        """
        history = []
        ckpt_dir = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            ckpt_dir = out_dir / "checkpoints"
            ckpt_dir.mkdir(parents=True, exist_ok=True)
        while self.state.epoch < self.stage_config.max_epochs:
            stage = stage_scheduler(self.state, self.stage_config)
            t0 = time.monotonic()
            stats = self.run_epoch(stage)
            val = self.evaluate(self.val_data) if self.val_data is not None else None
            if val is not None:
                self.state.val_cider_history.append(val.cider)
                if val.cider > self.state.best_cider:
                    self.state.best_cider = val.cider
                    if ckpt_dir is not None:
                        save_checkpoint(ckpt_dir / "best.ckpt", self)
            entry = {
                "epoch": self.state.epoch,
                "stage": stage,
                "loss": stats["loss"],
                "val": None if val is None else json.loads(val.to_json()),
                "p": stats.get("p"),
                "lr": self.stage_config.learning_rate,
                "wall_time": time.monotonic() - t0,
            }
            entry.update({k: v for k, v in stats.items() if k not in entry})
            history.append(entry)
            if log_lines is not None:
                log_lines.append(entry)
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir / f"epoch_{self.state.epoch:03d}.ckpt", self)
                save_checkpoint(ckpt_dir / "last.ckpt", self)
                with open(out_dir / "train_log.jsonl", "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry, sort_keys=True) + "\n")
            acc_target = self.stage_config.target_token_acc
            if acc_target is not None and stats.get("token_acc", 0.0) >= acc_target:
                break
        return history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CAPSTG01"
CHECKPOINT_FORMAT = "capstage-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """File is not a readable checkpoint of the supported version."""


def save_checkpoint(path: Path, trainer: Trainer) -> None:
    """Write the versioned checkpoint container.

    Layout: magic, uint64 little-endian header length, JSON header (sorted
    keys), then all tensors as raw little-endian float32 in header order.
    The header carries config, vocab, stage state, the Adam step count, and
    the serialized RNG state, so a load restores training exactly.
    """
    tensors: list[tuple[str, torch.Tensor]] = []
    for name in sorted(trainer.params):
        tensors.append((name, trainer.params[name]))
    for name in sorted(trainer.moments):
        m, v = trainer.moments[name]
        tensors.append((f"adam_m.{name}", m))
        tensors.append((f"adam_v.{name}", v))
    manifest = []
    offset = 0
    blobs = []
    for name, t in tensors:
        data = t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": trainer.config.to_dict(),
        "stage_config": trainer.stage_config.to_dict(),
        "track": trainer.track,
        "vocab": trainer.vocab.id_to_token,
        "vocab_min_count": trainer.vocab.min_count,
        "stage": trainer.state.stage,
        "epoch": trainer.state.epoch,
        "oracle_epochs": trainer.state.oracle_epochs,
        "val_cider_history": trainer.state.val_cider_history,
        "best_cider": trainer.state.best_cider,
        "adam_t": trainer.adam_t,
        "rng_state": base64.b64encode(trainer.gen.get_state().numpy().tobytes()).decode("ascii"),
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for b in blobs:
            f.write(b)


def load_checkpoint(path: Path, train_data: SplitTensors | None = None,
                    val_data: SplitTensors | None = None) -> Trainer:
    """Restore a Trainer from a checkpoint container.

    Split tensors are optional: evaluation and inference only need the
    parameters, config, and vocabulary. A placeholder single-video dataset
    is synthesized when train_data is omitted so reward document frequencies
    exist; training should always pass real data.
    """
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    start = len(CHECKPOINT_MAGIC) + 8
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated header")
    (header_len,) = struct.unpack_from("<Q", raw, len(CHECKPOINT_MAGIC))
    if len(raw) < start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown container format {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
    config = ModelConfig.from_dict(header["model_config"])
    stage_config = StageConfig.from_dict(header["stage_config"])
    vocab = Vocabulary.from_id_to_token(header["vocab"], header["vocab_min_count"])

    blob = raw[start + header_len :]
    loaded: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["offset"] + 4 * count > len(blob):
            raise CheckpointError(f"{path}: truncated tensor data for {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
        loaded[entry["name"]] = torch.tensor(arr, dtype=torch.float32).reshape(shape)

    expected = param_shapes(config)
    params = {}
    for name, shape in expected.items():
        if name not in loaded:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if tuple(loaded[name].shape) != shape:
            raise CheckpointError(f"{path}: tensor {name} has shape "
                                  f"{tuple(loaded[name].shape)}, expected {shape}")
        params[name] = loaded[name]

    if train_data is None:
        train_data = SplitTensors(
            video_ids=["placeholder"],
            appearance=torch.zeros(1, 1, config.d_app),
            motion=torch.zeros(1, 1, config.d_mot),
            audio=torch.zeros(1, 1, config.d_aud),
            topics=torch.zeros(1, dtype=torch.long),
            captions=[[[PAD]]],
            refs=[[[PAD]]],
        )
    trainer = Trainer(config, stage_config, vocab, header["track"],
                      train_data, val_data, seed=0, params=params)
    for name in expected:
        trainer.moments[name] = (loaded[f"adam_m.{name}"], loaded[f"adam_v.{name}"])
    trainer.adam_t = header["adam_t"]
    trainer.state = TrainState(
        epoch=header["epoch"],
        stage=header["stage"],
        oracle_epochs=header["oracle_epochs"],
        val_cider_history=list(header["val_cider_history"]),
        best_cider=header["best_cider"],
    )
    rng_bytes = base64.b64decode(header["rng_state"])
    trainer.gen.set_state(torch.tensor(np.frombuffer(rng_bytes, dtype=np.uint8)))
    return trainer
