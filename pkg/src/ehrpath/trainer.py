"""Training orchestration.

Supervised pretraining minimizes the aligned path loss: a teacher-forced
pass over the gold codes, steps whose prediction is already a gold label
keep it, the remaining labels are Hungarian-assigned, and the step after
the labels is supervised toward STOP. Adversarial rounds then alternate
per batch: one scorer update on ground-truth-vs-generated prefixes, then
one decoder update on the supervised loss plus a reward-weighted
policy-gradient term with the batch-mean reward as baseline. Validation
metrics are computed each epoch and the best-Jaccard parameters are
retained.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alignment import align_path, step_targets
from .checkpoint import save_checkpoint
from .corpus import ComplicationTable, CorpusBundle, EhrDocument
from .discriminator import (DiscriminatorConfig, LabeledPrefix, discriminator_loss,
                            init_discriminator_params, reward, split_prefixes)
from .encoder import EncoderConfig, encode_backward, encode_ehr, init_encoder_params
from .errors import ConfigError, TrainingError
from .generator import (GeneratorConfig, decode_path, decode_path_traced,
                        init_generator_params, path_loss, run_steps, sequence_backward)
from .metrics import PredictionRecord, metric_table
from .numerics import AdamConfig, ParamStore, adam_step, named_rng


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200              # adversarial epochs after pretraining
    pretrain_epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    max_len: int = 8
    seed: int = 0
    no_copy: bool = False
    no_arl: bool = False
    supervised_weight: float = 1.0   # weight of the aligned loss inside adversarial updates
    clip_norm: float = 5.0
    candidate_activation: str = "relu"
    dropout: float = 0.5
    # model sizes; defaults are the published configuration, shrink for desk runs
    d_embed: int = 100
    d_code: int = 100
    n_filters: int = 100
    kernel_sizes: tuple[int, ...] = (3, 4, 5)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2)

    @property
    def ablation(self) -> str:
        tags = [t for t, on in (("no_copy", self.no_copy), ("no_arl", self.no_arl)) if on]
        return ",".join(tags) if tags else "none"

    def validate(self) -> None:
        if self.epochs < 0 or self.pretrain_epochs < 0 or self.batch_size < 1 or self.max_len < 1:
            raise ConfigError("epochs/pretrain_epochs must be >= 0, batch_size/max_len >= 1")
        self.adam  # raises on bad optimizer settings


@dataclass
class Model:
    enc_cfg: EncoderConfig
    gen_cfg: GeneratorConfig
    gen_store: ParamStore
    disc_cfg: DiscriminatorConfig | None = None
    disc_store: ParamStore | None = None

    def snapshot(self) -> "Model":
        return Model(self.enc_cfg, self.gen_cfg, self.gen_store.copy(), self.disc_cfg,
                     self.disc_store.copy() if self.disc_store is not None else None)


@dataclass
class TrainReport:
    pretrain_losses: list[float] = field(default_factory=list)
    gen_losses: list[float] = field(default_factory=list)
    pg_losses: list[float] = field(default_factory=list)
    disc_losses: list[float] = field(default_factory=list)
    val_metrics: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_jaccard: float = -1.0
    wall_clock_s: float = 0.0
    ablation: str = "none"
    checkpoint_path: str | None = None

    def as_dict(self) -> dict:
        return {
            "pretrain_losses": self.pretrain_losses,
            "gen_losses": self.gen_losses,
            "pg_losses": self.pg_losses,
            "disc_losses": self.disc_losses,
            "val_metrics": self.val_metrics,
            "best_epoch": self.best_epoch,
            "best_jaccard": self.best_jaccard,
            "wall_clock_s": self.wall_clock_s,
            "ablation": self.ablation,
            "checkpoint_path": self.checkpoint_path,
        }


def build_model(bundle: CorpusBundle, cfg: TrainConfig) -> Model:
    """Initialize all parameters from the run seed's init stream. The
    scorer is only created when adversarial training is enabled, and is
    initialized after the decoder so ablations share decoder init."""
    rng = named_rng(cfg.seed, "init")
    enc_cfg = EncoderConfig(vocab_size=bundle.tokens.vocab_size, d_embed=cfg.d_embed,
                            kernel_sizes=cfg.kernel_sizes, n_filters=cfg.n_filters,
                            dropout=cfg.dropout)
    gen_cfg = GeneratorConfig(n_codes=bundle.codes.num_real, d_code=cfg.d_code,
                              rep_dim=enc_cfg.rep_dim,
                              candidate_activation=cfg.candidate_activation,
                              no_copy=cfg.no_copy, max_len=cfg.max_len)
    gen_store = ParamStore()
    init_encoder_params(gen_store, enc_cfg, rng)
    init_generator_params(gen_store, gen_cfg, rng)
    model = Model(enc_cfg, gen_cfg, gen_store)
    if not cfg.no_arl:
        model.disc_cfg = DiscriminatorConfig(n_codes=bundle.codes.num_real, d_code=cfg.d_code,
                                             hidden=enc_cfg.rep_dim, rep_dim=enc_cfg.rep_dim,
                                             candidate_activation=cfg.candidate_activation)
        model.disc_store = ParamStore()
        init_discriminator_params(model.disc_store, model.disc_cfg, rng)
    return model


def _check_alignable(docs: Sequence[EhrDocument], max_len: int) -> None:
    biggest = max(len(d.gold_codes) for d in docs)
    if biggest > max_len:
        raise ConfigError(f"a document carries {biggest} gold codes but max_len is {max_len}; "
                          "raise max_len so every label can claim a step")


def _aligned_forward(model: Model, doc: EhrDocument, table: ComplicationTable,
                     x: np.ndarray, max_len: int):
    """Teacher-forced pass over the gold codes in ascending order (the same
    serialization the path scorer sees), aligned to the per-step
    predictions; returns (traces, per-step targets).

    The assignment is square: the first |gold| steps each claim exactly one
    label, so every content step is supervised, and the surplus step right
    after them is supervised toward STOP."""
    gold = sorted(doc.gold_codes)
    n_steps = min(max_len, len(gold) + 1)
    inputs = [model.gen_cfg.stop_id] + gold[:n_steps - 1]
    traces = run_steps(model.gen_store, model.gen_cfg, table, x, inputs)
    label_dists = [t.dist for t in traces[:len(gold)]]
    greedy = [int(np.argmax(d.probs)) for d in label_dists]
    alignment = align_path(label_dists, greedy, doc.gold_codes)
    targets = step_targets(alignment, n_steps, model.gen_cfg.stop_id)
    return traces, targets


def _supervised_doc_backward(model: Model, doc: EhrDocument, table: ComplicationTable,
                             cfg: TrainConfig, dropout_rng: np.random.Generator) -> float:
    """Aligned forward, then decoder+encoder gradient accumulation."""
    x, enc_cache = encode_ehr(doc.tokens, model.gen_store, model.enc_cfg,
                              train_mode=True, dropout_rng=dropout_rng)
    traces, targets = _aligned_forward(model, doc, table, x, cfg.max_len)
    tw = [(t, 1.0) if t is not None else None for t in targets]
    loss = path_loss(traces, tw)
    dx = sequence_backward(model.gen_store, model.gen_cfg, traces, tw)
    encode_backward(dx, enc_cache, model.gen_store, model.enc_cfg)
    return loss


def _supervised_batch(model: Model, batch: Sequence[EhrDocument], table: ComplicationTable,
                      cfg: TrainConfig, dropout_rng: np.random.Generator) -> float:
    model.gen_store.zero_grads()
    total = 0.0
    for doc in batch:
        total += _supervised_doc_backward(model, doc, table, cfg, dropout_rng)
    model.gen_store.scale_grads(1.0 / len(batch))
    model.gen_store.clip_grads(cfg.clip_norm)
    adam_step(model.gen_store, cfg.adam)
    return total / len(batch)


def adversarial_round(model: Model, batch: Sequence[EhrDocument], table: ComplicationTable,
                      cfg: TrainConfig, dropout_rng: np.random.Generator) -> dict[str, float]:
    """One alternating update on a batch. Under no_arl this degenerates to
    the pure supervised update and the scorer is untouched."""
    if cfg.no_arl or model.disc_store is None:
        return {"gen": _supervised_batch(model, batch, table, cfg, dropout_rng),
                "pg": 0.0, "disc": 0.0}

    # forward pass per document: representation, aligned pass, greedy decode
    forwards = []
    for doc_id, doc in enumerate(batch):
        x, enc_cache = encode_ehr(doc.tokens, model.gen_store, model.enc_cfg,
                                  train_mode=True, dropout_rng=dropout_rng)
        traces, targets = _aligned_forward(model, doc, table, x, cfg.max_len)
        path, dec_traces = decode_path_traced(model.gen_store, model.gen_cfg, table, x,
                                              cfg.max_len)
        forwards.append((doc_id, doc, x, enc_cache, traces, targets, path, dec_traces))

    # scorer update: ground-truth prefixes positive, generated negative
    prefixes: list[LabeledPrefix] = []
    xs: dict[int, np.ndarray] = {}
    for doc_id, doc, x, _cache, _traces, _targets, path, _dec in forwards:
        xs[doc_id] = x
        prefixes.extend(split_prefixes(sorted(doc.gold_codes), True, doc_id))
        prefixes.extend(split_prefixes(path.valid_codes, False, doc_id))
    disc_loss = 0.0
    if prefixes:
        model.disc_store.zero_grads()
        disc_loss = discriminator_loss(prefixes, xs, model.disc_store, model.disc_cfg,
                                       with_grads=True)
        model.disc_store.clip_grads(cfg.clip_norm)
        adam_step(model.disc_store, cfg.adam)

    # rewards from the updated scorer; baseline is the batch mean
    all_rewards = []
    per_doc_rewards: list[list[float]] = []
    for doc_id, _doc, x, _cache, _traces, _targets, path, _dec in forwards:
        rs = [reward(path.valid_codes[:k + 1], x, model.disc_store, model.disc_cfg)
              for k in range(path.valid_len)]
        per_doc_rewards.append(rs)
        all_rewards.extend(rs)
    baseline = float(np.mean(all_rewards)) if all_rewards else 0.0

    # decoder update: supervised aligned loss plus reward-weighted surrogate
    model.gen_store.zero_grads()
    sup_total = 0.0
    pg_total = 0.0
    for (doc_id, _doc, _x, enc_cache, traces, targets, path, dec_traces), rs in zip(
            forwards, per_doc_rewards):
        tw_sup = [(t, cfg.supervised_weight) if t is not None else None for t in targets]
        sup_total += path_loss(traces, [(t, 1.0) if t is not None else None for t in targets])
        dx = sequence_backward(model.gen_store, model.gen_cfg, traces, tw_sup)
        tw_pg: list[tuple[int, float] | None] = [None] * len(dec_traces)
        for k in range(path.valid_len):
            tw_pg[k] = (path.codes[k], rs[k] - baseline)
        if path.valid_len:
            pg_total += path_loss(dec_traces, tw_pg)
            dx = dx + sequence_backward(model.gen_store, model.gen_cfg, dec_traces, tw_pg)
        encode_backward(dx, enc_cache, model.gen_store, model.enc_cfg)
    model.gen_store.scale_grads(1.0 / len(batch))
    model.gen_store.clip_grads(cfg.clip_norm)
    adam_step(model.gen_store, cfg.adam)
    return {"gen": sup_total / len(batch), "pg": pg_total / len(batch), "disc": disc_loss}


def decode_predictions(model: Model, docs: Sequence[EhrDocument],
                       table: ComplicationTable | None,
                       max_len: int | None = None) -> list[PredictionRecord]:
    """Eval-mode decode of every document into a prediction record. The
    per-code confidence is the code's highest mixture probability over the
    decode steps."""
    records = []
    for doc_id, doc in enumerate(docs):
        x, _ = encode_ehr(doc.tokens, model.gen_store, model.enc_cfg, train_mode=False)
        path = decode_path(model.gen_store, model.gen_cfg, table, x, max_len)
        scores = {c: max(float(d.probs[c]) for d in path.distributions)
                  for c in range(model.gen_cfg.n_codes)}
        records.append(PredictionRecord(doc_id, frozenset(path.valid_codes),
                                        doc.gold_codes, scores))
    return records


def _batches(docs: Sequence[EhrDocument], batch_size: int,
             rng: np.random.Generator) -> list[list[EhrDocument]]:
    order = rng.permutation(len(docs))
    shuffled = [docs[int(i)] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def pretrain_generator(bundle: CorpusBundle, cfg: TrainConfig,
                       model: Model | None = None) -> tuple[Model, list[float]]:
    """Supervised pretraining only; returns the model and per-epoch losses."""
    cfg.validate()
    if model is None:
        model = build_model(bundle, cfg)
    train_docs = bundle.split_docs("train")
    _check_alignable(train_docs, cfg.max_len)
    dropout_rng = named_rng(cfg.seed, "dropout")
    shuffle_rng = named_rng(cfg.seed, "shuffle")
    losses = []
    for epoch in range(cfg.pretrain_epochs):
        epoch_losses = [_supervised_batch(model, batch, bundle.table, cfg, dropout_rng)
                        for batch in _batches(train_docs, cfg.batch_size, shuffle_rng)]
        mean_loss = float(np.mean(epoch_losses))
        if not np.isfinite(mean_loss):
            raise TrainingError(f"pretraining diverged at epoch {epoch}")
        losses.append(mean_loss)
    return model, losses


def train(bundle: CorpusBundle, cfg: TrainConfig) -> tuple[TrainReport, Model]:
    """Full schedule: pretraining epochs, then adversarial epochs, with
    validation metrics after every epoch; returns the report and the model
    snapshot with the best validation Jaccard."""
    cfg.validate()
    start = time.monotonic()
    model = build_model(bundle, cfg)
    train_docs = bundle.split_docs("train")
    val_docs = bundle.split_docs("validation")
    _check_alignable(train_docs, cfg.max_len)
    dropout_rng = named_rng(cfg.seed, "dropout")
    shuffle_rng = named_rng(cfg.seed, "shuffle")
    report = TrainReport(ablation=cfg.ablation)
    best: Model | None = None

    def validate_epoch(epoch: int) -> None:
        nonlocal best
        records = decode_predictions(model, val_docs, bundle.table, cfg.max_len)
        table = metric_table(records, bundle.table, range(bundle.codes.num_real))
        report.val_metrics.append({k: v for k, v in table.items()})
        if table["jaccard"] > report.best_jaccard:
            report.best_jaccard = table["jaccard"]
            report.best_epoch = epoch
            best = model.snapshot()

    epoch = 0
    for _ in range(cfg.pretrain_epochs):
        batch_losses = [_supervised_batch(model, b, bundle.table, cfg, dropout_rng)
                        for b in _batches(train_docs, cfg.batch_size, shuffle_rng)]
        mean_loss = float(np.mean(batch_losses))
        if not np.isfinite(mean_loss):
            raise TrainingError(f"training diverged at epoch {epoch}")
        report.pretrain_losses.append(mean_loss)
        validate_epoch(epoch)
        epoch += 1
    for _ in range(cfg.epochs):
        sums = {"gen": 0.0, "pg": 0.0, "disc": 0.0}
        batches = _batches(train_docs, cfg.batch_size, shuffle_rng)
        for batch in batches:
            out = adversarial_round(model, batch, bundle.table, cfg, dropout_rng)
            for k in sums:
                sums[k] += out[k]
        for k in sums:
            sums[k] /= len(batches)
        if not np.isfinite(sums["gen"]):
            raise TrainingError(f"training diverged at epoch {epoch}")
        report.gen_losses.append(sums["gen"])
        report.pg_losses.append(sums["pg"])
        report.disc_losses.append(sums["disc"])
        validate_epoch(epoch)
        epoch += 1

    if best is None:  # zero epochs requested: fall back to the initial model
        best = model.snapshot()
    report.wall_clock_s = time.monotonic() - start
    return report, best


def model_config_kv(model: Model, seed: int) -> dict[str, str]:
    """Flat config block stored in checkpoints and checked at eval time."""
    enc, gen = model.enc_cfg, model.gen_cfg
    return {
        "vocab_size": str(enc.vocab_size),
        "num_codes": str(gen.n_codes),
        "d_embed": str(enc.d_embed),
        "d_code": str(gen.d_code),
        "rep_dim": str(gen.rep_dim),
        "kernel_sizes": ",".join(str(k) for k in enc.kernel_sizes),
        "n_filters": str(enc.n_filters),
        "dropout": repr(enc.dropout),
        "candidate_activation": gen.candidate_activation,
        "no_copy": "1" if gen.no_copy else "0",
        "max_len": str(gen.max_len),
        "has_discriminator": "1" if model.disc_store is not None else "0",
        "seed": str(seed),
    }


def save_model(path: str, model: Model, seed: int) -> None:
    slots = dict(model.gen_store.parameters())
    if model.disc_store is not None:
        slots.update(model.disc_store.parameters())
    save_checkpoint(path, model_config_kv(model, seed), slots)


def model_from_checkpoint(kv: dict[str, str], slots: dict[str, np.ndarray]) -> Model:
    enc_cfg = EncoderConfig(vocab_size=int(kv["vocab_size"]), d_embed=int(kv["d_embed"]),
                            kernel_sizes=tuple(int(k) for k in kv["kernel_sizes"].split(",")),
                            n_filters=int(kv["n_filters"]), dropout=float(kv["dropout"]))
    gen_cfg = GeneratorConfig(n_codes=int(kv["num_codes"]), d_code=int(kv["d_code"]),
                              rep_dim=int(kv["rep_dim"]),
                              candidate_activation=kv["candidate_activation"],
                              no_copy=kv["no_copy"] == "1", max_len=int(kv["max_len"]))
    gen_store = ParamStore()
    disc_store = None
    disc_cfg = None
    for name in sorted(slots):
        if name.startswith("disc."):
            if disc_store is None:
                disc_store = ParamStore()
            disc_store.add(name, slots[name])
        else:
            gen_store.add(name, slots[name])
    if disc_store is not None:
        disc_cfg = DiscriminatorConfig(n_codes=gen_cfg.n_codes, d_code=gen_cfg.d_code,
                                       hidden=disc_store["disc.lstm.Wf"].shape[0],
                                       rep_dim=gen_cfg.rep_dim,
                                       candidate_activation=gen_cfg.candidate_activation)
    return Model(enc_cfg, gen_cfg, gen_store, disc_cfg, disc_store)
