"""Experiment orchestration: configs, seeded end-to-end runs, grids.

A run is a pure function of its config document. Configs are flat
``key = value`` text with dotted section prefixes; the canonical
serialization (keys sorted) is hashed into every output so results are
traceable to the exact recipe. All randomness derives from the single
config seed through fixed named streams; reports are JSON with sorted keys
so identical configs reproduce byte-identical documents.

``output_dir`` is a placement directive, not an experiment parameter: it is
excluded from the canonical text and hash, so the same recipe written to
two directories yields identical report bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bernoulli import (
    FalseNegativeModel,
    binomial_tail,
    exact_binomial_tail,
    reported_reference_value,
)
from .data import (
    AugmentationSpec,
    SyntheticDatasetSpec,
    generate_blobs,
    sample_contrastive_batch,
    write_embeddings,
    write_labels,
)
from .diagnostics import (
    DiagnosticsReport,
    class_divergence,
    clustering_quality,
    false_negative_frequencies,
    linear_probe,
    rank_negative_labels,
)
from .encoder import (
    EncoderParams,
    TargetNetwork,
    ema_update,
    forward,
    backward,
    init_encoder,
    init_optimizer,
    save_checkpoint,
    sgd_momentum_step,
)
from .errors import InvalidConfigError, TripletLabError
from .losses import ContrastiveView, LossConfig, TRIPLET_VARIANTS, evaluate_view

# Named randomness streams, all derived from the one config seed.
_ROLE_DATASET = 0
_ROLE_SPLIT = 1
_ROLE_INIT = 2
_ROLE_TRAIN = 3
_ROLE_EVAL_BATCHES = 4
_ROLE_KMEANS = 5

TRAIN_FRACTION = 0.8


def derived_seed(seed: int, role: int) -> int:
    return int(np.random.SeedSequence([seed, role]).generate_state(1)[0])


def derived_rng(seed: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, role]))


# --------------------------------------------------------------------------
# Config schema


def _cast_bool(raw):
    if isinstance(raw, bool):
        return raw
    raise ValueError(f"expected true/false, got {raw!r}")


def _cast_int(raw):
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ValueError(f"expected an integer, got {raw!r}")
    return raw


def _cast_float(raw):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ValueError(f"expected a number, got {raw!r}")
    return float(raw)


def _cast_str(raw):
    if not isinstance(raw, str):
        raise ValueError(f"expected a string, got {raw!r}")
    return raw


def _cast_k(raw):
    if isinstance(raw, str) and raw == "half":
        return "half"
    return _cast_int(raw)


def _cast_dims(raw):
    text = str(raw)
    try:
        dims = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {raw!r}") from None
    if not dims:
        raise ValueError("needs at least one dimension")
    return dims


_SCHEMA = {
    "dataset.num_classes": (_cast_int, 10),
    "dataset.samples_per_class": (_cast_int, 200),
    "dataset.ambient_dim": (_cast_int, 32),
    "dataset.center_separation": (_cast_float, 4.0),
    "dataset.noise_sigma": (_cast_float, 1.0),
    "augmentation.additive_noise_sigma": (_cast_float, 0.3),
    "augmentation.coordinate_dropout_rate": (_cast_float, 0.1),
    "augmentation.scale_jitter_lo": (_cast_float, 0.9),
    "augmentation.scale_jitter_hi": (_cast_float, 1.1),
    "encoder.hidden_dims": (_cast_dims, (64, 64)),
    "encoder.output_dim": (_cast_int, 16),
    "encoder.activation": (_cast_str, "tanh"),
    "loss.variant": (_cast_str, "rank_k"),
    "loss.gamma": (_cast_float, 2.0),
    "loss.margin": (_cast_float, -100.0),
    "loss.k": (_cast_k, "half"),
    "loss.temperature": (_cast_float, 0.2),
    "loss.symmetric": (_cast_bool, True),
    "loss.apply_gamma_to_hardest": (_cast_bool, False),
    "optimizer.base_lr": (_cast_float, 0.3),
    "optimizer.momentum_coeff": (_cast_float, 0.9),
    "optimizer.weight_decay": (_cast_float, 1e-6),
    "train.epochs": (_cast_int, 50),
    "train.batch_size": (_cast_int, 24),
    "target.enabled": (_cast_bool, True),
    "target.momentum": (_cast_float, 0.99),
    "diagnostics.num_batches": (_cast_int, 200),
    "diagnostics.probe_epochs": (_cast_int, 200),
    "diagnostics.probe_lr": (_cast_float, 1.0),
    "seed": (_cast_int, 0),
}


def _parse_scalar(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _render_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines (# comments allowed) into raw scalars."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InvalidConfigError(f"line {lineno}", "expected `key = value`")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in values:
            raise InvalidConfigError(key, "duplicate key")
        values[key] = _parse_scalar(value)
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed view of a config document plus the output placement."""

    values: tuple  # sorted (key, value) pairs over the full schema
    output_dir: str = "run-output"

    @classmethod
    def from_mapping(cls, mapping: dict, output_dir: str | None = None) -> "ExperimentConfig":
        mapping = dict(mapping)
        out = mapping.pop("output_dir", "run-output")
        if output_dir is not None:
            out = output_dir
        typed = {}
        for key, raw in mapping.items():
            if key not in _SCHEMA:
                raise InvalidConfigError(key, "unknown config key")
            caster, _ = _SCHEMA[key]
            try:
                typed[key] = caster(raw)
            except ValueError as exc:
                raise InvalidConfigError(key, str(exc)) from None
        for key, (_, default) in _SCHEMA.items():
            typed.setdefault(key, default)
        cfg = cls(tuple(sorted(typed.items())), str(out))
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str, output_dir: str | None = None) -> "ExperimentConfig":
        return cls.from_mapping(parse_config_text(text), output_dir)

    @classmethod
    def default(cls, **overrides) -> "ExperimentConfig":
        return cls.from_mapping(overrides)

    def __getitem__(self, key: str):
        return dict(self.values)[key]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        mapping = {k: v for k, v in self.values}
        mapping.update(overrides)
        return ExperimentConfig.from_mapping(mapping, self.output_dir)

    def with_loss(self, loss: LossConfig) -> "ExperimentConfig":
        return self.with_overrides(**{
            "loss.variant": loss.variant,
            "loss.gamma": loss.gamma,
            "loss.margin": loss.margin,
            "loss.k": loss.k,
            "loss.temperature": loss.temperature,
            "loss.symmetric": loss.symmetric,
            "loss.apply_gamma_to_hardest": loss.apply_gamma_to_hardest,
        })

    # -- canonical form ----------------------------------------------------

    def canonical_text(self) -> str:
        return "".join(f"{k} = {_render_scalar(v)}\n" for k, v in self.values)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("ascii")).hexdigest()

    # -- typed sub-specs ---------------------------------------------------

    @property
    def seed(self) -> int:
        return self["seed"]

    @property
    def epochs(self) -> int:
        return self["train.epochs"]

    @property
    def batch_size(self) -> int:
        return self["train.batch_size"]

    @property
    def num_negatives(self) -> int:
        return 2 * (self.batch_size - 1)

    def dataset_spec(self) -> SyntheticDatasetSpec:
        try:
            return SyntheticDatasetSpec(
                num_classes=self["dataset.num_classes"],
                samples_per_class=self["dataset.samples_per_class"],
                ambient_dim=self["dataset.ambient_dim"],
                center_separation=self["dataset.center_separation"],
                noise_sigma=self["dataset.noise_sigma"],
                seed=derived_seed(self.seed, _ROLE_DATASET),
            )
        except TripletLabError as exc:
            raise InvalidConfigError("dataset", str(exc)) from None

    def augmentation_spec(self) -> AugmentationSpec:
        try:
            return AugmentationSpec(
                additive_noise_sigma=self["augmentation.additive_noise_sigma"],
                coordinate_dropout_rate=self["augmentation.coordinate_dropout_rate"],
                scale_jitter_lo=self["augmentation.scale_jitter_lo"],
                scale_jitter_hi=self["augmentation.scale_jitter_hi"],
            )
        except TripletLabError as exc:
            raise InvalidConfigError("augmentation", str(exc)) from None

    def loss_config(self) -> LossConfig:
        raw_k = self["loss.k"]
        k = self.batch_size - 1 if raw_k == "half" else raw_k  # m/2 with m=2(b-1)
        try:
            return LossConfig(
                variant=self["loss.variant"],
                gamma=self["loss.gamma"],
                margin=self["loss.margin"],
                k=k,
                temperature=self["loss.temperature"],
                symmetric=self["loss.symmetric"],
                apply_gamma_to_hardest=self["loss.apply_gamma_to_hardest"],
            )
        except TripletLabError as exc:
            raise InvalidConfigError("loss", str(exc)) from None

    def encoder_dims(self) -> list[int]:
        return [self["dataset.ambient_dim"], *self["encoder.hidden_dims"],
                self["encoder.output_dim"]]

    def validate(self) -> None:
        self.dataset_spec()
        self.augmentation_spec()
        self.loss_config()
        if self.epochs < 0:
            raise InvalidConfigError("train.epochs", "must be >= 0")
        if self.batch_size < 2:
            raise InvalidConfigError("train.batch_size", "must be >= 2")
        if not 0 <= self.seed < 2**63:
            raise InvalidConfigError("seed", "must be a nonnegative 63-bit integer")
        if not 0.0 <= self["target.momentum"] <= 1.0:
            raise InvalidConfigError("target.momentum", "must lie in [0, 1]")
        if self["optimizer.base_lr"] <= 0:
            raise InvalidConfigError("optimizer.base_lr", "must be positive")
        if not 0 <= self["optimizer.momentum_coeff"] < 1:
            raise InvalidConfigError("optimizer.momentum_coeff", "must lie in [0, 1)")
        if self["optimizer.weight_decay"] < 0:
            raise InvalidConfigError("optimizer.weight_decay", "must be >= 0")
        if self["diagnostics.num_batches"] < 1:
            raise InvalidConfigError("diagnostics.num_batches", "must be >= 1")
        if self["encoder.output_dim"] < 1:
            raise InvalidConfigError("encoder.output_dim", "must be >= 1")
        if self["loss.k"] != "half" and self["loss.k"] > self.num_negatives:
            raise InvalidConfigError(
                "loss.k", f"k exceeds m = 2(batch_size-1) = {self.num_negatives}"
            )
        n_train = int(TRAIN_FRACTION * self.dataset_spec().total_size)
        if self.epochs > 0 and n_train < self.batch_size:
            raise InvalidConfigError(
                "train.batch_size", "training split smaller than one batch"
            )


def load_config(path, output_dir: str | None = None) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return ExperimentConfig.from_text(text, output_dir)


# --------------------------------------------------------------------------
# Training


def _train_step(params: EncoderParams, target, opt_state, batch, loss_cfg: LossConfig):
    """One optimizer update over a contrastive batch; returns the mean loss.

    Anchors come from the online network; positives and negatives come from
    the target network when enabled (stop-gradient), otherwise from the
    online network so gradients flow to every role. With the symmetric flag
    both anchor directions of each pair are averaged.
    """
    stacked = batch.stacked_views()
    z_on, cache = forward(params, stacked)
    z_src = forward(target.params, stacked)[0] if target is not None else z_on
    b = batch.batch_size
    grad = np.zeros_like(z_on)
    scale = 1.0 / (2 * b) if loss_cfg.symmetric else 1.0 / b
    total = 0.0
    for i in range(b):
        neg_idx = batch.negative_indices(i)
        negatives = z_src[neg_idx]
        r1 = evaluate_view(ContrastiveView(z_on[i], z_src[b + i], negatives), loss_cfg)
        grad[i] += scale * r1.grad_anchor
        if loss_cfg.symmetric:
            r2 = evaluate_view(ContrastiveView(z_on[b + i], z_src[i], negatives), loss_cfg)
            grad[b + i] += scale * r2.grad_anchor
            total += 0.5 * (r1.value + r2.value)
        else:
            total += r1.value
        if target is None:
            grad[b + i] += scale * r1.grad_positive
            grad[neg_idx] += scale * r1.grad_negatives
            if loss_cfg.symmetric:
                grad[i] += scale * r2.grad_positive
                grad[neg_idx] += scale * r2.grad_negatives
    param_grads = backward(params, cache, grad)
    params, opt_state = sgd_momentum_step(params, param_grads, opt_state)
    if target is not None:
        target = ema_update(target, params)
    return total / b, params, opt_state, target


def train_encoder(config: ExperimentConfig, items, labels, train_idx):
    """Train on the given split; returns (params, per_epoch records)."""
    loss_cfg = config.loss_config()
    aug = config.augmentation_spec()
    params = init_encoder(config.encoder_dims(), config["encoder.activation"],
                          seed=derived_seed(config.seed, _ROLE_INIT))
    target = (
        TargetNetwork(params.copy(), config["target.momentum"])
        if config["target.enabled"] else None
    )
    train_items = items[train_idx]
    train_labels = labels[train_idx]
    steps_per_epoch = len(train_idx) // config.batch_size
    total_steps = max(1, config.epochs * steps_per_epoch)
    opt_state = init_optimizer(
        params,
        base_lr=config["optimizer.base_lr"],
        momentum_coeff=config["optimizer.momentum_coeff"],
        weight_decay=config["optimizer.weight_decay"],
        total_steps=total_steps,
    )
    rng = derived_rng(config.seed, _ROLE_TRAIN)
    per_epoch = []
    for epoch in range(config.epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            batch = sample_contrastive_batch(
                train_items, train_labels, config.batch_size, aug, rng)
            loss_value, params, opt_state, target = _train_step(
                params, target, opt_state, batch, loss_cfg)
            epoch_losses.append(loss_value)
        per_epoch.append({"epoch": epoch, "mean_loss": float(np.mean(epoch_losses))})
    return params, per_epoch


def measure_frequencies(config: ExperimentConfig, params: EncoderParams,
                        items, labels, train_idx):
    """Omega frequencies over freshly sampled batches at the current params."""
    aug = config.augmentation_spec()
    loss_cfg = config.loss_config()
    variant = loss_cfg.variant if loss_cfg.variant in TRIPLET_VARIANTS else "rank_k"
    rng = derived_rng(config.seed, _ROLE_EVAL_BATCHES)
    train_items = items[train_idx]
    train_labels = labels[train_idx]
    records = []
    for _ in range(config["diagnostics.num_batches"]):
        batch = sample_contrastive_batch(
            train_items, train_labels, config.batch_size, aug, rng)
        emb = forward(params, batch.stacked_views())[0]
        records.append(rank_negative_labels(batch, emb))
    return false_negative_frequencies(records, loss_cfg.k, variant)


def run_experiment(config: ExperimentConfig, output_dir=None):
    """Train, evaluate, and write all artifacts; returns (report, document).

    Writes report.json, encoder.ckpt, the held-out embeddings/labels dump,
    and config.resolved.txt into the output directory. Identical configs
    yield byte-identical documents.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    items, labels = generate_blobs(config.dataset_spec())
    n = items.shape[0]
    perm = derived_rng(config.seed, _ROLE_SPLIT).permutation(n)
    n_train = int(TRAIN_FRACTION * n)
    train_idx, eval_idx = perm[:n_train], perm[n_train:]

    params, per_epoch = train_encoder(config, items, labels, train_idx)

    train_emb = forward(params, items[train_idx])[0]
    eval_emb = forward(params, items[eval_idx])[0]
    eval_labels = labels[eval_idx]

    pr_a, pr_b, counts = measure_frequencies(config, params, items, labels, train_idx)
    nmi, ari = clustering_quality(
        eval_emb, eval_labels, num_clusters=config["dataset.num_classes"],
        seed=derived_seed(config.seed, _ROLE_KMEANS))
    report = DiagnosticsReport(
        class_divergence=class_divergence(eval_emb, eval_labels),
        pr_omega_given_a=pr_a,
        pr_omega_given_b=pr_b,
        nmi=nmi,
        ari=ari,
        probe_accuracy=linear_probe(
            train_emb, labels[train_idx], eval_emb, eval_labels,
            epochs=config["diagnostics.probe_epochs"],
            lr=config["diagnostics.probe_lr"]),
        counts=counts,
    )
    document = {
        "artifact_version": __version__,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "config": config.canonical_text(),
        "per_epoch": per_epoch,
        "final": report.to_dict(),
    }
    with open(out / "report.json", "w", encoding="ascii", newline="\n") as fh:
        json.dump(document, fh, sort_keys=True, indent=2)
        fh.write("\n")
    save_checkpoint(out / "encoder.ckpt", params)
    write_embeddings(out / "embeddings.txt", eval_emb)
    write_labels(out / "labels.txt", eval_labels)
    with open(out / "config.resolved.txt", "w", encoding="ascii", newline="\n") as fh:
        fh.write(config.canonical_text())
    return report, document


def loss_variant_id(loss: LossConfig) -> str:
    parts = [
        f"variant={loss.variant}",
        f"k={loss.k}",
        f"gamma={_render_scalar(loss.gamma)}",
        f"margin={_render_scalar(loss.margin)}",
        f"tau={_render_scalar(loss.temperature)}",
        f"sym={_render_scalar(loss.symmetric)}",
    ]
    if loss.apply_gamma_to_hardest:
        parts.append("gamma_in_hardest=true")
    return " ".join(parts)


GRID_COLUMNS = ("variant", "final_loss", "ari", "nmi", "divergence",
                "pr_omega_given_a", "pr_omega_given_b", "probe_accuracy")


def compare_grid(base_config: ExperimentConfig, variants, output_dir=None):
    """Run one experiment per loss variant under a shared dataset and seed.

    Returns the comparison rows (list of dicts in GRID_COLUMNS order) and
    writes comparison.csv plus one run directory per variant. Rows are
    independent: each run depends only on its own config.
    """
    if not variants:
        raise InvalidConfigError("grid", "needs at least one variant")
    out = Path(output_dir if output_dir is not None else base_config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, loss in enumerate(variants):
        cfg = base_config.with_loss(loss)
        try:
            report, document = run_experiment(cfg, out / f"variant-{i:02d}")
        except TripletLabError as exc:
            raise type(exc)(f"variant {loss_variant_id(loss)!r}: {exc}") from exc
        per_epoch = document["per_epoch"]
        rows.append({
            "variant": loss_variant_id(cfg.loss_config()),
            "final_loss": per_epoch[-1]["mean_loss"] if per_epoch else None,
            "ari": report.ari,
            "nmi": report.nmi,
            "divergence": report.class_divergence,
            "pr_omega_given_a": report.pr_omega_given_a,
            "pr_omega_given_b": report.pr_omega_given_b,
            "probe_accuracy": report.probe_accuracy,
        })
    lines = [",".join(GRID_COLUMNS)]
    for row in rows:
        rendered = []
        for col in GRID_COLUMNS:
            value = row[col]
            rendered.append("" if value is None else
                            repr(value) if isinstance(value, float) else str(value))
        lines.append(",".join(rendered))
    with open(out / "comparison.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return rows


def parse_grid_text(text: str, base_loss: LossConfig, batch_size: int):
    """Grid file: one variant per line, comma-separated loss-field overrides.

    Example line: ``variant=rank_k, k=5``. ``k=half`` resolves to m/2 for
    the base config's batch size.
    """
    variants = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        overrides = {}
        for part in stripped.split(","):
            if "=" not in part:
                raise InvalidConfigError(f"grid line {lineno}", "expected field=value")
            field, _, value = part.partition("=")
            field = field.strip().removeprefix("loss.")
            parsed = _parse_scalar(value)
            if field == "k":
                parsed = batch_size - 1 if parsed == "half" else parsed
            if field == "tau":
                field = "temperature"
            overrides[field] = parsed
        try:
            variants.append(replace(base_loss, **overrides))
        except (TypeError, TripletLabError) as exc:
            raise InvalidConfigError(f"grid line {lineno}", str(exc)) from None
    if not variants:
        raise InvalidConfigError("grid", "no variants found")
    return variants


# --------------------------------------------------------------------------
# Bernoulli risk command


def cmd_bernoulli(m: int, p: float, ks, with_oracle: bool = False) -> dict:
    """Risk-table document for the CLI: formula values, optional exact-oracle
    values, and any externally reported values on record for comparison."""
    rows = []
    notes = []
    for k in ks:
        entry = {"k": int(k),
                 "tail": binomial_tail(FalseNegativeModel(m, int(k), p))}
        if with_oracle:
            entry["oracle"] = float(exact_binomial_tail(m, int(k), p))
        reported = reported_reference_value(m, p, int(k))
        if reported is not None:
            entry["reported"] = reported
            notes.append(
                f"k={int(k)}: a value of {reported:.3g} has been reported for "
                f"these parameters; direct evaluation of the tail sum gives "
                f"{entry['tail']:.6g}. The computed column is authoritative."
            )
        rows.append(entry)
    return {"m": m, "p": p, "rows": rows, "notes": notes}
