"""Two-stage optimization: pretraining on the (filtered) field-level
dataset and finetuning on the county-level dataset, with temporal splits,
plateau scheduling, early stopping, multi-seed experiment runners, and
the component-ablation variants.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import losses, metrics, model
from .autodiff import gradients
from .errors import CheckpointMismatch, TrainingDiverged
from .optim import PlateauScheduler, adam_init, adam_step


@dataclass
class StageConfig:
    batch_size: int
    lr: float = 0.001
    max_epochs: int = 50
    scheduler_patience: int = 5
    rmse_stop: float = None  # pretrain: stop when train yield RMSE drops below
    early_stop_patience: int = None  # finetune: epochs of no val improvement

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


def default_pretrain_config():
    return StageConfig(batch_size=64, lr=0.001, max_epochs=50, scheduler_patience=5, rmse_stop=1.0)


def default_finetune_config():
    return StageConfig(batch_size=16, lr=0.001, max_epochs=30, scheduler_patience=5,
                       early_stop_patience=10)


@dataclass
class SplitSpec:
    target_year: int
    train_fraction: float = 0.8
    shuffle_seed: int = 0


@dataclass
class Split:
    train: "model.ingest.Dataset"
    val: "model.ingest.Dataset"
    test: "model.ingest.Dataset"


def temporal_split(dataset, spec):
    """Test = all target-year samples; earlier years shuffled then cut
    train_fraction/rest. Years after the target never enter any part."""
    years = {s.year for s in dataset.samples}
    if spec.target_year not in years:
        raise ValueError(f"target year {spec.target_year} absent from dataset years {sorted(years)}")
    test = [s for s in dataset.samples if s.year == spec.target_year]
    pre = [s for s in dataset.samples if s.year < spec.target_year]
    if not pre:
        raise ValueError("no samples precede the target year")
    rng = np.random.default_rng([spec.shuffle_seed, 211])
    order = rng.permutation(len(pre))
    n_train = int(np.floor(spec.train_fraction * len(pre)))
    train = [pre[i] for i in order[:n_train]]
    val = [pre[i] for i in order[n_train:]]
    mk = lambda samples: type(dataset)(level=dataset.level, samples=samples)
    return Split(train=mk(train), val=mk(val), test=mk(test))


# ---------------------------------------------------------------------------
# ablation variants


@dataclass(frozen=True)
class VariantSpec:
    name: str
    use_sm_tokens: bool
    use_pretrain: bool
    use_w2s: bool
    use_smw: bool
    use_oe: bool


VARIANTS = {
    "att_wo_sm": VariantSpec("att_wo_sm", False, False, False, False, False),
    "att": VariantSpec("att", True, False, False, False, False),
    "att_sim": VariantSpec("att_sim", True, True, False, False, False),
    "att_sim_w2s": VariantSpec("att_sim_w2s", True, True, True, False, False),
    "att_sim_w2s_smw": VariantSpec("att_sim_w2s_smw", True, True, True, True, False),
    "kgml_sm": VariantSpec("kgml_sm", True, True, True, True, True),
}


def get_variant(name):
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    return VARIANTS[name]


def model_config_for(variant, sizes=None):
    sizes = dict(sizes or {})
    return model.ModelConfig(use_sm_tokens=variant.use_sm_tokens, use_w2s=variant.use_w2s, **sizes)


# ---------------------------------------------------------------------------
# batching and the shared training step


def _take(arrays, idx):
    out = {}
    for k, v in arrays.items():
        if k == "keys":
            continue
        out[k] = v[idx]
    return out


def _batch_indices(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i: i + batch_size] for i in range(0, n, batch_size)]


def _compute_loss(batch, params, mconfig, variant, loss_cfg):
    """Build the loss graph for one standardized batch.

    Returns (total tensor, float dict). The SM term exists only when the
    W2S branch runs; without the SMW component the drought weight is
    forced to exactly 1 by zeroing sbar under epsilon=1.
    """
    y_hat, sm_hat, _alpha = model.forward_graph(batch, params, mconfig)
    lam = loss_cfg.lam if variant.use_oe else 0.0
    if variant.use_smw:
        sbar = batch["sbar"]
        eps = loss_cfg.epsilon
    else:
        sbar = np.zeros_like(batch["sbar"])  # with eps 1 every weight is exactly 1
        eps = 1.0
    y_term = losses.yield_loss(batch["y_std"], y_hat, sbar,
                               losses.LossConfig(lam=lam, epsilon=eps))
    if sm_hat is not None:
        s_term = losses.sm_loss(batch["s"], sm_hat)
        total = losses.total_loss(s_term, y_term)
        parts = {"sm": float(s_term.data), "yield": float(y_term.data)}
    else:
        total = y_term
        parts = {"sm": 0.0, "yield": float(y_term.data)}
    if not np.isfinite(total.data):
        raise TrainingDiverged(f"non-finite loss: {parts}")
    return total, parts


def _eval_loss(arrays, params, mconfig, variant, loss_cfg):
    total, _ = _compute_loss(arrays, params, mconfig, variant, loss_cfg)
    return float(total.data)


def _yield_rmse(arrays, params, mconfig, stats):
    y_hat, _, _ = model.forward_graph(arrays, params, mconfig)
    pred = y_hat.data * stats.y_sd + stats.y_mu
    return metrics.rmse(arrays["y"], pred)


def write_epochs_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "rmse"])
        for r in rows:
            w.writerow([str(r["epoch"]), repr(r["train_loss"]),
                        "" if r["val_loss"] is None else repr(r["val_loss"]),
                        repr(r["lr"]), repr(r["rmse"])])


# ---------------------------------------------------------------------------
# pretraining


def pretrain(field_dataset, stage_cfg, loss_cfg, variant, sizes, seed):
    """Fit on the field-level dataset until the train yield RMSE target or
    the epoch cap. Returns (ModelBundle, per-epoch rows)."""
    if not variant.use_pretrain:
        raise ValueError(f"variant {variant.name} does not pretrain")
    mconfig = model_config_for(variant, sizes)
    stats = model.Normalization.from_dataset(field_dataset)
    params = model.init_params(mconfig, seed)
    arrays = model.standardize(model.stack_dataset(field_dataset), stats)
    n = len(field_dataset)

    adam = adam_init(params, stage_cfg.lr)
    sched = PlateauScheduler(lr=stage_cfg.lr, patience=stage_cfg.scheduler_patience)
    rows = []
    stop_reason = "max_epochs"
    for epoch in range(stage_cfg.max_epochs):
        rng = np.random.default_rng([seed, 503, epoch])
        epoch_loss = 0.0
        for idx in _batch_indices(n, stage_cfg.batch_size, rng):
            batch = _take(arrays, idx)
            total, _ = _compute_loss(batch, params, mconfig, variant, loss_cfg)
            grads = gradients(total, params)
            adam.lr = sched.lr
            adam_step(params, grads, adam)
            epoch_loss += float(total.data) * len(idx)
        epoch_loss /= n
        train_rmse = _yield_rmse(arrays, params, mconfig, stats)
        lr_now = sched.step(epoch_loss)
        rows.append({"epoch": epoch, "train_loss": epoch_loss, "val_loss": None,
                     "lr": lr_now, "rmse": train_rmse})
        if stage_cfg.rmse_stop is not None and train_rmse < stage_cfg.rmse_stop:
            stop_reason = "train_rmse_below_target"
            break

    meta = {
        "stage": "pretrain", "seed": seed, "variant": variant.name,
        "stop_reason": stop_reason, "epochs_run": len(rows),
        "final_train_rmse": rows[-1]["rmse"],
        "rmse_target_met": bool(stage_cfg.rmse_stop is not None
                                and rows[-1]["rmse"] < stage_cfg.rmse_stop),
        "loss_history": [r["train_loss"] for r in rows],
    }
    bundle = model.ModelBundle(config=mconfig, params=params, stats=stats, meta=meta)
    return bundle, rows


# ---------------------------------------------------------------------------
# finetuning


def finetune(checkpoint, county_dataset, split_spec, stage_cfg, loss_cfg, variant, sizes, seed):
    """Finetune from a checkpoint (or train from scratch when the variant
    skips pretraining). Early stopping restores the best-validation
    parameters. Returns (ModelBundle, per-epoch rows, Split)."""
    mconfig = model_config_for(variant, sizes)
    split = temporal_split(county_dataset, split_spec)

    if checkpoint is not None:
        if checkpoint.config.to_dict() != mconfig.to_dict():
            raise CheckpointMismatch(
                f"checkpoint config {checkpoint.config.to_dict()} != variant config {mconfig.to_dict()}")
        params = model.init_params(mconfig, seed)
        params.load_arrays(checkpoint.params.to_arrays())
        # channels that were constant at pretraining (zeroed VIs) carried
        # no scaling information; take their statistics from this split
        stats = checkpoint.stats.refreshed_from(split.train)
    else:
        # from-scratch run (variants without pretraining, or paired
        # pretrained-vs-scratch comparisons of the same architecture)
        params = model.init_params(mconfig, seed)
        stats = model.Normalization.from_dataset(split.train)

    train_arrays = model.standardize(model.stack_dataset(split.train), stats)
    val_arrays = model.standardize(model.stack_dataset(split.val), stats)
    n = len(split.train)

    adam = adam_init(params, stage_cfg.lr)
    sched = PlateauScheduler(lr=stage_cfg.lr, patience=stage_cfg.scheduler_patience)
    best_val = None
    best_arrays = params.to_arrays()
    best_epoch = -1
    bad = 0
    rows = []
    stop_reason = "max_epochs"
    for epoch in range(stage_cfg.max_epochs):
        rng = np.random.default_rng([seed, 907, epoch])
        epoch_loss = 0.0
        for idx in _batch_indices(n, stage_cfg.batch_size, rng):
            batch = _take(train_arrays, idx)
            total, _ = _compute_loss(batch, params, mconfig, variant, loss_cfg)
            grads = gradients(total, params)
            adam.lr = sched.lr
            adam_step(params, grads, adam)
            epoch_loss += float(total.data) * len(idx)
        epoch_loss /= n
        val_loss = _eval_loss(val_arrays, params, mconfig, variant, loss_cfg)
        val_rmse = _yield_rmse(val_arrays, params, mconfig, stats)
        lr_now = sched.step(val_loss)
        rows.append({"epoch": epoch, "train_loss": epoch_loss, "val_loss": val_loss,
                     "lr": lr_now, "rmse": val_rmse})
        if best_val is None or val_loss < best_val:
            best_val = val_loss
            best_arrays = params.to_arrays()
            best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if stage_cfg.early_stop_patience is not None and bad >= stage_cfg.early_stop_patience:
                stop_reason = "early_stopping"
                break

    params.load_arrays(best_arrays)
    meta = {
        "stage": "finetune", "seed": seed, "variant": variant.name,
        "stop_reason": stop_reason, "epochs_run": len(rows),
        "best_epoch": best_epoch, "best_val_loss": best_val,
        "pretrained": checkpoint is not None,
        "val_loss_history": [r["val_loss"] for r in rows],
    }
    bundle = model.ModelBundle(config=mconfig, params=params, stats=stats, meta=meta)
    return bundle, rows, split


# ---------------------------------------------------------------------------
# experiment runners


@dataclass
class ExperimentResult:
    variant: str
    lam: float
    seeds: list
    per_seed: dict
    summary: dict
    bundles: list = field(default_factory=list)
    splits: list = field(default_factory=list)
    epoch_rows: dict = field(default_factory=dict)


def run_experiment(field_dataset, county_dataset, variant_name, seeds, split_spec,
                   pre_cfg, fine_cfg, loss_cfg, sizes=None, keep_bundles=False):
    """Pretrain (when the variant asks for it) and finetune once per seed;
    aggregate test metrics across seeds."""
    variant = get_variant(variant_name)
    if variant.use_pretrain and field_dataset is None:
        raise ValueError(f"variant {variant.name} pretrains and needs a field dataset")
    per_seed = {"rmse": [], "r2": [], "mean_signed_error": [],
                "mean_signed_error_drought": [], "mean_signed_error_non_drought": []}
    bundles, splits = [], []
    epoch_rows = {}
    for seed in seeds:
        checkpoint = None
        if variant.use_pretrain:
            checkpoint, pre_rows = pretrain(field_dataset, pre_cfg, loss_cfg, variant, sizes, seed)
            epoch_rows[("pretrain", seed)] = pre_rows
        bundle, fine_rows, split = finetune(checkpoint, county_dataset, split_spec,
                                            fine_cfg, loss_cfg, variant, sizes, seed)
        epoch_rows[("finetune", seed)] = fine_rows
        pred = bundle.predict(split.test)
        y = np.array([s.yield_label for s in split.test.samples])
        flags = np.array([s.drought_flag for s in split.test.samples], dtype=bool)
        signed = pred["y_hat"] - y
        per_seed["rmse"].append(metrics.rmse(y, pred["y_hat"]))
        per_seed["r2"].append(metrics.r2(y, pred["y_hat"]))
        per_seed["mean_signed_error"].append(float(signed.mean()))
        per_seed["mean_signed_error_drought"].append(
            float(signed[flags].mean()) if flags.any() else float("nan"))
        per_seed["mean_signed_error_non_drought"].append(
            float(signed[~flags].mean()) if (~flags).any() else float("nan"))
        bundles.append(bundle)
        splits.append(split)

    summary = {
        "rmse_mean": float(np.mean(per_seed["rmse"])),
        "r2_mean": float(np.mean(per_seed["r2"])),
        "rmse_median": float(np.median(per_seed["rmse"])),
        "mean_signed_error_drought_median": float(np.median(per_seed["mean_signed_error_drought"])),
        "n_test": len(splits[0].test) if splits else 0,
    }
    result = ExperimentResult(variant=variant_name, lam=loss_cfg.lam, seeds=list(seeds),
                              per_seed=per_seed, summary=summary,
                              epoch_rows=epoch_rows)
    if keep_bundles:
        result.bundles = bundles
        result.splits = splits
    return result


def run_ablation(field_dataset, county_dataset, variant_name, seeds, split_spec,
                 pre_cfg, fine_cfg, loss_cfg, sizes=None, keep_bundles=False):
    """run_experiment plus the variant's token arithmetic in the report."""
    variant = get_variant(variant_name)
    result = run_experiment(field_dataset, county_dataset, variant_name, seeds, split_spec,
                            pre_cfg, fine_cfg, loss_cfg, sizes=sizes, keep_bundles=keep_bundles)
    mconfig = model_config_for(variant, sizes)
    result.summary["token_count"] = mconfig.n_tokens
    result.summary["components"] = {
        "attention": True,
        "soil_moisture_tokens": variant.use_sm_tokens,
        "field_pretraining": variant.use_pretrain,
        "w2s_encoder": variant.use_w2s,
        "smw_loss": variant.use_smw,
        "oe_loss": variant.use_oe,
    }
    return result
