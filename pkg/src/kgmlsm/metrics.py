"""Evaluation: RMSE and R2, the LR/Ridge/MLP reference models, and the
signed-error reports used for over/underestimation diagnostics."""

import csv

import numpy as np

from .autodiff import ParamStore, Tensor, gradients, matmul, mean, relu, square
from .errors import ShapeError
from .optim import PlateauScheduler, adam_init, adam_step


def rmse(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"rmse: shapes differ, {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("rmse: empty input")
    return float(np.sqrt(((y - y_hat) ** 2).mean()))


def r2(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"r2: shapes differ, {y.shape} vs {y_hat.shape}")
    if y.size < 2:
        raise ValueError("r2: need at least 2 samples")
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0.0:
        raise ValueError("r2: zero-variance actuals")
    sse = float(((y - y_hat) ** 2).sum())
    return 1.0 - sse / sst


# ---------------------------------------------------------------------------
# baseline models on flattened sample features


def sample_features(dataset):
    """Flatten each sample to one vector: all series channel values in
    channel-major order, then the auxiliaries (matches token order)."""
    rows = []
    for s in dataset.samples:
        rows.append(np.concatenate([
            s.weather.T.reshape(-1), s.vis.T.reshape(-1), s.sm.T.reshape(-1), s.aux]))
    return np.stack(rows)


def _standardize_features(train_x, *others):
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return tuple((x - mu) / sd for x in (train_x,) + others)


def _lstsq_normal_equations(design, y, ridge_alpha=0.0):
    gram = design.T @ design
    if ridge_alpha > 0.0:
        penalty = ridge_alpha * np.eye(gram.shape[0])
        penalty[-1, -1] = 0.0  # intercept is not shrunk
        gram = gram + penalty
    try:
        return np.linalg.solve(gram, design.T @ y)
    except np.linalg.LinAlgError:
        raise ValueError("singular normal equations; use the ridge baseline")


def _fit_mlp(train_x, train_y, val_x, val_y, seed, hidden=64, lr=0.001, batch_size=16,
             max_epochs=30, patience=10):
    """One-hidden-layer regressor trained like the finetune stage."""
    d = train_x.shape[1]
    rng = np.random.default_rng([seed, 773])
    p = ParamStore()
    p.add("h.w", rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), size=(d, hidden)))
    p.add("h.b", np.zeros(hidden))
    p.add("o.w", rng.uniform(-1 / np.sqrt(hidden), 1 / np.sqrt(hidden), size=(hidden, 1)))
    p.add("o.b", np.zeros(1))

    def forward(x):
        h = relu(matmul(Tensor(x), p["h.w"]) + p["h.b"])
        return matmul(h, p["o.w"])[:, 0] + p["o.b"]

    def loss_on(x, y):
        return mean(square(forward(x) - Tensor(y)))

    adam = adam_init(p, lr)
    sched = PlateauScheduler(lr=lr, patience=5)
    best_val = None
    best = p.to_arrays()
    bad = 0
    n = train_x.shape[0]
    for epoch in range(max_epochs):
        order = np.random.default_rng([seed, 787, epoch]).permutation(n)
        for i in range(0, n, batch_size):
            idx = order[i: i + batch_size]
            total = loss_on(train_x[idx], train_y[idx])
            grads = gradients(total, p)
            adam.lr = sched.lr
            adam_step(p, grads, adam)
        val_loss = float(loss_on(val_x, val_y).data)
        sched.step(val_loss)
        if best_val is None or val_loss < best_val:
            best_val, best, bad = val_loss, p.to_arrays(), 0
        else:
            bad += 1
            if bad >= patience:
                break
    p.load_arrays(best)
    return forward


def baseline_fit_predict(kind, train, test, val=None, seed=0, ridge_alpha=1.0):
    """Fit a reference model on the train split and predict the test split.

    kind: "lr" (ordinary least squares), "ridge" (L2, intercept unshrunk)
    or "mlp" (64-unit hidden layer trained with the finetune recipe; needs
    the val split for early stopping). Targets are standardized with
    train statistics and predictions mapped back to t/ha.
    """
    train_x = sample_features(train)
    test_x = sample_features(test)
    train_y = np.array([s.yield_label for s in train.samples])
    y_mu, y_sd = train_y.mean(), train_y.std()
    y_sd = y_sd if y_sd > 1e-12 else 1.0
    train_t = (train_y - y_mu) / y_sd

    kind = kind.lower()
    if kind == "mlp":
        if val is None:
            raise ValueError("mlp baseline needs a validation split")
        val_x = sample_features(val)
        val_y = (np.array([s.yield_label for s in val.samples]) - y_mu) / y_sd
        train_x, test_x, val_x = _standardize_features(train_x, test_x, val_x)
        forward = _fit_mlp(train_x, train_t, val_x, val_y, seed)
        return forward(test_x).data * y_sd + y_mu

    train_x, test_x = _standardize_features(train_x, test_x)
    design = np.hstack([train_x, np.ones((train_x.shape[0], 1))])
    test_design = np.hstack([test_x, np.ones((test_x.shape[0], 1))])
    if kind == "lr":
        w = _lstsq_normal_equations(design, train_t, ridge_alpha=0.0)
    elif kind == "ridge":
        w = _lstsq_normal_equations(design, train_t, ridge_alpha=ridge_alpha)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    return test_design @ w * y_sd + y_mu


# ---------------------------------------------------------------------------
# error reports


def error_report(dataset, y_hat, sm_hat=None):
    """Per-sample signed errors plus drought/non-drought group means.

    When sm_hat is given, each row also carries the sample's mean absolute
    SM error so yield misses can be read against SM misses.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_hat.shape != (len(dataset),):
        raise ShapeError(f"error_report: {y_hat.shape} predictions for {len(dataset)} samples")
    rows = []
    for i, s in enumerate(dataset.samples):
        signed = float(y_hat[i] - s.yield_label)
        row = {"id": s.sid, "year": s.year, "drought_flag": s.drought_flag,
               "y": s.yield_label, "y_hat": float(y_hat[i]),
               "signed_error": signed, "abs_error": abs(signed)}
        if sm_hat is not None:
            row["sm_abs_error"] = float(np.abs(sm_hat[i] - s.sm).mean())
        rows.append(row)

    signed = np.array([r["signed_error"] for r in rows])
    flags = np.array([r["drought_flag"] for r in rows], dtype=bool)
    groups = {
        "all": {"mean_signed_error": float(signed.mean()),
                "mean_abs_error": float(np.abs(signed).mean()), "n": len(rows)},
    }
    for name, mask in (("drought", flags), ("non_drought", ~flags)):
        if mask.any():
            groups[name] = {"mean_signed_error": float(signed[mask].mean()),
                            "mean_abs_error": float(np.abs(signed[mask]).mean()),
                            "n": int(mask.sum())}
        else:
            groups[name] = {"mean_signed_error": None, "mean_abs_error": None, "n": 0}
    return rows, groups


def write_errors_csv(path, rows, seed=None):
    has_sm = rows and "sm_abs_error" in rows[0]
    header = ["id", "year", "drought_flag", "y", "y_hat", "signed_error", "abs_error"]
    if seed is not None:
        header = ["seed"] + header
    if has_sm:
        header.append("sm_abs_error")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            row = [r["id"], str(r["year"]), str(int(r["drought_flag"])), repr(r["y"]),
                   repr(r["y_hat"]), repr(r["signed_error"]), repr(r["abs_error"])]
            if seed is not None:
                row = [str(seed)] + row
            if has_sm:
                row.append(repr(r["sm_abs_error"]))
            w.writerow(row)
