"""Bi-level training engine.

One iteration: a virtual SGD step of the classifier whose per-sample
weights come from the weighting net, a closed-form hypergradient of the
meta loss through that step (the one-step update is linear in the weights,
so no tape is needed), a weighting-net update, then the real classifier
step with the refreshed weights. Also houses the soft-label variant with
EMA weights / temporal ensembling / mixup, the per-epoch meta-set builder,
and the transfer (frozen weight net) trainer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .biasgen import Dataset
from .models import Classifier, WeightNet
from .numkit import Adam, SgdMomentum, flatten, unflatten_like
from .taskfam import FamilyIndex, kmeans_1d


# ---------------------------------------------------------------------------
# meta-set construction


@dataclass
class MetaBatch:
    x: np.ndarray          # (m, d)
    targets: np.ndarray    # (m, C) soft rows

    @property
    def m(self) -> int:
        return self.x.shape[0]


def build_meta_set(ds: Dataset, clf: Classifier, per_class: int = 10,
                   mixup: bool = True, rng: np.random.Generator | None = None,
                   mode: str = "lowest",
                   pseudo_targets: np.ndarray | None = None) -> MetaBatch:
    """Class-balanced trusted batch drawn from the training data.

    mode="lowest" picks the per_class samples with the smallest current
    cross-entropy loss per observed class; mode="random" draws uniformly
    (used before the classifier is warmed up). With mixup, pairs inside
    the batch are convexly combined (features and soft labels).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if mode not in ("lowest", "random"):
        raise ValueError(f"unknown meta-set mode {mode!r}")
    if mode == "lowest":
        losses = clf.losses(ds.features, ds.observed_labels)
    picked = []
    for c in range(ds.C):
        members = np.where(ds.observed_labels == c)[0]
        if members.size < per_class:
            warnings.warn(f"class {c} has only {members.size} samples; "
                          f"taking all of them for the meta set")
            take = members
        elif mode == "random":
            take = rng.choice(members, size=per_class, replace=False)
        else:
            take = members[np.argsort(losses[members], kind="stable")[:per_class]]
        picked.append(take)
    idx = np.concatenate(picked)
    x = ds.features[idx].copy()
    if pseudo_targets is not None:
        targets = pseudo_targets[idx].copy()
    else:
        targets = np.zeros((idx.size, ds.C))
        targets[np.arange(idx.size), ds.observed_labels[idx]] = 1.0
    if mixup:
        perm = rng.permutation(idx.size)
        lam = rng.beta(1.0, 1.0, size=idx.size)[:, None]
        x = lam * x + (1.0 - lam) * x[perm]
        targets = lam * targets + (1.0 - lam) * targets[perm]
    return MetaBatch(x, targets)


# ---------------------------------------------------------------------------
# virtual step and hypergradient (plain variant)


@dataclass
class VirtualStepCache:
    g: np.ndarray            # (n, P) per-sample train grads at w^(t)
    v: np.ndarray            # (n,) raw head weights
    dv: np.ndarray           # (n, PTheta) d v_j / d Theta
    alpha: float
    normalize: bool
    theta_flat: np.ndarray   # Theta snapshot, staleness guard


def _effective_weights(v: np.ndarray, normalize: bool) -> np.ndarray:
    if normalize:
        s = v.sum()
        if s != 0.0:
            return v / s
    return v


def virtual_step(clf: Classifier, wnet: WeightNet, x: np.ndarray,
                 targets: np.ndarray, fams: np.ndarray, alpha: float,
                 normalize: bool):
    """Tentative one-step update w_hat(Theta) = w - alpha * sum_j vtil_j g_j.

    In normalized mode vtil_j = v_j / sum(v); if the sum is zero the raw
    weights are used unchanged.
    """
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    losses, g = clf.per_sample_grads(x, targets)
    v, dv = wnet.weight_and_grad(losses, fams)
    vtil = _effective_weights(v, normalize)
    step = g.T @ vtil
    if not np.all(np.isfinite(step)):
        raise FloatingPointError("non-finite gradient in virtual step")
    clf_hat = clf.copy()
    clf_hat.set_flat(clf_hat.get_flat() - alpha * step)
    cache = VirtualStepCache(g=g, v=v, dv=dv, alpha=alpha, normalize=normalize,
                             theta_flat=wnet.get_flat())
    return clf_hat, cache


def hypergrad(cache, clf_hat: Classifier, meta_x: np.ndarray,
              meta_targets: np.ndarray, wnet: WeightNet | None = None):
    """Analytic gradient of the meta loss w.r.t. Theta through the one-step
    update, as a flat vector, plus the meta loss value at w_hat.

    Each training sample contributes the alignment between its gradient and
    the meta batch's mean gradient at w_hat, times the weight's Theta
    sensitivity (quotient rule in normalized mode).
    """
    if wnet is not None and not np.array_equal(wnet.get_flat(), cache.theta_flat):
        raise RuntimeError("stale cache: Theta changed since the virtual step")
    meta_losses, g_meta = clf_hat.per_sample_grads(meta_x, meta_targets)
    gbar = g_meta.mean(axis=0)
    if isinstance(cache, SLStepCache):
        cA = (cache.gA - cache.gAz) @ gbar
        cB = (cache.gB - cache.gBz) @ gbar
        grad = cache.lam * (cA @ cache.dvA) + (1.0 - cache.lam) * (cB @ cache.dvB)
        grad *= -cache.alpha
        return grad, float(meta_losses.mean())
    c = cache.g @ gbar
    if cache.normalize:
        s = cache.v.sum()
        if s != 0.0:
            dv_sum = cache.dv.sum(axis=0)
            grad = (c @ cache.dv) / s - ((c * cache.v).sum() / s ** 2) * dv_sum
        else:
            grad = c @ cache.dv
    else:
        grad = c @ cache.dv
    grad *= -cache.alpha
    return grad, float(meta_losses.mean())


def meta_update(wnet: WeightNet, optimizer, grad_flat: np.ndarray) -> None:
    """Apply one optimizer step to the weighting-net parameters."""
    if not np.all(np.isfinite(grad_flat)):
        raise FloatingPointError("non-finite hypergradient")
    params = wnet.params
    grads = unflatten_like(grad_flat, params)
    optimizer.step(params, grads)
    wnet.W1, wnet.b1, wnet.W2, wnet.b2 = params


def classifier_update(clf: Classifier, optimizer, wnet: WeightNet,
                      x: np.ndarray, targets: np.ndarray, fams: np.ndarray,
                      alpha: float, normalize: bool) -> np.ndarray:
    """Real classifier step with weights recomputed at the current Theta.

    Returns the raw per-sample weights (for logging). With momentum 0 the
    result coincides with the virtual step at the same Theta.
    """
    losses, g = clf.per_sample_grads(x, targets)
    v, _ = wnet.weight_and_grad(losses, fams)
    vtil = _effective_weights(v, normalize)
    step = g.T @ vtil
    if not np.all(np.isfinite(step)):
        raise FloatingPointError("non-finite gradient in classifier update")
    params = clf.params
    optimizer.lr = alpha
    optimizer.step(params, unflatten_like(step, params))
    n_layers = len(clf.weights)
    clf.weights = params[:n_layers]
    clf.biases = params[n_layers:]
    return v


def erm_update(clf: Classifier, optimizer, x: np.ndarray, targets: np.ndarray,
               alpha: float) -> float:
    """Plain mean-CE SGD step; returns the batch mean loss."""
    loss, grads = clf.mean_grad(x, targets)
    params = clf.params
    optimizer.lr = alpha
    optimizer.step(params, grads)
    n_layers = len(clf.weights)
    clf.weights = params[:n_layers]
    clf.biases = params[n_layers:]
    return loss


# ---------------------------------------------------------------------------
# soft-label (pseudo-label) variant


@dataclass
class SLStepCache:
    gA: np.ndarray           # grads of CE(f(x_mix), y)
    gAz: np.ndarray          # grads of CE(f(x_mix), z)
    gB: np.ndarray           # permuted-label counterparts
    gBz: np.ndarray
    vA: np.ndarray
    dvA: np.ndarray
    vB: np.ndarray
    dvB: np.ndarray
    lam: float
    alpha: float
    theta_flat: np.ndarray
    loss_a: np.ndarray = None
    loss_b: np.ndarray = None


def ema_update(w_wa: Classifier, clf: Classifier, beta_wa: float) -> None:
    """w_wa <- beta*w_wa + (1-beta)*w, in place."""
    if not 0.0 <= beta_wa < 1.0:
        raise ValueError("beta_wa must be in [0, 1)")
    flat = beta_wa * w_wa.get_flat() + (1.0 - beta_wa) * clf.get_flat()
    w_wa.set_flat(flat)


def temporal_ensemble(z_rows: np.ndarray, p_rows: np.ndarray,
                      alpha_te: float) -> np.ndarray:
    """Convex blend of stored ensembled predictions with fresh ones,
    row-renormalized (uniform fallback for degenerate rows)."""
    if not 0.0 <= alpha_te < 1.0:
        raise ValueError("alpha_te must be in [0, 1)")
    z = alpha_te * z_rows + (1.0 - alpha_te) * p_rows
    s = z.sum(axis=1, keepdims=True)
    bad = (s <= 1e-300).ravel()
    if bad.any():
        z[bad] = 1.0 / z.shape[1]
        s = z.sum(axis=1, keepdims=True)
    return z / s


def sl_virtual_step(clf: Classifier, wnet: WeightNet, x_mix: np.ndarray,
                    y_a: np.ndarray, z_a: np.ndarray, y_b: np.ndarray,
                    z_b: np.ndarray, fams_a: np.ndarray, fams_b: np.ndarray,
                    lam: float, alpha: float,
                    weight_override: np.ndarray | None = None):
    """Virtual step of the soft-label objective on a mixup batch.

    Per sample the descent direction is
      lam   * [ vA * dCE(y_a) + (1-vA) * dCE(z_a) ]
    + (1-lam) * [ vB * dCE(y_b) + (1-vB) * dCE(z_b) ],
    with vA = head(loss against y_a), vB = head(loss against y_b), both
    evaluated at the mixed input. weight_override pins all weights to a
    constant (test hook).
    """
    loss_a, gA = clf.per_sample_grads(x_mix, y_a)
    _, gAz = clf.per_sample_grads(x_mix, z_a)
    loss_b, gB = clf.per_sample_grads(x_mix, y_b)
    _, gBz = clf.per_sample_grads(x_mix, z_b)
    vA, dvA = wnet.weight_and_grad(loss_a, fams_a)
    vB, dvB = wnet.weight_and_grad(loss_b, fams_b)
    if weight_override is not None:
        vA = np.broadcast_to(weight_override, vA.shape).astype(np.float64)
        vB = vA
        dvA = np.zeros_like(dvA)
        dvB = np.zeros_like(dvB)
    dirA = gA * vA[:, None] + gAz * (1.0 - vA)[:, None]
    dirB = gB * vB[:, None] + gBz * (1.0 - vB)[:, None]
    step = lam * dirA.sum(axis=0) + (1.0 - lam) * dirB.sum(axis=0)
    if not np.all(np.isfinite(step)):
        raise FloatingPointError("non-finite gradient in soft-label step")
    clf_hat = clf.copy()
    clf_hat.set_flat(clf_hat.get_flat() - alpha * step)
    cache = SLStepCache(gA=gA, gAz=gAz, gB=gB, gBz=gBz, vA=vA, dvA=dvA,
                        vB=vB, dvB=dvB, lam=lam, alpha=alpha,
                        theta_flat=wnet.get_flat(), loss_a=loss_a,
                        loss_b=loss_b)
    return clf_hat, cache


def sl_classifier_update(clf: Classifier, optimizer, wnet: WeightNet,
                         cache: SLStepCache, fams_a, fams_b,
                         alpha: float) -> np.ndarray:
    """Real soft-label step: weights recomputed at the current Theta, same
    gradient pieces as the virtual step."""
    vA, _ = wnet.weight_and_grad(cache.loss_a, fams_a)
    vB, _ = wnet.weight_and_grad(cache.loss_b, fams_b)
    dirA = cache.gA * vA[:, None] + cache.gAz * (1.0 - vA)[:, None]
    dirB = cache.gB * vB[:, None] + cache.gBz * (1.0 - vB)[:, None]
    step = cache.lam * dirA.sum(axis=0) + (1.0 - cache.lam) * dirB.sum(axis=0)
    params = clf.params
    optimizer.lr = alpha
    optimizer.step(params, unflatten_like(step, params))
    n_layers = len(clf.weights)
    clf.weights = params[:n_layers]
    clf.biases = params[n_layers:]
    return vA


# ---------------------------------------------------------------------------
# training state and drivers


@dataclass
class TrainState:
    clf: Classifier
    wnet: WeightNet | None
    fam: FamilyIndex | None
    clf_opt: SgdMomentum
    theta_opt: Adam | SgdMomentum | None
    w_wa: Classifier | None = None
    z: np.ndarray | None = None
    t: int = 0
    history: list[dict] = field(default_factory=list)
    final_report: dict = field(default_factory=dict)


def _schedule_lr(sched: dict, base_lr: float, epoch: int, t: int,
                 total_epochs: int) -> float:
    kind = sched.get("kind", "piecewise")
    if kind == "piecewise":
        lr = base_lr
        for frac in sched.get("milestones", [0.6, 0.8]):
            if epoch >= frac * total_epochs:
                lr *= sched.get("gamma", 0.1)
        return lr
    if kind == "decay":
        c = sched.get("c", base_lr)
        return min(c, c / np.sqrt(max(t, 1)))
    raise ValueError(f"unknown schedule kind {kind!r}")


def _onehot(labels: np.ndarray, C: int) -> np.ndarray:
    out = np.zeros((labels.size, C))
    out[np.arange(labels.size), labels] = 1.0
    return out


class MetricLogger:
    """Per-iteration metric rows; identical runs produce identical rows."""

    COLUMNS = ["iteration", "epoch", "train_loss", "meta_loss", "test_acc",
               "hypergrad_norm"]

    def __init__(self, K: int):
        self.K = K
        self.rows: list[dict] = []

    @property
    def columns(self) -> list[str]:
        cols = list(self.COLUMNS)
        tail = cols.pop()  # family columns sit before hypergrad_norm
        cols += [f"family_weight_{k}" for k in range(self.K)] + [tail]
        return cols

    def log(self, **kw):
        self.rows.append(kw)

    def write_csv(self, path) -> None:
        cols = self.columns
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                cells = []
                for c in cols:
                    v = row.get(c, float("nan"))
                    if isinstance(v, (int, np.integer)):
                        cells.append(str(int(v)))
                    else:
                        cells.append(f"{float(v):.10g}")
                fh.write(",".join(cells) + "\n")


def _family_means(v: np.ndarray, fams: np.ndarray, K: int) -> dict:
    out = {}
    for k in range(K):
        sel = fams == k
        out[f"family_weight_{k}"] = float(v[sel].mean()) if sel.any() else float("nan")
    return out


def meta_train(ds: Dataset, cfg, test_ds: Dataset | None = None,
               seed: int = 0) -> TrainState:
    """Full meta-training run; cfg is a resolved ExperimentConfig.

    Handles the erm / mwnet / cmwnet / cmwnet-sl variants. Emits one metric
    row per iteration into state.history and a summary into
    state.final_report.
    """
    from .metrics import evaluate  # local import, metrics also imports models

    variant = cfg.train.variant
    rng_init_clf, rng_init_wn, rng_order, rng_meta, rng_kmeans, rng_sl = \
        _spawn(seed, 6)

    K = 1 if variant == "mwnet" else cfg.model.K
    fam = kmeans_1d(ds.class_counts(), K, restarts=10, rng=rng_kmeans)
    fams_all = np.array([fam.class_to_family[int(c)] for c in ds.observed_labels])

    clf = Classifier.init([ds.d] + list(cfg.model.hidden) + [ds.C], rng_init_clf)
    wnet = None
    if variant != "erm":
        wnet = WeightNet.init(fam.K, rng_init_wn, hidden=cfg.model.H,
                              loss_clamp=cfg.model.loss_clamp)
    clf_opt = SgdMomentum(cfg.train.lr, cfg.train.momentum,
                          cfg.train.weight_decay)
    theta_opt = None
    if wnet is not None:
        if cfg.train.theta_optimizer == "adam":
            theta_opt = Adam(cfg.train.theta_lr,
                             weight_decay=cfg.train.theta_weight_decay)
        else:
            theta_opt = SgdMomentum(cfg.train.theta_lr)

    state = TrainState(clf=clf, wnet=wnet, fam=fam, clf_opt=clf_opt,
                       theta_opt=theta_opt)
    sl = variant == "cmwnet-sl"
    if sl:
        state.z = _onehot(ds.observed_labels, ds.C)
        zero = Classifier.init(clf.sizes, np.random.default_rng(0))
        zero.set_flat(np.zeros(zero.n_params))
        state.w_wa = zero

    logger = MetricLogger(K=fam.K)
    n = ds.n
    batch = min(cfg.train.batch_size, n)
    iters_per_epoch = int(np.ceil(n / batch))
    normalize = cfg.model.normalize
    test_acc = float("nan")
    if test_ds is not None:
        test_acc = evaluate(clf, test_ds).accuracy
    meta_loss = float("nan")
    hg_norm = float("nan")

    for epoch in range(cfg.train.epochs):
        in_warmup = variant != "erm" and epoch < cfg.train.warmup_epochs
        meta_pool = None
        if variant != "erm" and not in_warmup:
            mode = "lowest" if epoch >= cfg.train.warmup_epochs else "random"
            pseudo = state.z if (sl and cfg.train.meta_labels == "pseudo") else None
            meta_pool = build_meta_set(ds, clf, cfg.train.meta_per_class,
                                       cfg.train.mixup_meta, rng_meta, mode,
                                       pseudo_targets=pseudo)
        order = rng_order.permutation(n)
        for it in range(iters_per_epoch):
            idx = order[it * batch:(it + 1) * batch]
            x = ds.features[idx]
            y = ds.observed_labels[idx]
            fams = fams_all[idx]
            alpha = _schedule_lr(cfg.train.schedule, cfg.train.lr, epoch,
                                 state.t, cfg.train.epochs)
            if variant == "erm" or in_warmup:
                train_loss = erm_update(clf, clf_opt, x, y, alpha)
                fam_w = {f"family_weight_{k}": float("nan")
                         for k in range(fam.K)}
            else:
                m = min(cfg.train.meta_batch_size, meta_pool.m)
                midx = rng_meta.choice(meta_pool.m, size=m, replace=False)
                mx, mt = meta_pool.x[midx], meta_pool.targets[midx]
                do_meta = state.t % max(1, cfg.train.t_meta) == 0
                beta = _schedule_lr(cfg.train.schedule, cfg.train.theta_lr,
                                    epoch, state.t, cfg.train.epochs) \
                    if cfg.train.schedule.get("kind") == "decay" \
                    else cfg.train.theta_lr
                if sl:
                    train_loss, v, meta_loss, hg_norm = _sl_iteration(
                        state, ds, idx, x, y, fams_all, mx, mt, alpha, beta,
                        cfg, rng_sl, do_meta, normalize)
                else:
                    meta_loss = float("nan")
                    hg_norm = float("nan")
                    if do_meta:
                        clf_hat, cache = virtual_step(clf, wnet, x, y, fams,
                                                      alpha, normalize)
                        hg, meta_loss = hypergrad(cache, clf_hat, mx, mt)
                        theta_opt.lr = beta
                        meta_update(wnet, theta_opt, hg)
                        hg_norm = float(np.linalg.norm(hg))
                    v = classifier_update(clf, clf_opt, wnet, x, y, fams,
                                          alpha, normalize)
                    train_loss = float(clf.losses(x, y).mean())
                fam_w = _family_means(v, fams, fam.K)
            logger.log(iteration=state.t, epoch=epoch,
                       train_loss=float(train_loss), meta_loss=meta_loss,
                       test_acc=test_acc, hypergrad_norm=hg_norm, **fam_w)
            state.t += 1
        if test_ds is not None:
            test_acc = evaluate(clf, test_ds).accuracy

    state.history = logger.rows
    state.final_report = _final_report(state, ds, test_ds, test_acc)
    state.logger = logger
    return state


def _spawn(seed: int, k: int):
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(k)]


def _sl_iteration(state: TrainState, ds: Dataset, idx, x, y, fams_all,
                  mx, mt, alpha, beta, cfg, rng, do_meta, normalize):
    clf, wnet = state.clf, state.wnet
    slc = cfg.train.sl
    ema_update(state.w_wa, clf, slc["beta_wa"])
    p = state.w_wa.forward(x)
    state.z[idx] = temporal_ensemble(state.z[idx], p, slc["alpha_te"])
    lam = float(rng.beta(slc["gamma"], slc["gamma"]))
    lam = max(lam, 1.0 - lam)
    perm = rng.permutation(idx.size)
    x_mix = lam * x + (1.0 - lam) * x[perm]
    y_b = y[perm]
    z_a = state.z[idx]
    z_b = z_a[perm]
    fams_a = fams_all[idx]
    fams_b = fams_a[perm]
    clf_hat, cache = sl_virtual_step(clf, wnet, x_mix, y, z_a, y_b, z_b,
                                     fams_a, fams_b, lam, alpha)
    meta_loss = float("nan")
    hg_norm = float("nan")
    if do_meta:
        hg, meta_loss = hypergrad(cache, clf_hat, mx, mt)
        state.theta_opt.lr = beta
        meta_update(wnet, state.theta_opt, hg)
        hg_norm = float(np.linalg.norm(hg))
    v = sl_classifier_update(clf, state.clf_opt, wnet, cache, fams_a, fams_b,
                             alpha)
    train_loss = float(clf.losses(x_mix, y).mean())
    return train_loss, v, meta_loss, hg_norm


def _final_report(state: TrainState, ds: Dataset, test_ds, test_acc) -> dict:
    report = {"test_acc": float(test_acc), "iterations": state.t}
    if state.wnet is not None and state.fam is not None:
        losses = state.clf.losses(ds.features, ds.observed_labels)
        fams = np.array([state.fam.class_to_family[int(c)]
                         for c in ds.observed_labels])
        v = state.wnet.weight(losses, fams)
        noisy = ds.noisy_mask()
        report["mean_weight"] = float(v.mean())
        if noisy.any() and (~noisy).any():
            report["noisy_mean_weight"] = float(v[noisy].mean())
            report["clean_mean_weight"] = float(v[~noisy].mean())
    return report


def meta_test(wnet: WeightNet | None, query_ds: Dataset, cfg,
              test_ds: Dataset | None = None, seed: int = 0) -> TrainState:
    """Transfer: re-cluster the query dataset's class sizes, then train a
    fresh classifier under the frozen weighting net (no meta updates).

    wnet=None (or a weight net pinned at 1 upstream) reduces to plain ERM.
    """
    from .metrics import evaluate

    rng_init_clf, rng_order, rng_kmeans = _spawn(seed, 3)
    fam = None
    fams_all = None
    if wnet is not None:
        fam = kmeans_1d(query_ds.class_counts(), wnet.K, restarts=10,
                        rng=rng_kmeans)
        if fam.K != wnet.K:
            raise ValueError(
                f"weight net has {wnet.K} heads but query clustering yielded "
                f"{fam.K} families")
        fams_all = np.array([fam.class_to_family[int(c)]
                             for c in query_ds.observed_labels])
    clf = Classifier.init([query_ds.d] + list(cfg.model.hidden) + [query_ds.C],
                          rng_init_clf)
    clf_opt = SgdMomentum(cfg.train.lr, cfg.train.momentum,
                          cfg.train.weight_decay)
    state = TrainState(clf=clf, wnet=wnet, fam=fam, clf_opt=clf_opt,
                       theta_opt=None)
    logger = MetricLogger(K=wnet.K if wnet is not None else 1)
    n = query_ds.n
    batch = min(cfg.train.batch_size, n)
    iters_per_epoch = int(np.ceil(n / batch))
    test_acc = float("nan")
    if test_ds is not None:
        test_acc = evaluate(clf, test_ds).accuracy
    for epoch in range(cfg.train.epochs):
        in_warmup = wnet is not None and epoch < cfg.train.warmup_epochs
        order = rng_order.permutation(n)
        for it in range(iters_per_epoch):
            idx = order[it * batch:(it + 1) * batch]
            x = query_ds.features[idx]
            y = query_ds.observed_labels[idx]
            alpha = _schedule_lr(cfg.train.schedule, cfg.train.lr, epoch,
                                 state.t, cfg.train.epochs)
            if wnet is None or in_warmup:
                train_loss = erm_update(clf, clf_opt, x, y, alpha)
                fam_w = ({f"family_weight_{k}": float("nan")
                          for k in range(fam.K)} if fam is not None else {})
            else:
                v = classifier_update(clf, clf_opt, wnet, x, y, fams_all[idx],
                                      alpha, cfg.model.normalize)
                train_loss = float(clf.losses(x, y).mean())
                fam_w = _family_means(v, fams_all[idx], fam.K)
            logger.log(iteration=state.t, epoch=epoch,
                       train_loss=float(train_loss),
                       meta_loss=float("nan"), test_acc=test_acc,
                       hypergrad_norm=float("nan"), **fam_w)
            state.t += 1
        if test_ds is not None:
            test_acc = evaluate(clf, test_ds).accuracy
    state.history = logger.rows
    state.final_report = _final_report(state, query_ds, test_ds, test_acc)
    state.logger = logger
    return state
