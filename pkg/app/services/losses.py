"""
Training objectives and their analytic gradients.

Every per-cell loss is averaged over all C*T cells, active or not; DOA, SDE
and SCE terms are masked by ground-truth activity.
"""

from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from app.core.exceptions import AnnotationError, FormatMismatchError, ShapeMismatchError
from app.schemas.loss import LossValue, LossWeights, SdeLossKind
from app.schemas.representation import FormatKind, ReprFormat, TargetTensor

BCE_EPS = 1e-7
DISTANCE_FLOOR = 1e-6

Array = np.ndarray


def _check_same(a: Array, b: Array, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _vector_mask(gt_a: Array, vector: Array, what: str) -> Array:
    """Repeat a (T, C) activity mask across the three axis blocks of a (T, 3C) array."""
    if gt_a.ndim != 2 or vector.shape != (gt_a.shape[0], 3 * gt_a.shape[1]):
        raise ShapeMismatchError(f"{what}: activity {gt_a.shape} does not fit vectors {vector.shape}")
    return np.tile(gt_a, (1, 3))


def bce_sed(pred_a: Array, gt_a: Array) -> float:
    _check_same(pred_a, gt_a, "bce_sed")
    p = np.clip(pred_a, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(gt_a * np.log(p) + (1.0 - gt_a) * np.log(1.0 - p)))


def bce_sed_grad(pred_a: Array, gt_a: Array) -> Array:
    _check_same(pred_a, gt_a, "bce_sed")
    p = np.clip(pred_a, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred_a > BCE_EPS) & (pred_a < 1.0 - BCE_EPS)
    grad = (-gt_a / p + (1.0 - gt_a) / (1.0 - p)) / pred_a.size
    return np.where(inside, grad, 0.0)


def mse_doa(pred_R: Array, gt_R: Array, gt_a: Array) -> float:
    _check_same(pred_R, gt_R, "mse_doa")
    mask = _vector_mask(gt_a, pred_R, "mse_doa")
    return float(np.sum(mask * (pred_R - gt_R) ** 2) / gt_a.size)


def mse_doa_grad(pred_R: Array, gt_R: Array, gt_a: Array) -> Array:
    _check_same(pred_R, gt_R, "mse_doa")
    mask = _vector_mask(gt_a, pred_R, "mse_doa")
    return 2.0 * mask * (pred_R - gt_R) / gt_a.size


def _check_distances(gt_d: Array, gt_a: Array) -> None:
    bad = (gt_a > 0) & (gt_d <= 0)
    if np.any(bad):
        t, c = (int(i) for i in np.argwhere(bad)[0])
        raise AnnotationError(f"active cell (frame {t}, class {c}) has non-positive distance {gt_d[t, c]}")


def sde_loss(kind: SdeLossKind, pred_d: Array, gt_d: Array, gt_a: Array) -> float:
    _check_same(pred_d, gt_d, "sde_loss")
    _check_same(gt_a, gt_d, "sde_loss")
    _check_distances(gt_d, gt_a)
    kind = SdeLossKind(kind)
    err = gt_d - pred_d
    if kind == SdeLossKind.MSE:
        cell = gt_a * err**2
    elif kind == SdeLossKind.MSPE:
        cell = gt_a * (err / np.maximum(gt_d, DISTANCE_FLOOR)) ** 2
    else:
        cell = gt_a * np.abs(err / np.maximum(gt_d, DISTANCE_FLOOR))
    return float(np.mean(cell))


def sde_loss_grad(kind: SdeLossKind, pred_d: Array, gt_d: Array, gt_a: Array) -> Array:
    _check_same(pred_d, gt_d, "sde_loss")
    _check_same(gt_a, gt_d, "sde_loss")
    _check_distances(gt_d, gt_a)
    kind = SdeLossKind(kind)
    err = gt_d - pred_d
    if kind == SdeLossKind.MSE:
        grad = -2.0 * gt_a * err
    elif kind == SdeLossKind.MSPE:
        d = np.maximum(gt_d, DISTANCE_FLOOR)
        grad = -2.0 * gt_a * err / d**2
    else:
        d = np.maximum(gt_d, DISTANCE_FLOOR)
        grad = -gt_a * np.sign(err) / d
    return grad / gt_d.size


def sce_loss(pred_S: Array, gt_S: Array, gt_a: Array) -> float:
    _check_same(pred_S, gt_S, "sce_loss")
    mask = _vector_mask(gt_a, pred_S, "sce_loss")
    return float(np.sum(mask * (pred_S - gt_S) ** 2) / gt_a.size)


def sce_loss_grad(pred_S: Array, gt_S: Array, gt_a: Array) -> Array:
    _check_same(pred_S, gt_S, "sce_loss")
    mask = _vector_mask(gt_a, pred_S, "sce_loss")
    return 2.0 * mask * (pred_S - gt_S) / gt_a.size


def accdoa_mse(pred: Array, gt: Array) -> float:
    _check_same(pred, gt, "accdoa_mse")
    return float(np.mean((pred - gt) ** 2))


def accdoa_mse_grad(pred: Array, gt: Array) -> Array:
    _check_same(pred, gt, "accdoa_mse")
    return 2.0 * (pred - gt) / pred.size


_GRADIENTS: Dict[Callable[..., float], Callable[..., Array]] = {
    bce_sed: bce_sed_grad,
    mse_doa: mse_doa_grad,
    sde_loss: sde_loss_grad,
    sce_loss: sce_loss_grad,
    accdoa_mse: accdoa_mse_grad,
}


def loss_gradient(loss: Callable[..., float], *args, **kwargs) -> Array:
    """
    Analytic gradient of ``loss`` with respect to its prediction argument.

    Called with the same arguments as the loss itself, e.g.
    ``loss_gradient(sde_loss, SdeLossKind.MSPE, pred_d, gt_d, gt_a)``.
    """
    try:
        grad_fn = _GRADIENTS[loss]
    except KeyError:
        raise FormatMismatchError(f"no analytic gradient registered for {getattr(loss, '__name__', loss)}") from None
    return grad_fn(*args, **kwargs)


# Objective name per branch, in branch order
_OBJECTIVES: Dict[FormatKind, Tuple[str, ...]] = {
    FormatKind.MULTI_ACCDOA: ("accdoa",),
    FormatKind.SED_DOA: ("sed", "doa"),
    FormatKind.SED_SDE: ("sed", "sde"),
    FormatKind.SED_SCE: ("sed", "sce"),
    FormatKind.SED_DOA_SDE: ("sed", "doa", "sde"),
}


def _unpack(
    fmt: ReprFormat,
    preds: Sequence[Array],
    gts: Sequence[Array],
) -> Tuple[List[Array], List[Array]]:
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    gts = [np.asarray(g, dtype=np.float64) for g in gts]
    if len(preds) != fmt.n_branches or len(gts) != fmt.n_branches:
        raise FormatMismatchError(
            f"{fmt.kind.value} has {fmt.n_branches} branches, got {len(preds)} predictions and {len(gts)} targets"
        )
    for name, dim, p, g in zip(fmt.branch_names, fmt.dims, preds, gts):
        if p.ndim != 2 or p.shape[1] != dim:
            raise ShapeMismatchError(f"branch '{name}' expects (T, {dim}), got {p.shape}")
        _check_same(p, g, f"branch '{name}'")
    return preds, gts


def _component(name: str, pred: Array, gt: Array, gt_a: Array, sde_kind: SdeLossKind, grad: bool):
    if name == "sed":
        return bce_sed_grad(pred, gt) if grad else bce_sed(pred, gt)
    if name == "doa":
        return mse_doa_grad(pred, gt, gt_a) if grad else mse_doa(pred, gt, gt_a)
    if name == "sde":
        return sde_loss_grad(sde_kind, pred, gt, gt_a) if grad else sde_loss(sde_kind, pred, gt, gt_a)
    if name == "sce":
        return sce_loss_grad(pred, gt, gt_a) if grad else sce_loss(pred, gt, gt_a)
    return accdoa_mse_grad(pred, gt) if grad else accdoa_mse(pred, gt)


def _as_arrays(value) -> List[Array]:
    if isinstance(value, TargetTensor):
        return list(value.branches)
    return list(value)


def joint_loss(
    fmt: ReprFormat,
    preds,
    gts,
    weights: LossWeights,
    sde_kind: SdeLossKind = SdeLossKind.MSE,
) -> LossValue:
    """
    Weighted multi-objective loss of one format.

    SED-DOA uses beta, SED-SDE gamma, SED-SCE eta and SED-DOA-SDE lambda;
    multi-ACCDOA is a plain MSE over its whole output.

    Args:
        fmt: Output representation
        preds: Branch outputs (TargetTensor or sequence of arrays)
        gts: Encoded targets in the same layout
        weights: Objective weights
        sde_kind: Distance objective for SDE branches
    """
    preds, gts = _unpack(fmt, _as_arrays(preds), _as_arrays(gts))
    w = weights.for_format(fmt.kind)
    names = _OBJECTIVES[fmt.kind]
    gt_a = gts[0]

    components = {
        name: _component(name, p, g, gt_a, sde_kind, grad=False) for name, p, g in zip(names, preds, gts)
    }
    applied = dict(zip(names, w))
    total = float(sum(applied[name] * value for name, value in components.items()))
    return LossValue(total=total, components=components, weights=applied)


def joint_loss_gradient(
    fmt: ReprFormat,
    preds,
    gts,
    weights: LossWeights,
    sde_kind: SdeLossKind = SdeLossKind.MSE,
) -> List[Array]:
    """Per-branch gradient of ``joint_loss`` with respect to the predictions."""
    preds, gts = _unpack(fmt, _as_arrays(preds), _as_arrays(gts))
    w = weights.for_format(fmt.kind)
    names = _OBJECTIVES[fmt.kind]
    gt_a = gts[0]
    return [
        weight * _component(name, p, g, gt_a, sde_kind, grad=True)
        for name, weight, p, g in zip(names, w, preds, gts)
    ]
