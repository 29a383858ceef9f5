"""Subpixel motion compensation (SPMC) feature shift-and-add.

Feature maps of T frames are splatted onto an s× finer grid at
``s·(p + flow(p))`` with bilinear weights, then averaged by the
accumulated weights. The block has no parameters; :func:`spmc_backward`
returns exact gradients with respect to both the features and the flows.

Accumulation keeps one layer per frame and sums the layers in sorted
order, so the result does not depend on the order frames are passed in.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse

from burst_sr.errors import EmptyBurstError, InvalidArgumentError, StateError

logger = logging.getLogger(__name__)

EPS = 1e-8

# (dy, dx) offsets of the four bilinear taps
CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass
class FrameSplat:
    """Bilinear taps of one frame on the HR grid (4 taps per LR pixel)."""
    lr_shape: tuple
    hr_shape: tuple
    index: np.ndarray
    taps: np.ndarray
    valid: np.ndarray
    fx: np.ndarray
    fy: np.ndarray

    def operator(self):
        """Sparse (HR pixels × LR pixels) splat matrix; out-of-grid taps dropped."""
        n_lr = self.fx.size
        n_hr = self.hr_shape[0] * self.hr_shape[1]
        cols = np.broadcast_to(np.arange(n_lr), self.index.shape)
        keep = self.valid
        return sparse.csr_matrix((self.taps[keep], (self.index[keep], cols[keep])), shape=(n_hr, n_lr))

    @property
    def dropped(self):
        return float(self.fx.size - self.taps.sum())


def splat_taps(flow, s):
    """Bilinear splat taps of every pixel of a (h, w, 2) flow at factor ``s``."""
    h, w, _ = flow.shape
    hr_h, hr_w = h * s, w * s
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    x = s * (xx + flow[..., 0]).ravel()
    y = s * (yy + flow[..., 1]).ravel()
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    index = np.zeros((4, x.size), dtype=np.int64)
    taps = np.zeros((4, x.size))
    valid = np.zeros((4, x.size), dtype=bool)
    for c, (dy, dx) in enumerate(CORNERS):
        cx = x0 + dx
        cy = y0 + dy
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        ok = (cx >= 0) & (cx < hr_w) & (cy >= 0) & (cy < hr_h)
        valid[c] = ok
        taps[c] = np.where(ok, wx * wy, 0.0)
        index[c] = np.where(ok, cy * hr_w + cx, 0)
    return FrameSplat((h, w), (hr_h, hr_w), index, taps, valid, fx, fy)


def ordered_sum(layers):
    """Sum per-frame layers along axis 0 in sorted order (frame-order independent)."""
    return np.sort(layers, axis=0).sum(axis=0)


@dataclass
class SpmcContext:
    """Forward inputs and results retained for :func:`spmc_backward`."""
    features: List[np.ndarray]
    flows: List[np.ndarray]
    s: int
    eps: float
    splats: List[FrameSplat]
    value: np.ndarray
    weight: np.ndarray
    released: bool = False

    def release(self):
        self.features = self.flows = self.splats = None
        self.released = True


@dataclass
class HrFeature:
    """Fused HR feature map: value (sH, sW, F) and accumulated weight (sH, sW)."""
    value: np.ndarray
    weight: np.ndarray
    dropped: float = 0.0
    eps: float = EPS
    context: Optional[SpmcContext] = field(default=None, repr=False)

    @property
    def holes(self):
        return self.weight <= self.eps

    @property
    def shape(self):
        return self.value.shape

    @property
    def depth(self):
        return self.value.shape[2]


def _check_inputs(features, flows):
    if len(features) == 0:
        raise EmptyBurstError("spmc_forward needs at least one feature map")
    if len(flows) != len(features):
        raise InvalidArgumentError(f"Got {len(flows)} flows for {len(features)} feature maps")
    feats = []
    for k, f in enumerate(features):
        f = np.asarray(f, dtype=np.float64)
        if f.ndim == 2:
            f = f[:, :, np.newaxis]
        if f.ndim != 3 or f.shape != (feats[0].shape if feats else f.shape):
            raise InvalidArgumentError(f"Feature map {k} has shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise InvalidArgumentError(f"Feature map {k} has non-finite values")
        feats.append(f)
    h, w, _ = feats[0].shape
    checked = []
    for k, flow in enumerate(flows):
        flow = np.asarray(flow, dtype=np.float64)
        if flow.shape != (h, w, 2):
            raise InvalidArgumentError(f"Flow {k} has shape {flow.shape}, expected {(h, w, 2)}")
        if not np.all(np.isfinite(flow)):
            raise InvalidArgumentError(f"Flow {k} has non-finite values")
        checked.append(flow)
    return feats, checked


def spmc_forward(features, flows, s, eps=EPS):
    """Splat T feature maps by their flows onto the s× grid and normalize.

    Pixels with accumulated weight ≤ eps output 0 and show up in
    ``HrFeature.holes``. The returned feature carries the context needed by
    :func:`spmc_backward`.
    """
    if s < 1 or int(s) != s:
        raise InvalidArgumentError(f"Scale factor must be a positive integer, got {s}")
    s = int(s)
    feats, flows = _check_inputs(features, flows)
    h, w, depth = feats[0].shape
    n_hr = h * s * w * s

    splats = [splat_taps(flow, s) for flow in flows]
    acc_layers = np.empty((len(feats), n_hr, depth))
    weight_layers = np.empty((len(feats), n_hr))
    for k, (f, sp) in enumerate(zip(feats, splats)):
        op = sp.operator()
        acc_layers[k] = op @ f.reshape(-1, depth)
        weight_layers[k] = op @ np.ones(h * w)

    acc = ordered_sum(acc_layers)
    weight = ordered_sum(weight_layers)
    covered = weight > eps
    value = np.zeros_like(acc)
    value[covered] = acc[covered] / weight[covered, np.newaxis]

    dropped = float(sum(sp.dropped for sp in splats))
    value = value.reshape(h * s, w * s, depth)
    weight = weight.reshape(h * s, w * s)
    holes = int(np.count_nonzero(~covered))
    if holes:
        logger.debug("SPMC: %d of %d HR pixels uncovered", holes, n_hr)

    ctx = SpmcContext(features=feats, flows=flows, s=s, eps=eps, splats=splats,
                      value=value, weight=weight)
    return HrFeature(value=value, weight=weight, dropped=dropped, eps=eps, context=ctx)


def spmc_backward(grad_out, context):
    """Gradients of the fused output w.r.t. every feature map and flow.

    ``grad_out`` is dL/d(value), shaped like the forward value. Returns
    ``(feature_grads, flow_grads)``, one array per frame.
    """
    if context is None or context.released:
        raise StateError("spmc_backward called without a retained forward context")
    grad = np.asarray(grad_out, dtype=np.float64)
    if grad.shape != context.value.shape:
        raise InvalidArgumentError(f"Upstream gradient shape {grad.shape} != output shape {context.value.shape}")

    s = context.s
    depth = grad.shape[2]
    g = grad.reshape(-1, depth)
    out = context.value.reshape(-1, depth)
    weight = context.weight.ravel()
    covered = weight > context.eps
    inv = np.zeros_like(weight)
    inv[covered] = 1.0 / weight[covered]
    # value = acc / weight, subgradient 0 on holes
    d_acc = g * inv[:, np.newaxis]
    d_weight = -np.einsum('nf,nf->n', g, out) * inv

    feature_grads = []
    flow_grads = []
    for f, sp in zip(context.features, context.splats):
        h, w = sp.lr_shape
        f_flat = f.reshape(-1, depth)
        feature_grads.append((sp.operator().T @ d_acc).reshape(h, w, depth))

        gx = np.zeros(h * w)
        gy = np.zeros(h * w)
        for c, (dy, dx) in enumerate(CORNERS):
            idx = sp.index[c]
            upstream = np.einsum('nf,nf->n', d_acc[idx], f_flat) + d_weight[idx]
            upstream = np.where(sp.valid[c], upstream, 0.0)
            dtap_dx = (1.0 if dx else -1.0) * (sp.fy if dy else 1.0 - sp.fy)
            dtap_dy = (sp.fx if dx else 1.0 - sp.fx) * (1.0 if dy else -1.0)
            gx += dtap_dx * upstream
            gy += dtap_dy * upstream
        flow_grads.append(s * np.stack([gx, gy], axis=-1).reshape(h, w, 2))
    return feature_grads, flow_grads


def fuse(burst_features, flows, s):
    """Feature shift-and-add at the default eps; ``None`` flows mean zero motion."""
    if len(burst_features) == 0:
        raise EmptyBurstError("fuse needs at least one feature map")
    first = np.asarray(burst_features[0])
    zero = np.zeros(first.shape[:2] + (2,))
    if flows is None:
        flows = [None] * len(burst_features)
    flows = [zero if f is None else f for f in flows]
    return spmc_forward(burst_features, flows, s, eps=EPS)
