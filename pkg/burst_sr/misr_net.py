"""Toy-scale multi-image super-resolution network.

Per frame: an encoder turns the LR frame into 32 feature channels and an
hourglass motion estimator predicts its flow towards the reference frame.
The SPMC block fuses the features on the s× grid and a decoder turns the
fused features into a residual over the bicubic reference.

Parameters live in a flat dict of named arrays; names starting with
``motion.`` form the motion group, everything else the encoder/decoder
group. Backpropagation is written out by hand.
"""
import copy
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from burst_sr.classic_sr import bicubic_upsample
from burst_sr.errors import InvalidArgumentError, StateError, TrainingFailureError
from burst_sr.imaging import Burst, as_raster
from burst_sr.layers import conv2d, conv2d_backward, relu, relu_backward, upsample, upsample_backward
from burst_sr.raster_io import write_json_atomic
from burst_sr.spmc import HrFeature, fuse, spmc_backward

logger = logging.getLogger(__name__)

FEATURES = 32
MOTION_GROUP = 'motion'
ENCDEC_GROUP = 'encdec'

# (name, relu, stride)
ENCODER = (('enc.0', True, 1), ('enc.1', True, 1), ('enc.2', False, 1))
DECODER = (('dec.0', True, 1), ('dec.1', True, 1), ('dec.2', False, 1))
MOTION_DOWN = (('motion.in', True, 1), ('motion.down', True, 2), ('motion.mid', True, 1))
MOTION_UP = (('motion.up', True, 1), ('motion.flow', False, 1))


def param_group(name):
    return MOTION_GROUP if name.startswith(MOTION_GROUP + '.') else ENCDEC_GROUP


def init_params(channels=1, seed=0):
    """Seeded weights uniform in ±1/√fan_in, zero biases, zero flow head."""
    rng = np.random.default_rng(seed)
    params = {}

    def conv(name, c_in, c_out, zero=False):
        bound = 1.0 / math.sqrt(9 * c_in)
        params[name + '.w'] = np.zeros((3, 3, c_in, c_out)) if zero \
            else rng.uniform(-bound, bound, size=(3, 3, c_in, c_out))
        params[name + '.b'] = np.zeros(c_out)

    conv('enc.0', channels, FEATURES)
    conv('enc.1', FEATURES, FEATURES)
    conv('enc.2', FEATURES, FEATURES)
    conv('dec.0', FEATURES, FEATURES)
    conv('dec.1', FEATURES, FEATURES)
    conv('dec.2', FEATURES, channels)
    conv('motion.in', 2 * channels, 16)
    conv('motion.down', 16, 32)
    conv('motion.mid', 32, 32)
    conv('motion.up', 32 + 16, 16)
    conv('motion.flow', 16, 2, zero=True)
    return params


def channels_of(params):
    return params['enc.0.w'].shape[2]


def architecture_hash(params):
    """Short digest of parameter names and shapes."""
    layout = sorted((name, list(value.shape)) for name, value in params.items())
    return hashlib.sha256(json.dumps(layout).encode('utf-8')).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def _run_stack(x, params, layers):
    caches = []
    for name, use_relu, stride in layers:
        pre, cache = conv2d(x, params[name + '.w'], params[name + '.b'], stride)
        x = relu(pre) if use_relu else pre
        caches.append((name, use_relu, pre, cache))
    return x, caches


def _backprop_stack(grad, params, caches, grads):
    for name, use_relu, pre, cache in reversed(caches):
        if use_relu:
            grad = relu_backward(grad, pre)
        grad, d_w, d_b = conv2d_backward(grad, cache, params[name + '.w'])
        grads[name + '.w'] += d_w
        grads[name + '.b'] += d_b
    return grad


def _check_frame(frame, params):
    img = as_raster(frame)
    if img.shape[2] != channels_of(params):
        raise InvalidArgumentError(f"Frame has {img.shape[2]} channels, network expects {channels_of(params)}")
    return img


def _encode(frame, params):
    img = _check_frame(frame, params)
    feat, caches = _run_stack(img[np.newaxis], params, ENCODER)
    return feat[0], caches


def encode(frame, params):
    """H×W×32 feature map of one LR frame."""
    return _encode(frame, params)[0]


@dataclass
class _MotionCache:
    down: list
    up: list
    resize: tuple
    skip_channels: int


def _motion(frame, ref, params):
    a = _check_frame(frame, params)
    b = _check_frame(ref, params)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"Frame {a.shape} and reference {b.shape} differ in shape")
    x = np.concatenate([a, b], axis=2)[np.newaxis]
    skip, in_cache = _run_stack(x, params, MOTION_DOWN[:1])
    bottom, down_cache = _run_stack(skip, params, MOTION_DOWN[1:])
    lifted, resize = upsample(bottom, a.shape[:2])
    flow, up_cache = _run_stack(np.concatenate([lifted, skip], axis=3), params, MOTION_UP)
    return flow[0], _MotionCache(in_cache + down_cache, up_cache, resize, skip.shape[3])


def _motion_backward(grad_flow, cache, params, grads):
    grad = _backprop_stack(grad_flow[np.newaxis], params, cache.up, grads)
    grad_lifted, grad_skip = grad[..., :-cache.skip_channels], grad[..., -cache.skip_channels:]
    grad_bottom = upsample_backward(grad_lifted, cache.resize)
    grad_skip = grad_skip + _backprop_stack(grad_bottom, params, cache.down[1:], grads)
    _backprop_stack(grad_skip, params, cache.down[:1], grads)


def estimate_flow(frame, ref, params):
    """Dense H×W×2 flow (LR pixels) taking ``frame`` pixels to reference positions."""
    return _motion(frame, ref, params)[0]


def _decode(hr_feat, params):
    value = hr_feat.value if isinstance(hr_feat, HrFeature) else np.asarray(hr_feat, dtype=np.float64)
    if value.ndim != 3 or value.shape[2] != FEATURES:
        raise InvalidArgumentError(f"Decoder expects {FEATURES}-deep features, got shape {value.shape}")
    out, caches = _run_stack(value[np.newaxis], params, DECODER)
    return out[0], caches


def decode(hr_feat, params):
    """sH×sW×C image from fused HR features."""
    return _decode(hr_feat, params)[0]


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Activations of one forward pass, consumed by :func:`backward`."""
    s: int
    encoder: list
    motion: list
    fused: HrFeature
    decoder: list
    output: np.ndarray
    released: bool = False

    def release(self):
        if self.fused.context is not None:
            self.fused.context.release()
        self.encoder = self.motion = self.decoder = None
        self.released = True


def _as_burst(burst):
    if isinstance(burst, Burst):
        return burst
    return Burst(frames=list(burst))


def forward_train(burst, params, s=2, use_motion=True):
    """Forward pass keeping every activation. Returns ``(sr, cache)``."""
    burst = _as_burst(burst)
    ref = burst.reference
    features, enc_caches = [], []
    for frame in burst.frames:
        feat, cache = _encode(frame, params)
        features.append(feat)
        enc_caches.append(cache)

    flows, motion_caches = [np.zeros(ref.shape[:2] + (2,))], [None]
    for frame in burst.frames[1:]:
        if use_motion:
            flow, cache = _motion(frame, ref, params)
        else:
            flow, cache = np.zeros(ref.shape[:2] + (2,)), None
        flows.append(flow)
        motion_caches.append(cache)

    fused = fuse(features, flows, s)
    residual, dec_caches = _decode(fused, params)
    sr = residual + bicubic_upsample(ref, s)
    return sr, ForwardCache(s=int(s), encoder=enc_caches, motion=motion_caches, fused=fused,
                            decoder=dec_caches, output=sr)


def forward(burst, params, s=2, use_motion=True):
    """Super-resolve ``burst`` by ``s``: encode → estimate flows → fuse → decode (+ bicubic reference)."""
    sr, cache = forward_train(burst, params, s, use_motion)
    cache.release()
    return sr


def l1_loss(pred, truth):
    """Mean absolute difference."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"Prediction {p.shape} and truth {t.shape} differ in shape")
    return float(np.mean(np.abs(p - t)))


def l1_grad(pred, truth):
    """Subgradient of :func:`l1_loss`, 0 where pred == truth."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return np.sign(diff) / diff.size


def zero_grads(params):
    return {name: np.zeros_like(value) for name, value in params.items()}


def backward(burst, truth, params, cache, frozen=()):
    """Gradients of ``l1_loss(forward(burst), truth)`` w.r.t. every parameter.

    Parameters of a group listed in ``frozen`` get zero gradients.
    """
    if cache is None or cache.released:
        raise StateError("backward needs the activations of a retained forward pass")
    truth = as_raster(truth)
    grads = zero_grads(params)

    grad_sr = l1_grad(cache.output, truth)
    grad_fused = _backprop_stack(grad_sr[np.newaxis], params, cache.decoder, grads)[0]
    feature_grads, flow_grads = spmc_backward(grad_fused, cache.fused.context)

    for grad_feat, enc_cache in zip(feature_grads, cache.encoder):
        _backprop_stack(grad_feat[np.newaxis], params, enc_cache, grads)
    if MOTION_GROUP not in frozen:
        for grad_flow, motion_cache in zip(flow_grads[1:], cache.motion[1:]):
            if motion_cache is not None:
                _motion_backward(grad_flow, motion_cache, params, grads)

    for name in grads:
        if param_group(name) in frozen:
            grads[name][...] = 0.0
    return grads


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, lrs, beta1=0.9, beta2=0.999, eps=1e-8, frozen=()):
    """One bias-corrected Adam update with a learning rate per parameter group."""
    state.step += 1
    t = state.step
    updated = {}
    for name, value in params.items():
        group = param_group(name)
        if group in frozen:
            updated[name] = value
            continue
        g = grads[name]
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        updated[name] = value - lrs[group] * m_hat / (np.sqrt(v_hat) + eps)
    return updated, state


@dataclass
class TrainConfig:
    batch_size: int = 16
    patch: int = 64
    s: int = 2
    frames: int = 8
    snr: float = 800.0
    lr_encdec: float = 1e-4
    lr_motion: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 30
    early_stop_patience: int = 5
    pretrain_epochs: int = 10
    pretrain_lr: float = 1e-3
    seed: int = 0

    def validate(self):
        if not (self.lr_encdec > 0 and self.lr_motion > 0 and self.pretrain_lr > 0):
            raise InvalidArgumentError("Learning rates must be positive")
        if self.early_stop_patience < 1:
            raise InvalidArgumentError(f"early_stop_patience must be ≥ 1, got {self.early_stop_patience}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise InvalidArgumentError("batch_size must be ≥ 1 and max_epochs ≥ 0")

    @classmethod
    def from_config(cls, training, s=2):
        cfg = cls(batch_size=int(training['batch_size']), patch=int(training['patch']), s=int(s),
                  frames=int(training['frames']), snr=float(training.get('snr', 800.0)),
                  lr_encdec=float(training['lr_encdec']), lr_motion=float(training['lr_motion']),
                  beta1=float(training['beta1']), beta2=float(training['beta2']),
                  eps=float(training['adam_eps']), max_epochs=int(training['max_epochs']),
                  early_stop_patience=int(training['early_stop_patience']),
                  pretrain_epochs=int(training['pretrain_epochs']),
                  pretrain_lr=float(training.get('pretrain_lr', 1e-3)), seed=int(training['seed']))
        cfg.validate()
        return cfg


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience):
        if patience < 1:
            raise InvalidArgumentError(f"patience must be ≥ 1, got {patience}")
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = None
        self.best_params = None
        self.bad_epochs = 0

    def update(self, epoch, loss, params=None):
        """Record one epoch; returns True when training should stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_params = copy.deepcopy(params)
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainHistory:
    """Per-epoch losses; index 0 of ``val_losses`` is the loss before any update."""
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_loss: Optional[float] = None
    stopped_epoch: Optional[int] = None

    @property
    def initial_val_loss(self):
        return self.val_losses[0] if self.val_losses else None


def _pairs(dataset):
    pairs = []
    for item in dataset:
        if isinstance(item, Burst):
            if item.hr_truth is None:
                raise InvalidArgumentError("Training bursts need hr_truth")
            pairs.append((item, item.hr_truth))
        else:
            burst, truth = item
            pairs.append((burst, as_raster(truth)))
    return pairs


def evaluate(dataset, params, s=2):
    """Per-sample L1 of the network and of bicubic upsampling of the reference."""
    net, bicubic = [], []
    for burst, truth in _pairs(dataset):
        net.append(l1_loss(forward(burst, params, s), truth))
        bicubic.append(l1_loss(bicubic_upsample(burst.reference, s), truth))
    return np.array(net), np.array(bicubic)


def _val_loss(dataset, params, s):
    return float(evaluate(dataset, params, s)[0].mean())


def train(train_set, val_set, cfg, params=None, frozen=()):
    """Mini-batch Adam on L1 with early stopping. Returns ``(best_params, history)``."""
    train_pairs = _pairs(train_set)
    val_pairs = _pairs(val_set)
    if not train_pairs or not val_pairs:
        raise InvalidArgumentError("Training needs nonempty train and validation sets")
    cfg.validate()
    if params is None:
        params = init_params(train_pairs[0][0].shape[2], cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    lrs = {ENCDEC_GROUP: cfg.lr_encdec, MOTION_GROUP: cfg.lr_motion}
    history = TrainHistory()
    stopper = EarlyStopping(cfg.early_stop_patience)

    val = _val_loss(val_pairs, params, cfg.s)
    if not math.isfinite(val):
        raise TrainingFailureError(0)
    history.val_losses.append(val)
    stopper.update(0, val, params)
    logger.info("Epoch 0: val L1 %.6f", val)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_pairs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            total = zero_grads(params)
            for i in batch:
                burst, truth = train_pairs[i]
                sr, cache = forward_train(burst, params, cfg.s)
                losses.append(l1_loss(sr, truth))
                grads = backward(burst, truth, params, cache, frozen)
                cache.release()
                for name in total:
                    total[name] += grads[name]
            for name in total:
                total[name] /= len(batch)
            params, state = adam_step(params, total, state, lrs, cfg.beta1, cfg.beta2, cfg.eps, frozen)

        train_loss = float(np.mean(losses))
        val = _val_loss(val_pairs, params, cfg.s)
        if not (math.isfinite(train_loss) and math.isfinite(val)):
            raise TrainingFailureError(epoch)
        history.train_losses.append(train_loss)
        history.val_losses.append(val)
        logger.info("Epoch %d: train L1 %.6f, val L1 %.6f", epoch, train_loss, val)
        if stopper.update(epoch, val, params):
            history.stopped_epoch = epoch
            logger.info("Early stopping at epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break

    history.best_epoch = stopper.best_epoch
    history.best_val_loss = stopper.best_loss
    return stopper.best_params, history


# ---------------------------------------------------------------------------
# Motion pretraining
# ---------------------------------------------------------------------------

EPE_SMOOTHING = 1e-12


def endpoint_error(flow, shift):
    """Mean endpoint error between a dense flow and a constant (dx, dy)."""
    d = np.asarray(flow, dtype=np.float64) - np.asarray(shift, dtype=np.float64)
    return float(np.mean(np.sqrt(np.sum(d * d, axis=-1))))


def _epe_grad(flow, shift):
    d = flow - np.asarray(shift, dtype=np.float64)
    norm = np.sqrt(np.sum(d * d, axis=-1, keepdims=True) + EPE_SMOOTHING)
    return d / norm / (flow.shape[0] * flow.shape[1])


def _mean_epe(pairs, params):
    return float(np.mean([endpoint_error(estimate_flow(frame, ref, params), shift)
                          for frame, ref, shift in pairs]))


def pretrain_motion(pairs, cfg, params=None, val_pairs=None):
    """Fit the motion group alone on ``(frame, ref, (dx, dy))`` triples by endpoint error.

    Without ``val_pairs`` the last fifth of ``pairs`` is held out. Returns
    ``(best_params, history)``.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgumentError("Motion pretraining needs at least one translation pair")
    cfg.validate()
    if val_pairs is None:
        n_val = max(1, len(pairs) // 5)
        train_pairs, val_pairs = (pairs[:-n_val], pairs[-n_val:]) if len(pairs) > 1 else (pairs, pairs)
    else:
        train_pairs = pairs
    if params is None:
        params = init_params(as_raster(pairs[0][0]).shape[2], cfg.seed)

    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    lrs = {ENCDEC_GROUP: cfg.lr_encdec, MOTION_GROUP: cfg.pretrain_lr}
    frozen = (ENCDEC_GROUP,)
    history = TrainHistory()
    stopper = EarlyStopping(cfg.early_stop_patience)
    val = _mean_epe(val_pairs, params)
    history.val_losses.append(val)
    stopper.update(0, val, params)

    for epoch in range(1, cfg.pretrain_epochs + 1):
        order = rng.permutation(len(train_pairs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            total = zero_grads(params)
            batch = order[start:start + cfg.batch_size]
            for i in batch:
                frame, ref, shift = train_pairs[i]
                flow, cache = _motion(frame, ref, params)
                losses.append(endpoint_error(flow, shift))
                _motion_backward(_epe_grad(flow, shift), cache, params, total)
            for name in total:
                total[name] /= len(batch)
            params, state = adam_step(params, total, state, lrs, cfg.beta1, cfg.beta2, cfg.eps, frozen)

        train_loss = float(np.mean(losses))
        val = _mean_epe(val_pairs, params)
        if not (math.isfinite(train_loss) and math.isfinite(val)):
            raise TrainingFailureError(epoch)
        history.train_losses.append(train_loss)
        history.val_losses.append(val)
        logger.info("Pretrain epoch %d: train EPE %.4f, val EPE %.4f", epoch, train_loss, val)
        if stopper.update(epoch, val, params):
            history.stopped_epoch = epoch
            break

    history.best_epoch = stopper.best_epoch
    history.best_val_loss = stopper.best_loss
    return stopper.best_params, history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _blob_path(path):
    return os.path.splitext(path)[0] + '.f32'


def save_checkpoint(path, params, seed=0, epoch=0, val_loss=None):
    """JSON manifest at ``path`` plus a little-endian float32 blob of named sections."""
    sections = []
    offset = 0
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(_blob_path(path), 'wb') as f:
        for name in sorted(params):
            data = np.asarray(params[name], dtype='<f4')
            f.write(data.tobytes(order='C'))
            sections.append({'name': name, 'shape': list(data.shape), 'offset': offset, 'count': int(data.size)})
            offset += int(data.size)
    manifest = {
        'architecture_hash': architecture_hash(params),
        'seed': int(seed),
        'epoch': int(epoch) if epoch is not None else None,
        'val_loss': float(val_loss) if val_loss is not None else None,
        'channels': int(channels_of(params)),
        'blob': os.path.basename(_blob_path(path)),
        'dtype': '<f4',
        'sections': sections,
    }
    write_json_atomic(path, manifest)
    return manifest


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`. Returns ``(params, manifest)``."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, 'r') as f:
        manifest = json.load(f)
    blob = np.fromfile(os.path.join(os.path.dirname(path), manifest['blob']), dtype='<f4')
    params = {}
    for section in manifest['sections']:
        start = section['offset']
        chunk = blob[start:start + section['count']]
        if chunk.size != section['count']:
            raise InvalidArgumentError(f"Checkpoint blob is truncated at section {section['name']}")
        params[section['name']] = chunk.reshape(section['shape']).astype(np.float64)
    if architecture_hash(params) != manifest['architecture_hash']:
        raise InvalidArgumentError(f"Checkpoint {path} does not match the network architecture")
    expected = init_params(manifest.get('channels', channels_of(params)))
    if architecture_hash(expected) != manifest['architecture_hash']:
        raise InvalidArgumentError(f"Checkpoint {path} was written for a different architecture")
    return params, manifest
