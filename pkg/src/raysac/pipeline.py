"""Two-stage training: field pretraining, then policy learning on the frozen
field, plus the evaluation harness and the on-disk checkpoint container.

Stage 1 fits the radiance field with a photometric loss, a mixture-weight
regularizer toward uniform, and a ray-level mixture NLL.  Stage 2 trains the
soft actor-critic placement policy over per-ray episodes while the field stays
frozen (asserted by hashing).  Evaluation renders whole views with any of the
samplers and emits per-view and aggregate quality/efficiency numbers.
"""

import csv
import dataclasses
import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .baselines import hierarchical_resample, uniform_samples
from .diffcore.nn import params_hash
from .diffcore.optim import Adam
from .diffcore.tensor import Tensor
from .env import BatchedRayEnv, EnvConfig, RaySamplingEnv, make_state, obs_dim
from .field import (VAR_FLOOR, FieldConfig, RadianceField, gmm_nll_tape,
                    positional_encode)
from .render import composite_tape, deltas_from_depths, effective_rate, psnr, ssim
from .sac import SacAgent, SacConfig, sample_action
from .scenes import Ray, generate_rays

MAGIC = b"SACNERF1"
CHECKPOINT_VERSION = 1

STAGE1_COLUMNS = ("iter", "wall_ms", "loss", "psnr")
STAGE2_COLUMNS = ("iter", "wall_ms", "r_q", "r_e", "r_c", "r_total",
                  "psnr", "effective_rate", "alpha", "entropy")


# -- checkpoint container ----------------------------------------------

@dataclass
class Checkpoint:
    version: int
    config: dict
    tensors: dict  # name -> float32 array, manifest order


def save_checkpoint(path, tensors, config):
    """Write named float32 tensors plus a JSON config snapshot.

    Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON
    manifest (canonical: sorted keys, no whitespace), then the raw payloads
    concatenated in manifest order.  tensors is a name->array mapping or a
    sequence of (name, array) pairs; all values are stored little-endian.
    """
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    index, chunks, off = [], [], 0
    seen = set()
    for name, arr in items:
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)
        a = np.asarray(arr, dtype="<f4")
        if not a.flags["C_CONTIGUOUS"]:  # ascontiguousarray would flatten 0-d
            a = np.ascontiguousarray(a)
        index.append({"name": str(name), "shape": list(a.shape),
                      "offset": off, "size": int(a.size)})
        chunks.append(a.tobytes())
        off += a.size * 4
    manifest = json.dumps(
        {"version": CHECKPOINT_VERSION, "config": config, "tensors": index},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        f.write(b"".join(chunks))


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint, validating the container before touching tensors."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 8:
        raise ValueError(f"{path}: truncated checkpoint (no header)")
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {blob[:8]!r}")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + mlen > len(blob):
        raise ValueError(f"{path}: truncated checkpoint manifest")
    try:
        man = json.loads(blob[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: corrupt checkpoint manifest: {e}") from e
    if not isinstance(man, dict) or "version" not in man:
        raise ValueError(f"{path}: manifest missing version")
    if man["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {man['version']!r}"
                         f" (expected {CHECKPOINT_VERSION})")
    payload = blob[16 + mlen:]
    # validate the whole index before materializing anything: no partial loads
    end = 0
    for ent in man.get("tensors", []):
        shape = tuple(int(s) for s in ent["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if n != ent["size"]:
            raise ValueError(f"{path}: tensor {ent['name']!r} shape {shape} "
                             f"disagrees with size {ent['size']}")
        if ent["offset"] != end:
            raise ValueError(f"{path}: tensor {ent['name']!r} offset "
                             f"{ent['offset']} is not contiguous")
        end += ent["size"] * 4
    if len(payload) != end:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, "
                         f"manifest declares {end}")
    tensors = {}
    for ent in man.get("tensors", []):
        shape = tuple(int(s) for s in ent["shape"])
        arr = np.frombuffer(payload, dtype="<f4", count=ent["size"],
                            offset=ent["offset"]).reshape(shape).copy()
        tensors[ent["name"]] = arr
    return Checkpoint(man["version"], man.get("config", {}), tensors)


def named_arrays(params):
    """Snapshot (name, Tensor) pairs into a name->float32-array dict."""
    out = {}
    for name, p in params:
        if name in out:
            raise ValueError(f"duplicate parameter name {name!r}")
        out[name] = np.asarray(p.data, dtype=np.float32).copy()
    return out


def load_named_arrays(params, tensors):
    """Assign checkpoint tensors onto live parameters, matched by name."""
    names = [n for n, _ in params]
    missing = [n for n in names if n not in tensors]
    extra = [n for n in tensors if n not in set(names)]
    if missing or extra:
        raise ValueError("checkpoint/model parameter mismatch: "
                         f"missing {missing[:4]}, unexpected {extra[:4]}")
    for name, p in params:
        arr = tensors[name]
        if tuple(arr.shape) != tuple(np.shape(p.data)):
            raise ValueError(f"parameter {name!r}: checkpoint shape "
                             f"{arr.shape} != model shape {np.shape(p.data)}")
        p.data = arr.astype(np.float32).copy()


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable config."""
    s = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(s.encode("utf-8")).hexdigest()


# -- train configuration -----------------------------------------------

@dataclass
class TrainConfig:
    stage1_iters: int = 5000
    stage2_steps: int = 50_000       # environment steps, one update per step
    lr_field: float = 5e-4
    lr_sac: float = 3e-4
    batch_rays: int = 256            # stage-1 minibatch
    stage1_n_samples: int = 64       # stratified samples per ray in stage 1
    lambda_reg: float = 1e-3
    seed: int = 0
    log_interval: int = 100
    timing: bool = False             # wall_ms stays 0 unless enabled
    env: EnvConfig = dc_field(default_factory=EnvConfig)
    field_cfg: FieldConfig = dc_field(default_factory=FieldConfig)
    sac: SacConfig = dc_field(default_factory=lambda: SacConfig(capacity=60_000))

    def __post_init__(self):
        if isinstance(self.env, dict):
            self.env = EnvConfig(**self.env)
        if isinstance(self.field_cfg, dict):
            self.field_cfg = FieldConfig(**self.field_cfg)
        if isinstance(self.sac, dict):
            d = dict(self.sac)
            d["hidden"] = tuple(d.get("hidden", (256, 256)))
            self.sac = SacConfig(**d)
        if self.stage1_iters < 0 or self.stage2_steps < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lr_field <= 0 or self.lr_sac <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_rays < 1 or self.stage1_n_samples < 2:
            raise ValueError("batch_rays must be >= 1 and stage1_n_samples >= 2")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.env.K != self.field_cfg.K:
            raise ValueError(f"mixture size mismatch: env.K={self.env.K}, "
                             f"field.K={self.field_cfg.K}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
             if f.name not in ("env", "field_cfg", "sac")}
        d["env"] = dataclasses.asdict(self.env)
        d["field"] = dataclasses.asdict(self.field_cfg)
        sac = dataclasses.asdict(self.sac)
        sac["hidden"] = list(sac["hidden"])
        d["sac"] = sac
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        kw = {f.name: d[f.name] for f in dataclasses.fields(cls)
              if f.name not in ("env", "field_cfg", "sac") and f.name in d}
        return cls(env=EnvConfig(**d.get("env", {})),
                   field_cfg=FieldConfig(**d.get("field", {})),
                   sac=dict(d.get("sac", {})) or SacConfig(capacity=60_000),
                   **kw)


# -- metrics CSV --------------------------------------------------------

def _fmt_cell(col, v):
    if col in ("iter", "wall_ms"):
        return str(int(v))
    return repr(float(v))  # shortest round-trip text keeps reruns byte-equal


class MetricsWriter:
    """Append-only CSV: header first, each row flushed as it is produced, so
    an aborted run still leaves a parseable prefix."""

    def __init__(self, path, columns):
        self.columns = tuple(columns)
        self.rows = []
        self._fh = open(path, "w", newline="") if path else None
        self._csv = csv.writer(self._fh) if self._fh else None
        if self._csv:
            self._csv.writerow(self.columns)
            self._fh.flush()

    def write(self, row: dict):
        vals = [row[c] for c in self.columns]  # KeyError = schema bug
        self.rows.append({c: row[c] for c in self.columns})
        if self._csv:
            self._csv.writerow([_fmt_cell(c, v) for c, v in zip(self.columns, vals)])
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = self._csv = None


def read_metrics_csv(path):
    """Parse a metrics CSV back into (columns, rows of floats).

    Raises ValueError("no data rows") when the file holds a header only (or
    nothing at all).
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        table = [r for r in reader if r]
    if len(table) < 2:
        raise ValueError("no data rows")
    columns = tuple(table[0])
    rows = []
    for r in table[1:]:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} cells, header has {len(columns)}")
        rows.append({c: float(v) for c, v in zip(columns, r)})
    return columns, rows


# -- shared ray plumbing ------------------------------------------------

def flatten_dataset(dataset, bounds):
    """Stack every pixel of every view: (origins, dirs, uv, gt), row-major."""
    os_, ds_, uv_, gt_ = [], [], [], []
    for cam, img in dataset.views:
        b = generate_rays(cam, bounds[0], bounds[1])
        os_.append(b.origins)
        ds_.append(b.dirs)
        uv_.append(b.uv)
        gt_.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
    return (np.concatenate(os_), np.concatenate(ds_),
            np.concatenate(uv_), np.concatenate(gt_))


def stratified_batch(rng, n_rays, n, t_n, t_f):
    """One draw per equal bin for each ray; (R, N), ascending per row."""
    h = (t_f - t_n) / n
    return t_n + (np.arange(n, dtype=np.float64) + rng.random((n_rays, n))) * h


# -- stage 1: field pretraining ----------------------------------------

def stage1_loss(field, origins, dirs, depths, gt, t_f, lambda_reg):
    """Build the pretraining loss on the tape for one ray minibatch.

    Terms: squared photometric error of the composited color, lambda_reg
    times the per-sample mixture-weight KL to uniform, and the negative log
    likelihood of the ground-truth color under the ray-level mixture obtained
    by compositing component means, weights, and variances along the ray.
    Returns (loss, photometric) as scalar Tensors.
    """
    B, N = depths.shape
    K = field.config.K
    pts = origins[:, None, :] + depths[:, :, None] * dirs[:, None, :]
    x_enc = positional_encode(pts.reshape(-1, 3).astype(np.float32),
                              field.config.pos_enc_levels)
    d_enc = positional_encode(np.repeat(dirs.astype(np.float32), N, axis=0),
                              field.config.dir_enc_levels)
    sig, pi, mu, var = field.forward_tape(Tensor(x_enc), Tensor(d_enc))

    pi_r = pi.reshape(B, N, K)
    mu_r = mu.reshape(B, N, K, 3)
    var_r = var.reshape(B, N, K, 3)
    exp_c = (pi_r.reshape(B, N, K, 1).broadcast_to((B, N, K, 3)) * mu_r).sum(axis=2)
    deltas = deltas_from_depths(depths, t_f).astype(np.float32)
    color, w = composite_tape(sig.reshape(B, N), exp_c, deltas)

    gt32 = np.asarray(gt, dtype=np.float32)
    photo = (color - Tensor(gt32)).square().sum(axis=1).mean()

    # KL(pi || uniform) per sample = sum_k pi log(K pi); log K enters as a
    # constant.  The epsilon keeps a fully confident head finite: float32
    # softmax underflows to exact zero once logits spread past ~104, and
    # 0 * log(0) would poison the loss long after the fit has converged.
    kl = (pi * (pi + 1e-12).log()).sum(axis=1).mean() + float(np.log(K))

    # ray-level mixture: composite weights, means, and variances per component
    wk = w.reshape(B, N, 1).broadcast_to((B, N, K))
    pi_u = (wk * pi_r).sum(axis=1)                                  # (B, K)
    denom = (pi_u.sum(axis=1, keepdims=True) + K * 1e-8).broadcast_to((B, K))
    pi_bar = (pi_u + 1e-8) / denom   # eps keeps all-miss rays at uniform
    w4 = w.reshape(B, N, 1, 1).broadcast_to((B, N, K, 3))
    c_bar = (w4 * mu_r).sum(axis=1)                                 # (B, K, 3)
    v_bar = (w4.square() * var_r).sum(axis=1) + VAR_FLOOR           # (B, K, 3)
    nll = gmm_nll_tape(pi_bar, c_bar, v_bar, gt32)

    loss = photo + kl * lambda_reg + nll
    return loss, photo


def _field_ckpt_config(config: TrainConfig) -> dict:
    return {"kind": "field", "train": config.to_dict()}


def stage1_pretrain(dataset, bounds, config: TrainConfig,
                    ckpt_path=None, metrics_path=None, field=None):
    """Fit the radiance field on random ray minibatches.

    Returns (field, metric rows).  A non-finite loss or gradient aborts the
    run: the parameters roll back to the last iteration whose loss was finite,
    the checkpoint (if a path was given) is written from that state, and the
    FloatingPointError propagates.
    """
    if not dataset.views:
        raise ValueError("stage 1: dataset has no views")
    rng = np.random.default_rng(config.seed)
    if field is None:
        field = RadianceField(config.field_cfg, rng)
    params = field.parameters()
    opt = Adam(params, lr=config.lr_field)
    origins, dirs, _, gt = flatten_dataset(dataset, bounds)
    n_rays = origins.shape[0]
    t_n, t_f = float(bounds[0]), float(bounds[1])
    writer = MetricsWriter(metrics_path, STAGE1_COLUMNS)
    last_good = [np.array(p.data, dtype=np.float32, copy=True) for _, p in params]
    t0 = time.perf_counter()
    try:
        for it in range(1, config.stage1_iters + 1):
            idx = rng.integers(0, n_rays, size=config.batch_rays)
            depths = stratified_batch(rng, config.batch_rays,
                                      config.stage1_n_samples, t_n, t_f)
            loss, photo = stage1_loss(field, origins[idx], dirs[idx], depths,
                                      gt[idx], t_f, config.lambda_reg)
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"stage 1 loss non-finite at iteration {it}")
            for buf, (_, p) in zip(last_good, params):
                np.copyto(buf, p.data)  # this state produced a finite loss
            opt.zero_grad()
            loss.backward()
            opt.step()
            if it % config.log_interval == 0 or it == config.stage1_iters:
                mse = max(float(photo.data) / 3.0, 1e-10)
                wall = int((time.perf_counter() - t0) * 1e3) if config.timing else 0
                writer.write({"iter": it, "wall_ms": wall,
                              "loss": float(loss.data),
                              "psnr": -10.0 * np.log10(mse)})
    except FloatingPointError as e:
        for buf, (_, p) in zip(last_good, params):
            p.data = buf.copy()
        if ckpt_path:
            save_checkpoint(ckpt_path, named_arrays(params),
                            _field_ckpt_config(config))
        writer.close()
        raise FloatingPointError(
            f"{e}; rolled back to the last finite state"
            + (f", checkpoint saved to {ckpt_path}" if ckpt_path else "")) from e
    writer.close()
    if ckpt_path:
        save_checkpoint(ckpt_path, named_arrays(params),
                        _field_ckpt_config(config))
    return field, writer.rows


def load_field_checkpoint(path):
    """Rebuild a RadianceField from a stage-1 checkpoint.

    Returns (field, TrainConfig).
    """
    ck = load_checkpoint(path)
    if ck.config.get("kind") != "field":
        raise ValueError(f"{path}: not a field checkpoint "
                         f"(kind={ck.config.get('kind')!r})")
    tc = TrainConfig.from_dict(ck.config["train"])
    field = RadianceField(tc.field_cfg, np.random.default_rng(0))
    load_named_arrays(field.parameters(), ck.tensors)
    return field, tc


# -- stage 2: policy training on the frozen field ----------------------

def _policy_ckpt_config(config: TrainConfig, obs_d, act_d) -> dict:
    return {"kind": "policy", "train": config.to_dict(),
            "obs_dim": int(obs_d), "act_dim": int(act_d)}


def stage2_train_policy(field, dataset, bounds, config: TrainConfig,
                        ckpt_path=None, metrics_path=None):
    """Train the placement policy over per-ray episodes; the field is frozen.

    Episodes draw a training pixel uniformly at random, start from a
    stratified placement, and run T_ep refinement steps.  One SAC update per
    environment step once the warmup prefix of uniform random actions has
    filled the replay buffer.  The field parameter hash must be identical
    before and after, and no gradient may ever reach a field parameter;
    either violation raises RuntimeError.

    Returns (agent, metric rows).
    """
    if not dataset.views:
        raise ValueError("stage 2: dataset has no views")
    field_params = field.parameters()
    for _, p in field_params:
        p.grad = None  # stale stage-1 grads; anything non-None later is ours
    frozen_hash = params_hash(field_params)
    rng = np.random.default_rng(config.seed)
    sac_cfg = dataclasses.replace(config.sac, lr=config.lr_sac)
    env = RaySamplingEnv(field, config.env, rng)
    act_dim = config.env.n_samples
    agent = SacAgent(obs_dim(config.env), act_dim, sac_cfg, rng)
    origins, dirs, uv, gt = flatten_dataset(dataset, bounds)
    n_rays = origins.shape[0]
    t_n, t_f = float(bounds[0]), float(bounds[1])

    writer = MetricsWriter(metrics_path, STAGE2_COLUMNS)
    acc = {"r_q": 0.0, "r_e": 0.0, "r_c": 0.0, "r_total": 0.0}
    acc_n = 0
    last_up = {}
    obs, done = None, True
    t0 = time.perf_counter()
    for step in range(1, config.stage2_steps + 1):
        if done:
            ri = int(rng.integers(n_rays))
            ray = Ray(origins[ri], dirs[ri], t_n, t_f,
                      float(uv[ri, 0]), float(uv[ri, 1]))
            obs = env.reset(ray, gt[ri])
            done = False
        if step <= sac_cfg.warmup_steps:
            a = rng.uniform(-1.0, 1.0, size=act_dim).astype(np.float32)
        else:
            a = agent.act(obs)
        next_obs, r, done, comps = env.step(a)
        agent.buffer.add(obs, a, r, next_obs, float(done))
        obs = next_obs
        for k in ("r_q", "r_e", "r_c"):
            acc[k] += comps[k]
        acc["r_total"] += r
        acc_n += 1
        if step > sac_cfg.warmup_steps and len(agent.buffer) >= sac_cfg.batch_size:
            for _ in range(sac_cfg.updates_per_step):
                last_up = agent.update()
        if step % config.log_interval == 0:
            st = env.state
            mse = max(float(st.mse[0]), 1e-10)
            wall = int((time.perf_counter() - t0) * 1e3) if config.timing else 0
            writer.write({"iter": step, "wall_ms": wall,
                          **{k: acc[k] / acc_n for k in acc},
                          "psnr": -10.0 * np.log10(mse),
                          "effective_rate": effective_rate(st.weights,
                                                           config.env.tau_w),
                          "alpha": agent.alpha,
                          "entropy": last_up.get("entropy", 0.0)})
            acc = dict.fromkeys(acc, 0.0)
            acc_n = 0
    writer.close()

    if params_hash(field_params) != frozen_hash:
        raise RuntimeError("field parameters changed during stage 2")
    for name, p in field_params:
        if p.grad is not None:
            raise RuntimeError(f"gradient written into frozen field "
                               f"parameter {name!r} during stage 2")
    if ckpt_path:
        save_checkpoint(ckpt_path, named_arrays(agent.parameters()),
                        _policy_ckpt_config(config, agent.obs_dim, act_dim))
    return agent, writer.rows


def load_policy_checkpoint(path):
    """Rebuild a SacAgent (all networks and the temperature) from disk.

    Returns (agent, TrainConfig).
    """
    ck = load_checkpoint(path)
    if ck.config.get("kind") != "policy":
        raise ValueError(f"{path}: not a policy checkpoint "
                         f"(kind={ck.config.get('kind')!r})")
    tc = TrainConfig.from_dict(ck.config["train"])
    sac_cfg = dataclasses.replace(tc.sac, lr=tc.lr_sac)
    agent = SacAgent(int(ck.config["obs_dim"]), int(ck.config["act_dim"]),
                     sac_cfg, np.random.default_rng(0))
    load_named_arrays(agent.parameters(), ck.tensors)
    return agent, tc


# -- evaluation ---------------------------------------------------------

class OracleField:
    """Field-shaped view of an analytic scene oracle.

    Density comes straight from the primitives and the color mixture collapses
    to one component pinned at the local color, so the rendering and
    evaluation paths can be exercised against exact quadrature with no
    training in the loop.
    """

    def __init__(self, oracle, K=3):
        self.oracle = oracle
        self.K = K

    def query_np(self, x, d):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        P, K = x.shape[0], self.K
        sigma, color = self.oracle.sample(x)
        pi = np.zeros((P, K), dtype=np.float32)
        pi[:, 0] = 1.0
        mu = np.zeros((P, K, 3), dtype=np.float32)
        mu[:, 0, :] = color
        var = np.full((P, K, 3), VAR_FLOOR, dtype=np.float32)
        return sigma.astype(np.float32), pi, mu, var

    def parameters(self):
        return []


SAMPLERS = ("uniform", "stratified", "hierarchical", "policy")


def heuristic_depths(field, sampler, origins, dirs, gt, bounds, n, rng):
    """(R, N) placements for the non-policy samplers.

    hierarchical spends half the budget on a uniform coarse pass through the
    field and resamples the rest from the coarse weights.
    """
    t_n, t_f = float(bounds[0]), float(bounds[1])
    n_rays = origins.shape[0]
    if sampler == "uniform":
        return np.tile(uniform_samples(t_n, t_f, n), (n_rays, 1))
    if sampler == "stratified":
        return stratified_batch(rng, n_rays, n, t_n, t_f)
    if sampler == "hierarchical":
        if n < 4:
            raise ValueError("hierarchical needs n_samples >= 4")
        n_c = n // 2
        coarse = np.tile(uniform_samples(t_n, t_f, n_c), (n_rays, 1))
        st = make_state(field, origins, dirs, coarse, gt, bounds)
        out = np.empty((n_rays, n))
        for i in range(n_rays):
            out[i] = hierarchical_resample(coarse[i], st.weights[i], n - n_c, rng)
        return out
    raise ValueError(f"unknown sampler {sampler!r} (have: {', '.join(SAMPLERS)})")


def policy_refine(field, agent, origins, dirs, uv, gt, bounds, env_cfg):
    """Run T_ep deterministic refinement steps on a whole ray batch.

    Starts from the uniform midpoints, so any gain over the uniform sampler
    is attributable to the learned placement.  Returns the final state.
    """
    env = BatchedRayEnv(field, env_cfg, np.random.default_rng(0))
    t_n, t_f = float(bounds[0]), float(bounds[1])
    init = np.tile(uniform_samples(t_n, t_f, env_cfg.n_samples),
                   (origins.shape[0], 1))
    obs = env.reset(origins, dirs, uv, gt, bounds, depths=init)
    for _ in range(env_cfg.T_ep):
        a, _ = sample_action(agent.policy, obs, deterministic=True)
        obs, _, _, _ = env.step(a)
    return env.state


def render_view(field, camera, bounds, sampler, env_cfg, agent=None,
                n_samples=None, gt_img=None, seed=0):
    """Render one camera with the chosen placement strategy.

    Returns (image (H, W, 3) float32 in [0, 1], stats) where stats carries
    effective_rate and mean_low_weight of the final placements.
    """
    if sampler == "policy" and agent is None:
        raise ValueError("sampler=policy requires a policy checkpoint")
    b = generate_rays(camera, bounds[0], bounds[1])
    gt_flat = (np.asarray(gt_img, dtype=np.float64).reshape(-1, 3)
               if gt_img is not None else np.zeros((len(b), 3)))
    if sampler == "policy":
        if n_samples is not None and n_samples != env_cfg.n_samples:
            raise ValueError(f"n_samples mismatch: policy acts on "
                             f"{env_cfg.n_samples} samples, got {n_samples}")
        state = policy_refine(field, agent, b.origins, b.dirs, b.uv,
                              gt_flat, bounds, env_cfg)
    else:
        n = int(n_samples) if n_samples else env_cfg.n_samples
        rng = np.random.default_rng(seed)
        depths = heuristic_depths(field, sampler, b.origins, b.dirs,
                                  gt_flat, bounds, n, rng)
        state = make_state(field, b.origins, b.dirs, depths, gt_flat, bounds)
    img = np.clip(state.color, 0.0, 1.0).reshape(
        camera.height, camera.width, 3).astype(np.float32)
    stats = {"effective_rate": effective_rate(state.weights, env_cfg.tau_w),
             "mean_low_weight": float(
                 np.mean((state.weights < env_cfg.tau_w).sum(axis=1)))}
    return img, stats


def evaluate(field, dataset, bounds, sampler, env_cfg, agent=None,
             n_samples=None, seed=0, timing=False, run_config=None):
    """Render every view of the dataset and score it against ground truth.

    Returns the report dict: config_hash, per_view rows (psnr, ssim,
    effective_rate, mean_low_weight, wall_ms) and their aggregate means.
    Identical inputs and seed produce an identical report.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r} (have: {', '.join(SAMPLERS)})")
    if sampler == "policy" and agent is None:
        raise ValueError("sampler=policy requires a policy checkpoint")
    per_view = []
    for vi, (cam, img) in enumerate(dataset.views):
        t0 = time.perf_counter()
        rendered, stats = render_view(field, cam, bounds, sampler, env_cfg,
                                      agent=agent, n_samples=n_samples,
                                      gt_img=img, seed=seed + 7919 * vi)
        wall = int((time.perf_counter() - t0) * 1e3) if timing else 0
        per_view.append({"view": vi,
                         "psnr": float(psnr(rendered, img)),
                         "ssim": float(ssim(rendered, img)),
                         "effective_rate": stats["effective_rate"],
                         "mean_low_weight": stats["mean_low_weight"],
                         "wall_ms": wall})
    keys = ("psnr", "ssim", "effective_rate", "mean_low_weight")
    aggregate = {k: float(np.mean([r[k] for r in per_view])) for k in keys}
    aggregate["wall_ms"] = int(sum(r["wall_ms"] for r in per_view))
    hashed = run_config if run_config is not None else {
        "sampler": sampler, "n_samples": n_samples, "seed": seed}
    return {"config_hash": config_hash(hashed),
            "sampler": sampler,
            "n_views": len(per_view),
            "per_view": per_view,
            "aggregate": aggregate}


def write_report(path, report):
    with open(path, "w") as f:
        json.dump(report, f, sort_keys=True, indent=1)
        f.write("\n")
