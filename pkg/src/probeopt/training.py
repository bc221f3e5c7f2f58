"""Automated data collection and the two-stage supervised training pipeline.

Stage one trains the probe-level model on every executed probe's vertical
(descent + depart) slice; stage two distills those predictions back into the
dataset and trains the search-level model on search semantics (per-probe
hole-found indicators, overall success, trajectory length). Collection,
training, and evaluation are deterministic functions of their seeds.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import mutt
from .autodiff import Tensor
from .core import (ParamDomain, Pose, PredictionMetrics, TaskParams, Trajectory,
                   f1_score, trajectory_metrics)
from .mutt import ModelArch, ModelWeights, NormStats
from .simenv import (EnvImage, EnvState, ExecutionRecord, SimConfig, episode_seeds,
                     execute_program, render_image, sample_environment, _profile)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 5e-5   # initial; decays linearly to zero
    batch_size: int = 32
    w_trajectory: float = 1.0     # weight of trajectory/length terms
    w_success: float = 1.0        # weight of classification terms
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("epochs, learning_rate, batch_size must be positive")


@dataclass
class DistilledProbes:
    """Probe-model predictions for every pattern entry of one record."""

    profile_z: np.ndarray    # (K, L)
    profile_fz: np.ndarray   # (K, L)
    duration: np.ndarray     # (K,)
    contact_depth: np.ndarray  # (K,)


@dataclass
class Dataset:
    """Executed records plus the train/test split and normalization stats.

    The test split is the last ``n_test`` records in seed order; stats are
    computed from the train split only. ``distilled`` (parallel to
    ``records``) appears after the distillation step.
    """

    records: list[ExecutionRecord]
    n_test: int
    stats: NormStats | None = None
    provenance: dict = field(default_factory=dict)
    distilled: list[DistilledProbes] | None = None

    @property
    def train_records(self) -> list[ExecutionRecord]:
        return self.records[:len(self.records) - self.n_test]

    @property
    def test_records(self) -> list[ExecutionRecord]:
        return self.records[len(self.records) - self.n_test:]

    def subset(self, n_train: int) -> "Dataset":
        """Prefix subset of the train split (same test split and stats scheme)."""
        if n_train > len(self.train_records):
            raise ValueError(f"subset size {n_train} exceeds train split "
                             f"{len(self.train_records)}")
        records = self.records[:n_train] + self.test_records
        sub = Dataset(records=records, n_test=self.n_test,
                      provenance=dict(self.provenance, subset=n_train))
        sub.stats = compute_dataset_stats(sub.train_records, self.stats.sample_dt,
                                          self.stats.home)
        if self.distilled is not None:
            self.distilled = None
        return sub


# -- per-probe slicing ------------------------------------------------------------

def probe_vertical_slice(record: ExecutionRecord, k: int) -> tuple[int, int, float]:
    """(vstart, end, t_start) of probe k's vertical phase inside the trajectory.

    Segment endpoints are snapped by the simulator, so descent and depart
    samples carry the probe's commanded xy bit-exactly; the vertical phase is
    everything from the first such sample after the lateral arrival.
    """
    traj = record.trajectory
    s, e = traj.probe_boundaries[k]
    off = record.params.pattern[k]
    px = record.params.point_to.x + off[0]
    py = record.params.point_to.y + off[1]
    xy = traj.pos[s:e, :2]
    at_probe = np.flatnonzero((xy[:, 0] == px) & (xy[:, 1] == py))
    if at_probe.size == 0:
        raise ValueError(f"probe {k}: no sample at the commanded position")
    j = s + int(at_probe[0])
    if traj.pos[j, 2] >= record.params.depart_height:
        j += 1  # j was the lateral arrival sample
    t_start = float(traj.t[j - 1])
    return j, e, t_start


def probe_targets(record: ExecutionRecord, k: int, profile_len: int):
    """(z_profile, fz_profile, duration, depth) ground truth for probe k."""
    traj = record.trajectory
    j, e, t_start = probe_vertical_slice(record, k)
    t_nodes = np.concatenate([[t_start], traj.t[j:e]])
    z_nodes = np.concatenate([[record.params.depart_height], traj.pos[j:e, 2]])
    f_nodes = np.concatenate([[0.0], traj.fz[j:e]])
    duration = float(traj.t[e - 1] - t_start)
    ts = np.linspace(t_start, traj.t[e - 1], profile_len)
    z = np.interp(ts, t_nodes, z_nodes)
    fz = np.interp(ts, t_nodes, f_nodes)
    depth = float(z_nodes.min())
    return z, fz, duration, depth


# -- dataset statistics ------------------------------------------------------------

def compute_dataset_stats(records: list[ExecutionRecord], sample_dt: float,
                          home: tuple[float, float, float]) -> NormStats:
    """Normalization constants from the (train) records."""
    xs, zs, fs, logdur, depth, speed, fstop = [], [], [], [], [], [], []
    for rec in records:
        pos = rec.params.probe_positions()
        xs.append(pos.reshape(-1))
        xs.append(np.array([rec.params.point_to.x, rec.params.point_to.y]))
        speed.append(rec.params.v_descent)
        fstop.append(rec.params.f_contact)
        for k in range(rec.n_probes):
            z, fz, dur, dep = probe_targets(rec, k, 25)
            zs.append(z)
            fs.append(fz)
            logdur.append(math.log(dur))
            depth.append(dep)
    def ch(values):
        v = np.concatenate([np.atleast_1d(np.asarray(x, float)) for x in values])
        return (float(v.mean()), float(max(v.std(), 1e-6)))
    return NormStats(xy=ch(xs), z=ch(zs), force=ch(fs), logdur=ch(logdur),
                     depth=ch(depth), speed=ch(speed), fstop=ch(fstop),
                     sample_dt=sample_dt, home=tuple(home))


# -- collection ----------------------------------------------------------------------

def config_digest(cfg: SimConfig, domain: ParamDomain, k: int) -> str:
    payload = json.dumps({"sim": dataclasses.asdict(cfg), "domain": dataclasses.asdict(domain),
                          "k": k}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def collect_dataset(cfg: SimConfig, domain: ParamDomain, n: int, seed: int,
                    k: int = 20) -> Dataset:
    """Execute n randomly parameterized episodes in sampled environments.

    Episode i uses seed ``seed + i``; the last min(200, n // 2) records form
    the test split. Deterministic in (cfg, domain, n, seed).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    records = []
    for i in range(n):
        env_seed, img_seed, exec_seed, par_seed = episode_seeds(seed, i)
        env = sample_environment(env_seed, cfg)
        params = domain.sample(np.random.default_rng(par_seed), k)
        rec = execute_program(env, params, exec_seed, cfg)
        rec.seed = seed + i
        rec.image = render_image(env, cfg, img_seed)
        records.append(rec)
    n_test = min(200, n // 2)
    ds = Dataset(records=records, n_test=n_test,
                 provenance={"config_hash": config_digest(cfg, domain, k),
                             "base_seed": seed, "n": n,
                             "seed_range": [seed, seed + n - 1]})
    ds.stats = compute_dataset_stats(ds.train_records, cfg.sample_dt, cfg.home)
    return ds


# -- dataset io ----------------------------------------------------------------------

def _record_to_json(rec: ExecutionRecord) -> dict:
    p = rec.params
    traj = rec.trajectory
    rnd = lambda a, d: [round(float(v), d) for v in a]
    return {
        "seed": rec.seed,
        "env": {"hx": rec.env.hole_center[0], "hy": rec.env.hole_center[1],
                "mx": rec.env.visual_marker[0], "my": rec.env.visual_marker[1]},
        "params": {"point_to": {"x": p.point_to.x, "y": p.point_to.y, "z": p.point_to.z},
                   "pattern": [[dx, dy] for dx, dy in p.pattern],
                   "v_lateral": p.v_lateral, "v_descent": p.v_descent, "accel": p.accel,
                   "f_contact": p.f_contact, "probe_depth": p.probe_depth,
                   "depart_height": p.depart_height},
        "image": rnd(np.asarray(rec.image.pixels, dtype=np.float32).reshape(-1), 7),
        "trajectory": {"t": rnd(traj.t, 9), "x": rnd(traj.pos[:, 0], 9),
                       "y": rnd(traj.pos[:, 1], 9), "z": rnd(traj.pos[:, 2], 9),
                       "fz": rnd(traj.fz, 9)},
        "probe_boundaries": [[s, e] for s, e in traj.probe_boundaries],
        "success": traj.success,
    }


def _record_from_json(d: dict, cfg: SimConfig) -> ExecutionRecord:
    env = EnvState(hole_center=(d["env"]["hx"], d["env"]["hy"]),
                   visual_marker=(d["env"]["mx"], d["env"]["my"]),
                   capture_radius=cfg.capture_radius, hole_depth=cfg.hole_depth,
                   surface_stiffness=cfg.stiffness, force_noise_sigma=cfg.force_noise_sigma)
    pj = d["params"]
    params = TaskParams(point_to=Pose(**pj["point_to"]),
                        pattern=tuple(tuple(o) for o in pj["pattern"]),
                        v_lateral=pj["v_lateral"], v_descent=pj["v_descent"],
                        accel=pj["accel"], f_contact=pj["f_contact"],
                        probe_depth=pj["probe_depth"], depart_height=pj["depart_height"])
    n = cfg.image_size
    image = EnvImage(pixels=np.asarray(d["image"], dtype=np.float64).reshape(n, n),
                     pixel_pitch=cfg.pixel_pitch)
    tj = d["trajectory"]
    traj = Trajectory(tj["t"], np.column_stack([tj["x"], tj["y"], tj["z"]]), tj["fz"],
                      d["success"], [(s, e) for s, e in d["probe_boundaries"]])
    return ExecutionRecord(seed=d["seed"], env=env, params=params, image=image,
                           trajectory=traj)


def save_dataset(ds: Dataset, directory) -> None:
    """meta.json plus train.ndjson / test.ndjson, one record per line."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"version": 1, "n": len(ds.records), "n_test": ds.n_test,
            "provenance": ds.provenance, "stats": ds.stats.to_dict()}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for name, records in (("train.ndjson", ds.train_records), ("test.ndjson", ds.test_records)):
        with open(directory / name, "w") as f:
            for rec in records:
                f.write(json.dumps(_record_to_json(rec)) + "\n")


def load_dataset(directory, cfg: SimConfig) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    records = []
    for name in ("train.ndjson", "test.ndjson"):
        with open(directory / name) as f:
            for line in f:
                records.append(_record_from_json(json.loads(line), cfg))
    return Dataset(records=records, n_test=meta["n_test"],
                   stats=NormStats.from_dict(meta["stats"]), provenance=meta["provenance"])


# -- optimizer -----------------------------------------------------------------------

class Adam:
    """Adaptive moment estimation over a dict of parameter tensors."""

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# -- stage one: probe model ------------------------------------------------------------

def _probe_training_set(dataset: Dataset, arch: ModelArch):
    """Per-record normalized contexts and raw-space targets for executed probes."""
    stats = dataset.stats
    out = []
    L = arch.profile_len
    for rec in dataset.train_records:
        e = rec.n_probes
        if e == 0:
            continue
        pos = rec.params.probe_positions()[:e]
        ctx = np.column_stack([
            mutt.norm_value(pos[:, 0], stats.xy),
            mutt.norm_value(pos[:, 1], stats.xy),
            np.full(e, mutt.norm_value(rec.params.point_to.x, stats.xy)),
            np.full(e, mutt.norm_value(rec.params.point_to.y, stats.xy)),
            np.full(e, mutt.norm_value(rec.params.v_descent, stats.speed)),
            np.full(e, mutt.norm_value(rec.params.f_contact, stats.fstop)),
        ])
        targets = np.empty((e, 2 * L + 2))
        for k in range(e):
            z, fz, dur, dep = probe_targets(rec, k, L)
            targets[k, :L] = mutt.norm_value(z, stats.z)
            targets[k, L:2 * L] = mutt.norm_value(fz, stats.force)
            targets[k, 2 * L] = mutt.norm_value(math.log(dur), stats.logdur)
            targets[k, 2 * L + 1] = mutt.norm_value(dep, stats.depth)
        out.append({"pixels": np.asarray(rec.image.pixels), "ctx": ctx, "targets": targets})
    if not out:
        raise ValueError("dataset contains no executed probes")
    return out


def _record_batches(n_records: int, per_batch: int, rng: np.random.Generator):
    perm = rng.permutation(n_records)
    return [perm[i:i + per_batch] for i in range(0, n_records, per_batch)]


def train_probe_model(dataset: Dataset, cfg: TrainConfig,
                      arch: ModelArch | None = None) -> tuple[ModelWeights, list[float]]:
    """Stage one: supervised regression of per-probe vertical dynamics."""
    arch = arch or ModelArch()
    if dataset.stats is None:
        raise ValueError("dataset has no normalization stats")
    samples = _probe_training_set(dataset, arch)
    mean_probes = np.mean([s["ctx"].shape[0] for s in samples])
    records_per_batch = max(1, int(round(cfg.batch_size / mean_probes)))

    wt = mutt.lift_weights(mutt.init_probe_weights(arch, (cfg.seed, 1)), requires_grad=True)
    opt = Adam(wt)
    rng = np.random.default_rng((cfg.seed, 2))
    n_batches = math.ceil(len(samples) / records_per_batch)
    total_steps = cfg.epochs * n_batches
    step = 0
    curve = []
    for epoch in range(cfg.epochs):
        losses = []
        for batch_idx in _record_batches(len(samples), records_per_batch, rng):
            batch = [samples[i] for i in batch_idx]
            pixels = np.stack([b["pixels"] for b in batch])
            ctx = np.concatenate([b["ctx"] for b in batch])
            targets = np.concatenate([b["targets"] for b in batch])
            idx = np.concatenate([np.full(b["ctx"].shape[0], j) for j, b in enumerate(batch)])
            memory = mutt.image_memory(wt, pixels, arch)
            out = mutt.probe_readout(wt, memory, Tensor(ctx), idx, arch, dataset.stats)
            diff = out.raw - Tensor(targets)
            loss = (diff * diff).mean()
            opt.zero_grad()
            ad.backward(loss)
            lr = cfg.learning_rate * (1.0 - step / total_steps)
            opt.step(lr)
            step += 1
            losses.append(float(loss.data))
        curve.append(float(np.mean(losses)))
    weights = ModelWeights(arch=arch, stats=dataset.stats,
                           omega1={k: t.data for k, t in wt.items()}, omega2={})
    return weights, curve


# -- distillation -------------------------------------------------------------------

def distill_probe_predictions(dataset: Dataset, weights: ModelWeights,
                              batch_records: int = 8) -> Dataset:
    """Replace per-probe profile/duration quantities with probe-model outputs.

    Success labels, environments, parameters, and ground-truth trajectories
    are untouched; the predictions cover every pattern entry (executed or not),
    which is exactly what the search model sees at inference time.
    """
    if weights.stats != dataset.stats:
        raise ValueError("probe model was trained with different normalization stats")
    arch, stats = weights.arch, weights.stats
    wt = mutt.lift_weights(weights.omega1)
    distilled = []
    records = dataset.records
    for start in range(0, len(records), batch_records):
        chunk = records[start:start + batch_records]
        pixels = np.stack([np.asarray(r.image.pixels) for r in chunk])
        memory = mutt.image_memory(wt, pixels, arch)
        ctxs, idxs = [], []
        for j, rec in enumerate(chunk):
            pos = rec.params.probe_positions()
            k = rec.params.k
            ctxs.append(np.column_stack([
                mutt.norm_value(pos[:, 0], stats.xy),
                mutt.norm_value(pos[:, 1], stats.xy),
                np.full(k, mutt.norm_value(rec.params.point_to.x, stats.xy)),
                np.full(k, mutt.norm_value(rec.params.point_to.y, stats.xy)),
                np.full(k, mutt.norm_value(rec.params.v_descent, stats.speed)),
                np.full(k, mutt.norm_value(rec.params.f_contact, stats.fstop)),
            ]))
            idxs.append(np.full(k, j))
        out = mutt.probe_readout(wt, memory, Tensor(np.concatenate(ctxs)),
                                 np.concatenate(idxs), arch, stats)
        off = 0
        for rec in chunk:
            k = rec.params.k
            distilled.append(DistilledProbes(
                profile_z=out.profile_z.data[off:off + k].copy(),
                profile_fz=out.profile_fz.data[off:off + k].copy(),
                duration=out.duration.data[off:off + k].copy(),
                contact_depth=out.contact_depth.data[off:off + k].copy()))
            off += k
    return Dataset(records=list(dataset.records), n_test=dataset.n_test,
                   stats=dataset.stats, provenance=dict(dataset.provenance, distilled=True),
                   distilled=distilled)


# -- stage two: search model --------------------------------------------------------

def _lateral_durations(rec: ExecutionRecord) -> np.ndarray:
    """Nominal lateral move durations between consecutive probe positions."""
    p = rec.params
    pos = p.probe_positions()
    prev = np.vstack([[p.point_to.x, p.point_to.y], pos[:-1]])
    dists = np.hypot(*(pos - prev).T)
    return np.array([_profile(d, p.v_lateral, p.accel)[2] for d in dists])


def _search_training_set(dataset: Dataset, arch: ModelArch):
    if dataset.distilled is None:
        raise ValueError("dataset is missing probe predictions; run distillation first")
    stats = dataset.stats
    out = []
    n_train = len(dataset.train_records)
    for rec, dist in zip(dataset.records[:n_train], dataset.distilled[:n_train]):
        p = rec.params
        k = p.k
        pos = p.probe_positions()
        tokens = np.column_stack([
            mutt.norm_value(pos[:, 0], stats.xy),
            mutt.norm_value(pos[:, 1], stats.xy),
            np.full(k, mutt.norm_value(p.point_to.x, stats.xy)),
            np.full(k, mutt.norm_value(p.point_to.y, stats.xy)),
            mutt.norm_value(np.log(dist.duration), stats.logdur),
            mutt.norm_value(dist.contact_depth, stats.depth),
            mutt.norm_value(dist.profile_z.min(axis=1), stats.z),
            mutt.norm_value(dist.profile_fz.max(axis=1), stats.force),
        ])
        e = rec.n_probes
        indicators = np.zeros(k)
        mask = np.zeros(k)
        mask[:e] = 1.0
        if rec.success:
            indicators[e - 1] = 1.0
        home = np.asarray(stats.home)
        approach_d = float(np.linalg.norm(p.point_to.as_array() - home))
        approach = _profile(approach_d, p.v_lateral, p.accel)[2]
        len_k = (approach + np.cumsum(_lateral_durations(rec) + dist.duration)) / stats.sample_dt
        out.append({"pixels": np.asarray(rec.image.pixels), "tokens": tokens,
                    "indicators": indicators, "mask": mask,
                    "success": 1.0 if rec.success else 0.0,
                    "gt_len": float(len(rec.trajectory)), "len_k": len_k})
    return out


def train_search_model(distilled: Dataset, probe_weights: ModelWeights,
                       cfg: TrainConfig) -> tuple[ModelWeights, list[float]]:
    """Stage two: search-level semantics on the distilled dataset."""
    arch = probe_weights.arch
    if distilled.stats != probe_weights.stats:
        raise ValueError("distilled dataset and probe model disagree on stats")
    samples = _search_training_set(distilled, arch)
    wt = mutt.lift_weights(mutt.init_search_weights(arch, (cfg.seed, 3)), requires_grad=True)
    opt = Adam(wt)
    rng = np.random.default_rng((cfg.seed, 4))
    per_batch = cfg.batch_size
    n_batches = math.ceil(len(samples) / per_batch)
    total_steps = cfg.epochs * n_batches
    step = 0
    curve = []
    for epoch in range(cfg.epochs):
        losses = []
        for batch_idx in _record_batches(len(samples), per_batch, rng):
            batch = [samples[i] for i in batch_idx]
            loss = _search_batch_loss(wt, batch, arch, cfg)
            opt.zero_grad()
            ad.backward(loss)
            lr = cfg.learning_rate * (1.0 - step / total_steps)
            opt.step(lr)
            step += 1
            losses.append(float(loss.data))
        curve.append(float(np.mean(losses)))
    return ModelWeights(arch=arch, stats=probe_weights.stats,
                        omega1={k: v.copy() for k, v in probe_weights.omega1.items()},
                        omega2={k: t.data for k, t in wt.items()}), curve


def _search_batch_loss(wt, batch, arch: ModelArch, cfg: TrainConfig) -> Tensor:
    pixels = np.stack([b["pixels"] for b in batch])
    tokens = np.stack([b["tokens"] for b in batch])
    y = np.stack([b["indicators"] for b in batch])
    mask = np.stack([b["mask"] for b in batch])
    succ = np.array([b["success"] for b in batch])
    gt_len = np.array([b["gt_len"] for b in batch])
    len_k = np.stack([b["len_k"] for b in batch])
    b, k = y.shape

    memory = mutt.image_memory(wt, pixels, arch)
    logits = mutt.search_decode(wt, memory, Tensor(tokens), arch)

    # per-probe BCE, masked to executed probes: softplus(l) - l * y
    sp = ad.softplus(logits)
    bce = sp - logits * Tensor(y)
    bce_probe = (bce * Tensor(mask)).sum() * (1.0 / max(mask.sum(), 1.0))

    # success BCE through the exact survival chain: log(1 - p_s) = -sum softplus(l)
    log_fail = -sp.sum(axis=1)                       # (B,)
    p_succ = 1.0 - ad.exp(log_fail)
    bce_succ = -(Tensor(succ) * ad.log(p_succ + 1e-12)
                 + Tensor(1.0 - succ) * log_fail).mean()

    # expected-length regression, normalized by the full-pattern length
    p = ad.sigmoid(logits)
    surv = Tensor(np.ones(b))
    e_len = Tensor(np.zeros(b))
    for i in range(k):
        pi = p[:, i]
        e_len = e_len + pi * surv * Tensor(len_k[:, i])
        surv = surv * (1.0 - pi)
    e_len = e_len + surv * Tensor(len_k[:, k - 1])
    rel = (e_len - Tensor(gt_len)) * Tensor(1.0 / len_k[:, k - 1])
    loss_len = (rel * rel).mean()

    return cfg.w_success * (bce_probe + bce_succ) + cfg.w_trajectory * loss_len


# -- evaluation ----------------------------------------------------------------------

def shadow_predictor(weights: ModelWeights):
    """record -> (p_success, predicted trajectory) through the shadow program."""
    def predict(rec: ExecutionRecord):
        pred = mutt.shadow_forward(weights, rec.params, rec.image, assemble=True)
        return float(pred.p_success.data), pred.trajectory
    return predict


def oracle_predictor():
    """Upper-bound stub: predicts the ground truth it is asked about."""
    def predict(rec: ExecutionRecord):
        return (1.0 if rec.success else 0.0), rec.trajectory
    return predict


def evaluate_predictions(predict, records: list[ExecutionRecord]) -> PredictionMetrics:
    """Classify success at threshold 0.5 and average trajectory errors."""
    tp = tn = fp = fn = 0
    maes_l, maes_p, maes_f = [], [], []
    for rec in records:
        p_success, traj = predict(rec)
        predicted = p_success >= 0.5
        if predicted and rec.success:
            tp += 1
        elif predicted and not rec.success:
            fp += 1
        elif not predicted and rec.success:
            fn += 1
        else:
            tn += 1
        mae_l, mae_p, mae_f = trajectory_metrics(traj, rec.trajectory)
        maes_l.append(mae_l)
        maes_p.append(mae_p)
        maes_f.append(mae_f)
    return PredictionMetrics(f1=f1_score(tp, fp, fn), true_pos=tp, true_neg=tn,
                             false_pos=fp, false_neg=fn,
                             mae_l=float(np.mean(maes_l)), mae_p=float(np.mean(maes_p)),
                             mae_f=float(np.mean(maes_f)))


def evaluate_models(weights: ModelWeights, test_records: list[ExecutionRecord]) -> PredictionMetrics:
    return evaluate_predictions(shadow_predictor(weights), test_records)
