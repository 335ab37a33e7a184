"""Experiment orchestration: schemes, round loop, telemetry, file outputs.

A trial wires one round as: draw fading (fixing the active set), active
devices compute mini-batch gradients and feed back their scalar statistics,
the server picks the breathing depth, broadcasts a fresh pruning mask and
PN set, devices run prune/normalize/invert/spread, the channel superposes
chips under interference, and the server despreads, de-normalizes,
zero-pads and applies the global update.

Schemes:

* ``ideal``        -- error-free aggregation of all devices, no channel;
* ``no_sb``        -- depth fixed to 1 (full gradient, no spreading);
* ``prune_only``   -- random pruning at a fixed ratio, no spreading;
* ``fixed_bd``     -- closed-form fixed depth from SIR/K/activation alone;
* ``fixed_bd_oracle`` -- fixed depth by exhaustive scan of the same objective;
* ``adaptive_bd``  -- per-round depth from gradient statistics and |K|.

Every random draw comes from a named stream derived from the master seed,
so full telemetry is a pure function of (config, master_seed) and trials
can run concurrently (cap with the AIRBREATHE_THREADS environment
variable).  Communication time is accounted in chips: a round costs
S_n·G_n chips, which equals the model dimension up to flooring, so all
schemes are compared at equal bandwidth-time.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import signal_chain as sc
from .analysis import closed_form_mse, propagation_loss
from .channel import (InterferenceProfile, PowerLedger, activation_probability,
                      draw_channels, transmit_round)
from .datasets import gaussian_mixture, load_dataset, partition, quadratic_targets
from .depth_control import SirConfig, adaptive_depth, beta_fixed, estimate_gsi, fixed_depth
from .errors import ConfigurationError
from .fl import ModelState, apply_update, evaluate, ideal_aggregate, init_state, local_gradient
from .rng import stream
from .tasks import TaskSpec, make_task

logger = logging.getLogger(__name__)

SCHEMES = ("ideal", "no_sb", "prune_only", "fixed_bd", "fixed_bd_oracle",
           "adaptive_bd")

TELEMETRY_FIELDS = ("trial", "round", "g_depth", "s_n", "active_count",
                    "alpha_sq_hat", "v_sq_hat", "mse_empirical",
                    "mse_closed_form", "u_n", "loss", "accuracy",
                    "cumulative_chips", "power_spent", "skipped")


@dataclass(frozen=True)
class RoundTelemetry:
    """One row of the per-round record (one per round per trial)."""

    trial: int
    round: int
    g_depth: int
    s_n: int
    active_count: int
    alpha_sq_hat: float
    v_sq_hat: float
    mse_empirical: float
    mse_closed_form: float
    u_n: float
    loss: float
    accuracy: float
    cumulative_chips: int
    power_spent: float
    skipped: bool


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete declarative description of one experiment."""

    scheme: str
    task: TaskSpec
    num_devices: int = 10
    rounds: int = 100
    sir_db: float = -23.0
    g_th: float = 0.2
    p_i: float = 1.0
    master_seed: int = 0
    trials: int = 1
    gamma: float | None = None          # prune_only ratio
    depth_override: int | None = None   # force the breathing depth
    partition_scheme: object = "iid"    # "iid" or ("shards", per_device)
    train_samples: int = 3000
    val_samples: int = 2000
    separation: float = 3.0             # mixture mean separation
    label_noise: float = 0.0            # flipped-label fraction (mixture)
    center_scale: float = 1.0           # quadratic target center scale
    target_spread: float = 1.0          # quadratic per-coordinate target std
    dataset_path: str | None = None
    val_dataset_path: str | None = None
    eval_every: int = 1
    power_budget: float = math.inf
    output_dir: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; "
                                     f"choose one of {SCHEMES}")
        if self.rounds < 1 or self.trials < 1 or self.num_devices < 1:
            raise ConfigurationError("rounds, trials, num_devices must be >= 1")
        if self.scheme == "prune_only":
            if self.gamma is None or not 0 < self.gamma <= 1:
                raise ConfigurationError("prune_only requires gamma in (0, 1]")
        if self.depth_override is not None and self.depth_override < 1:
            raise ConfigurationError("depth_override must be >= 1")
        if self.g_th < 0 or self.p_i <= 0 or self.eval_every < 1:
            raise ConfigurationError("need g_th >= 0, p_i > 0, eval_every >= 1")

    @property
    def p0(self) -> float:
        return self.p_i * 10.0 ** (self.sir_db / 10.0)

    @property
    def xi_a(self) -> float:
        return activation_probability(self.g_th)

    def sir_config(self, dim: int) -> SirConfig:
        return SirConfig(p0=self.p0, p_i=self.p_i, k=self.num_devices,
                         xi_a=self.xi_a, d=dim)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["partition_scheme"] = list(self.partition_scheme) \
            if not isinstance(self.partition_scheme, str) else self.partition_scheme
        out["power_budget"] = None if math.isinf(self.power_budget) \
            else self.power_budget
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        task = data.pop("task")
        if isinstance(task, dict):
            task = TaskSpec(**task)
        part = data.pop("partition_scheme", "iid")
        if isinstance(part, (list, tuple)):
            part = (part[0], int(part[1]))
        budget = data.pop("power_budget", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(task=task, partition_scheme=part,
                   power_budget=math.inf if budget is None else float(budget),
                   **data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key=value`` strings (dotted paths) onto a config dict."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


class TrialRunner:
    """Round-by-round execution of one trial of an experiment.

    Exposes the dataset, shards, task and model state so diagnostics can
    observe trajectories; ``run_experiment`` drives it start to finish.
    """

    def __init__(self, cfg: ExperimentConfig, trial: int = 0):
        self.cfg = cfg
        self.trial = trial
        self.task = make_task(cfg.task)
        self._build_data()
        self.state = init_state(self.task,
                                stream(cfg.master_seed, "init", trial))
        self.sir = cfg.sir_config(self.task.dim)
        self.intf = InterferenceProfile(power=cfg.p_i)
        self.ledger = PowerLedger(cfg.num_devices, budget=cfg.power_budget)
        self.rows: list[RoundTelemetry] = []
        self.skipped_rounds = 0
        self.degenerate_rounds = 0
        self.cumulative_chips = 0
        self._fixed_depth = self._resolve_fixed_depth()
        self._last_eval: tuple[float, float] | None = None

    # -- setup ------------------------------------------------------------

    def _build_data(self):
        cfg = self.cfg
        rng = stream(cfg.master_seed, "data", self.trial)
        kind = cfg.task.kind
        if cfg.dataset_path is not None:
            X, y = load_dataset(cfg.dataset_path)
            if cfg.val_dataset_path is not None:
                self.X_val, self.y_val = load_dataset(cfg.val_dataset_path)
            else:
                self.X_val, self.y_val = X, y
        elif kind == "quadratic":
            total = cfg.train_samples + cfg.val_samples
            T, z = quadratic_targets(total, cfg.task.dim, cfg.center_scale,
                                     cfg.target_spread, rng)
            X, y = T[:cfg.train_samples], z[:cfg.train_samples]
            self.X_val, self.y_val = T[cfg.train_samples:], z[cfg.train_samples:]
        elif kind in ("logistic_l2", "mlp_small"):
            dim = cfg.task.dim if kind == "logistic_l2" else cfg.task.in_features
            total = cfg.train_samples + cfg.val_samples
            X_all, y_all = gaussian_mixture(total, dim, cfg.separation, rng,
                                            label_noise=cfg.label_noise)
            X, y = X_all[:cfg.train_samples], y_all[:cfg.train_samples]
            self.X_val = X_all[cfg.train_samples:]
            self.y_val = y_all[cfg.train_samples:]
        else:
            raise ConfigurationError(
                f"task kind {kind!r} needs dataset_path (no synthetic source)")
        self.shards = partition(X, y, cfg.num_devices, cfg.partition_scheme,
                                stream(cfg.master_seed, "partition", self.trial))

    def _resolve_fixed_depth(self) -> int | None:
        if self.cfg.scheme == "fixed_bd":
            return fixed_depth(self.sir).g
        if self.cfg.scheme == "fixed_bd_oracle":
            depths = np.arange(1, self.task.dim + 1)
            return int(depths[np.argmin(beta_fixed(depths, self.sir))])
        return None

    # -- round loop --------------------------------------------------------

    def _round_depth(self, gsi, active_count: int) -> int:
        cfg = self.cfg
        if cfg.depth_override is not None:
            return min(cfg.depth_override, self.task.dim)
        if cfg.scheme in ("no_sb", "prune_only"):
            return 1
        if self._fixed_depth is not None:
            return self._fixed_depth
        return adaptive_depth(gsi, active_count, self.sir).g

    def _gradients(self, device_ids, n: int) -> list[np.ndarray]:
        cfg = self.cfg
        return [local_gradient(self.state, self.shards[k], self.task,
                               cfg.task.batch_size,
                               stream(cfg.master_seed, "batch", self.trial, n, k))
                for k in device_ids]

    def _evaluate(self, n: int) -> tuple[float, float]:
        # between eval_every marks the stale value is carried forward
        if self._last_eval is None or n % self.cfg.eval_every == 0:
            self._last_eval = evaluate(self.state, self.X_val, self.y_val,
                                       self.task)
        return self._last_eval

    def run_round(self) -> RoundTelemetry:
        cfg = self.cfg
        n = len(self.rows)
        if cfg.scheme == "ideal":
            row = self._run_ideal_round(n)
        else:
            row = self._run_air_round(n)
        self.rows.append(row)
        return row

    def _run_ideal_round(self, n: int) -> RoundTelemetry:
        cfg = self.cfg
        grads = self._gradients(range(cfg.num_devices), n)
        gsi = estimate_gsi(grads)
        self.state = apply_update(self.state, ideal_aggregate(grads),
                                  cfg.task.learning_rate)
        loss, acc = self._evaluate(n)
        self.cumulative_chips += self.task.dim
        return RoundTelemetry(
            trial=self.trial, round=n, g_depth=1, s_n=self.task.dim,
            active_count=cfg.num_devices, alpha_sq_hat=gsi.alpha_sq,
            v_sq_hat=gsi.v_sq, mse_empirical=0.0, mse_closed_form=0.0,
            u_n=0.0, loss=loss, accuracy=acc,
            cumulative_chips=self.cumulative_chips, power_spent=0.0,
            skipped=False)

    def _run_air_round(self, n: int) -> RoundTelemetry:
        cfg = self.cfg
        seed = cfg.master_seed
        chan = draw_channels(cfg.num_devices, cfg.g_th, cfg.p0,
                             stream(seed, "channel", self.trial, n))
        active = chan.active_indices
        if active.size == 0:
            self.skipped_rounds += 1
            loss, acc = self._evaluate(n)
            return RoundTelemetry(
                trial=self.trial, round=n, g_depth=0, s_n=0, active_count=0,
                alpha_sq_hat=math.nan, v_sq_hat=math.nan,
                mse_empirical=math.nan, mse_closed_form=math.nan,
                u_n=math.nan, loss=loss, accuracy=acc,
                cumulative_chips=self.cumulative_chips, power_spent=0.0,
                skipped=True)
        grads = self._gradients(active, n)
        gsi = estimate_gsi(grads)
        depth = self._round_depth(gsi, active.size)
        mask_rng = stream(seed, "mask", self.trial, n)
        if cfg.scheme == "prune_only":
            mask = sc.generate_mask(self.task.dim, 1, mask_rng,
                                    prunable=self.task.prunable, gamma=cfg.gamma)
        else:
            mask = sc.generate_mask(self.task.dim, depth, mask_rng,
                                    prunable=self.task.prunable)
        pn = sc.generate_pn(mask.size, depth, stream(seed, "pn", self.trial, n),
                            seed_label=f"pn/{self.trial}/{n}")
        v_std = math.sqrt(gsi.v_sq)
        if v_std <= sc.SIGMA_FLOOR:
            self.degenerate_rounds += 1
            logger.warning("trial %d round %d: degenerate symbol statistics "
                           "(V=%.3g); transmitting unnormalized", self.trial, n,
                           v_std)
            params = sc.NormalizationParams(mean=0.0, std=1.0)
        else:
            params = sc.NormalizationParams(mean=gsi.mean, std=v_std)
        chips = np.zeros((cfg.num_devices, mask.size * depth))
        for g, k in zip(grads, active):
            chips[k] = sc.device_chips(g, mask, params, pn)
        power_before = float(self.ledger.cumulative.sum())
        frame = transmit_round(chips, chan, self.intf,
                               stream(seed, "interference", self.trial, n),
                               self.ledger)
        y_prime = sc.receiver_output(frame, mask, params, pn, active.size,
                                     cfg.p0)
        self.state = apply_update(self.state, y_prime, cfg.task.learning_rate)
        loss, acc = self._evaluate(n)

        target = np.mean(grads, axis=0)
        mse_emp = float(np.sum((target - y_prime) ** 2))
        mse_cf = closed_form_mse(mask.gamma, depth, self.sir, gsi.alpha_sq,
                                 params.std ** 2, 1.0 / active.size ** 2)
        if active.size >= 2:
            dev = np.asarray(grads) - target
            sigma_g_sq = float(np.sum(dev ** 2) / (active.size - 1))
        else:
            sigma_g_sq = 0.0
        u_n = propagation_loss(mse_cf.total, cfg.num_devices, cfg.xi_a,
                               sigma_g_sq)
        self.cumulative_chips += mask.size * depth
        return RoundTelemetry(
            trial=self.trial, round=n, g_depth=depth, s_n=mask.size,
            active_count=int(active.size), alpha_sq_hat=gsi.alpha_sq,
            v_sq_hat=gsi.v_sq, mse_empirical=mse_emp,
            mse_closed_form=mse_cf.total, u_n=u_n, loss=loss, accuracy=acc,
            cumulative_chips=self.cumulative_chips,
            power_spent=float(self.ledger.cumulative.sum()) - power_before,
            skipped=False)

    def run(self, keep_states: bool = False):
        """Run all configured rounds; optionally record the weight trajectory."""
        states = [self.state.w.copy()] if keep_states else None
        for _ in range(self.cfg.rounds):
            self.run_round()
            if keep_states:
                states.append(self.state.w.copy())
        return (self.rows, states) if keep_states else self.rows


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    summary: dict = field(default_factory=dict)
    telemetry_path: Path | None = None
    summary_path: Path | None = None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def write_telemetry_csv(rows, path) -> None:
    lines = [",".join(TELEMETRY_FIELDS)]
    for row in rows:
        lines.append(",".join(_format_value(getattr(row, name))
                              for name in TELEMETRY_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_telemetry_csv(path) -> list[RoundTelemetry]:
    text = Path(path).read_text().strip().split("\n")
    header = text[0].split(",")
    if tuple(header) != TELEMETRY_FIELDS:
        raise ConfigurationError(f"unexpected telemetry schema in {path}")
    rows = []
    for line in text[1:]:
        parts = line.split(",")
        rows.append(RoundTelemetry(
            trial=int(parts[0]), round=int(parts[1]), g_depth=int(parts[2]),
            s_n=int(parts[3]), active_count=int(parts[4]),
            alpha_sq_hat=float(parts[5]), v_sq_hat=float(parts[6]),
            mse_empirical=float(parts[7]), mse_closed_form=float(parts[8]),
            u_n=float(parts[9]), loss=float(parts[10]),
            accuracy=float(parts[11]), cumulative_chips=int(parts[12]),
            power_spent=float(parts[13]), skipped=bool(int(parts[14]))))
    return rows


def _summarize(cfg: ExperimentConfig, trial_rows: list[list[RoundTelemetry]],
               runners: list[TrialRunner]) -> dict:
    finals = [rows[-1] for rows in trial_rows]
    accs = [r.accuracy for r in finals]
    losses = [r.loss for r in finals]
    all_accs = [r.accuracy for rows in trial_rows for r in rows
                if not math.isnan(r.accuracy)]
    return {
        "scheme": cfg.scheme,
        "trials": cfg.trials,
        "rounds": cfg.rounds,
        "final_loss": losses,
        "final_accuracy": accs,
        "mean_final_loss": float(np.mean(losses)),
        "mean_final_accuracy": float(np.mean(accs)),
        "best_accuracy": max(all_accs) if all_accs else math.nan,
        "total_chips": [rows[-1].cumulative_chips for rows in trial_rows],
        "skipped_rounds": sum(r.skipped_rounds for r in runners),
        "degenerate_rounds": sum(r.degenerate_rounds for r in runners),
        "total_energy": [float(r.ledger.cumulative.sum()) for r in runners],
    }


def _max_workers(trials: int) -> int:
    cap = os.environ.get("AIRBREATHE_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(trials, limit))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all trials, write telemetry CSV and summary, return everything.

    Deterministic for a fixed master seed: trials are merged by index, and
    repeated invocations produce byte-identical files.
    """
    out_dir = None
    if cfg.output_dir is not None:
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")  # fail before simulating if unwritable
        probe.unlink()

    def one_trial(t: int) -> TrialRunner:
        runner = TrialRunner(cfg, trial=t)
        runner.run()
        return runner

    workers = _max_workers(cfg.trials)
    if workers == 1:
        runners = [one_trial(t) for t in range(cfg.trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runners = list(pool.map(one_trial, range(cfg.trials)))
    trial_rows = [r.rows for r in runners]
    rows = [row for rows_ in trial_rows for row in rows_]
    summary = _summarize(cfg, trial_rows, runners)
    result = ExperimentResult(config=cfg, rows=rows, summary=summary)
    if out_dir is not None:
        result.telemetry_path = out_dir / "telemetry.csv"
        write_telemetry_csv(rows, result.telemetry_path)
        result.summary_path = out_dir / "summary.txt"
        lines = ["# experiment summary"]
        for key, value in summary.items():
            text = json.dumps(value) if isinstance(value, list) \
                else _format_value(value)
            lines.append(f"{key}: {text}")
        lines.append(f"config: {json.dumps(cfg.to_dict(), sort_keys=True)}")
        result.summary_path.write_text("\n".join(lines) + "\n")
    return result


# --------------------------------------------------------------------------
# Plot-data emission
# --------------------------------------------------------------------------

def _trial_series(rows: list[RoundTelemetry]):
    """Strictly increasing (chips, loss, accuracy) steps for one trial."""
    chips, loss, acc = [], [], []
    for row in rows:
        if chips and row.cumulative_chips == chips[-1]:
            loss[-1], acc[-1] = row.loss, row.accuracy  # skip rows: keep last
        else:
            chips.append(row.cumulative_chips)
            loss.append(row.loss)
            acc.append(row.accuracy)
    return np.asarray(chips), np.asarray(loss), np.asarray(acc)


def emit_plot_data(tables, output_dir) -> list[Path]:
    """Write aligned (cumulative_chips, loss, accuracy) series per table.

    ``tables`` maps a series name to its telemetry rows.  All series share
    one x-grid (the union of every trial's chip counts); values between
    recorded points follow step semantics (previous value carried forward),
    and multi-trial tables are averaged per grid point.
    """
    if not tables:
        raise ConfigurationError("need at least one telemetry table")
    items = list(tables.items()) if isinstance(tables, dict) else list(tables)
    per_table = []
    grid_points = set()
    for name, rows in items:
        by_trial = {}
        for row in rows:
            by_trial.setdefault(row.trial, []).append(row)
        series = [_trial_series(sorted(t_rows, key=lambda r: r.round))
                  for t_rows in by_trial.values()]
        if not series:
            raise ConfigurationError(f"table {name!r} has no rows")
        per_table.append((name, series))
        for chips, _, _ in series:
            grid_points.update(chips.tolist())
    grid = np.asarray(sorted(grid_points), dtype=np.int64)
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, series in per_table:
        losses = []
        accs = []
        for chips, loss, acc in series:
            idx = np.clip(np.searchsorted(chips, grid, side="right") - 1,
                          0, len(chips) - 1)
            losses.append(loss[idx])
            accs.append(acc[idx])
        loss_mean = np.mean(losses, axis=0)
        acc_mean = np.mean(accs, axis=0)
        path = out_dir / f"plot_{name}.csv"
        lines = ["cumulative_chips,loss,accuracy"]
        for c, lo, ac in zip(grid, loss_mean, acc_mean):
            lines.append(f"{c},{lo:.9g},{ac:.9g}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
