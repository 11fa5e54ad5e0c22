"""End-to-end run: configuration, stage orchestration and the run manifest."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .cycles import HubClassification, HubRule, PhaseCalendar, classify_hubs, flatten_columns, phase_averages, subnetwork_panel
from .forecast import (
    DEFAULT_HORIZONS,
    THRESHOLDS,
    horizon_suite,
    macro_from_frame,
    monthly_aggregate,
    results_json,
    results_table,
    threshold_decompose,
)
from .industry_panel import IndustryPanel, build_panel
from .io import (
    InputError,
    atomic_write_text,
    read_caps,
    read_chains,
    read_firm_vix,
    read_macro,
    read_membership,
    sha256_file,
    write_frame,
)
from .network import ConnectednessSeries, network_path
from .options_iv import OptionsError, VixConfig, firm_vix
from .tvp_var import EstimationError, TvpVarSpec

log = logging.getLogger(__name__)

CONFIG_ENV = "UNCNET_CONFIG"
INPUT_KEYS = ("chains", "firm_vix", "caps", "membership", "calendar", "macro")
# settings that may not change any output byte
NON_OUTPUT_KEYS = ("workers", "out")


class ConfigError(InputError):
    pass


class StageError(RuntimeError):
    """Wraps the failure of one stage; ``manifest`` holds the partial record."""

    def __init__(self, stage: str, cause: Exception, manifest: "RunManifest"):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest


@dataclass
class PipelineConfig:
    """Everything a pipeline run depends on. Paths are absolute after loading."""

    firm_vix: str | None = None
    chains: str | None = None
    caps: str | None = None
    membership: str | None = None
    calendar: str | None = None
    macro: str | None = None
    target_days: int = 30
    zero_bid_stop: int = 2
    fill_limit: int = 5
    gap_policy: str = "raise"
    lags: int = 2
    bandwidth: float | None = None
    shrinkage: float = 0.05
    own_lag_mean: float = 0.1
    n_draws: int = 500
    stability_cap: float = 0.999
    weight_norm: str = "ess"
    seed: int = 0
    stride: int = 1
    horizon: int = 10
    top_k: int = 5
    bottom_k: int = 4
    share: str = "ratio"
    subnetworks: bool = True
    targets: tuple[str, ...] = ("CFNAI",)
    controls: tuple[tuple[str, str], ...] = ()
    horizons: tuple[int, ...] = DEFAULT_HORIZONS
    hac: bool = False
    thresholds: tuple[tuple[str, float], ...] = tuple(sorted(THRESHOLDS.items()))
    strict: bool = False
    out: str = "uncnet-out"
    workers: int = 1

    def tvp_spec(self) -> TvpVarSpec:
        return TvpVarSpec(
            lags=self.lags,
            bandwidth=self.bandwidth,
            shrinkage=self.shrinkage,
            own_lag_mean=self.own_lag_mean,
            n_draws=self.n_draws,
            stability_cap=self.stability_cap,
            seed=self.seed,
            weight_norm=self.weight_norm,
        )

    def hub_rule(self) -> HubRule:
        return HubRule(self.top_k, self.bottom_k)

    def validate(self) -> "PipelineConfig":
        """Check paths and ranges before any computation."""
        if (self.firm_vix is None) == (self.chains is None):
            raise ConfigError("give exactly one of inputs.firm_vix and inputs.chains")
        for key in ("caps", "membership"):
            if getattr(self, key) is None:
                raise ConfigError(f"inputs.{key} is required")
        for key in INPUT_KEYS:
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"inputs.{key}: no such file {p}")
        checks = {
            "target_days": self.target_days >= 1,
            "zero_bid_stop": self.zero_bid_stop >= 1,
            "fill_limit": self.fill_limit >= 0,
            "stride": self.stride >= 1,
            "horizon": self.horizon >= 0,
            "top_k": self.top_k >= 0,
            "bottom_k": self.bottom_k >= 0,
            "workers": self.workers >= 1,
            "horizons": all(h >= 0 for h in self.horizons),
            "gap_policy": self.gap_policy in ("raise", "drop"),
            "share": self.share in ("ratio", "daily"),
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"out-of-range setting(s): {', '.join(bad)}")
        try:
            self.tvp_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def hash(self) -> str:
        """Digest of the output-relevant settings (worker count and output path excluded)."""
        d = {k: v for k, v in asdict(self).items() if k not in NON_OUTPUT_KEYS}
        for key in INPUT_KEYS:
            d[key] = None if d[key] is None else sha256_file(d[key])
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=list).encode()).hexdigest()


# INI layout: section -> {key: field name}
_SECTIONS = {
    "inputs": {k: k for k in INPUT_KEYS},
    "vix": {"target_days": "target_days", "zero_bid_stop": "zero_bid_stop"},
    "panel": {"fill_limit": "fill_limit", "gap_policy": "gap_policy"},
    "tvp_var": {
        k: k for k in ("lags", "bandwidth", "shrinkage", "own_lag_mean", "n_draws", "stability_cap", "weight_norm", "seed", "stride")
    },
    "network": {"horizon": "horizon"},
    "classify": {"top_k": "top_k", "bottom_k": "bottom_k", "share": "share", "subnetworks": "subnetworks"},
    "predict": {"targets": "targets", "controls": "controls", "horizons": "horizons", "hac": "hac", "thresholds": "thresholds"},
    "run": {"out": "out", "workers": "workers", "strict": "strict"},
}


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(name: str, text: str):
    text = text.strip()
    if name in INPUT_KEYS or name == "bandwidth":
        if not text or text.lower() == "none":
            return None
        return float(text) if name == "bandwidth" else text
    if name in ("subnetworks", "hac", "strict"):
        return _parse_bool(text)
    if name == "targets":
        return tuple(_split(text))
    if name == "horizons":
        return tuple(int(h) for h in _split(text))
    if name == "controls":
        # ID or ID:transform
        return tuple((c.split(":")[0].strip(), (c.split(":") + ["level"])[1].strip()) for c in _split(text))
    if name == "thresholds":
        return tuple(sorted((k.strip(), float(v)) for k, v in (t.split(":") for t in _split(text))))
    default = next(f for f in fields(PipelineConfig) if f.name == name).default
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def load_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Read an INI file, apply ``section.key`` overrides and resolve paths.

    Relative input paths resolve against the config file's directory; the
    output directory resolves against the working directory.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"no such config file {path}")
        parser.read(path)
    overrides = dict(overrides or {})
    values: dict[str, object] = {}
    raw: dict[str, str] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, text in parser.items(section):
            raw[f"{section}.{key}"] = text
    for dotted, text in overrides.items():
        raw[dotted] = text
    for dotted, text in raw.items():
        section, _, key = dotted.partition(".")
        if key not in _SECTIONS.get(section, {}):
            raise ConfigError(f"unknown setting {dotted}")
        name = _SECTIONS[section][key]
        try:
            values[name] = _coerce(name, text)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{dotted}: {exc}") from None
    from_file = {k for k in raw if k not in overrides}
    for key in INPUT_KEYS:
        p = values.get(key)
        if p is None or Path(str(p)).is_absolute():
            continue
        anchor = path.parent if path is not None and f"inputs.{key}" in from_file else Path.cwd()
        values[key] = str((anchor / str(p)).resolve())
    if "out" in values:
        values["out"] = str(Path(str(values["out"])).resolve())
    try:
        cfg = PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


@dataclass
class StageRecord:
    name: str
    rows: int
    warnings: list[str] = field(default_factory=list)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    config: dict
    inputs: dict[str, dict]
    started: str
    finished: str | None = None
    status: str = "running"
    stages: list[StageRecord] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True, default=list)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Pipeline:
    """Run the stages in order, writing every output atomically.

    Outputs land in ``config.out``; ``manifest.json`` is written last, or
    with ``status = "failed"`` when a stage raises.
    """

    def __init__(self, config: PipelineConfig):
        self.cfg = config.validate()
        self.out = Path(config.out)
        inputs = {}
        for key in INPUT_KEYS:
            p = getattr(config, key)
            if p is not None:
                inputs[key] = {"path": p, "sha256": sha256_file(p)}
        cfg_dict = asdict(config)
        self.manifest = RunManifest(config.hash(), __version__, cfg_dict, inputs, _now())

    def _write(self, name: str, frame: pd.DataFrame, index: bool = True) -> None:
        path = write_frame(self.out / name, frame, index)
        self.manifest.outputs[name] = sha256_file(path)

    def _write_text(self, name: str, text: str) -> None:
        path = atomic_write_text(self.out / name, text)
        self.manifest.outputs[name] = sha256_file(path)

    def _stage(self, name: str, rows: int, warnings: Sequence[str] = ()) -> None:
        self.manifest.stages.append(StageRecord(name, int(rows), [str(w) for w in warnings]))
        log.info("stage %s: %d rows, %d warnings", name, rows, len(warnings))

    def run(self) -> RunManifest:
        self.out.mkdir(parents=True, exist_ok=True)
        stage = "start"
        try:
            stage = "vix"
            vix = self._vix()
            stage = "panel"
            panel = self._panel(vix)
            stage = "network"
            series = self._network(panel, "connectedness")
            stage = "classify"
            cls = self._classify(series)
            subs = {}
            if self.cfg.subnetworks:
                stage = "subnetworks"
                subs = self._subnetworks(panel, cls)
            if self.cfg.macro is not None:
                stage = "predict"
                self._predict(series, subs)
        except Exception as exc:
            self.manifest.status = "failed"
            self.manifest.error = f"{stage}: {type(exc).__name__}: {exc}"
            self.manifest.finished = _now()
            atomic_write_text(self.out / "manifest.json", self.manifest.to_json())
            raise StageError(stage, exc, self.manifest) from exc
        self.manifest.status = "ok"
        self.manifest.finished = _now()
        atomic_write_text(self.out / "manifest.json", self.manifest.to_json())
        return self.manifest

    def _vix(self) -> pd.DataFrame:
        cfg = self.cfg
        if cfg.firm_vix is not None:
            frame, issues = read_firm_vix(cfg.firm_vix, cfg.strict)
            self._stage("vix", len(frame), issues)
            return frame
        chains, issues = read_chains(cfg.chains, cfg.strict)
        frame, failures = compute_firm_vix(chains, VixConfig(zero_bid_stop=cfg.zero_bid_stop, target_days=cfg.target_days))
        if frame.empty:
            raise OptionsError(f"no firm-date produced a VIX: {failures[:3]}")
        self._write("firm_vix.csv", frame, index=False)
        self._stage("vix", len(frame), [str(i) for i in issues] + failures)
        return frame

    def _panel(self, vix: pd.DataFrame) -> IndustryPanel:
        cfg = self.cfg
        caps, cap_issues = read_caps(cfg.caps, cfg.strict)
        members, mem_issues = read_membership(cfg.membership, cfg.strict)
        panel = build_panel(vix, caps, members, fill_limit=cfg.fill_limit, gap_policy=cfg.gap_policy)
        self._write("panel.csv", panel.to_frame())
        self._stage("panel", panel.T, [str(i) for i in cap_issues + mem_issues])
        return panel

    def _network(self, panel: IndustryPanel, name: str) -> ConnectednessSeries:
        series, warnings = run_network(
            panel.values, panel.industries, panel.dates, self.cfg.tvp_spec(), self.cfg.horizon, self.cfg.stride, self.cfg.workers
        )
        self._write(f"{name}.csv", series.to_frame())
        self._write(f"{name}_adjacency.csv", adjacency_long(series), index=False)
        self._stage(name, len(series), warnings)
        return series

    def _classify(self, series: ConnectednessSeries) -> HubClassification:
        cfg = self.cfg
        calendar = PhaseCalendar.from_csv(cfg.calendar) if cfg.calendar else PhaseCalendar.default()
        table = phase_averages(series, calendar, skip_empty=True, share=cfg.share)
        self._write("phase_table.csv", flatten_columns(table))
        cls = classify_hubs(table[("total", "AGG")], cfg.hub_rule())
        self._write_text("classification.json", cls.to_json() + "\n")
        present = sorted({p for p, _ in table.columns} - {"total"})
        self._stage("classify", len(table), [f"phases present: {', '.join(present)}"])
        return cls

    def _subnetworks(self, panel: IndustryPanel, cls: HubClassification) -> dict[str, ConnectednessSeries]:
        out = {}
        for which in ("hubs", "non_hubs"):
            group = cls.hubs if which == "hubs" else cls.non_hubs
            if len(group) < 2:
                self._stage(f"network_{which}", 0, [f"{len(group)} {which}: no sub-network"])
                continue
            out[which] = self._network(subnetwork_panel(panel, cls, which), f"connectedness_{which}")
        return out

    def _predict(self, series: ConnectednessSeries, subs: Mapping[str, ConnectednessSeries]) -> None:
        cfg = self.cfg
        frame, issues = read_macro(cfg.macro, cfg.strict)
        macro = macro_from_frame(frame, dict(cfg.controls))
        missing = [m for m in list(cfg.targets) + [c for c, _ in cfg.controls] if m not in macro]
        if missing:
            raise InputError(f"macro file lacks series {missing}")
        c_sets = {"C": [monthly_aggregate(series.total_stat(), "C")]}
        if set(subs) == {"hubs", "non_hubs"}:
            c_sets["C_hubs"] = [
                monthly_aggregate(subs["hubs"].total_stat(), "C_hubs"),
                monthly_aggregate(subs["non_hubs"].total_stat(), "C_non_hubs"),
            ]
        monthly = pd.concat([s.values for group in c_sets.values() for s in group], axis=1)
        monthly.index = monthly.index.astype(str).rename("period")
        self._write("connectedness_monthly.csv", monthly)
        controls = [macro[c] for c, _ in cfg.controls]
        thresholds = dict(cfg.thresholds)
        payload, rows = {}, 0
        for tid in cfg.targets:
            targets = [macro[tid]]
            if tid in thresholds:
                targets += list(threshold_decompose(macro[tid], thresholds[tid]))
            for y in targets:
                for set_name, cs in c_sets.items():
                    suite = horizon_suite(y, cs + controls, cfg.horizons, hac=True)
                    key = f"{y.id}__{set_name}"
                    self._write(f"regression_{key}.csv", results_table(suite, hac=cfg.hac).rename_axis("term"))
                    payload[key] = json.loads(results_json(suite, hac=cfg.hac))
                    rows += len(suite)
        self._write_text("regressions.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
        self._stage("predict", rows, [str(i) for i in issues])


def compute_firm_vix(chains: Mapping, config: VixConfig) -> tuple[pd.DataFrame, list[str]]:
    """Firm VIX per ``(firm, date)``; failures are reported and skipped."""
    rows, failures = [], []
    for (firm, day), group in sorted(chains.items()):
        try:
            pt = firm_vix(group, config)
        except OptionsError as exc:
            failures.append(f"{firm} {day}: {type(exc).__name__}: {exc}")
            continue
        rows.append((pt.firm_id, pt.date, pt.vix))
    return pd.DataFrame(rows, columns=["firm_id", "date", "vix"]), failures


def run_network(
    values: np.ndarray,
    labels: Sequence[str],
    dates: pd.DatetimeIndex,
    spec: TvpVarSpec,
    H: int,
    stride: int = 1,
    workers: int = 1,
) -> tuple[ConnectednessSeries, list[str]]:
    """Connectedness at every ``stride``-th estimable date.

    Dates that fail are reported as warnings. If every date fails the first
    error is raised.
    """
    indices = list(range(spec.lags, len(values), stride))
    series, errors = network_path(values, spec, H, indices, labels, dates, workers)
    if errors and len(errors) == len(indices):
        raise next(iter(errors.values()))
    warnings = [f"{dates[k].date()}: {type(e).__name__}: {e}" for k, e in sorted(errors.items())]
    return series, warnings + series.warnings


def adjacency_long(series: ConnectednessSeries) -> pd.DataFrame:
    """Posterior-mean adjacency in long form: rows receive, columns transmit."""
    T, N, _ = series.adjacency.shape
    dates = pd.DatetimeIndex(series.dates).strftime("%Y-%m-%d") if isinstance(series.dates, pd.DatetimeIndex) else series.dates
    labels = np.array(series.labels)
    return pd.DataFrame(
        {
            "date": np.repeat(np.asarray(dates), N * N),
            "receiver": np.tile(np.repeat(labels, N), T),
            "transmitter": np.tile(labels, T * N),
            "weight": series.adjacency.reshape(-1),
        }
    )


NUMERICAL_ERRORS = (EstimationError, np.linalg.LinAlgError, FloatingPointError)
