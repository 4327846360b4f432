"""Experiment config files: schema, strict validation, CLI overrides.

Configs are YAML mappings (see docs/config.md for the full schema). Parsing
is strict: unknown keys, missing required keys, and out-of-range values all
raise ConfigError with the offending path, so a typo fails fast instead of
silently running with a default. The compose expression is parsed here too,
and every base name it references must be declared in the config.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import yaml

from . import dsl
from .errors import ConfigError
from .gaussians import GaussianComponent, GaussianMixtureDensity
from .gfn_classifier import ClassifierTrainConfig
from .gfn_train import TrainBaseConfig
from .sde import VeSde
from .sde_classifier import TimeClassifierTrainConfig

_DOMAINS = ("grid", "gaussian1d", "gaussian2d")


def _require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, path: str, allowed: set[str], required: set[str]) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    missing = sorted(required - set(mapping))
    if missing:
        raise ConfigError(f"{path}: missing required key(s) {', '.join(missing)}")


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _as_float(value, path: str, low: float | None = None, high: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    out = float(value)
    if low is not None and out <= low:
        raise ConfigError(f"{path}: must be > {low}, got {out}")
    if high is not None and out >= high:
        raise ConfigError(f"{path}: must be < {high}, got {out}")
    return out


def _as_str(value, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{path}: expected a non-empty string, got {value!r}")
    return value


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    return value


def _as_hidden(value, path: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of layer widths")
    return tuple(_as_int(v, f"{path}[{i}]", minimum=1) for i, v in enumerate(value))


def _base_name(value, path: str, seen: set[str]) -> str:
    name = _as_str(value, path)
    if dsl._IDENT_RE.fullmatch(name) is None or name in dsl._KEYWORDS:
        raise ConfigError(f"{path}: {name!r} is not a usable base name")
    if name in seen:
        raise ConfigError(f"{path}: duplicate base name {name!r}")
    seen.add(name)
    return name


# ---------------------------------------------------------------------------
# Grid section


@dataclass(frozen=True)
class GridBaseSpec:
    name: str
    centers: tuple[tuple[int, int], ...]
    sigmas: tuple[float, ...]
    floor: float = 0.01
    beta: float = 1.0


@dataclass(frozen=True)
class GridSection:
    height: int
    bases: tuple[GridBaseSpec, ...]
    train: TrainBaseConfig
    classifier: ClassifierTrainConfig
    n_observations: int


def _parse_grid_base(raw, path: str, seen: set[str]) -> GridBaseSpec:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, {"name", "centers", "sigmas", "floor", "beta"},
                {"name", "centers", "sigmas"})
    name = _base_name(raw["name"], f"{path}.name", seen)
    centers_raw = raw["centers"]
    if not isinstance(centers_raw, list) or not centers_raw:
        raise ConfigError(f"{path}.centers: expected a non-empty list of [row, col] pairs")
    centers = []
    for i, c in enumerate(centers_raw):
        if not isinstance(c, list) or len(c) != 2:
            raise ConfigError(f"{path}.centers[{i}]: expected a [row, col] pair")
        centers.append((_as_int(c[0], f"{path}.centers[{i}][0]", 0),
                        _as_int(c[1], f"{path}.centers[{i}][1]", 0)))
    sigmas_raw = raw["sigmas"]
    if not isinstance(sigmas_raw, list) or len(sigmas_raw) != len(centers):
        raise ConfigError(f"{path}.sigmas: need one sigma per center")
    sigmas = tuple(_as_float(s, f"{path}.sigmas[{i}]", low=0.0)
                   for i, s in enumerate(sigmas_raw))
    return GridBaseSpec(
        name=name,
        centers=tuple(centers),
        sigmas=sigmas,
        floor=_as_float(raw.get("floor", 0.01), f"{path}.floor", low=-1e-300),
        beta=_as_float(raw.get("beta", 1.0), f"{path}.beta", low=0.0),
    )


_TRAIN_KEYS = {"kind", "steps", "batch_size", "lr", "logz_lr", "explore_eps",
               "hidden", "activation", "eval_every"}
_GRID_CLF_KEYS = {"n", "steps", "batch_per_base", "lr", "ema_beta", "warmup_frac",
                  "hidden", "activation", "alpha_feature", "alpha_logit_bound",
                  "mc_threshold", "mc_samples", "eval_every"}


def _parse_train(raw, path: str, seed: int) -> TrainBaseConfig:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, _TRAIN_KEYS, set())
    cfg = TrainBaseConfig(seed=seed)
    if "kind" in raw:
        kind = _as_str(raw["kind"], f"{path}.kind")
        if kind not in ("tabular", "mlp"):
            raise ConfigError(f"{path}.kind: expected tabular or mlp, got {kind!r}")
        cfg = replace(cfg, kind=kind)
    for key, parser in (("steps", lambda v, p: _as_int(v, p, 1)),
                        ("batch_size", lambda v, p: _as_int(v, p, 1)),
                        ("eval_every", lambda v, p: _as_int(v, p, 0)),
                        ("lr", lambda v, p: _as_float(v, p, 0.0)),
                        ("logz_lr", lambda v, p: _as_float(v, p, 0.0)),
                        ("explore_eps", lambda v, p: _as_float(v, p, -1e-300, 1.0))):
        if key in raw:
            cfg = replace(cfg, **{key: parser(raw[key], f"{path}.{key}")})
    if "hidden" in raw:
        cfg = replace(cfg, hidden=_as_hidden(raw["hidden"], f"{path}.hidden"))
    if "activation" in raw:
        cfg = replace(cfg, activation=_as_str(raw["activation"], f"{path}.activation"))
    return cfg


def _parse_grid_classifier(raw, path: str, seed: int) -> tuple[ClassifierTrainConfig, int]:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, _GRID_CLF_KEYS, set())
    cfg = ClassifierTrainConfig(seed=seed)
    n = _as_int(raw.get("n", 2), f"{path}.n", 1)
    for key, parser in (("steps", lambda v, p: _as_int(v, p, 1)),
                        ("batch_per_base", lambda v, p: _as_int(v, p, 1)),
                        ("mc_threshold", lambda v, p: _as_int(v, p, 1)),
                        ("mc_samples", lambda v, p: _as_int(v, p, 1)),
                        ("eval_every", lambda v, p: _as_int(v, p, 0)),
                        ("lr", lambda v, p: _as_float(v, p, 0.0)),
                        ("ema_beta", lambda v, p: _as_float(v, p, -1e-300, 1.0)),
                        ("warmup_frac", lambda v, p: _as_float(v, p, -1e-300, 1.0)),
                        ("alpha_logit_bound", lambda v, p: _as_float(v, p, 0.0))):
        if key in raw:
            cfg = replace(cfg, **{key: parser(raw[key], f"{path}.{key}")})
    if "hidden" in raw:
        cfg = replace(cfg, hidden=_as_hidden(raw["hidden"], f"{path}.hidden"))
    if "activation" in raw:
        cfg = replace(cfg, activation=_as_str(raw["activation"], f"{path}.activation"))
    if "alpha_feature" in raw:
        cfg = replace(cfg, alpha_feature=_as_bool(raw["alpha_feature"], f"{path}.alpha_feature"))
    return cfg, n


def _parse_grid(raw, path: str, seed: int) -> GridSection:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, {"height", "bases", "train", "classifier"}, {"height", "bases"})
    height = _as_int(raw["height"], f"{path}.height", 2)
    if not isinstance(raw["bases"], list) or len(raw["bases"]) < 1:
        raise ConfigError(f"{path}.bases: expected a non-empty list")
    seen: set[str] = set()
    bases = tuple(_parse_grid_base(b, f"{path}.bases[{i}]", seen)
                  for i, b in enumerate(raw["bases"]))
    for spec in bases:
        for i, (r, c) in enumerate(spec.centers):
            if r >= height or c >= height:
                raise ConfigError(
                    f"{path}.bases: {spec.name} center {i} = ({r},{c}) outside a "
                    f"{height}x{height} grid")
    train = _parse_train(raw.get("train", {}), f"{path}.train", seed)
    classifier, n = _parse_grid_classifier(raw.get("classifier", {}), f"{path}.classifier", seed)
    return GridSection(height, bases, train, classifier, n)


# ---------------------------------------------------------------------------
# Gaussian section


@dataclass(frozen=True)
class GaussianBaseSpec:
    name: str
    density: GaussianMixtureDensity


@dataclass(frozen=True)
class SamplingSpec:
    steps: int = 1000
    n_samples: int = 50000
    nodes: int | None = 33
    oversample: int = 4
    span: float = 10.0
    log_tol: float = 1e-7


@dataclass(frozen=True)
class GaussianSection:
    dim: int
    bases: tuple[GaussianBaseSpec, ...]
    sde: VeSde
    sampling: SamplingSpec
    classifier: TimeClassifierTrainConfig
    n_observations: int


def _parse_gaussian_base(raw, path: str, dim: int, seen: set[str]) -> GaussianBaseSpec:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, {"name", "weights", "means", "variances"}, {"name", "means", "variances"})
    name = _base_name(raw["name"], f"{path}.name", seen)
    means_raw = raw["means"]
    vars_raw = raw["variances"]
    if not isinstance(means_raw, list) or not means_raw:
        raise ConfigError(f"{path}.means: expected a non-empty list")
    if not isinstance(vars_raw, list) or len(vars_raw) != len(means_raw):
        raise ConfigError(f"{path}.variances: need one entry per mean")
    components = []
    for i, (mu, var) in enumerate(zip(means_raw, vars_raw)):
        if dim == 1:
            mean = [_as_float(mu, f"{path}.means[{i}]")]
            variance = [_as_float(var, f"{path}.variances[{i}]", low=0.0)]
        else:
            if not isinstance(mu, list) or len(mu) != dim:
                raise ConfigError(f"{path}.means[{i}]: expected a length-{dim} vector")
            if not isinstance(var, list) or len(var) != dim:
                raise ConfigError(
                    f"{path}.variances[{i}]: expected a length-{dim} diagonal")
            mean = [_as_float(v, f"{path}.means[{i}][{j}]") for j, v in enumerate(mu)]
            variance = [_as_float(v, f"{path}.variances[{i}][{j}]", low=0.0)
                        for j, v in enumerate(var)]
        components.append(GaussianComponent(np.array(mean), np.array(variance)))
    weights_raw = raw.get("weights", [1.0 / len(components)] * len(components))
    if not isinstance(weights_raw, list) or len(weights_raw) != len(components):
        raise ConfigError(f"{path}.weights: need one weight per component")
    weights = np.array([_as_float(w, f"{path}.weights[{i}]", low=0.0)
                        for i, w in enumerate(weights_raw)])
    total = weights.sum()
    if not np.isclose(total, 1.0, atol=1e-9):
        raise ConfigError(f"{path}.weights: must sum to 1, got {total}")
    return GaussianBaseSpec(name, GaussianMixtureDensity(weights / total, tuple(components)))


_TIME_CLF_KEYS = {"n", "steps", "batch_per_base", "lr", "ema_beta", "warmup_frac",
                  "hidden", "activation", "n_time_features", "traj_per_base",
                  "traj_steps", "mc_threshold", "mc_samples", "eval_every"}


def _parse_time_classifier(raw, path: str, seed: int) -> tuple[TimeClassifierTrainConfig, int]:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, _TIME_CLF_KEYS, set())
    cfg = TimeClassifierTrainConfig(seed=seed)
    n = _as_int(raw.get("n", 2), f"{path}.n", 1)
    for key, parser in (("steps", lambda v, p: _as_int(v, p, 1)),
                        ("batch_per_base", lambda v, p: _as_int(v, p, 1)),
                        ("n_time_features", lambda v, p: _as_int(v, p, 2)),
                        ("traj_per_base", lambda v, p: _as_int(v, p, 1)),
                        ("traj_steps", lambda v, p: _as_int(v, p, 1)),
                        ("mc_threshold", lambda v, p: _as_int(v, p, 1)),
                        ("mc_samples", lambda v, p: _as_int(v, p, 1)),
                        ("eval_every", lambda v, p: _as_int(v, p, 0)),
                        ("lr", lambda v, p: _as_float(v, p, 0.0)),
                        ("ema_beta", lambda v, p: _as_float(v, p, -1e-300, 1.0)),
                        ("warmup_frac", lambda v, p: _as_float(v, p, -1e-300, 1.0))):
        if key in raw:
            cfg = replace(cfg, **{key: parser(raw[key], f"{path}.{key}")})
    if "hidden" in raw:
        cfg = replace(cfg, hidden=_as_hidden(raw["hidden"], f"{path}.hidden"))
    if "activation" in raw:
        cfg = replace(cfg, activation=_as_str(raw["activation"], f"{path}.activation"))
    return cfg, n


def _parse_sampling(raw, path: str) -> SamplingSpec:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, {"steps", "n_samples", "nodes", "oversample", "span", "log_tol"}, set())
    spec = SamplingSpec()
    for key, parser in (("steps", lambda v, p: _as_int(v, p, 1)),
                        ("n_samples", lambda v, p: _as_int(v, p, 1)),
                        ("oversample", lambda v, p: _as_int(v, p, 1)),
                        ("span", lambda v, p: _as_float(v, p, 0.0)),
                        ("log_tol", lambda v, p: _as_float(v, p, 0.0))):
        if key in raw:
            spec = replace(spec, **{key: parser(raw[key], f"{path}.{key}")})
    if "nodes" in raw:
        nodes = raw["nodes"]
        spec = replace(spec, nodes=None if nodes is None else _as_int(nodes, f"{path}.nodes", 3))
    return spec


def _parse_gaussian(raw, path: str, dim: int, seed: int) -> GaussianSection:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, {"bases", "sde", "sampling", "classifier"}, {"bases"})
    if not isinstance(raw["bases"], list) or len(raw["bases"]) < 1:
        raise ConfigError(f"{path}.bases: expected a non-empty list")
    seen: set[str] = set()
    bases = tuple(_parse_gaussian_base(b, f"{path}.bases[{i}]", dim, seen)
                  for i, b in enumerate(raw["bases"]))
    sde_raw = _require_mapping(raw.get("sde", {}), f"{path}.sde")
    _check_keys(sde_raw, f"{path}.sde", {"sigma_min", "sigma_max", "t_max"}, set())
    sde = VeSde(
        sigma_min=_as_float(sde_raw.get("sigma_min", 0.01), f"{path}.sde.sigma_min", low=0.0),
        sigma_max=_as_float(sde_raw.get("sigma_max", 10.0), f"{path}.sde.sigma_max", low=0.0),
        t_max=_as_float(sde_raw.get("t_max", 1.0), f"{path}.sde.t_max", low=0.0),
    )
    sampling = _parse_sampling(raw.get("sampling", {}), f"{path}.sampling")
    classifier, n = _parse_time_classifier(raw.get("classifier", {}), f"{path}.classifier", seed)
    return GaussianSection(dim, bases, sde, sampling, classifier, n)


# ---------------------------------------------------------------------------
# Report section and top level


@dataclass(frozen=True)
class ReportSpec:
    alphas: tuple[float, ...] = (0.5, 0.05)
    gammas: tuple[float, ...] = (0.1, 0.5)
    x_min: float = -6.0
    x_max: float = 6.0
    n_points: int = 1201


def _parse_report(raw, path: str) -> ReportSpec:
    raw = _require_mapping(raw, path)
    _check_keys(raw, path, {"alphas", "gammas", "x_min", "x_max", "n_points"}, set())
    spec = ReportSpec()
    if "alphas" in raw:
        if not isinstance(raw["alphas"], list):
            raise ConfigError(f"{path}.alphas: expected a list")
        spec = replace(spec, alphas=tuple(
            _as_float(a, f"{path}.alphas[{i}]", low=0.0, high=1.0)
            for i, a in enumerate(raw["alphas"])))
    if "gammas" in raw:
        if not isinstance(raw["gammas"], list):
            raise ConfigError(f"{path}.gammas: expected a list")
        spec = replace(spec, gammas=tuple(
            _as_float(g, f"{path}.gammas[{i}]", low=0.0)
            for i, g in enumerate(raw["gammas"])))
    for key, parser in (("x_min", _as_float), ("x_max", _as_float)):
        if key in raw:
            spec = replace(spec, **{key: parser(raw[key], f"{path}.{key}")})
    if "n_points" in raw:
        spec = replace(spec, n_points=_as_int(raw["n_points"], f"{path}.n_points", 3))
    if spec.x_min >= spec.x_max:
        raise ConfigError(f"{path}: x_min must be below x_max")
    return spec


@dataclass(frozen=True)
class ExperimentConfig:
    domain: str
    seed: int
    out_dir: str
    compose: str | None
    grid: GridSection | None
    gaussian: GaussianSection | None
    report: ReportSpec
    guidance_scale: float = 1.0

    @property
    def base_names(self) -> tuple[str, ...]:
        section = self.grid if self.domain == "grid" else self.gaussian
        return tuple(b.name for b in section.bases)

    def compose_expr(self) -> dsl.Node:
        if self.compose is None or not self.compose.strip():
            raise ConfigError("no compose expression: set compose: in the config or pass --expr")
        try:
            expr = dsl.parse(self.compose)
        except SyntaxError as exc:
            raise ConfigError(f"compose: {exc}") from exc
        unknown = sorted(dsl.referenced_bases(expr) - set(self.base_names))
        if unknown:
            raise ConfigError(f"compose references undeclared base(s): {', '.join(unknown)}")
        return expr


_TOP_KEYS = {"domain", "seed", "out", "compose", "grid", "gaussian", "report",
             "guidance_scale"}


def parse_config(raw: dict, validate_compose: bool = True) -> ExperimentConfig:
    raw = _require_mapping(raw, "config")
    _check_keys(raw, "config", _TOP_KEYS, {"domain", "seed", "out"})
    domain = _as_str(raw["domain"], "config.domain")
    if domain not in _DOMAINS:
        raise ConfigError(f"config.domain: expected one of {', '.join(_DOMAINS)}, got {domain!r}")
    seed = _as_int(raw["seed"], "config.seed", 0)
    out_dir = _as_str(raw["out"], "config.out")
    compose = None
    if "compose" in raw and raw["compose"] is not None:
        compose = _as_str(raw["compose"], "config.compose")
    grid = gaussian = None
    if domain == "grid":
        if "grid" not in raw:
            raise ConfigError("config: domain grid needs a grid: section")
        if "gaussian" in raw:
            raise ConfigError("config: gaussian: section present but domain is grid")
        grid = _parse_grid(raw["grid"], "config.grid", seed)
    else:
        if "gaussian" not in raw:
            raise ConfigError(f"config: domain {domain} needs a gaussian: section")
        if "grid" in raw:
            raise ConfigError(f"config: grid: section present but domain is {domain}")
        dim = 1 if domain == "gaussian1d" else 2
        gaussian = _parse_gaussian(raw["gaussian"], "config.gaussian", dim, seed)
    report = _parse_report(raw.get("report", {}), "config.report")
    guidance_scale = _as_float(raw.get("guidance_scale", 1.0), "config.guidance_scale", low=0.0)
    config = ExperimentConfig(domain, seed, out_dir, compose, grid, gaussian,
                              report, guidance_scale)
    if validate_compose and compose is not None:
        config.compose_expr()
    return config


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"config {path} is empty")
    return parse_config(raw)


def apply_overrides(
    config: ExperimentConfig,
    seed: int | None = None,
    out: str | None = None,
    expr: str | None = None,
    guidance_scale: float | None = None,
) -> ExperimentConfig:
    """Fold command-line flags into a loaded config (flags win)."""
    if seed is not None:
        config = replace(config, seed=seed)
        if config.grid is not None:
            config = replace(config, grid=replace(
                config.grid,
                train=replace(config.grid.train, seed=seed),
                classifier=replace(config.grid.classifier, seed=seed)))
        if config.gaussian is not None:
            config = replace(config, gaussian=replace(
                config.gaussian, classifier=replace(config.gaussian.classifier, seed=seed)))
    if out is not None:
        config = replace(config, out_dir=out)
    if expr is not None:
        config = replace(config, compose=expr)
        config.compose_expr()
    if guidance_scale is not None:
        config = replace(config, guidance_scale=guidance_scale)
    return config
