"""Command-line experiment driver.

Five subcommands cover the full workflow: train-base fits the base policies,
train-classifier fits the guidance classifier, compose produces the composed
distribution (enumerated table on the grid, sample dumps for diffusion),
evaluate writes a metrics JSON against exact ground truth, and report renders
figures. Every run is config-in, files-out: one YAML config (docs/config.md)
plus a handful of override flags, all outputs written atomically under the
config's output directory. Failures exit nonzero with a one-line error JSON
on stderr.

Heavy imports happen inside the command bodies so --threads can pin the BLAS
thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _configure_threads(n: int | None) -> None:
    if n is None:
        return
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gencompose",
        description="Compose pre-trained generative models via classifier guidance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("train-base", "train base models from the config's reward specs"),
        ("train-classifier", "train the guidance classifier over the trained bases"),
        ("compose", "realize the compose expression (tables or sample dumps)"),
        ("evaluate", "write metrics JSON comparing results to exact ground truth"),
        ("report", "render figures (grid heatmaps, 1D density overlays)"),
    ):
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("--config", required=True, help="path to the YAML experiment config")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
        cmd.add_argument("--out", default=None, help="override output directory")
        cmd.add_argument("--expr", default=None, help="override compose expression")
        cmd.add_argument("--guidance-scale", type=float, default=None,
                         dest="guidance_scale", help="scale on the guidance term (diffusion)")
        cmd.add_argument("--threads", type=int, default=None,
                         help="pin BLAS/OpenMP thread count")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_threads(args.threads)
    from .errors import GencomposeError

    try:
        from .config import apply_overrides, load_config

        config = apply_overrides(
            load_config(args.config),
            seed=args.seed,
            out=args.out,
            expr=args.expr,
            guidance_scale=args.guidance_scale,
        )
        summary = _COMMANDS[args.command](config)
    except GencomposeError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except SyntaxError as exc:
        print(json.dumps({"error": "SyntaxError", "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Shared plumbing


def _write_json(path: str, payload: dict) -> None:
    from .tables import _atomic_write_bytes

    _atomic_write_bytes(path, (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode())


def _write_history_csv(path: str, rows: list[dict]) -> None:
    from .tables import _atomic_write_bytes

    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for key in columns:
            value = row.get(key, "")
            if isinstance(value, float):
                cells.append(f"{value:.10g}")
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def _auto_eval_every(cfg, steps: int):
    """An eval_every of 0 means: pick a cadence that yields ~20 curve points."""
    if cfg.eval_every == 0:
        return replace(cfg, eval_every=max(1, steps // 20))
    return cfg


def _grid_base_ckpt(config, name: str) -> str:
    return os.path.join(config.out_dir, f"base_{name}.ckpt")


def _classifier_ckpt(config) -> str:
    return os.path.join(config.out_dir, "classifier.ckpt")


def _load_grid_bases(config):
    """Base ForwardPolicy objects from checkpoints, in declared order."""
    from .errors import ConfigError, MissingCheckpoint
    from .grid import GridDag, ForwardPolicy
    from .nn import load_checkpoint, load_mlp

    dag = GridDag(config.grid.height)
    policies = []
    for spec in config.grid.bases:
        path = _grid_base_ckpt(config, spec.name)
        if not os.path.exists(path):
            raise MissingCheckpoint(f"{path} not found: run train-base first")
        header, arrays = load_checkpoint(path)
        if header.get("role") != "grid_policy":
            raise ConfigError(f"{path} is not a grid policy checkpoint")
        if int(header["height"]) != config.grid.height:
            raise ConfigError(
                f"{path} was trained at height {header['height']}, config says "
                f"{config.grid.height}")
        if header.get("kind") == "tabular":
            policies.append(ForwardPolicy(dag, arrays[0]))
        else:
            net, _ = load_mlp(path)
            policies.append(ForwardPolicy.from_mlp(dag, net))
    return dag, policies


def _grid_base_tables(policies):
    from .grid import enumerate_distribution

    return [enumerate_distribution(p) for p in policies]


def _gaussian_dms(config):
    from .sde import DiffusedMixture

    section = config.gaussian
    return [DiffusedMixture(spec.density, section.sde) for spec in section.bases]


def _exact_grid_chain(plan, policies, names):
    """Run every plan stage with an exact oracle; returns per-stage policies."""
    from .gfn_classifier import ClassifierOracle
    from .gfn_compose import composed_policy

    by_name = dict(zip(names, policies))
    outputs = []

    def resolve(ref: str):
        if ref.startswith("@stage"):
            return outputs[int(ref[len("@stage"):])]
        return by_name[ref]

    for stage in plan.stages:
        stage_policies = [resolve(ref) for ref in stage.bases]
        oracle = ClassifierOracle(stage_policies)  # self-check runs before anything long
        outputs.append(composed_policy(stage_policies, oracle, stage.observations,
                                       alpha=stage.alpha))
    return outputs


def _learned_stage(plan, declared: tuple[str, ...]):
    """Map a single-stage plan onto a classifier trained over all declared bases.

    Labels translate through declared order; the interpolated binary operators
    tie alpha to label 1, so a reversed operand order flips it.
    """
    from .errors import ConfigError

    if len(plan.stages) != 1:
        raise ConfigError(
            "learned guidance covers single-stage expressions; chained expressions "
            "run exactly (compose writes the exact table for them)")
    stage = plan.stages[0]
    if sorted(stage.bases) != sorted(declared):
        raise ConfigError(
            f"learned guidance needs the expression to use every declared base "
            f"exactly once; declared {list(declared)}, expression uses {list(stage.bases)}")
    index = {name: i for i, name in enumerate(declared)}
    observations = tuple(index[stage.bases[y - 1]] + 1 for y in stage.observations)
    alpha = stage.alpha
    if alpha is not None and stage.bases[0] != declared[0]:
        alpha = 1.0 - alpha
    return observations, alpha


def _sampling_stage(plan):
    """The one stage a diffusion sampler realizes; chained plans are exact-only."""
    from .errors import ConfigError

    if len(plan.stages) != 1:
        raise ConfigError(
            "diffusion sampling realizes one guidance stage; evaluate/report handle "
            "chained expressions through exact tables")
    stage = plan.stages[0]
    if stage.alpha is not None:
        raise ConfigError(
            "parameterized (alpha) operators are sampled on the grid domain only; "
            "diffusion sampling covers hm, con, and post(...)")
    return stage


def _gaussian_axes(config, points: int | None = None):
    import numpy as np

    report = config.report
    n = points if points is not None else report.n_points
    return np.linspace(report.x_min, report.x_max, n)


def _gaussian_gt_table(config, expr, points: int | None = None):
    """Ground-truth composite as a discretized table (plus its coordinates)."""
    import numpy as np

    from .dsl import eval_exact
    from .tables import DensityTable

    xs = _gaussian_axes(config, points)
    section = config.gaussian
    bindings = {}
    if section.dim == 1:
        for spec in section.bases:
            bindings[spec.name] = DensityTable.from_unnormalized(spec.density.pdf(xs))
        return eval_exact(expr, bindings), xs
    grid_x, grid_y = np.meshgrid(xs, xs, indexing="ij")
    mesh = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)
    for spec in section.bases:
        bindings[spec.name] = DensityTable.from_unnormalized(
            spec.density.pdf(mesh).reshape(xs.size, xs.size))
    return eval_exact(expr, bindings), xs


# ---------------------------------------------------------------------------
# train-base


def cmd_train_base(config) -> dict:
    from .errors import ConfigError
    from .gfn_train import train_base
    from .grid import bump_reward
    from .nn import save_checkpoint, save_mlp

    if config.domain != "grid":
        raise ConfigError(
            "train-base applies to grid configs; gaussian bases are closed-form "
            "mixtures and need no training")
    os.makedirs(config.out_dir, exist_ok=True)
    files = []
    for idx, spec in enumerate(config.grid.bases):
        reward = bump_reward(config.grid.height, spec.centers, spec.sigmas, spec.floor)
        cfg = _auto_eval_every(replace(config.grid.train, seed=config.seed + idx),
                               config.grid.train.steps)
        result = train_base(reward, spec.beta, cfg)
        ckpt = _grid_base_ckpt(config, spec.name)
        header = {"role": "grid_policy", "kind": cfg.kind, "height": config.grid.height,
                  "name": spec.name, "log_z": result.log_z}
        if cfg.kind == "tabular":
            save_checkpoint(ckpt, header, [result.policy.probs])
        else:
            save_mlp(ckpt, result.policy.backing["net"], step=cfg.steps, extra=header)
        csv = os.path.join(config.out_dir, f"base_{spec.name}_train.csv")
        _write_history_csv(csv, result.history)
        files += [os.path.basename(ckpt), os.path.basename(csv)]
    return {"command": "train-base", "out": config.out_dir, "files": files}


# ---------------------------------------------------------------------------
# train-classifier


def _grid_eval_fn(config, dag, policies, tables):
    """Periodic L1 of the learned composition against exact ground truth."""
    from .dsl import eval_exact, lower
    from .errors import ConfigError
    from .gfn_compose import composed_policy
    from .grid import enumerate_distribution
    from .tables import l1_distance

    if config.compose is None:
        return None
    expr = config.compose_expr()
    plan = lower(expr)
    names = config.base_names
    try:
        observations, alpha = _learned_stage(plan, names)
    except ConfigError:
        return None
    ground_truth = eval_exact(expr, dict(zip(names, tables)))

    def eval_fn(classifier, step: int) -> dict:
        composed = composed_policy(policies, classifier, observations, alpha=alpha)
        return {"l1_to_gt": l1_distance(enumerate_distribution(composed), ground_truth)}

    return eval_fn


def _time_eval_fn(config, dms):
    """Periodic L1 of the learned terminal head against the analytic posterior."""
    import numpy as np

    from .sde import label_posterior

    probe = _gaussian_axes(config, 129)
    if config.gaussian.dim == 2:
        gx, gy = np.meshgrid(probe[::8], probe[::8], indexing="ij")
        probe = np.stack([gx.ravel(), gy.ravel()], axis=1)
    exact = label_posterior(dms, None, 0.0, probe)

    def eval_fn(classifier, step: int) -> dict:
        learned = np.exp(classifier.terminal_log_marginals(probe))
        return {"l1_to_gt": float(np.abs(learned - exact).sum(axis=1).mean())}

    return eval_fn


def cmd_train_classifier(config) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    if config.domain == "grid":
        from .gfn_classifier import ClassifierOracle, save_classifier, train_classifier

        dag, policies = _load_grid_bases(config)
        ClassifierOracle(policies)  # cheap exact sanity check before the long run
        tables = _grid_base_tables(policies)
        cfg = _auto_eval_every(config.grid.classifier, config.grid.classifier.steps)
        eval_fn = _grid_eval_fn(config, dag, policies, tables)
        result = train_classifier(policies, config.grid.n_observations, cfg, eval_fn)
        save_classifier(_classifier_ckpt(config), result.classifier, step=cfg.steps)
    else:
        from .sde_classifier import save_time_classifier, train_time_classifier

        dms = _gaussian_dms(config)
        cfg = _auto_eval_every(config.gaussian.classifier, config.gaussian.classifier.steps)
        result = train_time_classifier(dms, config.gaussian.n_observations, cfg,
                                       _time_eval_fn(config, dms))
        save_time_classifier(_classifier_ckpt(config), result.classifier, step=cfg.steps)
    csv = os.path.join(config.out_dir, "classifier_train.csv")
    _write_history_csv(csv, result.history)
    return {"command": "train-classifier", "out": config.out_dir,
            "files": ["classifier.ckpt", "classifier_train.csv"]}


# ---------------------------------------------------------------------------
# compose


def _compose_grid(config) -> list[str]:
    from .dsl import lower
    from .errors import ConfigError
    from .gfn_classifier import load_classifier
    from .gfn_compose import composed_policy
    from .grid import enumerate_distribution
    from .tables import save_csv

    if config.guidance_scale != 1.0:
        raise ConfigError(
            "classifier guidance on the grid is exact; --guidance-scale applies to "
            "diffusion configs")
    plan = lower(config.compose_expr())
    dag, policies = _load_grid_bases(config)
    names = config.base_names
    chain = _exact_grid_chain(plan, policies, names)
    exact_path = os.path.join(config.out_dir, "compose_exact.csv")
    save_csv(enumerate_distribution(chain[-1]), exact_path)
    files = ["compose_exact.csv"]
    if os.path.exists(_classifier_ckpt(config)):
        classifier = load_classifier(_classifier_ckpt(config))
        observations, alpha = _learned_stage(plan, names)
        composed = composed_policy(policies, classifier, observations, alpha=alpha)
        learned_path = os.path.join(config.out_dir, "compose_learned.csv")
        save_csv(enumerate_distribution(composed), learned_path)
        files.append("compose_learned.csv")
    return files


def _compose_gaussian(config) -> list[str]:
    import numpy as np

    from .dsl import lower
    from .sde import (
        QuadratureJoint,
        composed_backward_drift,
        composed_prior_sampler,
        euler_maruyama,
        save_density_curve,
        save_samples,
    )
    from .sde_classifier import load_time_classifier

    expr = config.compose_expr()
    plan = lower(expr)
    stage = _sampling_stage(plan)
    section = config.gaussian
    sampling = section.sampling
    dms = dict(zip(config.base_names, _gaussian_dms(config)))
    stage_dms = [dms[name] for name in stage.bases]

    def run(classifier, dms_used, observations, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        drift = lambda t, x: composed_backward_drift(
            dms_used, None, classifier, observations, t, x,
            guidance_scale=config.guidance_scale)[0]
        diffusion = lambda t: section.sde.g(t)
        prior = composed_prior_sampler(dms_used, None, classifier, observations,
                                       sampling.n_samples, oversample=sampling.oversample)
        return euler_maruyama(drift, diffusion, prior, sampling.steps, rng,
                              t_max=section.sde.t_max)

    oracle = QuadratureJoint(stage_dms, None, span=sampling.span,
                             log_tol=sampling.log_tol, nodes=sampling.nodes)
    exact_samples = run(oracle, stage_dms, stage.observations, config.seed)
    save_samples(os.path.join(config.out_dir, "samples_exact.f64"), exact_samples,
                 config.seed, sampling.steps)
    files = ["samples_exact.f64", "samples_exact.f64.json"]

    if os.path.exists(_classifier_ckpt(config)):
        classifier = load_time_classifier(_classifier_ckpt(config))
        observations, _ = _learned_stage(plan, config.base_names)
        learned_samples = run(classifier, list(dms.values()), observations, config.seed + 1)
        save_samples(os.path.join(config.out_dir, "samples_learned.f64"),
                     learned_samples, config.seed + 1, sampling.steps)
        files += ["samples_learned.f64", "samples_learned.f64.json"]

    if section.dim == 1:
        table, xs = _gaussian_gt_table(config, expr)
        dx = xs[1] - xs[0]
        save_density_curve(os.path.join(config.out_dir, "target_density.csv"),
                           xs, table.mass / dx)
        files.append("target_density.csv")
    return files


def cmd_compose(config) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    if config.domain == "grid":
        files = _compose_grid(config)
    else:
        files = _compose_gaussian(config)
    return {"command": "compose", "out": config.out_dir, "files": files}


# ---------------------------------------------------------------------------
# evaluate


def _evaluate_grid(config) -> dict:
    from .dsl import ObservationPlan, eval_exact, execute_plan_exact, lower, pretty_print
    from .gfn_classifier import load_classifier
    from .gfn_compose import composed_policy
    from .grid import enumerate_distribution
    from .tables import l1_distance

    expr = config.compose_expr()
    plan = lower(expr)
    dag, policies = _load_grid_bases(config)
    names = config.base_names
    tables = _grid_base_tables(policies)
    bindings = dict(zip(names, tables))
    ground_truth = eval_exact(expr, bindings)

    chain = _exact_grid_chain(plan, policies, names)
    stages = []
    for i, stage in enumerate(plan.stages):
        prefix = ObservationPlan(plan.stages[: i + 1])
        stage_gt = execute_plan_exact(prefix, bindings)
        stage_l1 = l1_distance(enumerate_distribution(chain[i]), stage_gt)
        label = f"post(y={list(stage.observations)}; {', '.join(stage.bases)})"
        stages.append({"stage": i, "label": label, "exact_l1": stage_l1})

    metrics = {
        "exact_l1": l1_distance(enumerate_distribution(chain[-1]), ground_truth),
        "stages": stages,
    }
    if os.path.exists(_classifier_ckpt(config)):
        classifier = load_classifier(_classifier_ckpt(config))
        observations, alpha = _learned_stage(plan, names)
        composed = composed_policy(policies, classifier, observations, alpha=alpha)
        metrics["learned_l1"] = l1_distance(enumerate_distribution(composed), ground_truth)
    return {"domain": "grid", "expression": pretty_print(expr), "seed": config.seed,
            "l1": metrics}


def _evaluate_gaussian(config) -> dict:
    import numpy as np

    from .dsl import pretty_print
    from .errors import MissingCheckpoint
    from .metrics import wasserstein1
    from .sde import load_samples

    expr = config.compose_expr()
    table, xs = _gaussian_gt_table(config, expr, points=4096)
    exact_path = os.path.join(config.out_dir, "samples_exact.f64")
    if not os.path.exists(exact_path):
        raise MissingCheckpoint(f"{exact_path} not found: run compose first")
    samples, sidecar = load_samples(exact_path)

    def w1(points: np.ndarray) -> dict:
        if config.gaussian.dim == 1:
            return {"w1": wasserstein1(points[:, 0], table, coords=xs)}
        marg_x = np.asarray(table.mass).sum(axis=1)
        marg_y = np.asarray(table.mass).sum(axis=0)
        from .tables import DensityTable

        return {
            "w1_axis0": wasserstein1(points[:, 0], DensityTable.from_unnormalized(marg_x),
                                     coords=xs),
            "w1_axis1": wasserstein1(points[:, 1], DensityTable.from_unnormalized(marg_y),
                                     coords=xs),
        }

    metrics = {"exact": w1(samples) | {"n_samples": sidecar["n_samples"],
                                       "steps": sidecar["steps"]}}
    learned_path = os.path.join(config.out_dir, "samples_learned.f64")
    if os.path.exists(learned_path):
        learned, sidecar_l = load_samples(learned_path)
        metrics["learned"] = w1(learned) | {"n_samples": sidecar_l["n_samples"],
                                            "steps": sidecar_l["steps"]}
    return {"domain": config.domain, "expression": pretty_print(expr),
            "seed": config.seed, "wasserstein": metrics}


def cmd_evaluate(config) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    if config.domain == "grid":
        payload = _evaluate_grid(config)
    else:
        payload = _evaluate_gaussian(config)
    path = os.path.join(config.out_dir, "metrics.json")
    _write_json(path, payload)
    return {"command": "evaluate", "out": config.out_dir, "files": ["metrics.json"]}


# ---------------------------------------------------------------------------
# report


def _report_grid(config) -> list[str]:
    import numpy as np

    from .dsl import eval_exact, lower
    from .gfn_classifier import load_classifier
    from .gfn_compose import composed_policy
    from .grid import enumerate_distribution
    from .reportviz import render_heatmap_rows, save_ppm

    height = config.grid.height
    dag, policies = _load_grid_bases(config)
    names = config.base_names
    tables = _grid_base_tables(policies)
    row_bases = [(name, np.asarray(t.mass).reshape(height, height))
                 for name, t in zip(names, tables)]
    rows = [row_bases]
    if config.compose is not None:
        expr = config.compose_expr()
        plan = lower(expr)
        bindings = dict(zip(names, tables))
        ground_truth = eval_exact(expr, bindings)
        chain = _exact_grid_chain(plan, policies, names)
        row = [("ground truth", np.asarray(ground_truth.mass).reshape(height, height)),
               ("exact guidance",
                np.asarray(enumerate_distribution(chain[-1]).mass).reshape(height, height))]
        if os.path.exists(_classifier_ckpt(config)):
            classifier = load_classifier(_classifier_ckpt(config))
            observations, alpha = _learned_stage(plan, names)
            composed = composed_policy(policies, classifier, observations, alpha=alpha)
            row.append(("learned guidance",
                        np.asarray(enumerate_distribution(composed).mass)
                        .reshape(height, height)))
        rows.append(row)
    image, legend = render_heatmap_rows(rows)
    save_ppm(os.path.join(config.out_dir, "report_grid.ppm"), image)
    _write_json(os.path.join(config.out_dir, "report_grid.json"),
                {"panels": legend, "color_scale": "darker is higher, shared per row"})
    return ["report_grid.ppm", "report_grid.json"]


def _report_gaussian1d(config) -> list[str]:
    import numpy as np

    from .gaussians import (
        gaussian_negation_is_proper,
        negation_quadrature_diverges,
    )
    from .ops import contrast, harmonic_mean
    from .reportviz import render_curves, save_ppm
    from .sde import save_density_curve
    from .tables import DensityTable

    section = config.gaussian
    report = config.report
    xs = _gaussian_axes(config)
    dx = xs[1] - xs[0]
    files: list[str] = []
    curves: list[tuple[str, np.ndarray, np.ndarray]] = []

    base_tables = {}
    for spec in section.bases:
        pdf = spec.density.pdf(xs)
        base_tables[spec.name] = DensityTable.from_unnormalized(pdf)
        curves.append((spec.name, xs, pdf))
        path = f"report_base_{spec.name}.csv"
        save_density_curve(os.path.join(config.out_dir, path), xs, pdf)
        files.append(path)

    first, second = section.bases[0], section.bases[1] if len(section.bases) > 1 else None
    flags: dict = {"bases": [spec.name for spec in section.bases]}
    if second is not None:
        p1, p2 = base_tables[first.name], base_tables[second.name]
        hm_table = harmonic_mean(p1, p2)
        save_density_curve(os.path.join(config.out_dir, "report_hm.csv"),
                           xs, hm_table.mass / dx)
        curves.append((f"hm({first.name},{second.name})", xs, hm_table.mass / dx))
        files.append("report_hm.csv")
        for alpha in report.alphas:
            con_table = contrast(p1, p2, alpha)
            path = f"report_con_a{alpha:g}.csv"
            save_density_curve(os.path.join(config.out_dir, path), xs, con_table.mass / dx)
            curves.append((f"con[{1 - alpha:g}]({first.name},{second.name})",
                           xs, con_table.mass / dx))
            files.append(path)

        single = (len(first.density.components) == 1
                  and len(second.density.components) == 1)
        negations = []
        for gamma in report.gammas:
            entry: dict = {"gamma": gamma}
            with np.errstate(divide="ignore"):
                log_ratio = first.density.logpdf(xs) - gamma * second.density.logpdf(xs)
            ratio = np.exp(log_ratio - log_ratio.max())
            if single:
                verdict = gaussian_negation_is_proper(
                    first.density.components[0], second.density.components[0], gamma)
                entry["proper"] = bool(verdict)
                entry["quadrature_diverges"] = negation_quadrature_diverges(
                    first.density.components[0], second.density.components[0], gamma)
            path = f"report_neg_g{gamma:g}.csv"
            if entry.get("proper", False):
                pdf = ratio / (ratio.sum() * dx)
                save_density_curve(os.path.join(config.out_dir, path), xs, pdf)
                curves.append((f"neg[{gamma:g}]({first.name},{second.name})", xs, pdf))
            else:
                # improper (or undecided): the raw ratio cannot be normalized
                save_density_curve(os.path.join(config.out_dir, path), xs, ratio)
            entry["file"] = path
            negations.append(entry)
            files.append(path)
        flags["negations"] = negations

    image, legend = render_curves(curves)
    save_ppm(os.path.join(config.out_dir, "report_curves.ppm"), image)
    flags["curves"] = legend
    _write_json(os.path.join(config.out_dir, "report.json"), flags)
    return files + ["report_curves.ppm", "report.json"]


def _report_gaussian2d(config) -> list[str]:
    import numpy as np

    from .reportviz import render_heatmap_rows, save_ppm

    xs = _gaussian_axes(config, 129)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    mesh = np.stack([gx.ravel(), gy.ravel()], axis=1)
    rows = [[(spec.name, spec.density.pdf(mesh).reshape(xs.size, xs.size))
             for spec in config.gaussian.bases]]
    if config.compose is not None:
        expr = config.compose_expr()
        table, _ = _gaussian_gt_table(config, expr, points=129)
        rows.append([("composite", np.asarray(table.mass))])
    image, legend = render_heatmap_rows(rows)
    save_ppm(os.path.join(config.out_dir, "report_grid.ppm"), image)
    _write_json(os.path.join(config.out_dir, "report_grid.json"),
                {"panels": legend, "color_scale": "darker is higher, shared per row"})
    return ["report_grid.ppm", "report_grid.json"]


def cmd_report(config) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    if config.domain == "grid":
        files = _report_grid(config)
    elif config.domain == "gaussian1d":
        files = _report_gaussian1d(config)
    else:
        files = _report_gaussian2d(config)
    return {"command": "report", "out": config.out_dir, "files": files}


_COMMANDS = {
    "train-base": cmd_train_base,
    "train-classifier": cmd_train_classifier,
    "compose": cmd_compose,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


if __name__ == "__main__":
    sys.exit(main())
