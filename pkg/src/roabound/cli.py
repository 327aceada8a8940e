"""Command-line pipeline: quad, train, certify, heatmap, validate, export-smt, simulate.

One JSON config drives every subcommand; flags may override only budgets and
seeds (plus the output directory). All artifacts land under the output
directory with fixed names, and rerunning a command with the same config and
seed reproduces them byte for byte. Wall-clock times go into a separate
"metadata" block of the report files so everything else stays deterministic.

Exit codes: 0 success, 2 bad config, 3 verification inconclusive,
4 condition falsified (or validation red flags), 5 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys as _sys
import time
from typing import Optional

import numpy as np

from .attraction import (
    CompositeCertificate,
    certificate_report,
    heatmap,
    select_validation_points,
    validate_bound,
)
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    LinearAlgebraError,
    NonFiniteError,
    ParseError,
    RoaboundError,
    SystemDefinitionError,
    TrainingError,
    VerificationError,
)
from .linlyap import (
    QuadraticCertificate,
    default_epsilon,
    ellipsoid_box_cap,
    find_local_level,
    local_certificate_expressions,
    frobenius_sq_expression,
    quad_form_expression,
    solve_stochastic_lyapunov,
    symmetric_eigen,
)
from .net import load_checkpoint, save_checkpoint, train
from .sim import generate_dataset, load_dataset, save_dataset, save_trajectory, simulate_path, estimate_value
from .smt import export_smt
from .system import generator_apply, linearize
from .verify import (
    Condition,
    Constraint,
    ExprBoxFunction,
    NetGenerator,
    NetValue,
    boundary_min_lower_bound,
    check_inclusion,
    find_largest_level,
    find_smallest_c1,
    find_smallest_lower_level,
    zeta_default,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNKNOWN = 3
EXIT_FALSIFIED = 4
EXIT_NUMERIC = 5

# The beta2 search needs some lower cutoff before beta1 is known: the origin
# (where LW = 0) must stay out of the decrease region, and weak-margin spots
# just above it may too. Seeds are tried in order; the beta1 search afterwards
# extends the region downward as far as decrease actually certifies, so the
# seed only has to land somewhere inside the good band.
BETA2_SEED_FRACS = (0.2, 0.35, 0.5, 0.7)


def _outcome_json(outcome) -> dict:
    d = outcome.to_dict()
    d.pop("wall_time", None)  # timestamps only in metadata blocks
    return d


def _write_json(path: str, doc: dict):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _say(msg: str):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_quad(cfg: RunConfig) -> int:
    """Solve the linearized Lyapunov equation and certify both quadratic levels."""
    t0 = time.perf_counter()
    sys = cfg.system
    lin = linearize(sys)
    Q = np.eye(sys.n)
    P = solve_stochastic_lyapunov(lin.A, lin.S, Q)
    eps = default_epsilon(Q)
    r = float(np.min(symmetric_eigen(Q))) - eps
    _say(f"P solved; lambda_min(P) = {np.min(symmetric_eigen(P)):.6g}")

    res_local = find_local_level(
        sys, P, Q, r,
        rel_tol=cfg.verify.rel_tol,
        budget=cfg.verify.budget,
        min_width_frac=cfg.verify.min_width_frac,
    )
    c_local = res_local.level
    _say(f"local level c_local = {c_local:.6g} ({res_local.outcome.status})")

    V = quad_form_expression(P)
    lv = generator_apply(sys, V)
    cap = ellipsoid_box_cap(P, sys.domain)
    res_ext = find_largest_level(
        target=ExprBoxFunction(lv),
        bound=-eps,
        level_fn=ExprBoxFunction(V),
        domain=sys.domain,
        cap=cap,
        lower_fixed=c_local,
        rel_tol=cfg.verify.rel_tol,
        budget=cfg.verify.budget,
        min_width_frac=cfg.verify.min_width_frac,
        description=f"LV <= {-eps:.6g} on {{{c_local:.6g} <= V <= c2}}",
    )
    c2 = res_ext.level
    _say(f"extended level c2 = {c2:.6g} ({res_ext.outcome.status})")

    cert = QuadraticCertificate(
        P=P, Q=Q, epsilon=eps, r=r, c_local=c_local, c2=c2,
        statuses={
            "solved": "CERTIFIED",
            "local": res_local.outcome.status,
            "extended": res_ext.outcome.status,
        },
    )
    doc = cert.to_dict()
    doc["cap"] = cap
    doc["outcomes"] = {
        "local": _outcome_json(res_local.outcome),
        "extended": _outcome_json(res_ext.outcome),
    }
    doc["probes"] = {
        "local": [[c, s] for c, s in res_local.probes],
        "extended": [[c, s] for c, s in res_ext.probes],
    }
    doc["metadata"] = {"wall_time": time.perf_counter() - t0}
    _write_json(cfg.path("quad.json"), doc)
    _say(f"wrote {cfg.path('quad.json')}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, data_path: Optional[str] = None) -> int:
    """Fit the neural value function; writes dataset, checkpoint, loss history."""
    t0 = time.perf_counter()
    sys = cfg.system
    data = None
    if data_path:
        data = load_dataset(data_path)
        if data.shape[1] != sys.n + 1:
            raise ConfigError(
                f"dataset has {data.shape[1] - 1} state columns, system has {sys.n}"
            )
        _say(f"loaded {len(data)} value samples from {data_path}")
    elif cfg.data_grid > 0:
        _say(f"sampling value data on a {cfg.data_grid}-per-dim grid ...")
        data = generate_dataset(sys, cfg.sim, per_dim=cfg.data_grid, cap=cfg.data_cap)
        save_dataset(cfg.path("dataset.csv"), data, sys.n)
        _say(f"wrote {cfg.path('dataset.csv')} ({len(data)} points)")

    result = train(sys, cfg.train, data, log_every=max(1, cfg.train.epochs // 10))
    save_checkpoint(result.net, cfg.path("checkpoint.json"))
    with open(cfg.path("losses.csv"), "w") as fh:
        fh.write("epoch,total,residual,boundary,data\n")
        for i, row in enumerate(result.losses):
            fh.write(f"{i + 1}," + ",".join(repr(float(v)) for v in row) + "\n")
    _say(f"wrote {cfg.path('checkpoint.json')} and {cfg.path('losses.csv')}")
    _say(f"training wall time {time.perf_counter() - t0:.1f}s")
    if result.diverged:
        _say(
            f"training diverged after {result.epochs_run} epochs; "
            "checkpoint holds the last finite parameters"
        )
        return EXIT_NUMERIC
    _say(f"final loss {result.losses[-1, 0]:.6g} after {result.epochs_run} epochs")
    return EXIT_OK


def _load_net(cfg: RunConfig):
    path = cfg.checkpoint or cfg.path("checkpoint.json")
    if not os.path.exists(path):
        raise ConfigError(f"no checkpoint at {path}; run the train command first")
    return load_checkpoint(path), path


def _load_quad(cfg: RunConfig) -> dict:
    path = cfg.path("quad.json")
    if not os.path.exists(path):
        raise ConfigError(f"no quadratic certificate at {path}; run the quad command first")
    with open(path) as fh:
        return json.load(fh)


def cmd_certify(cfg: RunConfig) -> int:
    """Chain the neural levels onto the quadratic certificate.

    Order: beta2 (largest W-level with LW <= -zeta), beta1 (smallest lower
    cutoff keeping that decrease certified), c1 (smallest quadratic level
    containing {W <= beta1}), and the outer inclusion {V <= c2} in {W <= beta2}.
    """
    t0 = time.perf_counter()
    sys = cfg.system
    quad_doc = _load_quad(cfg)
    quad = QuadraticCertificate.from_dict(quad_doc)
    if quad.statuses.get("extended") != "CERTIFIED" or quad.c2 <= 0:
        raise VerificationError("quadratic certificate lacks a certified extended level c2")
    net, ckpt_path = _load_net(cfg)
    if net.sizes[0] != sys.n:
        raise ConfigError(f"checkpoint expects {net.sizes[0]} state dims, system has {sys.n}")

    w_fn = NetValue(net)
    lw_fn = NetGenerator(sys, net)
    v_fn = ExprBoxFunction(quad_form_expression(quad.P))
    vb = cfg.verify

    zeta = vb.zeta if vb.zeta > 0 else zeta_default(lw_fn, sys.domain)
    _say(f"decay margin zeta = {zeta:.6g}")

    # {W <= beta2} must stay strictly inside the domain
    w_boundary_min = boundary_min_lower_bound(w_fn, sys.domain)
    if w_boundary_min <= 0:
        raise VerificationError(
            f"W is not positive on the domain boundary (lower bound {w_boundary_min:.6g}); "
            "the net is not trained well enough to certify"
        )
    cap_w = w_boundary_min * (1.0 - 1e-6)
    _say(f"W boundary minimum >= {w_boundary_min:.6g}; beta2 capped at {cap_w:.6g}")

    res_b2 = None
    for frac in BETA2_SEED_FRACS:
        try:
            res_b2 = find_largest_level(
                target=lw_fn,
                bound=-zeta,
                level_fn=w_fn,
                domain=sys.domain,
                cap=cap_w,
                lower_fixed=frac * cap_w,
                rel_tol=vb.rel_tol,
                budget=vb.budget,
                min_width_frac=vb.min_width_frac,
                description="LW decrease, upper level search",
            )
            break
        except VerificationError as err:
            _say(f"beta2 search seeded at {frac * cap_w:.6g} failed: {err}")
            last_err = err
    if res_b2 is None:
        raise last_err
    beta2 = res_b2.level
    _say(f"beta2 = {beta2:.6g} ({res_b2.outcome.status})")

    res_b1 = find_smallest_lower_level(
        target=lw_fn,
        bound=-zeta,
        level_fn=w_fn,
        domain=sys.domain,
        upper_fixed=beta2,
        rel_tol=vb.rel_tol,
        budget=vb.budget,
        min_width_frac=vb.min_width_frac,
        floor_frac=vb.beta1_floor_frac,
        description="LW decrease, lower level search",
    )
    beta1 = res_b1.level
    # the beta1 search re-certified the decrease on the final pair
    w_decrease = res_b1.outcome
    _say(f"beta1 = {beta1:.6g} ({w_decrease.status})")

    c1_upper, c1_point = find_smallest_c1(
        v_fn, w_fn, beta1, sys.domain,
        budget=vb.budget,
        min_width_frac=vb.min_width_frac,
        rel_tol=vb.rel_tol,
    )
    c1 = c1_upper * (1.0 + 1e-9)
    w_in_v = check_inclusion(
        w_fn, beta1, v_fn, c1, sys.domain,
        budget=vb.budget,
        min_width_frac=vb.min_width_frac,
        description=f"{{W <= {beta1:.6g}}} inside {{V <= {c1:.6g}}}",
    )
    _say(f"c1 = {c1:.6g} (inclusion {w_in_v.status}, pointwise max {c1_point:.6g})")

    # The decrease level from the quad stage typically touches the domain
    # boundary, where W exceeds beta2, so the handoff level is the largest
    # ellipsoid that fits inside {W <= beta2}. Quadratic decrease certified on
    # the larger region stays valid on this subset.
    res_c2 = find_largest_level(
        target=w_fn,
        bound=beta2,
        level_fn=v_fn,
        domain=sys.domain,
        cap=quad.c2,
        rel_tol=vb.rel_tol,
        budget=vb.budget,
        min_width_frac=vb.min_width_frac,
        description="largest {V <= c2} inside {W <= beta2}",
    )
    c2 = res_c2.level
    v_in_w = res_c2.outcome
    _say(f"c2 = {c2:.6g} (outer inclusion {v_in_w.status}; decrease certified up to {quad.c2:.6g})")
    if c1 >= c2:
        raise VerificationError(
            f"c1 = {c1:.6g} reaches the handoff level c2 = {c2:.6g}; "
            "{W <= beta1} is too large for the quadratic region"
        )

    cert = CompositeCertificate(
        P=quad.P,
        c1=c1,
        c2=c2,
        net=net,
        beta1=beta1,
        beta2=beta2,
        zeta=zeta,
        statuses={
            "w_decrease": w_decrease.status,
            "v_decrease": quad.statuses.get("extended", "UNKNOWN"),
            "w_in_v": w_in_v.status,
            "v_in_w": v_in_w.status,
        },
        checkpoint_ref=ckpt_path,
        extras={
            "epsilon": quad.epsilon,
            "c_local": quad.c_local,
            "c2_decrease": quad.c2,
            "w_boundary_min": w_boundary_min,
        },
    )
    doc = cert.to_dict()
    doc["outcomes"] = {
        "w_decrease": _outcome_json(w_decrease),
        "w_in_v": _outcome_json(w_in_v),
        "v_in_w": _outcome_json(v_in_w),
    }
    doc["metadata"] = {"wall_time": time.perf_counter() - t0}
    _write_json(cfg.path("certificate.json"), doc)
    _say(f"wrote {cfg.path('certificate.json')}")

    if cert.complete:
        _say("certificate COMPLETE: all four conditions certified")
        return EXIT_OK
    failing = [k for k, s in cert.statuses.items() if s != "CERTIFIED"]
    _say(f"certificate INCOMPLETE; failing condition(s): {', '.join(failing)}")
    worst = [cert.statuses[k] for k in failing]
    return EXIT_FALSIFIED if "FALSIFIED" in worst else EXIT_UNKNOWN


def _load_certificate(cfg: RunConfig) -> CompositeCertificate:
    path = cfg.path("certificate.json")
    if not os.path.exists(path):
        raise ConfigError(f"no certificate at {path}; run the certify command first")
    net = None
    if cfg.checkpoint:
        net = load_checkpoint(cfg.checkpoint)
    cert = CompositeCertificate.load(path, net=net)
    return cert


def _require_complete(cert: CompositeCertificate, task: str):
    if not cert.complete:
        failing = {k: cert.statuses.get(k, "MISSING") for k in
                   ("w_decrease", "v_decrease", "w_in_v", "v_in_w")
                   if cert.statuses.get(k) != "CERTIFIED"}
        raise VerificationError(
            f"cannot {task}: certificate incomplete ({failing}); "
            "the bound is only sound once all four conditions are certified"
        )


def cmd_heatmap(cfg: RunConfig) -> int:
    cert = _load_certificate(cfg)
    _require_complete(cert, "render a heatmap")
    pgm = cfg.path("heatmap.pgm") if cfg.system.n == 2 else None
    heatmap(
        cert, cfg.system.domain, cfg.heatmap_resolution,
        csv_path=cfg.path("heatmap.csv"),
        pgm_path=pgm,
    )
    _say(f"wrote {cfg.path('heatmap.csv')}" + (f" and {pgm}" if pgm else ""))
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    cert = _load_certificate(cfg)
    _require_complete(cert, "validate the bound")
    points = select_validation_points(cert, cfg.system.domain, cfg.validate_points)
    _say(f"validating at {len(points)} points, {cfg.sim.samples_prob} paths each ...")
    report = validate_bound(cert, cfg.system, cfg.sim, points)
    doc = report.to_dict()
    doc["metadata"] = {"wall_time": time.perf_counter() - t0}
    _write_json(cfg.path("validation.json"), doc)
    with open(cfg.path("validation.txt"), "w") as fh:
        fh.write(report.render() + "\n")
    _say(report.render())
    _say(f"wrote {cfg.path('validation.json')}")
    if report.red_flags:
        _say(f"{report.red_flags} red flag(s): Monte Carlo contradicts the bound")
        return EXIT_FALSIFIED
    return EXIT_OK


def cmd_export_smt(cfg: RunConfig) -> int:
    """Re-render every certified condition as an SMT-LIB2 script."""
    sys = cfg.system
    quad_doc = _load_quad(cfg)
    quad = QuadraticCertificate.from_dict(quad_doc)
    cert = _load_certificate(cfg)
    _require_complete(cert, "export SMT scripts")

    _, M = local_certificate_expressions(sys, quad.P, quad.Q)
    V = quad_form_expression(quad.P)
    lv = generator_apply(sys, V)
    v_fn = ExprBoxFunction(V)
    w_fn = NetValue(cert.net)
    lw_fn = NetGenerator(sys, cert.net)
    dom = sys.domain

    conditions = {
        "quad_local": Condition(
            target=ExprBoxFunction(frobenius_sq_expression(M)),
            bound=4.0 * quad.r * quad.r,
            domain=dom,
            constraints=(Constraint(v_fn, -np.inf, quad.c_local),),
            description="Hessian margin on the local quadratic region",
        ),
        "v_decrease": Condition(
            target=ExprBoxFunction(lv),
            bound=-quad.epsilon,
            domain=dom,
            constraints=(Constraint(v_fn, quad.c_local, quad.c2),),
            description="quadratic decrease on the extended annulus",
        ),
        "w_decrease": Condition(
            target=lw_fn,
            bound=-cert.zeta,
            domain=dom,
            constraints=(Constraint(w_fn, cert.beta1, cert.beta2),),
            description="neural decrease between beta1 and beta2",
        ),
        "w_in_v": Condition(
            target=v_fn,
            bound=cert.c1,
            domain=dom,
            constraints=(Constraint(w_fn, -np.inf, cert.beta1),),
            description="inner inclusion {W <= beta1} in {V <= c1}",
        ),
        "v_in_w": Condition(
            target=w_fn,
            bound=cert.beta2,
            domain=dom,
            constraints=(Constraint(v_fn, -np.inf, cert.c2),),
            description="outer inclusion {V <= c2} in {W <= beta2}",
        ),
    }
    smt_dir = cfg.path("smt")
    os.makedirs(smt_dir, exist_ok=True)
    for name, cond in conditions.items():
        script = export_smt(cond, name=name)
        path = os.path.join(smt_dir, f"{name}.smt2")
        with open(path, "w") as fh:
            fh.write(script)
        _say(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, x0_text: Optional[str]) -> int:
    if x0_text:
        try:
            x0 = np.asarray([float(v) for v in x0_text.split(",")], dtype=float)
        except ValueError as err:
            raise ConfigError(f"bad --x0 value {x0_text!r}: {err}") from err
    elif cfg.simulate_x0 is not None:
        x0 = np.asarray(cfg.simulate_x0, dtype=float)
    else:
        raise ConfigError("simulate needs an initial state: --x0 or simulate_x0 in the config")
    if x0.shape != (cfg.system.n,):
        raise ConfigError(f"x0 has {x0.size} components, system has {cfg.system.n}")
    ts, xs, status = simulate_path(cfg.system, x0, cfg.sim)
    save_trajectory(cfg.path("trajectory.csv"), ts, xs)
    sample = estimate_value(cfg.system, x0, cfg.sim)
    _say(
        f"path from [{', '.join(f'{v:g}' for v in x0)}]: {status} "
        f"after {ts[-1]:.3f}s ({len(ts)} states); value estimate w_hat = {sample.w_hat:.4f}"
    )
    _say(f"wrote {cfg.path('trajectory.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roabound",
        description="Certified lower bounds on stochastic attraction probabilities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--budget", type=int, help="verifier box budget override")

    p = sub.add_parser("quad", help="solve and certify the quadratic certificate")
    common(p)
    p = sub.add_parser("train", help="fit the neural value function")
    common(p)
    p.add_argument("--data", help="existing value dataset CSV (skips sampling)")
    p.add_argument("--epochs", type=int, help="training epoch override")
    p.add_argument("--collocation", type=int, help="collocation batch override")
    p = sub.add_parser("certify", help="certify the neural levels and compose the bound")
    common(p)
    p = sub.add_parser("heatmap", help="evaluate the certified bound on a grid")
    common(p)
    p = sub.add_parser("validate", help="Monte Carlo check of the certified bound")
    common(p)
    p.add_argument("--samples", type=int, help="paths per validation point override")
    p = sub.add_parser("export-smt", help="write SMT-LIB2 scripts for all conditions")
    common(p)
    p = sub.add_parser("simulate", help="simulate one path and estimate the value")
    common(p)
    p.add_argument("--x0", help="initial state, comma separated")
    p.add_argument("--samples", type=int, help="value-estimate path count override")
    return parser


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Flags may override budgets and seeds only (plus the output directory)."""
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=args.out)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            seed=args.seed,
            sim=dataclasses.replace(cfg.sim, seed=args.seed),
            train=dataclasses.replace(cfg.train, seed=args.seed),
        )
    if args.budget is not None:
        cfg = dataclasses.replace(
            cfg, verify=dataclasses.replace(cfg.verify, budget=args.budget)
        )
    if getattr(args, "epochs", None) is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs)
        )
    if getattr(args, "collocation", None) is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, collocation=args.collocation)
        )
    if getattr(args, "samples", None) is not None:
        cfg = dataclasses.replace(
            cfg,
            sim=dataclasses.replace(
                cfg.sim, samples_prob=args.samples, samples_value=args.samples
            ),
        )
    return cfg


def _dispatch(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    os.makedirs(cfg.out, exist_ok=True)
    if args.command == "quad":
        return cmd_quad(cfg)
    if args.command == "train":
        return cmd_train(cfg, data_path=args.data)
    if args.command == "certify":
        return cmd_certify(cfg)
    if args.command == "heatmap":
        return cmd_heatmap(cfg)
    if args.command == "validate":
        return cmd_validate(cfg)
    if args.command == "export-smt":
        return cmd_export_smt(cfg)
    if args.command == "simulate":
        return cmd_simulate(cfg, args.x0)
    raise ConfigError(f"unknown command {args.command!r}")   # pragma: no cover


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, SystemDefinitionError, ParseError) as err:
        _say(f"config error: {err}")
        return EXIT_CONFIG
    except VerificationError as err:
        _say(f"verification failed: {err}")
        if err.outcome is not None and err.outcome.status == "FALSIFIED":
            return EXIT_FALSIFIED
        return EXIT_UNKNOWN
    except (LinearAlgebraError, TrainingError, NonFiniteError) as err:
        _say(f"numeric failure: {err}")
        return EXIT_NUMERIC
    except RoaboundError as err:   # pragma: no cover - catch-all for subclasses
        _say(f"error: {err}")
        return EXIT_NUMERIC


if __name__ == "__main__":   # pragma: no cover
    _sys.exit(main())
