"""Command-line entry point.

Exit codes: 0 ok, 1 numeric failure, 2 unknown command / usage,
3 unknown config key, 4 malformed value.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from .action import PotentialConfig, total_potential
from .checks import run_gradcheck, run_oracle_test
from .dynamics import (IntegratorConfig, load_checkpoint, run_training, save_checkpoint)
from .errors import IntegrationError
from .flow import (FlowField, estimate_flow, flow_rotation, flow_translation, load_flow,
                   save_flow)
from .report import export_filters, write_metrics, _fmt
from .video import (BlurSchedule, NightSchedule, apply_schedules, gen_rotating,
                    gen_translating, load_clip, save_clip)

log = logging.getLogger("motionfilters")

COMMANDS = ("gen-video", "gen-flow", "train", "gradcheck", "oracle-test", "eval", "export-filters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionfilters",
        description="Learn convolutional filters from video under motion invariance.",
        epilog="configuration keys (use --set key=value):\n" + cfgmod.describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", help="key=value file")
    parser.add_argument("--set", dest="overrides", metavar="KEY=VALUE", action="append",
                        default=[], help="override one key (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true")
    return parser


def parse_cli(argv):
    """Return ``(command, RunConfig)``.  Raises ConfigError / SystemExit(2)."""
    args = build_parser().parse_args(argv)
    return args.command, cfgmod.resolve(args.config, args.overrides), args


def _out(cfg, name):
    return os.path.join(cfg["out_dir"], name)


def potential_config(cfg) -> PotentialConfig:
    return PotentialConfig(cfg["lambda_M"], cfg["lambda_R"], cfg["lambda_C"],
                           cfg["variance_target"], cfg["md_scheme"])


def integrator_config(cfg) -> IntegratorConfig:
    return IntegratorConfig(cfg["mode"], cfg["eta"], cfg["theta"], cfg["integrator"],
                            cfg["steps_per_pair"])


def make_clip(cfg):
    H, W, T = cfg["H"], cfg["W"], cfg["T"]
    if cfg["motion"] == "translation":
        clip = gen_translating(H, W, T, (cfg["vx"], cfg["vy"]), cfg["pattern"], cfg["seed"],
                               cfg["wavelength"], cfg["frame_period"])
    else:
        clip = gen_rotating(H, W, T, cfg["omega"], cfg["pattern"], cfg["seed"],
                            cfg["wavelength"], cfg["frame_period"])
    blur = BlurSchedule(cfg["blur_sigma0"], cfg["blur_tau"], cfg["blur_floor"])
    night = NightSchedule(cfg["day_len"], cfg["night_len"], cfg["night_phase"])
    return apply_schedules(clip, blur, night)


def analytic_flows(cfg, count):
    H, W = cfg["H"], cfg["W"]
    if cfg["motion"] == "translation":
        f = flow_translation(H, W, (cfg["vx"], cfg["vy"]))
    else:
        f = flow_rotation(H, W, cfg["omega"])
    return [f] * count


def obtain_clip(cfg):
    return load_clip(cfg["video_path"]) if cfg["video_path"] else make_clip(cfg)


def obtain_flows(cfg, clip):
    if cfg["flow_path"]:
        return load_flow(cfg["flow_path"], clip.shape)
    return analytic_flows(cfg, len(clip) - 1)


def obtain_checkpoint(cfg):
    return load_checkpoint(cfg["checkpoint_path"] or _out(cfg, "checkpoint.ckp"))


# --------------------------------------------------------------------------


def cmd_gen_video(cfg):
    clip = make_clip(cfg)
    path = _out(cfg, "clip.cvf")
    save_clip(clip, path)
    log.info("wrote %s (%d frames, %d night)", path, len(clip), int(clip.night_flags.sum()))
    return 0


def cmd_gen_flow(cfg):
    if cfg["flow_source"] == "estimated":
        clip = obtain_clip(cfg)
        flows = []
        for t in range(len(clip) - 1):
            if clip.night_flags[t] or clip.night_flags[t + 1]:
                flows.append(FlowField.zeros(*clip.shape))
                continue
            f, _ = estimate_flow(clip.frames[t], clip.frames[t + 1], cfg["hs_smoothness"],
                                 cfg["hs_iters"])
            flows.append(f)
    else:
        clip = obtain_clip(cfg)
        flows = analytic_flows(cfg, len(clip) - 1)
    if not flows:
        log.error("clip has a single frame; no flow to write")
        return 1
    path = _out(cfg, "flows.cff")
    save_flow(flows, path)
    log.info("wrote %s (%d fields)", path, len(flows))
    return 0


def cmd_train(cfg):
    clip = obtain_clip(cfg)
    flows = obtain_flows(cfg, clip)
    state = load_checkpoint(cfg["checkpoint_path"]) if cfg["checkpoint_path"] else None
    try:
        state, metrics = run_training(clip, flows, potential_config(cfg), integrator_config(cfg),
                                      cfg["init_scale"], cfg["seed"], n=cfg["n"], k=cfg["k"],
                                      activation=cfg["activation"],
                                      action_theta=cfg.action_theta, state=state)
    except IntegrationError as exc:
        log.error("integration failed: %s", exc)
        return 1
    save_checkpoint(state, _out(cfg, "checkpoint.ckp"))
    write_metrics(metrics, _out(cfg, "metrics.csv"))
    if len(metrics):
        m = metrics.column("motion")
        log.info("trained %d pairs; motion first=%.6g last=%.6g", len(m), m[0], m[-1])
    return 0


def cmd_gradcheck(cfg):
    report = run_gradcheck(cfg["gc_trials"], cfg["gc_size"], cfg["gc_n"], cfg["gc_k"],
                           cfg["gc_step"], cfg["gc_tol"], cfg["seed"], potential_config(cfg),
                           cfg["activation"], cfg["gc_inject"])
    lines = []
    for term, err in report["errors"].items():
        if err is None:
            lines.append(f"{term}: skipped")
        else:
            verdict = "ok" if err <= report["tol"] else "FAIL"
            lines.append(f"{term}: max_rel_err={err:.3e} {verdict}")
    lines.append("gradcheck " + ("passed" if report["passed"] else "FAILED"))
    _emit(cfg, "gradcheck.txt", lines)
    return 0 if report["passed"] else 1


def cmd_oracle_test(cfg):
    report = run_oracle_test(cfg["oc_eta"], cfg["oc_t_end"], cfg["oc_tol"], cfg["integrator"])
    lines = [f"scheme={cfg['integrator']} eta={cfg['oc_eta']}"]
    for name, err in report["errors"].items():
        verdict = "ok" if err <= report["tol"] and report["ratios"][name] >= 2 else "FAIL"
        lines.append(f"{name}: max_abs_err={err:.3e} halving_ratio={report['ratios'][name]:.3f}"
                     f" {verdict}")
    lines.append(f"undamped energy drift={report['undamped_energy_drift']:.3e}")
    lines.append("oracle-test " + ("passed" if report["passed"] else "FAILED"))
    _emit(cfg, "oracle-test.txt", lines)
    return 0 if report["passed"] else 1


def cmd_eval(cfg):
    state = obtain_checkpoint(cfg)
    clip = obtain_clip(cfg)
    flows = obtain_flows(cfg, clip)
    potential = potential_config(cfg)
    rows, ratios = [], []
    for t in range(len(clip) - 1):
        night = bool(clip.night_flags[t] or clip.night_flags[t + 1])
        parts, _ = total_potential(state.bank, clip.frames[t], clip.frames[t + 1], flows[t],
                                   potential, night)
        still, _ = total_potential(state.bank, clip.frames[t], clip.frames[t + 1],
                                   FlowField.zeros(*clip.shape), potential, night)
        if still.motion > 0:
            ratios.append(parts.motion / still.motion)
        rows.append(f"{t},{int(night)},{_fmt(parts.motion)},{_fmt(still.motion)},"
                    f"{_fmt(parts.regularization)},{_fmt(parts.decorrelation)}")
    with open(_out(cfg, "eval.csv"), "w") as fh:
        fh.write("pair,night,motion,motion_zero_flow,reg,decor\n")
        fh.write("".join(r + "\n" for r in rows))
    ratio = float(np.mean(ratios)) if ratios else float("nan")
    _emit(cfg, "eval.txt", [f"pairs={len(rows)} mean motion/zero-flow ratio={ratio:.6g}"])
    return 0


def cmd_export_filters(cfg):
    state = obtain_checkpoint(cfg)
    paths = export_filters(state.bank, _out(cfg, "filters"))
    log.info("wrote %d files to %s", len(paths), _out(cfg, "filters"))
    return 0


HANDLERS = {
    "gen-video": cmd_gen_video, "gen-flow": cmd_gen_flow, "train": cmd_train,
    "gradcheck": cmd_gradcheck, "oracle-test": cmd_oracle_test, "eval": cmd_eval,
    "export-filters": cmd_export_filters,
}


def _emit(cfg, name, lines):
    text = "\n".join(lines) + "\n"
    with open(_out(cfg, name), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)


def main(argv=None) -> int:
    try:
        command, cfg, args = parse_cli(sys.argv[1:] if argv is None else argv)
    except cfgmod.ConfigError as exc:
        print(f"motionfilters: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # argparse: --help (0) or usage errors (2)
        return exc.code if isinstance(exc.code, int) else 2
    except OSError as exc:
        print(f"motionfilters: cannot read config: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    os.makedirs(cfg["out_dir"], exist_ok=True)
    with open(_out(cfg, "resolved-config"), "w") as fh:
        fh.write(cfgmod.dump(cfg))
    try:
        return HANDLERS[command](cfg)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
