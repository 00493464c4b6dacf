"""Command line entry point: ``osgoodflow {simulate,certify,osgood,verify,mollify}``.

Exit status: 0 on PASS or completion, 2 on a failed (or refused) verdict,
1 on operational errors (bad input, bad configuration, integration failure).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CertificationRefused, OsgoodFlowError
from .flow import integrate, step_count
from .measures import tv_norm
from .moduli import ComposedModulus, check_osgood
from .scenario import RNG_ALGORITHM, load_scenario
from .stability import certify, load_twin
from .verification import mass_identity_check, mollify_sweep, standard_test_functions, weak_residual

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
RESIDUAL_FLOOR = 1e-11


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _dumps(obj):
    return json.dumps(_clean(json.loads(json.dumps(obj, default=_default))), indent=2, sort_keys=True) + "\n"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Output:
    """Single writer for one command's output directory plus its manifest."""

    def __init__(self, directory, command, inputs, config):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.command = command
        self.inputs = {str(p): _sha256(p) for p in inputs}
        self.config = config

    def text(self, name, content):
        (self.dir / name).write_text(content)
        self.files.append(name)

    def json(self, name, obj):
        self.text(name, _dumps(obj))

    def figure(self, name, fn, *args, **kwargs):
        fn(*args, path=self.dir / name, **kwargs)
        self.files.append(name)

    def close(self, status):
        manifest = {
            "tool": "osgoodflow",
            "version": __version__,
            "command": self.command,
            "config": self.config,
            "rng": RNG_ALGORITHM,
            "inputs": self.inputs,
            "outputs": {f: _sha256(self.dir / f) for f in sorted(self.files)},
            "exit_status": status,
        }
        (self.dir / "manifest.json").write_text(_dumps(manifest))
        return status


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_simulate(args):
    s = load_scenario(args.scenario)
    step_count(s.T, args.dt)
    out = _Output(args.out, "simulate", [args.scenario],
                  {"dt": args.dt, "scheme": args.scheme, "coupling": args.coupling, "seed": args.seed})
    traj = integrate(s, args.dt, args.scheme, coupling=args.coupling)
    out.text("trajectory.csv", traj.to_csv(every=args.every))
    tv = traj.tv_norms()
    summary = {
        "T": s.T, "d": s.d, "k": s.k, "steps": traj.steps, "dt": traj.dt, "scheme": traj.scheme,
        "coupling": traj.coupling, "atoms": s.initial.counts(),
        "mass": tv[0].tolist(), "mass_constant": traj.mass_constant(),
        "final_positions": [p[-1].tolist() for p in traj.positions],
    }
    out.json("summary.json", summary)
    if not args.no_plots:
        from .plotting import plot_trajectory
        out.figure("trajectory.png", plot_trajectory, traj)
    return out.close(EXIT_OK if summary["mass_constant"] else EXIT_FAIL)


def cmd_certify(args):
    tw = load_twin(args.twin)
    step_count(tw.a.T, args.dt)
    a = "auto" if str(args.a).lower() == "auto" else float(args.a)
    out = _Output(args.out, "certify", [args.twin],
                  {"dt": args.dt, "scheme": args.scheme, "a": args.a, "audit_stride": args.audit_stride,
                   "seed": args.seed})
    try:
        rep = certify(tw, args.dt, args.scheme, a=a, audit_stride=args.audit_stride)
    except CertificationRefused as exc:
        out.json("certificate.json", {"check": "stability_certificate", "verdict": "REFUSED", "reason": str(exc)})
        return out.close(EXIT_FAIL)
    out.json("certificate.json", rep.to_dict())
    out.text("certificate.csv", rep.to_csv())
    if not args.no_plots:
        from .plotting import plot_certificate
        out.figure("certificate.png", plot_certificate, rep)
    return out.close(EXIT_OK if rep.verdict == "PASS" else EXIT_FAIL)


def cmd_osgood(args):
    s = load_scenario(args.scenario, sampled_checks=False)
    if str(args.lam).lower() == "auto":
        lam = 2.0 * tv_norm(s.initial)[1] + 1.0
    else:
        lam = float(args.lam)
    out = _Output(args.out, "osgood", [args.scenario], {"lambda": args.lam})
    c = ComposedModulus(s.omega_V, s.omega_eta, lam)
    v = check_osgood(c)
    out.json("osgood.json", {"check": "osgood", "lambda": lam, "omega_V": s.omega_V.to_dict(),
                             "omega_eta": s.omega_eta.to_dict(), **v.to_dict()})
    if not args.no_plots:
        from .plotting import plot_osgood
        out.figure("osgood.png", plot_osgood, v)
    return out.close(EXIT_OK if v.is_osgood else EXIT_FAIL)


def _ratios_ok(vals):
    ok = True
    for a, b in zip(vals, vals[1:]):
        if a <= RESIDUAL_FLOOR:
            continue
        ok &= b <= RESIDUAL_FLOOR or a / b >= 1.5
    return bool(ok)


def cmd_verify(args):
    s = load_scenario(args.scenario)
    ladder = _floats(args.dt_ladder)
    if len(ladder) < 2:
        raise OsgoodFlowError("--dt-ladder needs at least two steps")
    for dt in ladder:
        step_count(s.T, dt)
    out = _Output(args.out, "verify", [args.scenario],
                  {"dt_ladder": ladder, "scheme": args.scheme, "radii": args.radii})
    box = args.box if args.box is not None else _atom_span(s)
    phis = standard_test_functions(s.T, s.d, box)
    trajs = [integrate(s, dt, args.scheme) for dt in ladder]
    residuals = {f"phi_{m}": [float(np.abs(weak_residual(tr, phi)).max()) for tr in trajs]
                 for m, phi in enumerate(phis)}
    conv = {name: _ratios_ok(vals) for name, vals in residuals.items()}
    radii = _floats(args.radii) if args.radii else [0.5 * max(abs(box[0]), abs(box[1])) * f for f in (1, 2, 4)]
    mass = mass_identity_check(trajs[-1], radii)
    passed = all(conv.values()) and mass.passed
    out.json("verify.json", {
        "check": "verify", "passed": passed,
        "weak_residual": {"dt_ladder": ladder, "residuals": residuals, "ratio_ge_1.5": conv,
                          "floor": RESIDUAL_FLOOR},
        "mass_identity": mass.to_dict(),
        "mass_constant_all": all(tr.mass_constant() for tr in trajs),
    })
    if not args.no_plots:
        from .plotting import plot_ladder
        out.figure("weak_residual.png", plot_ladder, ladder, residuals)
    return out.close(EXIT_OK if passed else EXIT_FAIL)


def _atom_span(s):
    lo = min((float(p.min()) for p in s.initial.positions if p.size), default=-1.0)
    hi = max((float(p.max()) for p in s.initial.positions if p.size), default=1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.1 * (hi - lo)
    return (lo - pad, hi + pad)


def cmd_mollify(args):
    s = load_scenario(args.scenario)
    widths = _floats(args.eps_ladder)
    step_count(s.T, args.dt)
    out = _Output(args.out, "mollify", [args.scenario],
                  {"eps_ladder": widths, "dt": args.dt, "scheme": args.scheme, "nodes": args.nodes})
    phis = standard_test_functions(s.T, s.d, _atom_span(s))
    rep = mollify_sweep(s, widths, phis, args.dt, args.scheme, nodes=args.nodes)
    out.json("mollify.json", {**rep.to_dict(), "passed": rep.within_cap})
    if not args.no_plots and len(widths) > 1:
        from .plotting import plot_ladder
        series = {f"species {i}, phi_{o}": rep.cauchy[i][o] for i in range(s.k) for o in range(rep.observables)}
        out.figure("mollify.png", plot_ladder, widths[1:], series, xlabel="eps", ylabel="Cauchy difference")
    return out.close(EXIT_OK if rep.within_cap else EXIT_FAIL)


def build_parser():
    p = argparse.ArgumentParser(prog="osgoodflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=0, help="seed recorded in the manifest")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    sp = sub.add_parser("simulate", help="integrate a scenario and export the trajectory")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--dt", type=float, required=True)
    sp.add_argument("--scheme", default="rk4", choices=["euler", "rk2", "rk4"])
    sp.add_argument("--coupling", default="stage", choices=["stage", "frozen"])
    sp.add_argument("--every", type=int, default=1, help="write every n-th snapshot to the CSV")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("certify", help="stability certificate for a twin document")
    sp.add_argument("--twin", required=True)
    sp.add_argument("--dt", type=float, required=True)
    sp.add_argument("--scheme", default="rk4", choices=["euler", "rk2", "rk4"])
    sp.add_argument("--a", default="auto", help="absorbed constant: AUTO or a positive number")
    sp.add_argument("--audit-stride", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("osgood", help="Osgood test of the composed modulus")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--lambda", dest="lam", default="auto", help="auto (2|rho_bar| + 1) or a value")
    common(sp)
    sp.set_defaults(func=cmd_osgood)

    sp = sub.add_parser("verify", help="weak residual ladder and mass identity")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--dt-ladder", required=True, help="comma separated steps, coarse to fine")
    sp.add_argument("--scheme", default="rk4", choices=["euler", "rk2", "rk4"])
    sp.add_argument("--radii", default=None, help="comma separated cutoff radii")
    sp.add_argument("--box", type=float, nargs=2, default=None, help="span for the preset test functions")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("mollify", help="mollification sweep")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--eps-ladder", required=True, help="comma separated decreasing widths")
    sp.add_argument("--dt", type=float, default=0.02)
    sp.add_argument("--scheme", default="rk4", choices=["euler", "rk2", "rk4"])
    sp.add_argument("--nodes", type=int, default=5)
    common(sp)
    sp.set_defaults(func=cmd_mollify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OsgoodFlowError, OSError, ValueError, KeyError) as exc:
        print(f"osgoodflow {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
