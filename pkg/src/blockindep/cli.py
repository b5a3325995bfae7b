"""Command line interface: ``blockindep {test,params,density,simulate}``.

Exit codes: 0 success, 1 I/O problem, 2 statistical regime or validation error.
"""
import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .asymptotics import lss_params, run_test
from .blockstat import BlockLayout, DataMatrix, data_spectrum, lss
from .exceptions import BlockIndepError, ConfigError, DimensionError, RegimeError, SingularBlockError
from .freeconv import atoms, density_grid
from .simkit import SimConfig, histogram_table, run_experiment

REPORT_SCHEMA = "blockindep/test-report"
SIM_SCHEMA = "blockindep/simulation-report"


class UsageError(Exception):
    """Bad arguments: exit 2."""


class InputError(Exception):
    """Unreadable input: exit 1."""


@dataclass
class TestReportDocument:
    statistic: str
    observed: float
    mean: float
    variance: float
    z_score: float
    p_value: object
    method: str
    mean_mode: str
    layout: dict
    warnings: list = field(default_factory=list)
    convention: str = ""
    version: str = __version__
    schema: str = REPORT_SCHEMA

    __test__ = False

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# --- parsing helpers --------------------------------------------------------------


def parse_int_list(text, name):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated integers, got {text!r}")
    if not vals:
        raise UsageError(f"{name}: empty list")
    return vals


def parse_float_list(text, name):
    """Comma-separated floats; ``v*n`` repeats a value n times."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if "*" in item:
                v, n = item.split("*")
                out += [float(v)] * int(n)
            else:
                out.append(float(item))
        except ValueError:
            raise UsageError(f"{name}: cannot parse {item!r}")
    if not out:
        raise UsageError(f"{name}: empty list")
    return out


def parse_stat(text):
    """``schott``, ``wilks`` or ``poly:c0,c1,...`` -> (name, test function for lss, key for params)."""
    if text in ("schott", "wilks"):
        return text, ("square" if text == "schott" else "log"), text
    if text.startswith("poly:"):
        coefs = parse_float_list(text[5:], "--stat poly")
        return text, coefs, coefs
    raise UsageError(f"--stat: expected schott, wilks or poly:c0,c1,..., got {text!r}")


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_csv(path):
    """Observations as rows; a first row with any non-numeric cell is a header."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}")
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path} contains no data")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = rows[0], rows[1:]
    width = len(rows[0]) if rows else 0
    try:
        X = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric cell ({exc})")
    if X.ndim != 2 or any(len(r) != width for r in rows):
        raise InputError(f"{path}: rows have different lengths")
    return X, header


def _write(text, out):
    if out:
        try:
            Path(out).write_text(text if text.endswith("\n") else text + "\n")
        except OSError as exc:
            raise InputError(f"cannot write {out}: {exc.strerror or exc}")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _json_num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


# --- commands -------------------------------------------------------------------


def cmd_test(args):
    blocks = parse_int_list(args.blocks, "--blocks")
    name, f, key = parse_stat(args.stat)
    X, _ = read_csv(args.csv)
    if sum(blocks) != X.shape[1]:
        raise DimensionError(
            f"--blocks sum to {sum(blocks)} but the CSV has {X.shape[1]} columns (variables)"
        )
    mean_known = args.mean == "known"
    data = DataMatrix.from_observations(X, blocks, mean_known)
    lay = data.layout
    if name == "wilks" and lay.p_total >= lay.N_eff:
        raise RegimeError(
            f"wilks needs p < N_eff: p = {lay.p_total}, N_eff = {lay.N_eff} "
            "(the log determinant is undefined otherwise)"
        )
    params = lss_params(lay, key, mean_known=mean_known, method=args.method)
    observed = lss(data_spectrum(data), f)
    rep = run_test(observed, params)
    doc = TestReportDocument(
        statistic=name,
        observed=rep.statistic,
        mean=rep.mean,
        variance=rep.variance,
        z_score=rep.z_score,
        p_value=_json_num(rep.p_value),
        method=rep.method,
        mean_mode=args.mean,
        layout={"blocks": blocks, "N": lay.N, "N_eff": lay.N_eff},
        warnings=list(rep.warnings),
        convention=rep.convention,
    )
    _write(doc.to_json(), args.out)


def cmd_params(args):
    blocks = parse_int_list(args.blocks, "--blocks")
    _, _, key = parse_stat(args.stat)
    lay = BlockLayout(tuple(blocks), args.n)
    params = lss_params(lay, key, mean_known=args.mean == "known", method=args.method)
    doc = {k: v for k, v in asdict(params).items()}
    doc["warnings"] = list(params.warnings)
    doc.update(schema="blockindep/lss-params", version=__version__, statistic=args.stat,
               layout={"blocks": blocks, "N": args.n, "N_eff": lay.with_mean(args.mean == "known").N_eff})
    _write(json.dumps(doc, indent=2, sort_keys=True), args.out)


def cmd_density(args):
    y = parse_float_list(args.y, "--y")
    if args.points < 2 or args.xmax <= args.xmin:
        raise UsageError("need --points >= 2 and --xmax > --xmin")
    if args.eps <= 0:
        raise UsageError("--eps must be positive")
    xs = np.linspace(args.xmin, args.xmax, args.points)
    try:
        dens = density_grid(y, xs, args.eps)
    except ValueError as exc:
        raise UsageError(str(exc))
    lines = [f"# atom,{loc:.12g},{w:.12g}" for loc, w in atoms(y).items()]
    lines.append("x,density")
    lines += [f"{x:.10g},{d:.10g}" for x, d in zip(xs, dens)]
    _write("\n".join(lines), args.out)


def load_config(path):
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        try:
            text = resources.files("blockindep").joinpath("configs").joinpath(f"{name}.yaml").read_text()
        except (FileNotFoundError, OSError):
            raise InputError(f"no bundled config named {name!r}")
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc.strerror or exc}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not valid YAML/JSON ({exc})")
    return SimConfig.from_dict(data)


def cmd_simulate(args):
    config = load_config(args.config)
    res = run_experiment(config)
    doc = res.to_dict()
    doc["histogram"] = {
        "columns": ["left", "right", "density", "normal_density"],
        "rows": histogram_table(res.standardized).tolist(),
    }
    doc.update(schema=SIM_SCHEMA, version=__version__)
    _write(json.dumps(doc, indent=2, sort_keys=True), args.out)


def build_parser():
    ap = argparse.ArgumentParser(prog="blockindep", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test independence of column blocks of a CSV file")
    t.add_argument("csv")
    t.add_argument("--blocks", required=True, help="block sizes, e.g. 8,8,16")
    t.add_argument("--stat", default="schott", help="schott, wilks or poly:c0,c1,...")
    t.add_argument("--mean", choices=["known", "unknown"], default="unknown")
    t.add_argument("--method", choices=["closed", "contour", "mp"], default="closed")
    t.add_argument("--out")
    t.set_defaults(func=cmd_test)

    p = sub.add_parser("params", help="asymptotic mean and variance of a statistic")
    p.add_argument("--blocks", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--stat", default="schott")
    p.add_argument("--mean", choices=["known", "unknown"], default="known")
    p.add_argument("--method", choices=["closed", "contour", "mp"], default="closed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_params)

    d = sub.add_parser("density", help="density of the limiting spectral law")
    d.add_argument("--y", required=True, help="block ratios, e.g. 0.2,0.3 or 0.05*16")
    d.add_argument("--xmin", type=float, default=0.0)
    d.add_argument("--xmax", type=float, default=None)
    d.add_argument("--points", type=int, default=400)
    d.add_argument("--eps", type=float, default=1e-4)
    d.add_argument("--out")
    d.set_defaults(func=cmd_density)

    s = sub.add_parser("simulate", help="run a Monte Carlo design from a config file")
    s.add_argument("--config", required=True, help="YAML/JSON file or builtin:d1m1g1s1_null")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "density" and args.xmax is None:
        try:
            args.xmax = len(parse_float_list(args.y, "--y")) + 0.5
        except UsageError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    try:
        args.func(args)
    except InputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config schema error at {exc.field}: {exc}", file=sys.stderr)
        return 2
    except DimensionError as exc:
        print(f"dimension error: {exc}", file=sys.stderr)
        return 2
    except SingularBlockError as exc:
        print(f"singular block error: {exc}", file=sys.stderr)
        return 2
    except RegimeError as exc:
        print(f"regime error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, BlockIndepError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
