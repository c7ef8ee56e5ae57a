"""Command-line driver: single runs, convergence studies, projection ladders.

Configuration is a flat ``key = value`` text file.  Recognized keys:

    nu, kappa, beta_y   problem coefficients (defaults 1, 1, 1)
    case                manufactured case name (``trig``)
    k                   element pair: 1 (P1/P1/P1) or 2 (P2/P1/P2)
    mesh_n              base unit-square subdivision count
    dt, T               time step and horizon (``run``)
    dt_rule             spatial_h1 | spatial_l2 | temporal (``convergence``)
    dt_const            the constant c in dt = c h^k / c h^(k+1) / dt = c
    levels              number of refinement levels
    c0                  stability constant in dt <= c0 sqrt(h)
    solver_tol          Krylov relative residual (default 1e-10)
    cfl_policy          abort | warn
    out_csv             optional CSV output path
    out_mesh            output path for the ``mesh`` subcommand

Exit codes: 0 success, 2 configuration error, 3 runtime (solver/CFL) failure.
"""

import argparse
import sys

import numpy as np

from .errors import (CflViolation, ConfigError, FootOutsideDomain,
                     MeshFormatError, SolverFailure)
from .mesh import generate_unit_square, write_mesh
from .projection import ProjectionWorkspace, stokes_poisson_project
from .assembly import velocity_maps
from .scheme import SchemeConfig, run as run_scheme
from .verification import (NORM_NAMES, NormAccumulator, convergence_study,
                           field_errors, initial_data, manufactured_case,
                           pressure_error, problem_data)

CSV_HEADER = ("level,n,h,dt,err_u_linf_h1,err_u_linf_l2,err_th_linf_h1,"
              "err_th_linf_l2,err_p_l2l2,err_dtu_l2l2,err_dtth_l2l2,"
              "ord_u_h1,ord_u_l2,ord_th_h1,ord_th_l2,ord_p_l2")

ORDER_COLUMNS = (("ord_u_h1", "err_u_linf_h1"), ("ord_u_l2", "err_u_linf_l2"),
                 ("ord_th_h1", "err_th_linf_h1"),
                 ("ord_th_l2", "err_th_linf_l2"), ("ord_p_l2", "err_p_l2l2"))

PROJECT_CSV_HEADER = ("level,n,h,err_u_h1,err_u_l2,err_th_h1,err_th_l2,"
                      "err_p_l2,ord_u_h1,ord_u_l2,ord_th_h1,ord_th_l2,"
                      "ord_p_l2")

_DEFAULTS = {
    "nu": "1", "kappa": "1", "beta_y": "1", "case": "trig", "k": "1",
    "mesh_n": "8", "dt": "0.01", "T": "0.5", "dt_rule": "spatial_h1",
    "dt_const": "0.1", "levels": "3", "c0": "1.0", "solver_tol": "1e-10",
    "cfl_policy": "abort", "out_csv": "", "out_mesh": "",
}

_INT_KEYS = {"k", "mesh_n", "levels"}
_FLOAT_KEYS = {"nu", "kappa", "beta_y", "dt", "T", "dt_const", "c0",
               "solver_tol"}


def parse_config(path):
    """Read the flat key = value format, falling back to defaults."""
    config = dict(_DEFAULTS)
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', "
                              f"got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in config:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        config[key] = value
    out = {}
    for key, value in config.items():
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigError(f"{path}: key {key!r}: cannot parse "
                              f"{value!r}") from exc
    return out


def fmt(x):
    """17 significant digits, the CSV number format."""
    return format(x, ".17g")


def _case_from_config(config):
    return manufactured_case(config["case"], nu=config["nu"],
                             kappa=config["kappa"], beta_y=config["beta_y"])


def _write_lines(lines, path):
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def convergence_csv_lines(table):
    lines = [CSV_HEADER]
    for i, row in enumerate(table.rows):
        cells = [str(row.level), str(row.n), fmt(row.h), fmt(row.dt)]
        cells += [fmt(getattr(row.norms, name)) for name in NORM_NAMES]
        for _, err_name in ORDER_COLUMNS:
            if i == 0:
                cells.append("")
            else:
                cells.append(fmt(table.observed_orders[err_name][i - 1]))
        lines.append(",".join(cells))
    return lines


def print_convergence_table(table, out=sys.stdout):
    head = (f"{'lvl':>3} {'n':>4} {'h':>10} {'dt':>11} "
            f"{'u~H1':>10} {'u~L2':>10} {'th~H1':>10} {'th~L2':>10} "
            f"{'p~L2':>10} {'ord_uH1':>8} {'ord_uL2':>8} {'ord_thH1':>8} "
            f"{'ord_thL2':>8} {'ord_p':>8}")
    print(head, file=out)
    for i, row in enumerate(table.rows):
        nr = row.norms
        orders = ["   --   "] * 5
        if i > 0:
            orders = [f"{table.observed_orders[err][i - 1]:8.3f}"
                      for _, err in ORDER_COLUMNS]
        print(f"{row.level:>3} {row.n:>4} {row.h:>10.4e} {row.dt:>11.4e} "
              f"{nr.err_u_linf_h1:>10.3e} {nr.err_u_linf_l2:>10.3e} "
              f"{nr.err_th_linf_h1:>10.3e} {nr.err_th_linf_l2:>10.3e} "
              f"{nr.err_p_l2l2:>10.3e} " + " ".join(orders), file=out)


def cmd_run(config_path):
    config = parse_config(config_path)
    case = _case_from_config(config)
    mesh = generate_unit_square(config["mesh_n"])
    scheme_config = SchemeConfig(k=config["k"], dt=config["dt"],
                                 T=config["T"], data=problem_data(case),
                                 solver_tol=config["solver_tol"],
                                 cfl_policy=config["cfl_policy"])
    acc = NormAccumulator(case, mesh, config["k"], config["dt"])
    print(f"# run: case={config['case']} k={config['k']} "
          f"n={config['mesh_n']} dt={fmt(config['dt'])} T={fmt(config['T'])}")
    for state in run_scheme(scheme_config, mesh, *initial_data(case)):
        acc.add(state)
        if state.n == 0:
            print(f"step {state.n:5d} t={state.t:.6f} (projection initial data)")
            continue
        d = state.diagnostics
        print(f"step {state.n:5d} t={state.t:.6f} "
              f"cfl={state.cfl.product:.4e} "
              f"flow[{d['flow'].iterations:4d} it, {d['flow'].residual:.2e}] "
              f"temp[{d['temperature'].iterations:4d} it, "
              f"{d['temperature'].residual:.2e}] "
              f"div={d['div_residual']:.2e}")
    report = acc.report()
    print("# final error norms against the manufactured solution")
    for name in NORM_NAMES:
        print(f"{name} = {fmt(getattr(report, name))}")
    if config["out_csv"]:
        cells = ["0", str(config["mesh_n"]), fmt(mesh.h), fmt(config["dt"])]
        cells += [fmt(getattr(report, name)) for name in NORM_NAMES]
        cells += [""] * 5
        _write_lines([CSV_HEADER, ",".join(cells)], config["out_csv"])
    return 0


def cmd_convergence(config_path):
    config = parse_config(config_path)
    case = _case_from_config(config)
    table = convergence_study(
        case, k=config["k"], mesh_n=config["mesh_n"],
        n_levels=config["levels"], dt_rule=config["dt_rule"],
        dt_const=config["dt_const"], T=config["T"], c0=config["c0"],
        solver_tol=config["solver_tol"], cfl_policy=config["cfl_policy"],
        progress=lambda row: print(
            f"# level {row.level}: n={row.n} dt={fmt(row.dt)} done"))
    print_convergence_table(table)
    if config["out_csv"]:
        _write_lines(convergence_csv_lines(table), config["out_csv"])
    return 0


def cmd_project(config_path):
    config = parse_config(config_path)
    case = _case_from_config(config)
    k = config["k"]
    rows = []
    for level in range(config["levels"]):
        n = config["mesh_n"] * 2 ** level
        mesh = generate_unit_square(n)
        ws = ProjectionWorkspace(mesh, *velocity_maps(mesh, k),
                                 problem_data(case), k)
        u, p, th, _ = stokes_poisson_project(
            ws,
            lambda x, y: case.u(x, y, 0.0),
            lambda x, y: case.grad_u(x, y, 0.0),
            lambda x, y: case.p(x, y, 0.0),
            lambda x, y: case.theta(x, y, 0.0),
            lambda x, y: case.grad_theta(x, y, 0.0),
            tol=config["solver_tol"])
        u_l2, u_h1 = field_errors(u, lambda x, y: case.u(x, y, 0.0),
                                  lambda x, y: case.grad_u(x, y, 0.0),
                                  ws.cache_v)
        t_l2, t_h1 = field_errors(th, lambda x, y: case.theta(x, y, 0.0),
                                  lambda x, y: case.grad_theta(x, y, 0.0),
                                  ws.cache_t)
        p_l2 = pressure_error(p, lambda x, y: case.p(x, y, 0.0), ws.cache_q,
                              ws.pressure_weights, ws.domain_area)
        rows.append((level, n, mesh.h, u_h1, u_l2, t_h1, t_l2, p_l2))

    print(f"{'lvl':>3} {'n':>4} {'h':>10} {'u_H1':>10} {'u_L2':>10} "
          f"{'th_H1':>10} {'th_L2':>10} {'p_L2':>10}  orders(uH1 uL2 thH1 thL2 p)")
    lines = [PROJECT_CSV_HEADER]
    for i, row in enumerate(rows):
        level, n, h, u_h1, u_l2, t_h1, t_l2, p_l2 = row
        if i == 0:
            orders = [""] * 5
            order_text = "-- " * 5
        else:
            prev = rows[i - 1]
            ovals = [np.log2(prev[3] / u_h1), np.log2(prev[4] / u_l2),
                     np.log2(prev[5] / t_h1), np.log2(prev[6] / t_l2),
                     np.log2(prev[7] / p_l2)]
            orders = [fmt(v) for v in ovals]
            order_text = " ".join(f"{v:6.3f}" for v in ovals)
        print(f"{level:>3} {n:>4} {h:>10.4e} {u_h1:>10.3e} {u_l2:>10.3e} "
              f"{t_h1:>10.3e} {t_l2:>10.3e} {p_l2:>10.3e}  {order_text}")
        cells = [str(level), str(n), fmt(h), fmt(u_h1), fmt(u_l2), fmt(t_h1),
                 fmt(t_l2), fmt(p_l2)] + orders
        lines.append(",".join(cells))
    if config["out_csv"]:
        _write_lines(lines, config["out_csv"])
    return 0


def cmd_mesh(config_path):
    config = parse_config(config_path)
    if not config["out_mesh"]:
        raise ConfigError("mesh export needs the out_mesh key")
    mesh = generate_unit_square(config["mesh_n"])
    write_mesh(mesh, config["out_mesh"])
    print(f"wrote {mesh.n_nodes} nodes / {mesh.n_cells} cells "
          f"to {config['out_mesh']}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="lgconvect",
        description="Characteristics FEM solver for natural convection "
                    "with a convergence-verification harness.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "run one simulation and report error norms"),
            ("convergence", "run a refinement study and tabulate orders"),
            ("project", "project the exact fields on a refinement ladder"),
            ("mesh", "export the configured unit-square mesh")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="flat key = value configuration file")
    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "convergence": cmd_convergence,
               "project": cmd_project, "mesh": cmd_mesh}[args.command]
    try:
        return handler(args.config)
    except (ConfigError, MeshFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, CflViolation, FootOutsideDomain) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
