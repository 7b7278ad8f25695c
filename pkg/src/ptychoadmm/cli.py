"""Command-line entry point.

``ptychoadmm {simulate,reconstruct,evaluate,pipeline} --config FILE``

Exit codes: 0 success, 2 configuration error, 3 malformed or inconsistent
data file, 4 numerical abort (non-finite state), 5 conjugate gradient did
not converge in at least one exact object solve.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, formats
from .config import ConfigError, load_config, serialize_config
from .metrics import align, ssim
from .simulate import (
    CoverageError,
    ScanSet,
    corrupt,
    forward_measure,
    load_ground_truth,
    make_probe,
    make_raster_scan,
    measure_snr,
    perturb_probe,
    phantom_object,
)
from .solver import NumericalAbort, StepSchedule, read_checkpoint, run, write_checkpoint

log = logging.getLogger("ptychoadmm")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC, EXIT_CG = 0, 2, 3, 4, 5

# output file names inside the run directory
MEASUREMENTS, SCANS, TRUTH, PROBE = "measurements.pme", "scans.txt", "truth.cim", "probe.cim"
RECON, RECON_PROBE, METRICS, EVALUATION = "recon.cim", "recon_probe.cim", "metrics.csv", "evaluation.txt"


class CgNotConverged(RuntimeError):
    pass


def _emit(quiet, text):
    if not quiet:
        print(text, flush=True)


def write_provenance(config, command, extra=()):
    """Record the full configuration so the run can be repeated exactly.

    The file is itself a valid configuration; the provenance lines are
    comments.
    """
    out = Path(config.out)
    lines = [f"# command: {command}", f"# ptychoadmm {__version__}", f"# seed: {config.seed}",
             "# formats: " + " ".join(f"{k}={v}" for k, v in formats.FORMAT_VERSIONS.items())]
    lines += [f"# {k}: {v}" for k, v in extra]
    path = out / f"provenance_{command}.cfg"
    path.write_text("\n".join(lines) + "\n" + serialize_config(config), encoding="utf-8")
    return path


def _write_field_pgms(out, stem, z):
    mag8, ph8 = formats.magnitude_pgm(z), formats.phase_pgm(z)
    formats.write_pgm(out / f"{stem}_mag.pgm", mag8)
    formats.write_pgm(out / f"{stem}_phase.pgm", ph8)


# ---------------------------------------------------------------- simulate

def cmd_simulate(config, quiet=False):
    config.check_inputs("simulate")
    if config.mag_file:
        truth = load_ground_truth(config.mag_file, config.phase_file, (config.mag_min, config.mag_max),
                                  (config.phase_min, config.phase_max))
        if truth.shape != (config.n, config.n):
            raise ConfigError(f"ground-truth rasters are {truth.shape}, config has n={config.n}")
    else:
        truth = phantom_object(config.n, (config.mag_min, config.mag_max), (config.phase_min, config.phase_max))
    if config.probe_file:
        probe = formats.read_complex(config.probe_file)
        if probe.shape != (config.m, config.m):
            raise formats.FormatError(config.probe_file, 4, f"probe is {probe.shape}, config has m={config.m}")
    else:
        try:
            probe = make_probe(config.probe, config.m, config.probe_radius, config.probe_width,
                               config.probe_curvature)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        scans = make_raster_scan(config.n, config.m, config.grid_k)
    except (CoverageError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    clean = forward_measure(truth, probe, scans)
    noisy = corrupt(clean, config.noise_spec(), np.random.default_rng(config.seed))

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_measurements(out / MEASUREMENTS, noisy)
    formats.write_scans(out / SCANS, scans.m, scans.offsets)
    formats.write_complex(out / TRUTH, truth)
    formats.write_complex(out / PROBE, probe)
    _write_field_pgms(out, "truth", truth)
    snr = measure_snr(noisy, clean)
    write_provenance(config, "simulate", [("measured_snr_db", snr), ("scans", len(scans))])
    from .report import field_figure
    field_figure([truth, probe], ["object", "probe"], out / "truth.png")
    _emit(quiet, f"scans: {len(scans)}\nmeasured_snr_db: {snr}\nout: {out}")
    return EXIT_OK


# ---------------------------------------------------------------- reconstruct

def _load_inputs(config):
    """Read and cross-check every input file before the solver allocates anything."""
    mpath, spath = config.path("measurements", MEASUREMENTS), config.path("scans", SCANS)
    d = formats.read_measurements(mpath)
    m, offsets = formats.read_scans(spath)
    N = d.shape[0]
    if m != d.shape[1]:
        raise formats.FormatError(spath, 0, f"window size {m} differs from measurement size {d.shape[1]}")
    if len(offsets) != N:
        raise formats.FormatError(spath, 0, f"{len(offsets)} scans for {N} measurement blocks")
    try:
        scans = ScanSet((config.n, config.n), m, offsets)
    except ValueError as exc:
        raise formats.FormatError(spath, 0, f"{exc} (object size n={config.n})") from None

    probe_path = config.path("probe_file", PROBE)
    probe = formats.read_complex(probe_path) if probe_path.is_file() else None
    if probe is not None and probe.shape != (m, m):
        raise formats.FormatError(probe_path, 4, f"probe is {probe.shape}, measurements need {(m, m)}")
    if config.blind:
        if config.probe_init:
            omega0 = formats.read_complex(config.probe_init)
            if omega0.shape != (m, m):
                raise formats.FormatError(config.probe_init, 4, f"probe is {omega0.shape}, need {(m, m)}")
        else:
            base = probe if probe is not None else make_probe(config.probe, m, config.probe_radius,
                                                              config.probe_width, config.probe_curvature)
            omega0 = perturb_probe(base, config.probe_perturbation, np.random.default_rng([config.seed, 1]))
    else:
        if probe is None:
            raise ConfigError(f"non-blind reconstruction needs a probe file ({probe_path} not found)")
        omega0 = probe

    truth_path = config.path("ground_truth", TRUTH)
    truth = formats.read_complex(truth_path) if truth_path.is_file() else None
    if truth is not None and truth.shape != scans.shape:
        raise formats.FormatError(truth_path, 4, f"ground truth is {truth.shape}, object is {scans.shape}")
    return d, scans, omega0, truth


def cmd_reconstruct(config, quiet=False):
    config.check_inputs("reconstruct")
    scfg = config.solver_config()
    d, scans, omega0, truth = _load_inputs(config)
    if scfg.batch_size > len(scans):
        raise ConfigError(f"batch_size {scfg.batch_size} exceeds the {len(scans)} scans")
    state = read_checkpoint(config.resume, scfg) if config.resume else None

    out = Path(config.out)
    ckdir = out / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    write_provenance(config, "reconstruct")

    def save(st):
        ckdir.mkdir(exist_ok=True)
        write_checkpoint(ckdir / f"epoch_{st.epoch:05d}.ckp", st, scfg)

    try:
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught as NumericalAbort
            result = run(scfg, scans, d, omega0, ground_truth=truth, state=state,
                         search_radius=config.search_radius,
                         record_timing=config.record_timing, checkpoint_every=config.checkpoint_every,
                         on_checkpoint=save)
    except NumericalAbort as exc:
        ckdir.mkdir(exist_ok=True)
        path = ckdir / f"abort_epoch_{exc.checkpoint.epoch:05d}.ckp"
        write_checkpoint(path, exc.checkpoint, scfg)
        raise NumericalAbort(f"{exc}; last finite state saved to {path}", exc.checkpoint, exc.epoch,
                             exc.iteration) from None

    formats.write_complex(out / RECON, result.z)
    if scfg.blind:
        formats.write_complex(out / RECON_PROBE, result.omega)
    (out / METRICS).write_text(result.history.to_csv())
    _write_field_pgms(out, "recon", result.z)

    from .report import convergence_figure, field_figure
    schedule = StepSchedule.from_config(scfg, len(scans))
    drops = sorted({e for e in range(2, scfg.epochs + 1) if schedule.phase(e) != schedule.phase(e - 1)})
    if result.history.rows:
        convergence_figure(result.history, out / "convergence.png", drops)
    if truth is not None:
        al = align(result.z, truth, config.search_radius)
        field_figure([al.aligned, truth], ["reconstruction", "truth"], out / "reconstruction.png")
    else:
        field_figure([result.z], ["reconstruction"], out / "reconstruction.png")
    if scfg.blind:
        field_figure([omega0, result.omega], ["initial probe", "recovered probe"], out / "probe.png")

    if result.history.rows:
        last = result.history.rows[-1]
        _emit(quiet, "\n".join(f"{k}: {getattr(last, k)}" for k in
                               ("epoch", "fidelity", "lagrangian", "mag_ssim", "phase_ssim")))
    _emit(quiet, f"cg_failures: {result.cg_failures}")
    if result.cg_failures:
        raise CgNotConverged(f"conjugate gradient failed to converge {result.cg_failures} time(s)")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def evaluate_fields(recon, truth, search_radius=5):
    """The evaluation report as an ordered list of ``(key, value)`` pairs."""
    al = align(recon, truth, search_radius)
    return al, [("zeta_re", al.zeta.real), ("zeta_im", al.zeta.imag), ("t_row", al.shift[0]),
                ("t_col", al.shift[1]), ("mag_ssim", ssim(np.abs(al.aligned), np.abs(truth))),
                ("phase_ssim", ssim(np.angle(al.aligned), np.angle(truth))), ("residual", al.residual)]


def cmd_evaluate(config, quiet=False):
    config.check_inputs("evaluate")
    rpath, tpath = config.path("recon", RECON), config.path("ground_truth", TRUTH)
    for key, p in (("recon", rpath), ("ground_truth", tpath)):
        if not p.is_file():
            raise ConfigError(f"{key}: no such file {str(p)!r}")
    recon, truth = formats.read_complex(rpath), formats.read_complex(tpath)
    if recon.shape != truth.shape:
        raise formats.FormatError(rpath, 4, f"reconstruction is {recon.shape}, ground truth is {truth.shape}")
    al, report = evaluate_fields(recon, truth, config.search_radius)
    text = "".join(f"{k}: {v!r}\n" for k, v in report)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / EVALUATION).write_text(text)
    from .report import field_figure
    field_figure([al.aligned, truth, al.aligned - truth], ["aligned", "truth", "difference"],
                 out / "evaluation.png")
    _emit(quiet, text.rstrip("\n"))
    return EXIT_OK


def cmd_pipeline(config, quiet=False):
    config.check_inputs("pipeline")
    cmd_simulate(config, quiet)
    out = Path(config.out)
    staged = config.replace(measurements=str(out / MEASUREMENTS), scans=str(out / SCANS),
                            probe_file=str(out / PROBE), ground_truth=str(out / TRUTH), recon=None)
    status = EXIT_OK
    try:
        cmd_reconstruct(staged, quiet)
    except CgNotConverged as exc:
        log.error("%s", exc)
        status = EXIT_CG
    cmd_evaluate(staged, quiet)
    return status


COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate,
            "pipeline": cmd_pipeline}


def build_parser():
    parser = argparse.ArgumentParser(prog="ptychoadmm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config)
        changes = {k: v for k, v in (("seed", args.seed), ("out", args.out)) if v is not None}
        if changes:
            config = config.replace(**changes)
        return COMMANDS[args.command](config, args.quiet)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except formats.FormatError as exc:
        log.error("data format: %s", exc)
        return EXIT_FORMAT
    except NumericalAbort as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC
    except CgNotConverged as exc:
        log.error("%s", exc)
        return EXIT_CG


if __name__ == "__main__":
    sys.exit(main())
