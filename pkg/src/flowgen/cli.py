"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 I/O or format error, 4 non-finite loss.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .diffusion import ddpm_batch_generate, make_schedule, train_ddpm
from .errors import ConfigError, ContractViolation, FormatError, NumericError
from .flow import DEFAULT_BATCH_SIZE, TrainOptions, train_flow, write_loss_trace
from .harness import load_config, run_experiment
from .metrics import MetricOptions, evaluate_all
from .nn import DEFAULT_LR, Checkpoint, init_model, load_model, save_model
from .plot import render_sweep_plot
from .sampler import batch_generate
from .signal import ConditionVector, LabeledDataset, SynthSpec, import_csv, load_dataset, save_dataset, synth_dataset

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("flowgen")


def _bits(text: str) -> ConditionVector:
    try:
        return ConditionVector([int(b) for b in text.replace(",", " ").split()])
    except ValueError:
        raise ContractViolation(f"condition must be a list of 0/1 values, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def cmd_synth_data(args):
    spec = SynthSpec(
        args.n, args.channels, args.samples, args.rate, args.condition_dim, args.seed, args.noise, args.bumps
    )
    save_dataset(synth_dataset(spec), args.out)
    log.info("wrote %d signals to %s", args.n, args.out)


def cmd_train(args):
    ds = load_dataset(args.data)
    channels, samples = ds.shape
    model = init_model(
        channels, samples, ds.condition_dim, _ints(args.hidden), sample_rate_hz=ds.sample_rate_hz, seed=args.init_seed
    )
    opts = TrainOptions(args.steps, args.batch_size, args.lr, args.seed, args.log_every)
    if args.method == "fm":
        model, trace = train_flow(model, ds, opts)
        ck = Checkpoint(model, "fm", lr=args.lr)
    else:
        sched = make_schedule(args.T, args.beta_min, args.beta_max)
        model, trace = train_ddpm(model, ds, sched, opts)
        ck = Checkpoint(model, "ddpm", lr=args.lr, schedule=(args.T, args.beta_min, args.beta_max))
    save_model(args.out, ck)
    if args.loss_trace:
        write_loss_trace(trace, args.loss_trace)
    if trace:
        log.info("final loss %.6f after %d steps", trace[-1].loss, args.steps)


def cmd_sample(args):
    ck = load_model(args.checkpoint)
    if ck.method != args.method:
        raise ContractViolation(f"checkpoint {args.checkpoint} holds a {ck.method!r} model, not {args.method!r}")
    cond = _bits(args.condition)
    if cond.dim != ck.model.condition_dim:
        raise ContractViolation(f"condition width {cond.dim} does not match checkpoint width {ck.model.condition_dim}")
    if args.n < 1:
        raise ContractViolation("n must be >= 1")
    conds = [cond] * args.n
    if ck.method == "fm":
        gen = batch_generate(ck.model, conds, args.nfe, args.seed, args.integrator)
    else:
        sched = make_schedule(*ck.schedule)
        gen = ddpm_batch_generate(ck.model, conds, sched, args.nfe, args.seed)
    save_dataset(LabeledDataset(tuple(gen), tuple(conds)), args.out)


def cmd_evaluate(args):
    real = load_dataset(args.real)
    gen = load_dataset(args.gen)
    if real.shape != gen.shape:
        raise ContractViolation(
            f"shape mismatch: real {args.real} is {real.shape[0]}x{real.shape[1]} (channels x samples), "
            f"generated {args.gen} is {gen.shape[0]}x{gen.shape[1]}"
        )
    opts = MetricOptions(dtw_local=args.dtw_local, dtw_pairing=args.dtw_pairing, mmd_kernel=args.kernel, seed=args.seed)
    report = evaluate_all(real, gen, opts)
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run_experiment(args):
    cfg = load_config(args.config)
    summary = run_experiment(cfg, args.out)
    log.info("artifacts in %s", summary["output_dir"])


def cmd_render_plot(args):
    render_sweep_plot(args.sweep, args.out)


def cmd_import_csv(args):
    conds = [_bits(args.condition)] * len(args.files)
    save_dataset(import_csv(args.files, args.rate, conds), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowgen", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="write a synthetic labeled dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--channels", type=int, default=8)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--rate", type=float, default=100.0)
    s.add_argument("--condition-dim", type=int, default=8)
    s.add_argument("--noise", type=float, default=0.02)
    s.add_argument("--bumps", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train a flow-matching or diffusion model")
    s.add_argument("--method", choices=("fm", "ddpm"), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    s.add_argument("--lr", type=float, default=DEFAULT_LR)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init-seed", type=int, default=0)
    s.add_argument("--hidden", default="256,256")
    s.add_argument("--log-every", type=int, default=1)
    s.add_argument("--loss-trace")
    s.add_argument("--T", type=int, default=200)
    s.add_argument("--beta-min", type=float, default=1e-4)
    s.add_argument("--beta-max", type=float, default=0.02)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate signals from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--method", choices=("fm", "ddpm"), required=True)
    s.add_argument("--nfe", type=int, required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--condition", required=True, help="bits, e.g. 0,1,0,0")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--integrator", choices=("euler", "midpoint"), default="euler")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("evaluate", help="compare two dataset files")
    s.add_argument("--real", required=True)
    s.add_argument("--gen", required=True)
    s.add_argument("--out")
    s.add_argument("--dtw-local", choices=("sq_euclidean", "abs"), default="sq_euclidean")
    s.add_argument("--dtw-pairing", choices=("aligned", "best_match"), default="aligned")
    s.add_argument("--kernel", choices=("rbf", "linear"), default="rbf")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run-experiment", help="full protocol from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_run_experiment)

    s = sub.add_parser("render-plot", help="draw figure2.svg from sweep.csv")
    s.add_argument("--sweep", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render_plot)

    s = sub.add_parser("import-csv", help="pack CSV signals (one per file) into a dataset")
    s.add_argument("files", nargs="+")
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--condition", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_import_csv)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"flowgen: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractViolation) as exc:
        print(f"flowgen: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        print(f"flowgen: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
