"""Batch command-line interface.

Verbs: train, compress, decompress, eval, bench, validate-model.
Training reads a declarative JSON config; flags override config keys.
Every command is deterministic given config + seed.  Distinct exit codes
per error class (see EXIT_CODES) so pipelines can branch on failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import codec, ingest, model_io
from .errors import (
    ChecksumMismatchError,
    ContractError,
    CorruptStreamError,
    FormatError,
    PczipError,
    StructuralError,
    UnencodableSymbolError,
)
from .kernels import BACKEND
from .learner import EmConfig, HcltSpec, chow_liu_tree, mutual_information, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_CHECKSUM = 4
EXIT_DATA = 5

EXIT_CODES = {
    FormatError: EXIT_FORMAT,
    StructuralError: EXIT_FORMAT,
    CorruptStreamError: EXIT_CHECKSUM,
    ChecksumMismatchError: EXIT_CHECKSUM,
    UnencodableSymbolError: EXIT_DATA,
    ContractError: EXIT_DATA,
}


def _fail(exc: Exception) -> int:
    sys.stderr.write(f"pczip: error: {exc}\n")
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return EXIT_ERROR if isinstance(exc, PczipError) else EXIT_ERROR


def _ingest_spec(args, cfg: dict) -> ingest.IngestSpec:
    data_cfg = dict(cfg.get("data", {}))
    path = args.data or data_cfg.get("path")
    if not path:
        raise FormatError("no dataset path given (flag --data or config data.path)")
    shape = data_cfg.get("shape")
    if getattr(args, "shape", None):
        shape = [int(s) for s in args.shape.split(",")]
    card = getattr(args, "cardinality", None) or data_cfg.get("cardinality")
    thr = getattr(args, "binarize_threshold", None)
    if thr is None:
        thr = data_cfg.get("binarize_threshold")
    return ingest.IngestSpec(
        fmt=getattr(args, "format", None) or data_cfg.get("format", "idx"),
        path=path,
        shape=tuple(shape) if shape else None,
        cardinality=card,
        binarize_threshold=thr,
    )


def cmd_train(args) -> int:
    cfg = {}
    if args.config:
        with open(args.config) as f:
            cfg = json.load(f)
    spec_cfg = dict(cfg.get("model", {}))
    em_cfg = dict(cfg.get("em", {}))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)

    data, cards = ingest.load_dataset(_ingest_spec(args, cfg))
    valid_frac = cfg.get("valid_fraction", 0.0)
    valid = None
    if valid_frac:
        n_valid = int(data.shape[0] * valid_frac)
        valid, data = data[:n_valid], data[n_valid:]

    em = EmConfig(
        batch_size=em_cfg.get("batch_size", 1024),
        minibatch_epochs=(args.minibatch_epochs
                          if args.minibatch_epochs is not None
                          else em_cfg.get("minibatch_epochs", 100)),
        fullbatch_epochs=(args.fullbatch_epochs
                          if args.fullbatch_epochs is not None
                          else em_cfg.get("fullbatch_epochs", 20)),
        eta_start=em_cfg.get("eta_start", 0.1),
        eta_end=em_cfg.get("eta_end", 0.05),
        alpha=em_cfg.get("alpha", 0.01),
    )
    m = args.latents if args.latents is not None else spec_cfg.get("latents", 16)
    truncate = spec_cfg.get("truncate_bits")

    print(f"learning structure over D={data.shape[1]} (N={data.shape[0]}, "
          f"K={int(cards[0])}, backend={BACKEND})")
    mi = mutual_information(data, cards, truncate_bits=truncate)
    tree = chow_liu_tree(mi)
    spec = HcltSpec(tree=tree, latents=m, em=em, seed=seed,
                    truncate_bits=truncate)
    circuit, history = train(data, spec, cards, valid=valid, log_fn=print)

    prep = codec.prepare_model(circuit)
    out = args.out or cfg.get("out", "model.pcm")
    crc = model_io.write_model(
        out, prep.circuit, prep.vtree, prep.conf,
        metadata={"seed": seed, "latents": m,
                  "em": em.__dict__, "truncate_bits": truncate})
    log_path = cfg.get("log")
    if log_path:
        with open(log_path, "a") as f:
            for h in history:
                f.write(h.line() + "\n")
    print(f"wrote {out} (checksum {crc:#010x})")
    return EXIT_OK


def _load_prepared(path) -> codec.PreparedModel:
    mf = model_io.read_model(path)
    return codec.prepare_model(mf.circuit, mf.vtree, mf.conf,
                               checksum=mf.checksum)


def cmd_compress(args) -> int:
    prep = _load_prepared(args.model)
    data, cards = ingest.load_dataset(_ingest_spec(args, {}))
    archive, stats = codec.compress(
        prep.circuit, prep.schedule, prep.p_down, data,
        checksum=prep.checksum, threads=args.threads)
    archive.write(args.out)
    print(stats.line())
    return EXIT_OK


def cmd_decompress(args) -> int:
    prep = _load_prepared(args.model)
    archive = codec.Archive.read(args.archive)
    data = codec.decompress(prep.circuit, prep.schedule, prep.p_down,
                            archive, checksum=prep.checksum,
                            threads=args.threads)
    if args.format == "idx":
        shape = ([int(s) for s in args.shape.split(",")]
                 if args.shape else [data.shape[1]])
        ingest.write_idx(args.out, data.reshape(data.shape[0], *shape))
    else:
        data.astype(np.uint8).tofile(args.out)
    print(f"decompressed {data.shape[0]} samples -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    prep = _load_prepared(args.model)
    data, cards = ingest.load_dataset(_ingest_spec(args, {}))
    bpd = codec.eval_bpd(prep.circuit, data)
    baseline = float(np.mean(np.log2(prep.circuit.cardinalities)))
    print(f"samples={data.shape[0]} D={data.shape[1]} theoretical_bpd={bpd:.4f} "
          f"raw_bpd={baseline:.4f} saving={100 * (1 - bpd / baseline):.1f}%")
    return EXIT_OK


def cmd_bench(args) -> int:
    dims = [int(d) for d in args.dims.split(",")]
    print(f"# schedule counting (M={args.latents})")
    for row in bench_mod.counting_table(dims, m=args.latents):
        print(row.line())
    if not args.counts_only:
        backends = ("c", "python") if args.backends == "both" else (args.backends,)
        print(f"# throughput ({args.samples} samples/dim)")
        for row in bench_mod.throughput_table(
                dims, m=args.latents, n_samples=args.samples,
                backends=backends):
            print(row.line())
    return EXIT_OK


def cmd_validate_model(args) -> int:
    mf = model_io.read_model(args.model)
    flags = mf.circuit.flags
    print(f"units={len(mf.circuit.units)} edges={mf.circuit.num_edges} "
          f"D={mf.circuit.num_vars} params={mf.circuit.num_params}")
    print(f"smooth={flags.smooth} decomposable={flags.decomposable} "
          f"structured={flags.structured} alternating={flags.alternating} "
          f"vtree={'present' if mf.vtree is not None else 'absent'} "
          f"checksum={mf.checksum:#010x}")
    if not flags.ok:
        raise StructuralError(f"invalid circuit: {flags.offenders}")
    return EXIT_OK


def _add_data_flags(p, with_out=False):
    p.add_argument("--data", help="dataset path")
    p.add_argument("--format", choices=["idx", "raw", "text"], default=None)
    p.add_argument("--shape", help="comma-separated per-sample shape (raw/idx)")
    p.add_argument("--cardinality", type=int, default=None)
    p.add_argument("--binarize-threshold", dest="binarize_threshold",
                   type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pczip",
        description="lossless compression with circuit entropy models")
    ap.add_argument("--threads", type=int,
                    default=int(os.environ.get("PCZIP_THREADS", "1")))
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a model from data")
    p.add_argument("--config", help="JSON config file")
    _add_data_flags(p)
    p.add_argument("--out", help="output model path")
    p.add_argument("--latents", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--minibatch-epochs", type=int, default=None)
    p.add_argument("--fullbatch-epochs", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compress", help="dataset -> archive")
    p.add_argument("model")
    p.add_argument("out")
    _add_data_flags(p)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("decompress", help="archive -> dataset")
    p.add_argument("model")
    p.add_argument("archive")
    p.add_argument("out")
    p.add_argument("--format", choices=["idx", "raw"], default="idx")
    p.add_argument("--shape", help="per-sample shape for the output file")
    p.set_defaults(fn=cmd_decompress)

    p = sub.add_parser("eval", help="theoretical bpd of data under a model")
    p.add_argument("model")
    _add_data_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="counting/throughput tables")
    p.add_argument("--dims", default="16,64,256,1024")
    p.add_argument("--latents", type=int, default=4)
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--backends", choices=["c", "python", "both"],
                   default="both")
    p.add_argument("--counts-only", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("validate-model", help="check a model file")
    p.add_argument("model")
    p.set_defaults(fn=cmd_validate_model)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"pczip: error: {exc}\n")
        return EXIT_USAGE
    except PczipError as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
