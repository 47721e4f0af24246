"""Command-line front end.

    merank synth          generate a synthetic world split into anchors/queries
    merank build-anchors  build and seal the anchor memory
    merank run            stream queries through the re-ranker
    merank eval           correlation and collapse metrics for result files
    merank permute-eval   order robustness over seeded permutations
    merank serve          expose the simulated backend over HTTP

Exit codes: 0 ok, 1 usage error, 2 data error, 3 backend error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .backend import ExternalBackend, ImageRef, SimBackendConfig, SimulatedBackend, generate_world, start_server
from .errors import BackendError, MerankError
from .fusion import CLOSED_FORM, EXACT, FusionConfig
from .memory import MemoryBank, load_bank, load_contrasts_into, save_bank
from .metrics import HistogramSpec, evaluate, order_robustness, wavg
from .pipeline import PipelineConfig, build_anchor_memory, run_stream
from .records import load_results, load_stream, load_world, save_results, save_stream, write_jsonl
from .retrieval import RetrievalConfig

log = logging.getLogger("merank")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "k": 32,
    "bins": 5,
    "lambda": 0.01,
    "epsilon": 0.75,
    "capacity": 1024,
    "fusion": "exact",
    "backend": "sim",
    "levels": 5,
    "score_noise": 0.5,
    "comparator_scale": 1.0,
    "comparator_noise": 0.0,
    "embed_weight": 0.5,
    "workers": 1,
    "timeout": 30.0,
    "retries": 2,
    "hist_bins": 100,
    "runs": 5,
    "anchor_frac": 0.3,
}
_INT_KEYS = {"seed", "k", "bins", "capacity", "levels", "workers", "retries", "hist_bins", "runs"}
_STR_KEYS = {"fusion", "backend"}


class UsageError(MerankError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _coerce(key, value):
    if key in _STR_KEYS:
        return value
    if key == "levels" and str(value).lower() in ("none", "continuous", "0"):
        return None
    try:
        return int(value) if key in _INT_KEYS else float(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def effective_config(args) -> dict:
    """Defaults, then MERANK_SEED, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if os.environ.get("MERANK_SEED"):
        cfg["seed"] = _coerce("seed", os.environ["MERANK_SEED"])
    cfg_path = getattr(args, "config", None) or os.environ.get("MERANK_CONFIG")
    if cfg_path:
        cfg.update(read_config_file(cfg_path))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["fusion"] == "closed":
        cfg["fusion"] = CLOSED_FORM
    if cfg["fusion"] not in (EXACT, CLOSED_FORM):
        raise UsageError(f"unknown fusion mode {cfg['fusion']!r}")
    return cfg


def pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        retrieval=RetrievalConfig(k=cfg["k"], bins=cfg["bins"], rng_seed=cfg["seed"]),
        fusion=FusionConfig(lam=cfg["lambda"], mode=cfg["fusion"]),
        epsilon=cfg["epsilon"],
        capacity=cfg["capacity"],
        compare_workers=cfg["workers"],
    )


def sim_config(cfg: dict) -> SimBackendConfig:
    return SimBackendConfig(
        quantization_levels=cfg["levels"],
        score_noise=cfg["score_noise"],
        comparator_scale=cfg["comparator_scale"],
        comparator_noise=cfg["comparator_noise"],
        embed_quality_weight=cfg["embed_weight"],
        rng_seed=cfg["seed"],
    )


def make_backend(cfg: dict, world_path):
    spec = cfg["backend"]
    if spec == "sim":
        if world_path is None or not Path(world_path).exists():
            raise UsageError("the simulated backend needs --world (or world.jsonl beside the input)")
        return SimulatedBackend(load_world(world_path), sim_config(cfg))
    if spec.startswith("external:"):
        return ExternalBackend(spec[len("external:"):], timeout=cfg["timeout"], retries=cfg["retries"])
    raise UsageError(f"unknown backend {spec!r} (use 'sim' or 'external:<url>')")


def _world_for(args, beside) -> Path | None:
    if getattr(args, "world", None):
        return Path(args.world)
    candidate = Path(beside).parent / "world.jsonl"
    return candidate if candidate.exists() else None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(out_path, command: str, cfg: dict, inputs: dict, outputs: dict, started: str,
                   **extra) -> Path:
    manifest = {
        "tool": "merank",
        "version": __version__,
        "command": command,
        "argv": sys.argv[1:],
        "config": cfg,
        "seeds": {"seed": cfg.get("seed")},
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": {k: str(v) for k, v in outputs.items() if v is not None},
        "started": started,
        "finished": _now(),
        **extra,
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    started = _now()
    cfg = effective_config(args)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if not 0.0 <= cfg["anchor_frac"] <= 1.0:
        raise UsageError("--anchor-frac must lie in [0, 1]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(args.n, cfg["seed"])
    n_anchor = int(round(cfg["anchor_frac"] * args.n))
    write_jsonl(out / "world.jsonl", (it.to_dict() for it in world))
    for name, part in (("anchors.jsonl", world[:n_anchor]), ("queries.jsonl", world[n_anchor:])):
        save_stream(out / name, [ImageRef(it.id, it.id) for it in part], [it.q for it in part])
    write_manifest(out / "synth", "synth", cfg, {}, {"dir": out}, started, n=args.n, n_anchors=n_anchor,
                   n_queries=args.n - n_anchor)
    print(f"wrote {n_anchor} anchors and {args.n - n_anchor} queries to {out}")
    return EXIT_OK


def cmd_build_anchors(args) -> int:
    started = _now()
    cfg = effective_config(args)
    refs, gts = load_stream(args.dataset)
    if any(g is None for g in gts):
        raise MerankError("every anchor record needs a 'gt' value")
    backend = make_backend(cfg, _world_for(args, args.dataset))
    pcfg = pipeline_config(cfg)
    bank, trace = build_anchor_memory(list(zip(refs, gts)), backend, pcfg, fit_seed=cfg["seed"])
    save_bank(bank, args.out)
    n_reflected = sum(t["reflected"] for t in trace)
    write_manifest(args.out, "build-anchors", cfg, {"dataset": args.dataset}, {"bank": args.out}, started,
                   n_items=len(bank.anchors), reflected_count=n_reflected,
                   logistic=bank.logistic.to_dict())
    print(f"anchor memory: {len(bank.anchors)} items, {n_reflected} reflected -> {args.out}")
    return EXIT_OK


def _prepare_bank(args, cfg) -> MemoryBank:
    bank = load_bank(args.am)
    bank.capacity = cfg["capacity"]
    if getattr(args, "cm_in", None):
        load_contrasts_into(bank, args.cm_in)
    return bank


def cmd_run(args) -> int:
    started = _now()
    cfg = effective_config(args)
    refs, gts = load_stream(args.stream)
    bank = _prepare_bank(args, cfg)
    backend = make_backend(cfg, _world_for(args, args.stream))
    results = run_stream(refs, bank, backend, pipeline_config(cfg))
    for r, g in zip(results, gts):
        r.gt = g
    save_results(args.out, results)
    if args.cm_out:
        save_bank(bank, args.cm_out, include_anchors=False)
    n_err = sum(r.error is not None for r in results)
    write_manifest(args.out, "run", cfg, {"stream": args.stream, "am": args.am, "cm_in": args.cm_in},
                   {"results": args.out, "cm_out": args.cm_out}, started,
                   n_queries=len(results), n_errors=n_err, n_reflected=sum(r.reflected for r in results),
                   wall_time={r.id: r.wall_time for r in results})
    print(f"processed {len(results)} queries ({n_err} errors) -> {args.out}")
    return EXIT_DATA if n_err == len(results) else EXIT_OK


def eval_results(paths, spec: HistogramSpec) -> dict:
    per_file = {}
    for path in paths:
        rows = [r for r in load_results(path) if r.error is None]
        if any(r.gt is None for r in rows):
            raise MerankError(f"{path}: results lack ground truth ('gt')")
        gt = [r.gt for r in rows]
        per_file[str(path)] = {
            "baseline": evaluate([r.mapped_score for r in rows], gt, spec).to_dict(),
            "refined": evaluate([r.refined_score for r in rows], gt, spec).to_dict(),
        }
    sizes = [v["refined"]["n"] for v in per_file.values()]
    summary = {}
    for column in ("baseline", "refined"):
        summary[column] = {m: wavg([v[column][m] for v in per_file.values()], sizes)
                           for m in ("plcc", "srcc", "js", "entropy", "effective_bins")}
    return {"files": per_file, "wavg": summary, "sizes": sizes}


def cmd_eval(args) -> int:
    started = _now()
    cfg = effective_config(args)
    report = eval_results(args.results, HistogramSpec(bins=cfg["hist_bins"]))
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    write_manifest(args.report, "eval", cfg, {"results": ",".join(args.results)}, {"report": args.report},
                   started)
    for column in ("baseline", "refined"):
        w = report["wavg"][column]
        print(f"{column:9s} PLCC {w['plcc']:.4f}  SRCC {w['srcc']:.4f}  JS {w['js']:.4f}  "
              f"H {w['entropy']:.3f}  eff.bins {w['effective_bins']:.2f}")
    return EXIT_OK


def cmd_permute_eval(args) -> int:
    started = _now()
    cfg = effective_config(args)
    refs, gts = load_stream(args.stream)
    if any(g is None for g in gts):
        raise MerankError("permute-eval needs 'gt' on every query")
    bank = _prepare_bank(args, cfg)
    backend = make_backend(cfg, _world_for(args, args.stream))
    report = order_robustness(refs, gts, bank, backend, pipeline_config(cfg), n_runs=cfg["runs"],
                              seed=cfg["seed"], spec=HistogramSpec(bins=cfg["hist_bins"]))
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    write_manifest(args.report, "permute-eval", cfg, {"stream": args.stream, "am": args.am},
                   {"report": args.report}, started)
    for m in ("plcc", "srcc"):
        print(f"{m.upper()} {report[m]['mean']:.4f} ± {report[m]['std']:.4f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = effective_config(args)
    if not args.world:
        raise UsageError("serve needs --world")
    backend = SimulatedBackend(load_world(args.world), sim_config(cfg))
    server, url = start_server(backend, args.host, args.port)
    print(f"serving simulated backend at {url}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key=value config file (default: $MERANK_CONFIG)")
    p.add_argument("--seed", type=int)


def _add_backend(p):
    p.add_argument("--backend", help="sim | external:<url>")
    p.add_argument("--world", help="synthetic world file for the simulated backend")
    p.add_argument("--levels", type=lambda v: _coerce("levels", v),
                   help="score quantization levels (0 = continuous)")
    p.add_argument("--score-noise", dest="score_noise", type=float)
    p.add_argument("--comparator-scale", dest="comparator_scale", type=float)
    p.add_argument("--comparator-noise", dest="comparator_noise", type=float)
    p.add_argument("--embed-weight", dest="embed_weight", type=float)
    p.add_argument("--timeout", type=float)
    p.add_argument("--retries", type=int)


def _add_pipeline(p):
    p.add_argument("--k", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--capacity", type=int)
    p.add_argument("--fusion", choices=["exact", "closed", "closed_form"])
    p.add_argument("--workers", type=int, help="concurrent comparisons per query")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="merank", description="Memory-enhanced re-ranking of quality scores.")
    parser.add_argument("--version", action="version", version=f"merank {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic world")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--anchor-frac", dest="anchor_frac", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-anchors", help="build the anchor memory bank")
    _add_common(p)
    _add_backend(p)
    _add_pipeline(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_anchors)

    p = sub.add_parser("run", help="stream queries through the re-ranker")
    _add_common(p)
    _add_backend(p)
    _add_pipeline(p)
    p.add_argument("--stream", required=True)
    p.add_argument("--am", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cm-in", dest="cm_in")
    p.add_argument("--cm-out", dest="cm_out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate result files")
    _add_common(p)
    p.add_argument("results", nargs="+")
    p.add_argument("--report", required=True)
    p.add_argument("--hist-bins", dest="hist_bins", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("permute-eval", help="order robustness over permutations")
    _add_common(p)
    _add_backend(p)
    _add_pipeline(p)
    p.add_argument("--stream", required=True)
    p.add_argument("--am", required=True)
    p.add_argument("--cm-in", dest="cm_in")
    p.add_argument("--runs", type=int)
    p.add_argument("--report", required=True)
    p.add_argument("--hist-bins", dest="hist_bins", type=int)
    p.set_defaults(func=cmd_permute_eval)

    p = sub.add_parser("serve", help="serve the simulated backend over HTTP")
    _add_common(p)
    _add_backend(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"merank: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"merank: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (MerankError, OSError, ValueError) as exc:
        print(f"merank: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
