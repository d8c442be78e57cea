"""Command-line client for the experiment service.

Every subcommand talks to the HTTP API: by default through an in-process
client (no server or network involved), or to a remote instance via
--server URL. Exit codes: 0 success, 1 runtime or analysis failure, 2
invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

from .config import load_config, validate_config
from .errors import ConfigError
from .simulator import METHODS

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class _InProcessClient:
    """Synchronous facade over the ASGI app: same requests and responses as a
    remote server, no sockets involved."""

    def __enter__(self) -> "_InProcessClient":
        return self

    def __exit__(self, *exc) -> bool:
        return False

    def post(self, path: str, json: dict) -> httpx.Response:
        from .service import app

        async def go() -> httpx.Response:
            transport = httpx.ASGITransport(app=app, raise_app_exceptions=False)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://service.local", timeout=None
            ) as client:
                return await client.post(path, json=json)

        return asyncio.run(go())


def _make_client(server: str | None) -> httpx.Client | _InProcessClient:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    return _InProcessClient()


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _error_exit(resp: httpx.Response) -> int:
    """Map an error response onto exit codes; 422 means the request payload
    failed validation, which is a configuration mistake."""
    try:
        detail = resp.json().get("detail")
    except ValueError:
        detail = None
    if isinstance(detail, dict) and "message" in detail:
        kind = detail.get("kind", "runtime")
        code = EXIT_CONFIG if kind == "config" else EXIT_RUNTIME
        return _fail(detail["message"], code)
    if resp.status_code == 422:
        return _fail(f"invalid request: {detail}", EXIT_CONFIG)
    return _fail(f"HTTP {resp.status_code}: {resp.text[:500]}", EXIT_RUNTIME)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        raw = cfg.model_dump()
        if args.seeds:
            raw["seeds"] = args.seeds
        if args.method:
            raw["method"] = args.method
        if args.rounds is not None:
            raw["rounds"] = args.rounds
        if args.rate is not None:
            raw["fixed_rate"] = args.rate
        if args.out:
            raw["output_dir"] = args.out
        cfg = validate_config(raw)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)

    try:
        with _make_client(args.server) as client:
            resp = client.post(
                "/experiments/run", json={"config": cfg.model_dump(), "seeds": None}
            )
    except httpx.HTTPError as exc:
        return _fail(f"request failed: {exc}", EXIT_RUNTIME)
    if resp.status_code != 200:
        return _error_exit(resp)

    body = resp.json()
    out_dir = Path(cfg.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(body["metrics_csv"], encoding="utf-8")
        (out_dir / "summary.json").write_text(
            json.dumps(body["summary"], indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        for seed, vector in body["gradients"].items():
            grad_path = out_dir / f"final_gradient_seed{seed}.csv"
            grad_path.write_text(
                "\n".join(repr(float(v)) for v in vector) + "\n", encoding="utf-8"
            )
    except OSError as exc:
        return _fail(f"cannot write outputs: {exc}", EXIT_RUNTIME)

    summary = body["summary"]
    print(f"wrote {out_dir / 'metrics.csv'} and {out_dir / 'summary.json'}")
    for entry in summary["per_seed"]:
        ratio = entry["straggler_target_ratio"]
        ratio_text = f"{ratio:.3f}" if ratio is not None else "n/a"
        print(
            f"seed {entry['seed']}: best_acc {entry['best_acc']:.4f} "
            f"at round {entry['best_round']}, straggler/target {ratio_text}"
        )
    return EXIT_OK


def _parse_vector(args: argparse.Namespace) -> list[float]:
    if args.vector is not None:
        text = args.vector.replace(",", " ")
    else:
        try:
            text = Path(args.vector_file).read_text(encoding="utf-8").replace(",", " ")
        except OSError as exc:
            raise ConfigError(f"cannot read vector file: {exc}") from exc
    try:
        values = [float(tok) for tok in text.split()]
    except ValueError as exc:
        raise ConfigError(f"bad gradient value: {exc}") from exc
    if not values:
        raise ConfigError("gradient vector is empty")
    return values


def cmd_analyze_variance(args: argparse.Namespace) -> int:
    try:
        vector = _parse_vector(args)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    payload = {
        "gradient": vector,
        "k": args.k,
        "epsilon": args.epsilon,
        "mc_samples": args.mc_samples,
        "seed": args.mc_seed,
    }
    try:
        with _make_client(args.server) as client:
            resp = client.post("/analysis/variance", json=payload)
    except httpx.HTTPError as exc:
        return _fail(f"request failed: {exc}", EXIT_RUNTIME)
    if resp.status_code != 200:
        return _error_exit(resp)
    report = json.dumps(resp.json(), indent=2, sort_keys=True) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(report, encoding="utf-8")
        except OSError as exc:
            return _fail(f"cannot write report: {exc}", EXIT_RUNTIME)
        print(f"wrote {args.out}")
    else:
        print(report, end="")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    payload = {
        "seed": args.seed,
        "classes": args.classes,
        "dim": args.dim,
        "n_per_class": args.n_per_class,
        "spread": args.spread,
    }
    try:
        with _make_client(args.server) as client:
            resp = client.post("/datasets/generate", json=payload)
    except httpx.HTTPError as exc:
        return _fail(f"request failed: {exc}", EXIT_RUNTIME)
    if resp.status_code != 200:
        return _error_exit(resp)
    body = resp.json()
    try:
        Path(args.out).write_text(body["csv"], encoding="utf-8")
    except OSError as exc:
        return _fail(f"cannot write dataset: {exc}", EXIT_RUNTIME)
    print(f"wrote {body['rows']} rows ({body['dim']} features, "
          f"{body['class_count']} classes) to {args.out}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feddropsim",
        description="Straggler-aware federated learning simulator and analysis tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured experiment and write metrics")
    run.add_argument("--config", required=True, help="YAML config path")
    run.add_argument("--seed", type=int, action="append", dest="seeds",
                     help="run seed; repeat for several runs (overrides config)")
    run.add_argument("--out", help="output directory (overrides config)")
    run.add_argument("--method", choices=METHODS, help="dropout method override")
    run.add_argument("--rounds", type=int, help="round count override")
    run.add_argument("--rate", type=float,
                     help="force this dropout rate instead of time-based selection")
    run.add_argument("--server", help="base URL of a running service; default in-process")
    run.set_defaults(func=cmd_run)

    analyze = sub.add_parser("analyze-variance",
                             help="sparsification variance report for a gradient vector")
    source = analyze.add_mutually_exclusive_group(required=True)
    source.add_argument("--vector", help="inline values, comma or space separated")
    source.add_argument("--vector-file",
                        help="file of values (e.g. a final_gradient_seed*.csv from a run)")
    analyze.add_argument("--k", type=int, required=True, help="coordinates kept surely")
    analyze.add_argument("--epsilon", type=float, required=True,
                         help="variance inflation budget (> 0)")
    analyze.add_argument("--mc-samples", type=int, default=0,
                         help="Monte-Carlo draws; 0 skips the MC section")
    analyze.add_argument("--mc-seed", type=int, default=0)
    analyze.add_argument("--out", help="write the JSON report here instead of stdout")
    analyze.add_argument("--server")
    analyze.set_defaults(func=cmd_analyze_variance)

    gen = sub.add_parser("gen-data", help="generate a synthetic blob dataset CSV")
    gen.add_argument("--out", required=True, help="destination CSV path")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--classes", type=int, default=3)
    gen.add_argument("--dim", type=int, default=8)
    gen.add_argument("--n-per-class", type=int, default=200)
    gen.add_argument("--spread", type=float, default=0.6)
    gen.add_argument("--server")
    gen.set_defaults(func=cmd_gen_data)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
