"""Command-line client for the experiment service.

Every verb is a thin HTTP call. By default the service application is
mounted in-process (no network); ``--server http://host:port`` targets a
running instance instead, with identical behavior.

Exit codes: 0 success, 1 partial grid (some runs failed), 2 config or data
error.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # In-process default: drive the ASGI app through starlette's sync bridge.
    import warnings

    with warnings.catch_warnings():
        # starlette >= 1.3 prefers httpx2 for its test client; plain httpx
        # remains supported and is what this environment provides.
        warnings.simplefilter("ignore", UserWarning)
        from starlette.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=True)


def _load_config(args) -> dict:
    config: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    if args.out:
        config["out_dir"] = args.out
    if getattr(args, "jobs", None):
        config["jobs"] = args.jobs
    for key in ("feature_path", "examples_path", "categories_path"):
        flag = getattr(args, key.replace("_path", ""), None)
        if flag:
            config[key] = flag
    return config


def _parse_only(spec: str | None) -> dict | None:
    if not spec:
        return None
    only: dict[str, list] = {}
    for part in spec.split(","):
        if "=" not in part:
            raise SystemExit(f"--only entries look like key=value, got {part!r}")
        key, value = part.split("=", 1)
        key = key.strip()
        if key not in ("method", "label", "seed"):
            raise SystemExit(f"--only keys are method/label/seed, got {key!r}")
        only.setdefault(key, []).append(int(value) if key == "seed" else value.strip())
    return only


def _post(client: httpx.Client, path: str, payload: dict) -> tuple[int, dict]:
    try:
        resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_CONFIG, {}
    if resp.status_code in (400, 422):
        detail = resp.json().get("detail", resp.text)
        print(f"error: {detail}", file=sys.stderr)
        return EXIT_CONFIG, {}
    resp.raise_for_status()
    return EXIT_OK, resp.json()


def _experiment_verb(args, path: str) -> int:
    config = _load_config(args)
    payload = {"config": config, "only": _parse_only(getattr(args, "only", None))}
    with _client(args.server) as client:
        code, body = _post(client, path, payload)
    if code != EXIT_OK:
        return code
    print(json.dumps(body, indent=2, sort_keys=True))
    if path == "/experiments/grid" and body.get("status") == "partial":
        return EXIT_PARTIAL
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="headuq",
        description="Train and evaluate uncertainty-aware linear heads over "
        "frozen embeddings.",
    )
    parser.add_argument("--server", help="URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="verb", required=True)

    def experiment_parser(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, help="worker processes for the grid")
        p.add_argument("--features", help="feature file path (overrides config)")
        p.add_argument("--examples", help="examples JSONL path (overrides config)")
        p.add_argument("--categories", help="category names path (overrides config)")
        return p

    experiment_parser("run-grid", "execute the method x label x seed grid").add_argument(
        "--only", help="filter runs, e.g. method=csgmcmc,label=soft,seed=42"
    )
    experiment_parser("run-ablation", "sampler sensitivity axes")
    experiment_parser("run-al", "active-learning strategy runs")
    experiment_parser("calibrate", "temperature-scaling pass over saved runs")
    experiment_parser("stats", "statistics over saved grid reports")
    experiment_parser("subset-diagnostic", "high-disagreement subset metrics")
    experiment_parser("report", "flatten saved reports to CSV")

    synth = sub.add_parser("make-synthetic", help="generate a synthetic corpus")
    synth.add_argument("--out", required=True)
    synth.add_argument("--n", type=int, default=5000)
    synth.add_argument("--categories", type=int, default=3)
    synth.add_argument("--dim", type=int, default=16)
    synth.add_argument("--annotators", type=int, default=3)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--ambiguity", help="comma-separated per-class levels")

    val = sub.add_parser("validate-data", help="validate corpus files")
    val.add_argument("--features", required=True)
    val.add_argument("--examples", required=True)
    val.add_argument("--categories")
    val.add_argument("--canonical", action="store_true")

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8724)

    args = parser.parse_args(argv)

    if args.verb == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return EXIT_OK

    if args.verb == "make-synthetic":
        payload = {
            "out_dir": args.out,
            "n_examples": args.n,
            "n_categories": args.categories,
            "dim": args.dim,
            "n_annotators": args.annotators,
            "seed": args.seed,
        }
        if args.ambiguity:
            payload["ambiguity"] = [float(x) for x in args.ambiguity.split(",")]
        with _client(args.server) as client:
            code, body = _post(client, "/data/synthetic", payload)
        if code != EXIT_OK:
            return code
        print(json.dumps(body, indent=2, sort_keys=True))
        return EXIT_OK

    if args.verb == "validate-data":
        payload = {
            "feature_path": args.features,
            "examples_path": args.examples,
            "categories_path": args.categories,
            "expect_canonical": args.canonical,
        }
        with _client(args.server) as client:
            code, body = _post(client, "/data/validate", payload)
        if code != EXIT_OK:
            return code
        print(json.dumps(body, indent=2, sort_keys=True))
        return EXIT_OK if body.get("ok") else EXIT_CONFIG

    paths = {
        "run-grid": "/experiments/grid",
        "run-ablation": "/experiments/ablation",
        "run-al": "/experiments/active-learning",
        "calibrate": "/experiments/calibrate",
        "stats": "/experiments/stats",
        "subset-diagnostic": "/experiments/subset-diagnostic",
        "report": "/experiments/report",
    }
    return _experiment_verb(args, paths[args.verb])


if __name__ == "__main__":
    sys.exit(main())
