"""Command-line experiment runner, a thin client of the HTTP service.

The CLI never simulates anything itself: it builds a request, sends it to
the service (in-process by default, or to a remote ``--server``), and
writes the returned CSV artifacts to the output directory. Commands:

* ``ecasim run <scenario> [--seeds] [--horizon] [--out-dir] [--workers] [--trace]``
* ``ecasim validate <scenario>``
* ``ecasim scenarios``
* ``ecasim serve [--host] [--port]``

``<scenario>`` is a YAML file path or a bundled scenario name. A bare
``ecasim <scenario> ...`` is shorthand for ``ecasim run <scenario> ...``.
Exit codes: 0 success, 2 configuration/validation failure, 3 runtime or
server failure. ``ECASIM_OUT_DIR`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

__all__ = ["main"]

OUT_DIR_ENV = "ECASIM_OUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_COMMANDS = ("run", "validate", "scenarios", "serve")


class _CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


class _Client:
    """Uniform request interface over in-process and remote transports."""

    def __init__(self, server: Optional[str]) -> None:
        if server:
            import httpx

            self._client = httpx.Client(base_url=server.rstrip("/"),
                                        timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service.app import app

            self._client = TestClient(app)

    def get(self, path: str):
        return self._request("GET", path, None)

    def post(self, path: str, payload: dict):
        return self._request("POST", path, payload)

    def _request(self, method: str, path: str, payload):
        try:
            if method == "GET":
                response = self._client.get(path)
            else:
                response = self._client.post(path, json=payload)
        except Exception as exc:
            raise _CliError(f"cannot reach service: {exc}", EXIT_RUNTIME)
        if response.status_code in (400, 404, 422):
            detail = _detail(response)
            raise _CliError(detail, EXIT_CONFIG)
        if response.status_code >= 500:
            raise _CliError(f"service error: {_detail(response)}", EXIT_RUNTIME)
        return response.json()


def _detail(response) -> str:
    try:
        body = response.json()
    except ValueError:
        return response.text
    if isinstance(body, dict) and "detail" in body:
        detail = body["detail"]
        if isinstance(detail, list):  # pydantic validation error structure
            return "; ".join(str(item.get("msg", item)) for item in detail)
        return str(detail)
    return str(body)


def _parse_seeds(spec: str) -> List[int]:
    """``a:b`` is the range [a, b); ``x,y,z`` or a single integer is a list."""
    spec = spec.strip()
    try:
        if ":" in spec:
            start_text, count_text = spec.split(":", 1)
            start, end = int(start_text), int(count_text)
            if end <= start:
                raise ValueError("empty range")
            return list(range(start, end))
        return [int(part) for part in spec.split(",")]
    except ValueError as exc:
        raise _CliError(
            f"cannot parse --seeds {spec!r}: use START:END, a comma list, "
            f"or a single integer ({exc})", EXIT_CONFIG)


def _parse_horizon(spec: str) -> dict:
    """A plain integer is a slot count; an ``us`` suffix means microseconds."""
    spec = spec.strip().lower()
    key = "horizon_slots"
    if spec.endswith("us"):
        key = "horizon_us"
        spec = spec[:-2]
    try:
        value = int(spec)
    except ValueError:
        raise _CliError(
            f"cannot parse --horizon {spec!r}: use an integer slot count "
            f"or a microsecond value like 200000us", EXIT_CONFIG)
    if value <= 0:
        raise _CliError("--horizon must be positive", EXIT_CONFIG)
    return {key: value}


def _scenario_payload(ref: str) -> dict:
    path = Path(ref)
    if path.is_file():
        return {"yaml_text": path.read_text(), "name": path.stem}
    return {"scenario": ref}


def _resolve_out_dir(flag: Optional[str], scenario_out_dir: Optional[str],
                     scenario_name: str) -> Path:
    if flag:
        return Path(flag)
    if scenario_out_dir:
        return Path(scenario_out_dir)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env) / scenario_name
    return Path("results") / scenario_name


def _cmd_run(args) -> int:
    payload = _scenario_payload(args.scenario)
    if args.seeds:
        payload["seeds"] = _parse_seeds(args.seeds)
    if args.horizon:
        payload.update(_parse_horizon(args.horizon))
    payload["workers"] = args.workers
    payload["record_traces"] = bool(args.trace)

    client = _Client(args.server)
    body = client.post("/sweep", payload)

    out_dir = _resolve_out_dir(args.out_dir, body.get("out_dir"),
                               body["scenario_name"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.csv").write_text(body["summary_csv"])
    (out_dir / "runs.csv").write_text(body["runs_csv"])
    if body.get("traces"):
        trace_dir = out_dir / "traces"
        trace_dir.mkdir(exist_ok=True)
        for entry in body["traces"]:
            (trace_dir / entry["name"]).write_text(entry["csv_text"])

    print(body["summary_csv"], end="")
    n_cells = len(body["summary_rows"])
    n_runs = len(body["run_rows"])
    print(f"\n{body['scenario_name']}: {n_cells} cells, {n_runs} runs "
          f"-> {out_dir}/summary.csv, {out_dir}/runs.csv"
          + (f", {len(body['traces'])} trace files" if body.get("traces") else ""))
    return EXIT_OK


def _cmd_validate(args) -> int:
    client = _Client(args.server)
    body = client.post("/scenarios/validate", _scenario_payload(args.scenario))
    if not body["valid"]:
        print(f"invalid: {body['error']}", file=sys.stderr)
        return EXIT_CONFIG
    horizon = (f"{body['horizon_slots']} slots" if body["horizon_slots"]
               else f"{body['horizon_us']} us")
    print(f"{body['name']}: valid, fingerprint {body['fingerprint']}")
    print(f"  horizon {horizon}, {body['seeds']} seeds, "
          f"{len(body['cells'])} cells, {body['total_runs']} runs")
    for cell in body["cells"]:
        print(f"  - {cell['label']} n={cell['n_stations']}")
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    client = _Client(args.server)
    body = client.get("/scenarios")
    for entry in body["scenarios"]:
        desc = f"  {entry['description']}" if entry["description"] else ""
        print(f"{entry['name']}{desc}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecasim",
        description="Slotted-CSMA contention experiments: scenario sweeps "
                    "with seeded, replayable runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument("--server", metavar="URL", default=None,
                       help="remote service URL (default: run in-process)")

    run = sub.add_parser("run", help="run a scenario sweep and write CSVs")
    run.add_argument("scenario", help="scenario YAML path or bundled name")
    run.add_argument("--seeds", metavar="SPEC",
                     help="override seeds: START:END, comma list, or one int")
    run.add_argument("--horizon", metavar="H",
                     help="override horizon: slot count, or e.g. 200000us")
    run.add_argument("--out-dir", metavar="DIR",
                     help=f"output directory (default: scenario's own, then "
                          f"${OUT_DIR_ENV}/<name>, then results/<name>)")
    run.add_argument("--workers", type=int, default=1, metavar="N",
                     help="parallel worker processes (default 1)")
    run.add_argument("--trace", action="store_true",
                     help="also write full per-slot trace CSVs")
    add_server(run)
    run.set_defaults(func=_cmd_run)

    validate = sub.add_parser("validate", help="validate a scenario file")
    validate.add_argument("scenario", help="scenario YAML path or bundled name")
    add_server(validate)
    validate.set_defaults(func=_cmd_validate)

    scenarios = sub.add_parser("scenarios", help="list bundled scenarios")
    add_server(scenarios)
    scenarios.set_defaults(func=_cmd_scenarios)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] not in _COMMANDS and not argv[0].startswith("-"):
        argv.insert(0, "run")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
