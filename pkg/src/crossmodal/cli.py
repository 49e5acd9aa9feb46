"""Command-line client for the pipeline service.

By default every command drives the FastAPI app in-process, so no server
is needed; pass --server URL to target a running instance (paths are
then resolved on the server host). Exit codes: 0 success, 2 config,
3 I/O, 4 numeric abort, 5 shape/compatibility.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

from .config import default_config_json, load_config, RunConfig

EXIT_CODES = {"config": 2, "io": 3, "numeric": 4, "shape": 5}


def _make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # starlette's httpx-backed TestClient warns about its own backend
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _post(ctx: click.Context, path: str, payload: dict) -> dict:
    try:
        with _make_client(ctx.obj["server"]) as client:
            resp = client.post(path, json=payload)
    except httpx.HTTPError as e:
        click.echo(f"error: cannot reach server: {e}", err=True)
        sys.exit(EXIT_CODES["io"])
    if resp.status_code >= 400:
        detail = {}
        try:
            detail = resp.json().get("detail", {})
        except ValueError:
            pass
        if not isinstance(detail, dict):
            detail = {"message": str(detail)}
        click.echo(f"error: {detail.get('message', resp.text)}", err=True)
        sys.exit(int(detail.get("exit_code", 1)))
    return resp.json()


def _load_run_config(config_path: str | None, seed: int | None) -> dict:
    try:
        cfg = load_config(config_path) if config_path else RunConfig()
        if seed is not None:
            cfg = cfg.with_seed(seed)
    except FileNotFoundError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CODES["io"])
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CODES["config"])
    return cfg.model_dump(mode="json")


def _print_default_config(ctx: click.Context, _param, value: bool):
    if not value or ctx.resilient_parsing:
        return
    click.echo(default_config_json(), nl=False)
    ctx.exit(0)


@click.group()
@click.option("--server", default=None, help="Service URL; default runs in-process.")
@click.option("--quiet", "-q", is_flag=True, help="Suppress non-essential output.")
@click.option(
    "--print-default-config",
    is_flag=True,
    callback=_print_default_config,
    expose_value=False,
    is_eager=True,
    help="Print the default config JSON and exit.",
)
@click.pass_context
def main(ctx: click.Context, server: str | None, quiet: bool):
    """Train, evaluate, and ablate the cross-modal detector."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["quiet"] = quiet


def _say(ctx: click.Context, message: str) -> None:
    if not ctx.obj.get("quiet"):
        click.echo(message)


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="Run config JSON.")
@click.option("--out", "out_path", type=str, required=True, help="Output bundle path.")
@click.option("--seed", type=int, default=None, help="Override the top-level seed.")
@click.pass_context
def synth(ctx, config_path, out_path, seed):
    """Generate a synthetic embedding bundle."""
    payload = {"config": _load_run_config(config_path, seed), "out_path": out_path}
    result = _post(ctx, "/synth", payload)
    _say(ctx, f"wrote {result['n_samples']} samples ({result['n_real']} real / "
              f"{result['n_fake']} fake) to {result['out_path']}")
    _say(ctx, f"provenance: {result['provenance']}")


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="Run config JSON.")
@click.option("--data", "data_path", type=str, required=True, help="Input bundle.")
@click.option("--out-dir", type=str, required=True, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the top-level seed.")
@click.option("--epochs", type=int, default=None, help="Override the epoch count.")
@click.pass_context
def train(ctx, config_path, data_path, out_dir, seed, epochs):
    """Train a model; writes checkpoint, history, and metric reports."""
    payload = {
        "config": _load_run_config(config_path, seed),
        "data_path": data_path,
        "out_dir": out_dir,
        "epochs_override": epochs,
    }
    result = _post(ctx, "/train", payload)
    final = result["final"]
    _say(ctx, f"checkpoint: {result['checkpoint_path']}")
    _say(ctx, f"history:    {result['history_path']}")
    _say(ctx, f"eval  eer={final['eer']:.4f}  auc={final['auc']:.4f}  acc={final['acc']:.4f}")


@main.command("eval")
@click.option("--checkpoint", type=str, required=True, help="Checkpoint path.")
@click.option("--data", "data_path", type=str, required=True, help="Bundle to score.")
@click.option("--report", "report_path", type=str, default=None, help="Report JSON path.")
@click.pass_context
def eval_cmd(ctx, checkpoint, data_path, report_path):
    """Score a bundle with a trained checkpoint and print EER/AUC/ACC."""
    payload = {
        "checkpoint_path": checkpoint,
        "data_path": data_path,
        "report_path": report_path,
    }
    result = _post(ctx, "/eval", payload)
    click.echo("metric  value")
    for key in ("eer", "auc", "acc"):
        click.echo(f"{key.upper():6s}  {result[key]:.6f}")
    if report_path:
        _say(ctx, f"report: {result['report_path']}")


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="Run config JSON.")
@click.option("--data", "data_path", type=str, required=True, help="Input bundle.")
@click.option("--out-dir", type=str, required=True, help="Output directory.")
@click.option("--seeds", type=int, default=5, show_default=True, help="Seeds per cell.")
@click.option("--seed", type=int, default=None, help="Override the top-level seed.")
@click.pass_context
def ablate(ctx, config_path, data_path, out_dir, seeds, seed):
    """Train the 2x2x2 ablation grid and emit per-cell statistics."""
    payload = {
        "config": _load_run_config(config_path, seed),
        "data_path": data_path,
        "out_dir": out_dir,
        "seeds": seeds,
    }
    result = _post(ctx, "/ablate", payload)
    _say(ctx, f"grid report: {result['report_path']}")
    click.echo(f"{'cell':34s} {'eer':>8s} {'auc':>8s} {'acc':>8s}")
    for key, cell in result["cells"].items():
        eer_m = cell.get("eer_mean")
        auc_m = cell.get("auc_mean")
        acc_m = cell.get("acc_mean")
        fmt = lambda v: f"{v:8.4f}" if v is not None else "    n/a "
        click.echo(f"{key:34s} {fmt(eer_m)} {fmt(auc_m)} {fmt(acc_m)}")


@main.command()
@click.option("--checkpoint", type=str, required=True, help="Checkpoint path.")
@click.option("--data", "data_path", type=str, required=True, help="Bundle to run.")
@click.option("--repetitions", type=int, default=5, show_default=True)
@click.pass_context
def profile(ctx, checkpoint, data_path, repetitions):
    """Measure inference time, analytic flops, and parameter memory."""
    payload = {
        "checkpoint_path": checkpoint,
        "data_path": data_path,
        "repetitions": repetitions,
    }
    result = _post(ctx, "/profile", payload)
    click.echo(json.dumps(result, sort_keys=True, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
