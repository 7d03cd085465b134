"""
Command-line interface for agentsim.

Generates workloads, runs single simulations, replays eviction policies offline,
checks pattern inference and runs the experiment presets.

Note: Imports are lazy - the simulator is only imported when a command actually runs.
Exit codes: 0 ok, 2 usage, 3 config, 4 runtime.
"""

import sys
from pathlib import Path

import click

from agentsim import __version__

EXIT_CONFIG = 3
EXIT_RUNTIME = 4

EVICTION_CHOICES = ["wa-lru", "lru", "prefix-lru", "evict-all"]
FAIRNESS_CHOICES = ["afs", "fcfs", "uniform"]
STRATEGY_CHOICES = ["hybrid", "bfs", "dfs"]
AEG_CHOICES = ["hints", "inferred", "none"]
ABLATE_CHOICES = ["session-affinity", "eviction", "ttl", "prefetch", "stealing", "afs"]
KIND_CHOICES = ["swebench", "webarena", "multitenant", "hotcold", "triage"]


def _fail(e: Exception):
    """Report an error and exit with the code for its kind."""
    from agentsim.core.errors import ConfigError

    if isinstance(e, ConfigError):
        click.echo(f"❌ Config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"❌ Error: {e}", err=True)
    sys.exit(EXIT_RUNTIME)


@click.group()
@click.version_option(version=__version__, prog_name="agentsim")
def cli():
    """
    agentsim - simulate workflow-aware scheduling of multi-step agent inference.

    Verbosity comes from the AGENTSIM_LOG environment variable (DEBUG, INFO, ...).
    """
    from agentsim.core.utils import setup_logging

    setup_logging()


@cli.command()
@click.option('--kind', '-k', type=click.Choice(KIND_CHOICES), default='swebench', help='Workload kind')
@click.option('--seed', type=int, default=0, show_default=True, help='Random seed')
@click.option('--horizon', type=float, default=None, help='Arrival horizon in seconds')
@click.option('--tasks', 'n_tasks', type=int, default=None, help='Exact number of tasks instead of a horizon')
@click.option('--scale', type=float, default=1.0, show_default=True, help='Arrival-rate scale')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), help='JSON/TOML config (tools, cost)')
@click.option('--access-trace', type=click.Path(dir_okay=False), help='Also write the contention-free access trace')
@click.option('--out', '-o', help='Output file (default: workload-<kind>-<seed>.ndjson)')
def generate(kind, seed, horizon, n_tasks, scale, config_path, access_trace, out):
    """Generate a reproducible workload file."""
    from agentsim.cache.oracle import build_access_trace
    from agentsim.core.utils import provenance
    from agentsim.settings import SimConfig, load_config
    from agentsim.sim.workload import WorkloadSpec, generate_workload, write_workload

    output_path = Path(out) if out else Path(f"workload-{kind}-{seed}.ndjson")
    click.echo(f"Generating {kind} workload (seed {seed})...")

    try:
        cfg = load_config(Path(config_path)) if config_path else SimConfig()
        overrides = {}
        if horizon is not None:
            overrides["horizon_ms"] = horizon * 1000.0
        if n_tasks is not None:
            overrides["n_tasks"] = n_tasks
        spec = WorkloadSpec.for_kind(kind, **overrides).scaled(scale)
        tasks = generate_workload(spec, seed, cfg.tools, cfg.cost)
        write_workload(tasks, spec, seed, output_path, provenance())
        click.echo(f"✅ Generated {len(tasks)} tasks from {len(spec.tenants)} tenant(s)")
        click.echo(f"📁 Saved to: {output_path}")
        if access_trace:
            trace = build_access_trace(tasks, cfg.cost, cfg.tools, cfg.ttl, cfg.max_context_tokens)
            trace.write(Path(access_trace))
            click.echo(f"📁 Access trace saved to: {access_trace}")
    except Exception as e:
        _fail(e)


def _policy_overrides(policy, fairness, strategy, aeg_mode, no_steal, theta, alpha, beta, gamma,
                      ttl_max, t_idle, r_max, horizon, warmup, seed, base):
    """Nested override document for the flags that were given."""
    doc = {}
    pol = {}
    if policy:
        pol["eviction"] = policy
    if fairness:
        pol["fairness"] = fairness
    if aeg_mode:
        pol["aeg_mode"] = aeg_mode
    if no_steal:
        pol["stealing"] = False
    if theta is not None:
        pol["theta"] = theta
    if any(v is not None for v in (alpha, beta, gamma)):
        w = base.policy.weights
        pol["weights"] = {"alpha": w.alpha if alpha is None else alpha,
                          "beta": w.beta if beta is None else beta,
                          "gamma": w.gamma if gamma is None else gamma}
    if pol:
        doc["policy"] = pol
    if ttl_max is not None:
        doc["ttl"] = {"ttl_max_ms": ttl_max * 1000.0}
    steal = {}
    if t_idle is not None:
        steal["t_idle_ms"] = t_idle
    if r_max is not None:
        steal["r_max"] = r_max
    if steal:
        doc["steal"] = steal
    if horizon is not None:
        doc["horizon_ms"] = horizon * 1000.0
    if warmup is not None:
        doc["warmup_ms"] = warmup * 1000.0
    if seed is not None:
        doc["seed"] = seed
    return doc


@cli.command()
@click.argument('workload', type=click.Path(exists=True, dir_okay=False))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), help='JSON/TOML config file')
@click.option('--seed', type=int, default=None, help='Random seed (default: from config)')
@click.option('--policy', type=click.Choice(EVICTION_CHOICES), help='Eviction policy')
@click.option('--fairness', type=click.Choice(FAIRNESS_CHOICES), help='Dispatch fairness policy')
@click.option('--strategy', type=click.Choice(STRATEGY_CHOICES), help='Scheduling strategy')
@click.option('--aeg-mode', type=click.Choice(AEG_CHOICES), help='Where agent graphs come from')
@click.option('--no-steal', is_flag=True, help='Disable work stealing')
@click.option('--ablate', type=click.Choice(ABLATE_CHOICES), multiple=True, help='Disable a component (repeatable)')
@click.option('--theta', type=float, help='Affinity load threshold')
@click.option('--alpha', type=float, help='WA-LRU recency weight')
@click.option('--beta', type=float, help='WA-LRU reuse weight')
@click.option('--gamma', type=float, help='WA-LRU size weight')
@click.option('--ttl-max', type=float, help='TTL cap in seconds')
@click.option('--t-idle', type=float, help='Idle time in ms before a worker steals')
@click.option('--r-max', type=float, help='Load ratio above which a worker is a steal victim')
@click.option('--horizon', type=float, help='Simulated horizon in seconds')
@click.option('--warmup', type=float, help='Warm-up excluded from metrics, in seconds')
@click.option('--dump-afs', is_flag=True, help='Write per-epoch AFS state to afs.csv')
@click.option('--audit', is_flag=True, help='Audit the event log and fail on violations')
@click.option('--out', '-o', help='Output directory (default: run-<workload>-<seed>)')
@click.option('--format', '-f', type=click.Choice(['csv', 'json', 'parquet']), default='csv',
              help='Format of the per-task table')
@click.option('--polars', is_flag=True, help='Use Polars instead of Pandas')
def run(workload, config_path, seed, policy, fairness, strategy, aeg_mode, no_steal, ablate, theta,
        alpha, beta, gamma, ttl_max, t_idle, r_max, horizon, warmup, dump_afs, audit, out, format, polars):
    """
    Simulate a workload file.

    WORKLOAD: file written by `agentsim generate`
    """
    from agentsim.core.utils import records_to_frame, provenance, save_dataframe, write_json
    from agentsim.settings import SimConfig, apply_ablation, apply_strategy, config_from_dict, load_config
    from agentsim.sim.audit import audit_log
    from agentsim.sim.engine import run as simulate
    from agentsim.sim.workload import read_workload

    output_format = "polars" if polars else "pandas"

    try:
        base = load_config(Path(config_path)) if config_path else SimConfig()
        doc = _policy_overrides(policy, fairness, strategy, aeg_mode, no_steal, theta, alpha, beta, gamma,
                                ttl_max, t_idle, r_max, horizon, warmup, seed, base)
        cfg = config_from_dict(doc, base=base) if doc else base
        for component in ablate:
            cfg = apply_ablation(cfg, component)
        if strategy:
            cfg = apply_strategy(cfg, strategy)

        header, tasks = read_workload(Path(workload))
        out_dir = Path(out) if out else Path(f"run-{Path(workload).stem}-{cfg.seed}")
        click.echo(f"Simulating {len(tasks)} tasks on {cfg.cluster.workers} workers (seed {cfg.seed})...")
        result = simulate(cfg, tasks, seed=cfg.seed, record_afs=dump_afs)

        version = provenance()
        resolved = cfg.to_dict()
        result.log.write(out_dir / "events.ndjson")
        write_json({"version": version, "config": resolved, "workload": header,
                    "metrics": result.metrics.to_dict()}, out_dir / "metrics.json")
        row = dict(result.metrics.summary_row(), version=version, seed=cfg.seed)
        save_dataframe(records_to_frame([row], output_format), out_dir / "metrics.csv")
        save_dataframe(result.metrics.per_task_frame(output_format), out_dir / f"tasks.{format}", format)
        if dump_afs:
            save_dataframe(records_to_frame(result.afs_history, output_format), out_dir / "afs.csv")

        m = result.metrics
        click.echo(f"✅ Finished {m.tasks_finished}/{m.tasks_total} tasks, mean TCT {m.tct_mean_ms / 1000:.1f} s, "
                   f"throughput {m.throughput_per_min:.2f}/min")
        if m.tasks_unfinished:
            click.echo(f"⚠️  {m.tasks_unfinished} task(s) unfinished at the horizon (excluded from TCT)")
        click.echo(f"📁 Saved to: {out_dir}")

        if audit:
            problems = {k: v for k, v in audit_log(result.log, cfg.cluster.kv_capacity_bytes).items() if v}
            if problems:
                raise RuntimeError("audit failed: " + "; ".join(f"{k}: {v[0]}" for k, v in problems.items()))
            click.echo("✅ Event log audit passed")
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument('workload', type=click.Path(exists=True, dir_okay=False))
@click.option('--capacity-fraction', type=float, default=None, help='Pool size as a fraction of the peak working set')
@click.option('--perfect', is_flag=True, help='Use perfect reuse predictions and TTLs')
@click.option('--out', '-o', help='Output file (default: ratio-<workload>.csv)')
def ratio(workload, capacity_fraction, perfect, out):
    """
    Replay every eviction policy and Belady on a workload's access trace.

    WORKLOAD: file written by `agentsim generate`
    """
    from agentsim import config
    from agentsim.cache.oracle import build_access_trace, compare_policies, peak_working_set
    from agentsim.core.utils import records_to_frame, save_dataframe
    from agentsim.settings import SimConfig
    from agentsim.sim.workload import read_workload

    fraction = capacity_fraction if capacity_fraction is not None else config.RATIO_CAPACITY_FRACTION
    output_path = Path(out) if out else Path(f"ratio-{Path(workload).stem}.csv")

    try:
        cfg = SimConfig()
        _header, tasks = read_workload(Path(workload))
        trace = build_access_trace(tasks, cfg.cost, cfg.tools, cfg.ttl, cfg.max_context_tokens, perfect=perfect)
        largest = max((a.tokens_after for a in trace.accesses), default=0) * trace.bytes_per_token
        capacity = max(int(fraction * peak_working_set(trace)), largest)
        rows = compare_policies(trace, capacity, weights=cfg.policy.weights,
                                prefix_fraction=cfg.policy.prefix_fraction)
        for r in rows:
            click.echo(f"  {r['policy']:<11} cost {r['cost']:>12,}  ratio {r['ratio']:.3f}")
        save_dataframe(records_to_frame(rows), output_path)
        click.echo(f"✅ Replayed {len(trace)} accesses against Belady (cost {rows[0]['opt_cost']:,})")
        click.echo(f"📁 Saved to: {output_path}")
    except Exception as e:
        _fail(e)


@cli.command()
@click.option('--template', type=click.Choice(['triage', 'swe', 'web']), default='triage', help='Agent template')
@click.option('--traces', 'n_traces', type=int, default=130, show_default=True, help='Tasks to generate')
@click.option('--holdout', type=float, default=0.25, show_default=True, help='Fraction held out for scoring')
@click.option('--theta-conf', type=float, default=None, help='Edge confidence threshold')
@click.option('--seed', type=int, default=0, show_default=True, help='Random seed')
@click.option('--out', '-o', help='Save inferred and true edges as JSON')
def aeg(template, n_traces, holdout, theta_conf, seed, out):
    """Infer an agent graph from generated traces and score its next-step predictions."""
    from agentsim import config
    from agentsim.aeg.builder import edge_set
    from agentsim.aeg.inference import PatternModel, infer_pattern, prediction_accuracy
    from agentsim.core.utils import write_json
    from agentsim.settings import SimConfig
    from agentsim.sim.workload import TOOL_TEMPLATES, WorkloadKind, WorkloadSpec, generate_workload, tool_traces

    theta = theta_conf if theta_conf is not None else config.THETA_CONF
    kinds = {"triage": WorkloadKind.TRIAGE, "swe": WorkloadKind.SWEBENCH, "web": WorkloadKind.WEBARENA}

    try:
        if not 0 < holdout < 1:
            raise click.BadParameter("must be within (0, 1)", param_hint="--holdout")
        cfg = SimConfig()
        spec = WorkloadSpec.for_kind(kinds[template], n_tasks=n_traces)
        traces = tool_traces(generate_workload(spec, seed, cfg.tools, cfg.cost))
        split = int(round(len(traces) * (1 - holdout)))
        model = PatternModel(template, theta_conf=theta)
        graph = infer_pattern(model, traces[:split])
        if not graph:
            raise RuntimeError(f"only {model.tasks_observed} training traces; need {model.cold_start}")
        inferred = edge_set(graph)
        true_edges = {(a, b): p for a, row in TOOL_TEMPLATES[template][1].items() for b, p in row.items()
                      if p >= theta}
        accuracy = prediction_accuracy(graph, traces[split:])
        for (a, b), p in sorted(inferred.items()):
            mark = "✓" if (a, b) in true_edges else "✗"
            click.echo(f"  {mark} {a} -> {b}  p={p:.3f}")
        click.echo(f"✅ Inferred {len(inferred)} edges from {split} traces; "
                   f"edge set {'matches' if set(inferred) == set(true_edges) else 'differs from'} the template; "
                   f"held-out accuracy {accuracy:.3f}")
        if out:
            write_json({"inferred": [[a, b, p] for (a, b), p in sorted(inferred.items())],
                        "true": [[a, b, p] for (a, b), p in sorted(true_edges.items())],
                        "accuracy": accuracy, "graph": graph.to_dict()}, Path(out))
            click.echo(f"📁 Saved to: {out}")
    except click.BadParameter:
        raise
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument('preset', type=click.Choice(['e2e', 'ablation', 'ratio', 'fairness', 'strategy', 'sensitivity',
                                             'tool-variance', 'pattern']))
@click.option('--seeds', type=int, default=None, help='Seeds per cell (default: 10)')
@click.option('--seed', 'seed_base', type=int, default=0, show_default=True, help='First seed')
@click.option('--jobs', '-j', type=int, default=1, show_default=True, help='Parallel jobs (-1 = all cores)')
@click.option('--horizon', type=float, default=None, help='Simulated horizon in seconds')
@click.option('--scale', type=float, default=1.0, show_default=True, help='Extra arrival-rate scale')
@click.option('--cv', default=None, help='Comma-separated CVs for tool-variance (e.g. 0.5,1,3)')
@click.option('--out', '-o', default='experiments', show_default=True, help='Output directory')
@click.option('--polars', is_flag=True, help='Use Polars instead of Pandas for the raw table')
def experiment(preset, seeds, seed_base, jobs, horizon, scale, cv, out, polars):
    """
    Run an experiment preset over several seeds.

    PRESET: one of the names listed by `agentsim presets`
    """
    from agentsim import config
    from agentsim.experiments.presets import get_preset
    from agentsim.experiments.runner import run_preset

    n_seeds = seeds if seeds is not None else config.DEFAULT_SEEDS
    try:
        cvs = [float(x) for x in cv.split(",") if x.strip()] if cv else None
    except ValueError:
        raise click.BadParameter(f"not a list of numbers: {cv!r}", param_hint="--cv")
    if n_seeds < 1:
        raise click.BadParameter("must be >= 1", param_hint="--seeds")

    try:
        p = get_preset(preset, cvs)
        click.echo(f"Running {p.name}: {len(p.cells)} cell(s) x {n_seeds} seed(s)...")
        result = run_preset(p, n_seeds, out_dir=Path(out), jobs=jobs,
                            horizon_ms=horizon * 1000.0 if horizon is not None else None,
                            scale=scale, seed_base=seed_base, output_format="polars" if polars else "pandas")
        summary = result.summary
        if not summary.empty:
            rows = summary[summary["metric"] == p.compare_metric]
            for _, r in rows.iterrows():
                label = r["cell"] if "policy" not in rows.columns else f"{r['cell']}/{r['policy']}"
                click.echo(f"  {label:<28} {p.compare_metric} = {r['mean']:.4g} ± {r['std']:.3g} (n={r['n']})")
        if not result.comparisons.empty:
            for _, r in result.comparisons.iterrows():
                click.echo(f"  {r['cell']} vs {r['baseline']}: p={r['p']:.3g} {r['stars']}")
        click.echo(f"✅ {p.name} finished")
        click.echo(f"📁 Saved to: {Path(out) / p.name}")
    except Exception as e:
        _fail(e)


@cli.command()
def presets():
    """List experiment presets."""
    from agentsim.experiments.presets import PRESETS

    for p in PRESETS.values():
        click.echo(f"  {p.name:<14} {p.description} ({len(p.cells)} cells)")


if __name__ == '__main__':
    cli()
