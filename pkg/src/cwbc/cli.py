"""Entry point for the ``cwbc`` command-line application."""

import json
import sys
from collections.abc import Sequence
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, NoReturn

import numpy as np
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, CliApp, CliPositionalArg, CliSubCommand

from .config import ResolvedConfig, RunSettings, resolve_config
from .datafile import read_dataset, validate_dataset
from .envs import RECIPES, generate_dataset, load_env, make_recipe
from .evaluator import (
    compare_variants,
    evaluate_target,
    normalized_score,
    resolve_references,
    sweep_targets,
)
from .oracles import Suite, run_suite
from .policy import load_policy, save_policy
from .report import (
    HISTOGRAM_HEADER,
    AblationParameter,
    RunManifest,
    report_density,
    report_histograms,
    run_ablation,
    write_comparison,
    write_csv,
    write_curve,
    write_manifest,
    write_train_log,
)
from .trainer import Variant, config_fingerprint, train
from .utils.render import render_table

ORACLE_HEADER = ("oracle", "metric", "value", "bound", "pass")


def _fail(command: str, exc: Exception) -> NoReturn:
    """Print a machine-readable error line and exit with status 1."""
    payload = {"error": type(exc).__name__, "command": command, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    raise SystemExit(1) from exc


def _now() -> datetime:
    return datetime.now(UTC)


def _manifest_path(output: Path) -> Path:
    """Manifest location next to a file output, or inside a directory output."""
    if output.suffix:
        return output.with_name(output.name + ".manifest.json")
    return output / "manifest.json"


def _write_manifest(
    command: str,
    config: dict[str, Any],
    *,
    seed: int | None,
    inputs: Sequence[Path | None],
    outputs: Sequence[Path | None],
    started_at: datetime,
    location: Path,
) -> Path:
    manifest = RunManifest.create(
        command,
        config,
        seed=seed,
        inputs=[path for path in inputs if path is not None],
        outputs=[path for path in outputs if path is not None],
        started_at=started_at,
        finished_at=_now(),
    )
    return write_manifest(manifest, _manifest_path(location))


class EvalFlags(BaseModel):
    """Flags shared by every command that reads a config or runs rollouts."""

    config: Path | None = Field(default=None, description="TOML config file.")
    seed: int | None = Field(
        default=None, description="Master seed; overrides CWBC_SEED and the config."
    )
    episodes: int | None = Field(default=None, description="Rollouts per target.")
    workers: int | None = Field(default=None, description="Rollout threads.")

    def overrides(self) -> dict[str, object]:
        """Flag values keyed by config section and name."""
        return {
            "seed": self.seed,
            "eval.episodes": self.episodes,
            "eval.workers": self.workers,
        }

    def resolve(self) -> ResolvedConfig:
        """Merge the flags with defaults, the config file and the environment."""
        return resolve_config(self.config, self.overrides())


class TrainingFlags(EvalFlags):
    """Flags shared by every command that trains or weights trajectories."""

    variant: Variant | None = Field(
        default=None, description="Training variant: base, w, c, wc, f or fc."
    )
    iters: int | None = Field(default=None, description="Training iterations.")
    batch_size: int | None = Field(default=None, description="Trajectories per batch.")
    bins: int | None = Field(default=None, description="Number of return bins.")
    lambda_: float | None = Field(
        default=None, alias="lambda", description="Smoothing parameter lambda."
    )
    kappa: float | None = Field(default=None, description="Explicit temperature.")
    kappa_percentile: int | None = Field(
        default=None, description="Percentile z of the rule kappa = r* - r_z."
    )
    filter_top: float | None = Field(
        default=None, description="Fraction kept by the filtered variants."
    )
    conservative_q: int | None = Field(
        default=None, description="Percentile above which trajectories are regularised."
    )
    noise_std: float | None = Field(default=None, description="Noise std sigma.")
    alpha: float | None = Field(default=None, description="Regularizer weight alpha.")
    learning_rate: float | None = Field(default=None, description="Adam step size.")
    dropout: float | None = Field(default=None, description="Hidden-layer dropout.")
    log_timing: bool | None = Field(
        default=None, description="Record wall time per logged iteration."
    )

    def overrides(self) -> dict[str, object]:
        """Flag values keyed by config section and name."""
        return {
            **super().overrides(),
            "train.variant": self.variant,
            "train.iterations": self.iters,
            "train.batch_size": self.batch_size,
            "train.filter_fraction": self.filter_top,
            "train.dropout": self.dropout,
            "train.log_timing": self.log_timing,
            "weighting.num_bins": self.bins,
            "weighting.lambda": self.lambda_,
            "weighting.kappa": self.kappa,
            "weighting.kappa_percentile": self.kappa_percentile,
            "conservatism.percentile_q": self.conservative_q,
            "conservatism.noise_std": self.noise_std,
            "conservatism.alpha": self.alpha,
            "optimizer.learning_rate": self.learning_rate,
        }


class GenDataCommand(BaseModel):
    """Generate a behavior-policy dataset on a synthetic environment."""

    env: str = Field(default="lineworld", description="Environment name or TOML file.")
    recipe: str = Field(
        default="med-replay", description=f"One of {', '.join(sorted(RECIPES))}."
    )
    n: int = Field(default=2000, description="Number of trajectories.")
    seed: int | None = Field(default=None, description="Generation seed.")
    workers: int = Field(default=1, description="Rollout threads.")
    out: Path = Field(default=Path("data.jsonl"), description="Output dataset file.")

    def cli_cmd(self) -> None:
        """Execute the ``gen-data`` command."""
        started_at = _now()
        try:
            seed = self.seed if self.seed is not None else RunSettings().seed
            recipe = make_recipe(
                self.recipe, load_env(self.env), self.n, seed=seed or 0
            )
            dataset = generate_dataset(recipe, self.out, workers=self.workers)
            _write_manifest(
                "gen-data",
                recipe.model_dump(mode="json"),
                seed=recipe.seed,
                inputs=[],
                outputs=[self.out],
                started_at=started_at,
                location=self.out,
            )
        except (OSError, ValueError) as exc:
            _fail("gen-data", exc)

        print(
            f"Wrote {len(dataset)} trajectories to {self.out} "
            f"(max return {dataset.stats.max_return:.4g})."
        )


class TrainCommand(TrainingFlags):
    """Train a return-conditioned policy on a dataset file."""

    data: Path = Field(description="Dataset file (.jsonl or .jsonl.gz).")
    out: Path = Field(default=Path("policy.json"), description="Checkpoint file.")
    log: Path | None = Field(default=None, description="Training log CSV.")

    def cli_cmd(self) -> None:
        """Execute the ``train`` command."""
        started_at = _now()
        try:
            resolved = self.resolve()
            dataset = read_dataset(self.data)
            policy, log = train(dataset, resolved.train)
            save_policy(policy, self.out, config_fingerprint(resolved.train))
            if self.log is not None:
                write_train_log(log, self.log)
            _write_manifest(
                "train",
                resolved.dump(),
                seed=resolved.train.seed,
                inputs=[self.data, self.config],
                outputs=[self.out, self.log],
                started_at=started_at,
                location=self.out,
            )
        except (OSError, RuntimeError, ValueError) as exc:
            _fail("train", exc)

        print(
            f"Trained variant {resolved.train.variant.value} for "
            f"{resolved.train.iterations} iterations; final loss "
            f"{log.final.total_loss:.4g}. Saved policy to {self.out}."
        )


class EvalCommand(EvalFlags):
    """Evaluate a policy checkpoint at one conditioning target."""

    ckpt: Path = Field(description="Policy checkpoint file.")
    env: str = Field(default="lineworld", description="Environment name or TOML file.")
    target: str | None = Field(
        default=None, description="expert, max, expert:m, max:m or absolute:G."
    )

    def overrides(self) -> dict[str, object]:
        """Flag values keyed by config section and name."""
        return {**super().overrides(), "eval.target": self.target}

    def cli_cmd(self) -> None:
        """Execute the ``eval`` command."""
        try:
            config = self.resolve().eval
            policy = load_policy(self.ckpt)
            spec = load_env(self.env)
            random_ref, expert_ref = resolve_references(spec, config)
            if policy.max_return is None and config.target.basis == "max":
                raise ValueError("The checkpoint does not record its dataset's r*.")
            target = config.target.resolve(policy.max_return or 0.0, expert_ref)
            returns = evaluate_target(
                policy, spec, target, config.episodes, config.seed, config.workers
            )
        except (OSError, RuntimeError, ValueError) as exc:
            _fail("eval", exc)

        mean = float(np.mean(returns))
        print(
            render_table(
                ("target", "G", "episodes", "mean", "std", "normalized"),
                [
                    (
                        config.target.label(),
                        target,
                        config.episodes,
                        mean,
                        float(np.std(returns)),
                        normalized_score(mean, random_ref, expert_ref),
                    )
                ],
            )
        )


class SweepCommand(EvalFlags):
    """Evaluate a policy checkpoint over a sweep of conditioning targets."""

    ckpt: Path = Field(description="Policy checkpoint file.")
    env: str = Field(default="lineworld", description="Environment name or TOML file.")
    out: Path = Field(default=Path("curve.csv"), description="Reliability curve CSV.")

    def cli_cmd(self) -> None:
        """Execute the ``sweep`` command."""
        started_at = _now()
        try:
            resolved = self.resolve()
            policy = load_policy(self.ckpt)
            curve = sweep_targets(policy, load_env(self.env), resolved.eval)
            write_curve(curve, self.out)
            _write_manifest(
                "sweep",
                resolved.dump(),
                seed=resolved.eval.seed,
                inputs=[self.ckpt, self.config],
                outputs=[self.out],
                started_at=started_at,
                location=self.out,
            )
        except (OSError, RuntimeError, ValueError) as exc:
            _fail("sweep", exc)

        print(
            render_table(
                ("basis", "multiplier", "target", "mean", "std", "normalized"),
                [
                    (r.basis, r.multiplier, r.target, r.mean, r.std, r.normalized)
                    for r in curve.records
                ],
            )
        )


class CompareCommand(TrainingFlags):
    """Train and evaluate several variants over several seeds."""

    data: Path = Field(description="Dataset file (.jsonl or .jsonl.gz).")
    env: str = Field(default="lineworld", description="Environment name or TOML file.")
    variants: list[Variant] = Field(
        default=[Variant.BASE, Variant.WC], description="Variants to compare."
    )
    seeds: list[int] = Field(default=[0], description="Training seeds.")
    out: Path = Field(default=Path("compare"), description="Report directory.")

    def cli_cmd(self) -> None:
        """Execute the ``compare`` command."""
        started_at = _now()
        try:
            resolved = self.resolve()
            dataset = read_dataset(self.data)
            report = compare_variants(
                dataset,
                load_env(self.env),
                self.variants,
                self.seeds,
                resolved.train,
                resolved.eval,
            )
            outputs = [write_comparison(report, self.out / "comparison.csv")]
            for position, variant in enumerate(report.variants):
                curve = report.curve_of(position)
                if curve is not None:
                    name = f"curve_{position}_{variant.value}.csv"
                    outputs.append(write_curve(curve, self.out / name))
            _write_manifest(
                "compare",
                {**resolved.dump(), "variants": self.variants, "seeds": self.seeds},
                seed=None,
                inputs=[self.data, self.config],
                outputs=outputs,
                started_at=started_at,
                location=self.out,
            )
        except (OSError, RuntimeError, ValueError) as exc:
            _fail("compare", exc)

        print(
            render_table(
                ("variant", "seeds", "mean", "std", "normalized", "ood_drop", "wins"),
                [
                    (
                        row.variant.value,
                        row.seeds,
                        row.mean,
                        row.std,
                        row.normalized,
                        row.ood_drop,
                        row.wins,
                    )
                    for row in report.rows()
                ],
            )
        )


class AblateCommand(TrainingFlags):
    """Train and evaluate a grid over one weighting or regularizer parameter."""

    parameter: AblationParameter = Field(
        description="Parameter to vary: kappa, lambda, q, alpha or sigma."
    )
    values: list[float] = Field(description="Values of the parameter, at least two.")
    data: Path = Field(description="Dataset file (.jsonl or .jsonl.gz).")
    env: str = Field(default="lineworld", description="Environment name or TOML file.")
    seeds: list[int] = Field(default=[0], description="Training seeds.")
    out: Path = Field(default=Path("ablation"), description="Report directory.")

    def cli_cmd(self) -> None:
        """Execute the ``ablate`` command."""
        started_at = _now()
        try:
            resolved = self.resolve()
            out_dir = run_ablation(
                self.parameter,
                self.values,
                resolved.train,
                read_dataset(self.data),
                load_env(self.env),
                resolved.eval,
                self.out,
                seeds=self.seeds,
            )
            _write_manifest(
                "ablate",
                {
                    **resolved.dump(),
                    "parameter": self.parameter,
                    "values": self.values,
                    "seeds": self.seeds,
                },
                seed=None,
                inputs=[self.data, self.config],
                outputs=sorted(out_dir.glob("*.csv")),
                started_at=started_at,
                location=out_dir,
            )
        except (OSError, RuntimeError, ValueError) as exc:
            _fail("ablate", exc)

        print(f"Wrote ablation report to {out_dir}")


class ReportHistCommand(TrainingFlags):
    """Write the original and transformed return histograms of a dataset."""

    data: Path = Field(description="Dataset file (.jsonl or .jsonl.gz).")
    out: Path = Field(default=Path("hist.csv"), description="Histogram CSV.")
    density: Path | None = Field(
        default=None, description="Optional CSV with the continuous-form overlay."
    )

    def cli_cmd(self) -> None:
        """Execute the ``report-hist`` command."""
        started_at = _now()
        try:
            resolved = self.resolve()
            dataset = read_dataset(self.data)
            rows = report_histograms(dataset, resolved.train.weighting, self.out)
            if self.density is not None:
                report_density(dataset, resolved.train.weighting, self.density)
            _write_manifest(
                "report-hist",
                resolved.dump(),
                seed=None,
                inputs=[self.data, self.config],
                outputs=[self.out, self.density],
                started_at=started_at,
                location=self.out,
            )
        except (OSError, ValueError) as exc:
            _fail("report-hist", exc)

        print(render_table(HISTOGRAM_HEADER, rows))


class VerifyCommand(BaseModel):
    """Run the oracle checks and report their outcomes."""

    suite: Suite = Field(
        default="all",
        description="One of bins, sampler, gradients, noise, rollouts or all.",
    )
    seed: int = Field(default=0, description="Seed of the fuzzed fixtures.")
    out: Path | None = Field(default=None, description="Optional report CSV.")

    def cli_cmd(self) -> None:
        """Execute the ``verify`` command."""
        started_at = _now()
        try:
            reports = run_suite(self.suite, self.seed)
            rows = [
                (r.oracle, r.metric, r.value, r.bound, r.passed) for r in reports
            ]
            if self.out is not None:
                write_csv(self.out, ORACLE_HEADER, rows)
                _write_manifest(
                    "verify",
                    {"suite": self.suite, "seed": self.seed},
                    seed=self.seed,
                    inputs=[],
                    outputs=[self.out],
                    started_at=started_at,
                    location=self.out,
                )
        except (OSError, ValueError) as exc:
            _fail("verify", exc)

        print(render_table(ORACLE_HEADER, rows))
        failed = [r.oracle for r in reports if not r.passed]
        if failed:
            _fail("verify", RuntimeError(f"Oracle checks failed: {', '.join(failed)}"))


class ValidateCommand(BaseModel):
    """Validate whether a given file is a valid CWBC dataset."""

    path: CliPositionalArg[Path] = Field(
        description="The path to the dataset file to validate."
    )

    def cli_cmd(self) -> None:
        """Execute the ``validate`` command."""
        if validate_dataset(self.path):
            print("Validation successful.")
            return

        print("Validation failed.")
        _fail("validate", ValueError(f"{self.path} is not a valid cwbc dataset."))


class CwbcCli(BaseSettings, cli_prog_name="cwbc", cli_kebab_case=True):
    """Command-line interface for the ``cwbc`` package."""

    gen_data: CliSubCommand[GenDataCommand] = Field(alias="gen-data")
    train_cmd: CliSubCommand[TrainCommand] = Field(alias="train")
    eval_cmd: CliSubCommand[EvalCommand] = Field(alias="eval")
    sweep: CliSubCommand[SweepCommand]
    compare: CliSubCommand[CompareCommand]
    ablate: CliSubCommand[AblateCommand]
    report_hist: CliSubCommand[ReportHistCommand] = Field(alias="report-hist")
    verify: CliSubCommand[VerifyCommand]
    validate_cmd: CliSubCommand[ValidateCommand] = Field(alias="validate")

    def cli_cmd(self) -> None:
        """Execute the selected subcommand."""
        CliApp.run_subcommand(self)


def app(cli_args: list[str] | None = None) -> None:
    """Console script entrypoint."""
    CliApp.run(CwbcCli, cli_args=cli_args)
