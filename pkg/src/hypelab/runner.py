"""
Experiment Runner

Executes a validated `ExperimentConfig`: loads the tasks (synthetic suite or
files), prepares the backbone, dispatches to the command and assembles the
`MetricReport`. The resolved config is written before any work starts; a run
that fails part way still writes what it finished plus failure.json.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any

from .checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import TokenizerSpec, load_dataset, parse_label_map, remap_labels, subsample
from .errors import ConfigError, Error, InputError, OutputError, RunFailure
from .model import ModelConfig, ModelState
from .pretrain import PretrainConfig, Pretrainer
from .probe import probe_layers, similarity_curve
from .report import (
    LayerPoint,
    MetricReport,
    TechniqueAggregate,
    dumps_json,
    emit_report,
    suite_mean,
    with_deltas,
    write_text,
)
from .synthetic import SyntheticSuite, TaskData, generate_synthetic_suite, vocabulary
from .trainer import GridResult, RunRecord, TrainRunConfig, finetune, grid_search, mean_std

logger = logging.getLogger(__name__)


class Runner:
    """
    Args:
        config: Parsed and path-checked experiment
        threads: Workers for grid cells
    """

    def __init__(self, config: ExperimentConfig, threads: int = 1):
        self.config = config
        self.threads = max(1, threads)
        self.out = Path(config.output.dir)
        self.runs: list[dict[str, Any]] = []
        self.aggregates: list[TechniqueAggregate] = []
        self.layers: list[LayerPoint] = []
        self.extra: dict[str, Any] = {}
        self._suite: SyntheticSuite | None = None
        self._tasks: dict[str, TaskData] | None = None
        self._tokenizer: TokenizerSpec | None = None

    @property
    def checkpoint_dir(self) -> Path | None:
        return self.out / "checkpoints" if self.config.output.checkpoints else None

    def report(self) -> MetricReport:
        baseline = self.config.compare.baseline if self.config.command == "compare" else None
        return MetricReport(
            self.config.command,
            self.config.name,
            tuple(self.aggregates),
            tuple(self.runs),
            tuple(self.layers),
            baseline,
            dict(self.extra),
        )

    def run(self) -> MetricReport:
        write_text(self.out / "resolved_config.json", dumps_json(self.config.to_dict()))
        logger.info("running '%s' (%s), output in %s", self.config.name, self.config.command, self.out)
        try:
            getattr(self, f"_{self.config.command}")()
        except Error as e:
            self._fail(e)
            raise
        except Exception as e:
            logger.exception("unexpected failure in '%s'", self.config.command)
            failure = RunFailure(f"unexpected {type(e).__name__}: {e}")
            self._fail(failure)
            raise failure from e
        report = self.report()
        emit_report(report, self.out, self.config.output.formats)
        return report

    def _fail(self, error: Error) -> None:
        record = {"command": self.config.command, "error": error.name, "message": error.message}
        try:
            if self.runs or self.layers or self.aggregates:
                emit_report(self.report(), self.out, self.config.output.formats)
            write_text(self.out / "failure.json", dumps_json(record))
        except OutputError:
            logger.error("could not write the failure record to %s", self.out)

    @property
    def suite(self) -> SyntheticSuite:
        if self._suite is None:
            d = self.config.data
            self._suite = generate_synthetic_suite(d.suite_seed, d.n_train, d.n_dev, d.corpus_size, d.label_noise)
        return self._suite

    @property
    def tokenizer(self) -> TokenizerSpec:
        if self._tokenizer is None:
            self._tasks, self._tokenizer = self._load_tasks()
        return self._tokenizer

    @property
    def tasks(self) -> dict[str, TaskData]:
        if self._tasks is None:
            self._tasks, self._tokenizer = self._load_tasks()
        return self._tasks

    def _load_tasks(self) -> tuple[dict[str, TaskData], TokenizerSpec]:
        d = self.config.data
        if d.from_files:
            assert d.train is not None and d.dev is not None
            train = load_dataset(d.train, d.format, f"{d.task}.train", d.kind)
            dev = load_dataset(d.dev, d.format, f"{d.task}.dev", train.kind, train.label_names)
            if d.label_map:
                mapping = parse_label_map(d.label_map)
                train, dev = remap_labels(train, mapping), remap_labels(dev, mapping)
            tasks = {d.task: TaskData(d.task, train, dev, d.metric)}
            texts = [t for ds in (train, dev) for ex in ds.examples for t in (ex.text_a, ex.text_b) if t]
            tokenizer = TokenizerSpec.build(vocabulary()).extend(texts, self.config.model.vocab_size)
        else:
            unknown = [t for t in d.tasks if t not in self.suite.tasks]
            if unknown:
                raise ConfigError(
                    f"unknown task '{unknown[0]}', expected one of {', '.join(self.suite.tasks)}", path=self.config.path
                )
            tasks = {t: self.suite.tasks[t] for t in d.tasks}
            tokenizer = self.suite.tokenizer

        if d.subsample is not None:
            tasks = {
                name: replace(task, train=subsample(task.train, d.subsample, d.subsample_seed))
                for name, task in tasks.items()
            }
        for task in tasks.values():
            logger.info("task %s: %d train / %d dev (%s)", task.name, len(task.train), len(task.dev), task.metric)
        return tasks, tokenizer

    def _task(self, name: str | None) -> list[TaskData]:
        if name is None:
            return list(self.tasks.values())
        if name not in self.tasks:
            raise ConfigError(f"unknown task '{name}', expected one of {', '.join(self.tasks)}", path=self.config.path)
        return [self.tasks[name]]

    def _load(self, path: str) -> ModelState:
        state = load_checkpoint(path)
        if state.config.vocab_size < len(self.tokenizer):
            raise InputError(
                f"checkpoint '{path}' has vocab_size {state.config.vocab_size}, the data needs {len(self.tokenizer)}"
            )
        return state

    def _pretrain_backbone(self) -> ModelState:
        p = self.config.pretrain
        options = PretrainConfig(p.steps, p.batch_size, p.lr, p.warmup_fraction, p.mask_prob, p.dropout, p.max_len, p.holdout)
        pretrainer = Pretrainer(self.config.model.build(), self.suite.corpus, self.suite.tokenizer, options, p.seed)
        state = pretrainer.run()
        path = self.out / p.output
        self.extra["pretrain"] = {
            "steps": p.steps,
            "initial_loss": pretrainer.initial_loss,
            "final_loss": pretrainer.final_loss,
            "history": pretrainer.history,
            "checkpoint": path.name,
            "checkpoint_id": save_checkpoint(state, path),
        }
        return state

    def _backbone(self) -> ModelState | None:
        model = self.config.model
        if model.checkpoint is not None:
            state = self._load(model.checkpoint)
            logger.info("backbone %s (%s)", model.checkpoint, checkpoint_id(model.checkpoint)[:12])
            return state
        if model.pretrained:
            return self._pretrain_backbone()
        return None

    def _run_config(self, task: TaskData, name: str, model: ModelConfig) -> TrainRunConfig:
        try:
            tech = self.config.technique(name, model.n_layers)
        except InputError as e:
            raise ConfigError(f"technique '{name}': {e.message}", path=self.config.path)
        t = self.config.train
        return TrainRunConfig(
            task=task.name,
            technique=tech.name,
            model=model,
            checkpoint=self.config.model.checkpoint,
            noise=tech.noise,
            dropout=tech.dropout,
            combine=tech.combine,
            peak_lr=t.lr,
            epochs=t.epochs,
            batch_size=t.batch_size,
            warmup_fraction=t.warmup_fraction,
            warmup_steps=t.warmup_steps,
            max_len=t.max_len,
            pad_to=t.pad_to,
            betas=(t.beta1, t.beta2),
            eps=t.eps,
            weight_decay=t.weight_decay,
            decay_all=t.decay_all,
            seed=t.seed,
        )

    def _record(self, records: tuple[RunRecord, ...] | list[RunRecord]) -> None:
        self.runs.extend(r.to_dict() for r in records)

    def _search(self, task: TaskData, name: str, backbone: ModelState | None) -> GridResult:
        model = backbone.config if backbone is not None else self.config.model.build()
        base = self._run_config(task, name, model)
        g = self.config.grid
        result = grid_search(base, g.lrs, g.seeds, task, self.tokenizer, backbone, self.checkpoint_dir, self.threads)
        self._record(result.records)
        agg = result.aggregate
        best = [r for r in result.records if r.config.peak_lr == agg.best_lr and not r.collapsed]
        self.aggregates.append(
            TechniqueAggregate(
                task.name,
                name,
                task.metric,
                agg.mean,
                agg.std,
                agg.n_seeds,
                agg.best_lr,
                agg.excluded,
                sum(r.at_chance for r in best),
            )
        )
        self.extra.setdefault("grid", []).append({"task": task.name, "technique": name, **agg.to_dict()})
        return result

    def _finetune(self) -> None:
        backbone = self._backbone()
        name = self.config.train.technique
        for task in self.tasks.values():
            model = backbone.config if backbone is not None else self.config.model.build()
            record = finetune(self._run_config(task, name, model), task, self.tokenizer, backbone, self.checkpoint_dir)
            self._record([record])
            score = record.final_score
            self.aggregates.append(
                TechniqueAggregate(
                    task.name,
                    name,
                    task.metric,
                    score,
                    None if score is None else 0.0,
                    0 if record.collapsed else 1,
                    record.config.peak_lr,
                    int(record.collapsed),
                    int(record.at_chance),
                )
            )

    def _grid(self) -> None:
        backbone = self._backbone()
        for task in self.tasks.values():
            self._search(task, self.config.train.technique, backbone)

    def _compare(self) -> None:
        backbone = self._backbone()
        techniques = list(self.config.compare.techniques)
        for name in techniques:
            for task in self.tasks.values():
                result = self._search(task, name, backbone)
                if self.config.compare.similarity:
                    self._compare_similarity(task, name, result)

        rows = list(self.aggregates)
        if len(self.tasks) > 1:
            rows += suite_mean(rows, techniques)
        self.aggregates = list(with_deltas(rows, self.config.compare.baseline))

    def _compare_similarity(self, task: TaskData, name: str, result: GridResult) -> None:
        """Similarity curves of the best learning rate's fine-tuned models, one per seed."""
        best = [
            r for r in result.records if r.config.peak_lr == result.aggregate.best_lr and r.state is not None
        ]
        top = []
        for rec in best:
            assert rec.state is not None
            curve = similarity_curve(
                rec.state,
                task.dev,
                self.tokenizer,
                self.config.data.max_len,
                self.config.similarity.exclude_first,
                checkpoint=rec.checkpoint_id or "",
            )
            for layer, value in curve.values:
                self.layers.append(LayerPoint("similarity", name, task.name, layer, value, rec.config.seed))
            top.append(curve.values[-1][1])
        if top:
            mean, std = mean_std(top)
            self.extra.setdefault("top_layer_similarity", []).append(
                {"task": task.name, "technique": name, "mean": mean, "std": std, "n_seeds": len(top)}
            )

    def _sources(self, checkpoints: tuple[str, ...]) -> list[str]:
        sources = list(checkpoints)
        if not sources and self.config.model.checkpoint is not None:
            sources = [self.config.model.checkpoint]
        return sources

    def _probe(self) -> None:
        p = self.config.probe
        label_map = parse_label_map(p.label_map) if p.label_map else None
        probes = []
        for source in self._sources(p.checkpoints):
            state = self._load(source)
            ident = checkpoint_id(source)
            for task in self._task(p.task):
                result = probe_layers(
                    state,
                    task,
                    self.tokenizer,
                    p.layers,
                    p.seed,
                    self.config.data.max_len,
                    label_map,
                    ident,
                    p.pool,
                )
                probes.append({"source": Path(source).name, **result.to_dict()})
                for layer, score in result.scores:
                    self.layers.append(LayerPoint("probe", Path(source).name, task.name, layer, score, p.seed))
        self.extra["probes"] = probes

    def _similarity(self) -> None:
        s = self.config.similarity
        curves = []
        for source in self._sources(s.checkpoints):
            state = self._load(source)
            ident = checkpoint_id(source)
            for task in self._task(s.task):
                dataset = task.dev if s.split == "dev" else task.train
                curve = similarity_curve(state, dataset, self.tokenizer, self.config.data.max_len, s.exclude_first, checkpoint=ident)
                curves.append({"source": Path(source).name, "task": task.name, "split": s.split, **curve.to_dict()})
                for layer, value in curve.values:
                    self.layers.append(LayerPoint("similarity", Path(source).name, task.name, layer, value))
        self.extra["similarity"] = curves

    def _pretrain(self) -> None:
        self._pretrain_backbone()


def run_experiment(config: ExperimentConfig, threads: int = 1) -> MetricReport:
    return Runner(config, threads).run()
