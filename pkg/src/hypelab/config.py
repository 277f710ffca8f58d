"""
Experiment Configuration

Config files are flat `key = value` lines under `[section]` headers:

    command = "compare"
    name = "low-resource"

    [data]
    subsample = 1000

    [compare]
    techniques = ["vanilla", "hype-n", "hype-u"]
    baseline = "vanilla"

The file is parsed with the lark grammar in `grammar/config.lark`, every key
is checked against the section's dataclass (unknown keys and wrong types are
reported at their position), defaults are filled in and referenced paths are
checked before anything is computed.
"""

import json
import types
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal, Union, get_args, get_origin, get_type_hints

from lark import Lark, Token, Transformer, v_args
from lark.exceptions import UnexpectedInput, VisitError

from .errors import ConfigError, CPos, InputError, LarkError
from .grammar import grammar
from .model import PRESETS, ModelConfig
from .perturb import DropoutSpec, NoiseSpec, Technique, technique

COMMANDS = ("finetune", "grid", "probe", "similarity", "pretrain", "compare")


@dataclass(frozen=True)
class DataSection:
    suite_seed: int = 0
    tasks: tuple[str, ...] = ("acceptability", "paraphrase", "similarity")
    n_train: int = 4000
    n_dev: int = 600
    corpus_size: int = 20000
    label_noise: float = 0.1
    train: str | None = None
    dev: str | None = None
    format: Literal["jsonl", "tsv"] | None = None
    task: str = "task"
    kind: Literal["classification", "regression"] | None = None
    metric: Literal["accuracy", "f1", "matthews", "pearson", "spearman", "pearson_spearman"] = "accuracy"
    label_map: tuple[str, ...] = ()
    subsample: int | None = None
    subsample_seed: int = 0
    max_len: int = 128

    @property
    def from_files(self) -> bool:
        return self.train is not None


@dataclass(frozen=True)
class ModelSection:
    preset: str | None = None
    n_layers: int | None = None
    d_model: int | None = None
    n_heads: int | None = None
    d_ff: int | None = None
    vocab_size: int = 512
    max_seq_len: int = 128
    ln_eps: float = 1e-12
    checkpoint: str | None = None
    pretrained: bool = False
    seed: int = 0

    def build(self) -> ModelConfig:
        explicit = {k: getattr(self, k) for k in ("n_layers", "d_model", "n_heads", "d_ff") if getattr(self, k) is not None}
        common = dict(vocab_size=self.vocab_size, max_seq_len=self.max_seq_len, ln_eps=self.ln_eps)
        if self.preset is not None:
            return ModelConfig.preset(self.preset, **explicit, **common)
        return ModelConfig(**explicit, **common)


@dataclass(frozen=True)
class PretrainSection:
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    warmup_fraction: float = 0.1
    mask_prob: float = 0.15
    dropout: float = 0.1
    max_len: int = 32
    holdout: int = 256
    seed: int = 0
    output: str = "backbone.ckpt"


@dataclass(frozen=True)
class TrainSection:
    technique: str = "hype-n"
    lr: float = 2e-5
    epochs: int = 3
    batch_size: int = 16
    warmup_fraction: float = 0.1
    warmup_steps: int | None = None
    max_len: int = 128
    pad_to: Literal["batch", "max_len"] = "batch"
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-5
    weight_decay: float = 0.1
    decay_all: bool = False
    seed: int = 0


@dataclass(frozen=True)
class NoiseSection:
    """Overrides of the technique's noise settings; unset keys keep it."""

    form: Literal["none", "normal", "uniform"] | None = None
    sigma: float | None = None
    position: Literal["pre_layer", "intra_layer", "both"] | None = None
    layers: tuple[int, ...] | None = None


@dataclass(frozen=True)
class DropoutSection:
    rate: float | None = None
    combine: bool | None = None


@dataclass(frozen=True)
class GridSection:
    lrs: tuple[float, ...] = (1e-5, 2e-5, 3e-5, 4e-5)
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class CompareSection:
    techniques: tuple[str, ...] = ("vanilla", "hype-n", "hype-u")
    baseline: str | None = "vanilla"
    similarity: bool = False


@dataclass(frozen=True)
class ProbeSection:
    checkpoints: tuple[str, ...] = ()
    layers: tuple[int, ...] | None = None
    seed: int = 0
    task: str | None = None
    label_map: tuple[str, ...] = ()
    pool: Literal["first", "mean"] = "first"


@dataclass(frozen=True)
class SimilaritySection:
    checkpoints: tuple[str, ...] = ()
    exclude_first: bool = False
    task: str | None = None
    split: Literal["train", "dev"] = "dev"


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs"
    formats: tuple[Literal["json", "csv"], ...] = ("json", "csv")
    checkpoints: bool = True


SECTIONS: dict[str, type] = {
    "data": DataSection,
    "model": ModelSection,
    "pretrain": PretrainSection,
    "train": TrainSection,
    "noise": NoiseSection,
    "dropout": DropoutSection,
    "grid": GridSection,
    "compare": CompareSection,
    "probe": ProbeSection,
    "similarity": SimilaritySection,
    "output": OutputSection,
}

# (section, key) pairs holding input paths that must exist before a run
INPUT_PATHS = (
    ("data", "train"),
    ("data", "dev"),
    ("model", "checkpoint"),
    ("probe", "checkpoints"),
    ("similarity", "checkpoints"),
)


@dataclass(frozen=True)
class ExperimentConfig:
    command: Literal["finetune", "grid", "probe", "similarity", "pretrain", "compare"]
    name: str = "experiment"
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    pretrain: PretrainSection = PretrainSection()
    train: TrainSection = TrainSection()
    noise: NoiseSection = NoiseSection()
    dropout: DropoutSection = DropoutSection()
    grid: GridSection = GridSection()
    compare: CompareSection = CompareSection()
    probe: ProbeSection = ProbeSection()
    similarity: SimilaritySection = SimilaritySection()
    output: OutputSection = OutputSection()
    path: str | None = field(default=None, compare=False)

    def edit(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Pin every seed of the run to `seed`."""
        return self.edit(
            train=replace(self.train, seed=seed),
            grid=replace(self.grid, seeds=(seed,)),
            pretrain=replace(self.pretrain, seed=seed),
            probe=replace(self.probe, seed=seed),
            model=replace(self.model, seed=seed),
        )

    def with_output(self, out_dir: str | None = None, formats: tuple[str, ...] | None = None) -> "ExperimentConfig":
        output = self.output
        if out_dir is not None:
            output = replace(output, dir=out_dir)
        if formats is not None:
            output = replace(output, formats=formats)  # type: ignore[arg-type]
        return self.edit(output=output)

    def technique(self, name: str | None = None, n_layers: int | None = None) -> Technique:
        """
        Resolve a technique name, then apply the [noise] / [dropout] overrides.
        """
        n = n_layers or self.model.build().n_layers
        base = technique(name or self.train.technique, n)
        noise = base.noise
        overrides = {
            k: v
            for k, v in (("form", self.noise.form), ("sigma", self.noise.sigma), ("position", self.noise.position))
            if v is not None
        }
        if self.noise.layers is not None:
            overrides["layer_mask"] = frozenset(self.noise.layers)
        if overrides:
            noise = replace(noise, **overrides)
            if noise.form == "none":
                noise = replace(noise, sigma=0.0)
        noise.validate_for(n)
        dropout = base.dropout if self.dropout.rate is None else DropoutSpec(self.dropout.rate)
        combine = base.combine if self.dropout.combine is None else self.dropout.combine
        return Technique(base.name, noise, dropout, combine)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("path")
        return out


@dataclass
class Entry:
    section: str | None
    key: str
    value: Any
    key_pos: CPos
    value_pos: CPos


@dataclass
class Located:
    value: Any
    pos: CPos


def _span(first: Token, last: Token) -> CPos:
    start, end = CPos.fromtoken(first), CPos.fromtoken(last)
    return CPos(start.line, start.col, end.end_line, end.end_col)


@v_args(inline=True)
class ConfigTransformer(Transformer):
    """Parse tree -> flat list of `Entry` with positions."""

    def number(self, token: Token) -> Located:
        text = str(token)
        value = float(text) if any(c in text for c in ".eE") else int(text)
        return Located(value, CPos.fromtoken(token))

    def string(self, token: Token) -> Located:
        return Located(json.loads(str(token)), CPos.fromtoken(token))

    def word(self, token: Token) -> Located:
        text = str(token)
        value: Any = {"true": True, "false": False}.get(text, text)
        return Located(value, CPos.fromtoken(token))

    @v_args(inline=False, meta=True)
    def array(self, meta, items) -> Located:
        items = [i for i in items if i is not None]
        pos = CPos(meta.line, meta.column, meta.end_line, meta.end_column) if not meta.empty else CPos()
        return Located([i.value for i in items], pos)

    def section(self, key: Token):
        return ("section", key)

    def pair(self, key: Token, value: Located):
        return ("pair", key, value)

    @v_args(inline=False)
    def start(self, statements):
        return statements


_parser = Lark(grammar, parser="lalr", maybe_placeholders=True, propagate_positions=True)


def parse_entries(code: str, path: str | None = None) -> list[Entry]:
    try:
        tree = _parser.parse(code)
    except UnexpectedInput as e:
        raise LarkError(e, path=path, code=code)
    try:
        statements = ConfigTransformer().transform(tree)
    except VisitError as e:
        raise ConfigError(f"invalid value ({e.orig_exc})", path=path, code=code)

    entries: list[Entry] = []
    section: str | None = None
    seen_sections: set[str] = set()
    for stmt in statements:
        if stmt[0] == "section":
            name = str(stmt[1])
            if name not in SECTIONS:
                raise ConfigError(
                    f"unknown section '{name}', expected one of {', '.join(SECTIONS)}",
                    pos=CPos.fromtoken(stmt[1]),
                    path=path,
                    code=code,
                )
            if name in seen_sections:
                raise ConfigError(f"section '{name}' appears twice", pos=CPos.fromtoken(stmt[1]), path=path, code=code)
            seen_sections.add(name)
            section = name
        else:
            _, key, located = stmt
            entries.append(Entry(section, str(key), located.value, CPos.fromtoken(key), located.pos))
    return entries


def _type_name(tp: Any) -> str:
    origin = get_origin(tp)
    if origin is Literal:
        return " | ".join(repr(a) for a in get_args(tp))
    if origin in (Union, types.UnionType):
        return " or ".join(_type_name(a) for a in get_args(tp))
    if origin is tuple:
        return f"list of {_type_name(get_args(tp)[0])}"
    if tp is type(None):
        return "none"
    return getattr(tp, "__name__", str(tp))


def coerce(value: Any, tp: Any) -> Any:
    """Convert a parsed value to annotation `tp`, or raise TypeError."""
    origin = get_origin(tp)
    if origin in (Union, types.UnionType):
        options = get_args(tp)
        if value == "none" and type(None) in options:
            # a literal "none" option wins over unset
            if any(get_origin(o) is Literal and "none" in get_args(o) for o in options):
                return "none"
            return None
        for option in options:
            if option is type(None):
                continue
            try:
                return coerce(value, option)
            except TypeError:
                continue
        raise TypeError(_type_name(tp))
    if origin is Literal:
        if value in get_args(tp):
            return value
        raise TypeError(_type_name(tp))
    if origin is tuple:
        if not isinstance(value, list):
            value = [value]
        return tuple(coerce(v, get_args(tp)[0]) for v in value)
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise TypeError("true or false")
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise TypeError("integer")
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise TypeError("number")
    if tp is str:
        if isinstance(value, str):
            return value
        raise TypeError("string")
    raise TypeError(_type_name(tp))


def build_config(entries: list[Entry], path: str | None = None, code: str = "") -> ExperimentConfig:
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    positions: dict[tuple[str | None, str], Entry] = {}

    for entry in entries:
        cls = ExperimentConfig if entry.section is None else SECTIONS[entry.section]
        hints = get_type_hints(cls)
        nested = SECTIONS if cls is ExperimentConfig else ()
        allowed = [f.name for f in fields(cls) if f.name not in nested and f.name != "path"]
        where = f"[{entry.section}]" if entry.section else "the top level"
        if entry.key not in allowed:
            raise ConfigError(
                f"unknown key '{entry.key}' in {where}, expected one of {', '.join(allowed)}",
                pos=entry.key_pos,
                path=path,
                code=code,
            )
        if (entry.section, entry.key) in positions:
            raise ConfigError(f"key '{entry.key}' is set twice in {where}", pos=entry.key_pos, path=path, code=code)
        try:
            value = coerce(entry.value, hints[entry.key])
        except TypeError as e:
            raise ConfigError(
                f"key '{entry.key}' expects {e}, got {json.dumps(entry.value)}",
                pos=entry.value_pos,
                path=path,
                code=code,
            )
        positions[(entry.section, entry.key)] = entry
        (top if entry.section is None else sections[entry.section])[entry.key] = value

    if "command" not in top:
        raise ConfigError(f"missing key 'command', expected one of {', '.join(COMMANDS)}", path=path, code=code, pos=None)

    def fail(section: str | None, key: str, message: str) -> ConfigError:
        entry = positions.get((section, key))
        return ConfigError(message, pos=entry.value_pos if entry else None, path=path, code=code)

    built: dict[str, Any] = {}
    for name, cls in SECTIONS.items():
        try:
            built[name] = cls(**sections[name])
        except InputError as e:
            raise ConfigError(f"[{name}] {e.message}", path=path, code=code)

    config = ExperimentConfig(**top, **built, path=path)

    if config.model.preset is not None and config.model.preset not in PRESETS:
        raise fail("model", "preset", f"unknown model preset '{config.model.preset}', expected one of {', '.join(PRESETS)}")
    try:
        model = config.model.build()
    except InputError as e:
        raise ConfigError(f"[model] {e.message}", path=path, code=code)

    try:
        names = [config.train.technique]
        if config.command == "compare":
            names = list(config.compare.techniques)
        for name in names:
            config.technique(name, model.n_layers)
    except InputError as e:
        key = ("train", "technique")
        if config.command == "compare":
            key = ("compare", "techniques")
        if "layer mask" in e.message:
            key = ("noise", "layers")
        raise fail(*key, e.message)

    if config.command == "compare" and config.compare.baseline is not None:
        if config.compare.baseline not in config.compare.techniques:
            raise fail("compare", "baseline", f"baseline '{config.compare.baseline}' is not one of the compared techniques")
    if config.command in ("probe", "similarity"):
        checkpoints = config.probe.checkpoints if config.command == "probe" else config.similarity.checkpoints
        if not checkpoints and config.model.checkpoint is None:
            raise ConfigError(f"command '{config.command}' needs [{config.command}] checkpoints", path=path, code=code)
    if config.data.from_files and config.data.dev is None:
        raise fail("data", "train", "[data] train needs a matching dev file")
    return config


def check_paths(config: ExperimentConfig, base: Path, code: str = "") -> ExperimentConfig:
    """
    Resolve input paths relative to `base` and fail on any that does not exist.
    """
    resolved: dict[str, dict[str, Any]] = {}
    for section, key in INPUT_PATHS:
        value = getattr(getattr(config, section), key)
        if value is None:
            continue
        values = value if isinstance(value, tuple) else (value,)
        fixed = []
        for item in values:
            p = Path(item)
            p = p if p.is_absolute() else base / p
            if not p.is_file():
                raise ConfigError(
                    f"[{section}] {key}: file '{item}' does not exist",
                    pos=_locate(code, section, key),
                    path=config.path,
                    code=code,
                )
            fixed.append(str(p))
        resolved.setdefault(section, {})[key] = tuple(fixed) if isinstance(value, tuple) else fixed[0]
    return config.edit(**{s: replace(getattr(config, s), **kw) for s, kw in resolved.items()})


def _locate(code: str, section: str, key: str) -> CPos | None:
    try:
        entries = parse_entries(code)
    except ConfigError:
        return None
    for e in entries:
        if e.section == section and e.key == key:
            return e.value_pos
    return None


def parse_config(code: str, path: str | None = None) -> ExperimentConfig:
    return build_config(parse_entries(code, path), path, code)


def load_config(path: str | Path, check: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        code = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config '{path}': {e.strerror}", path=str(path))
    except UnicodeDecodeError:
        raise ConfigError(f"config '{path}' is not UTF-8 text", path=str(path))
    config = parse_config(code, str(path))
    if check:
        config = check_paths(config, path.parent, code)
    return config

