"""Pipeline stages behind the command line: run configuration, manifests and stage functions."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import yaml

from . import analysis
from .corpus import (
    SPLITS,
    ConfigurationError,
    FreqTable,
    RecordFile,
    SentenceRecord,
    Variant,
    WordBudget,
    assign_split,
    build_freq_table,
    iter_documents,
    order_words,
    prepare,
    read_records,
    record_to_json,
)
from .grammars import (
    UD_RELATIONS,
    VARIANTS,
    WEIGHT_FILE_VARIANTS,
    load_grammar,
    make_random_grammar,
    optimize_min_dl_grammar,
    save_grammar,
)
from .surprisal import NGramModel, export_surprisals, import_external_surprisals, score, train_ngram
from .treebank import DEFAULT_PROMOTE, parse_conllu, promote_function_heads, validate_tree
from .uidmetrics import METRICS, MetricConfig, language_uid, mean_surprisal, write_metric_rows

log = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    pass


class StaleArtifactError(RuntimeError):
    pass


@dataclass
class RunConfig:
    language: str = "und"
    treebank: str | None = None
    output: str = "run"
    variants: list = field(default_factory=lambda: list(VARIANTS))
    promote: list = field(default_factory=lambda: sorted(DEFAULT_PROMOTE))
    grammars: dict = field(default_factory=dict)
    sentences_per_doc: int | None = None
    strict: bool = False
    split_ratios: list = field(default_factory=lambda: [0.9, 0.05, 0.05])
    seed: int = 0
    train_budget: int | None = None
    eval_budget: int | None = None
    dataset_size: str = "full"
    eval_split: str = "test"
    lm_order: int = 4
    lm_smoothing: str = "kn"
    lm_discount: float = 0.75
    lm_alpha: float = 1.0
    lm_unk_threshold: int = 2
    uid_k: float = 1.25
    uid_filter: str = "all"
    uid_ci: str = "bootstrap"
    uid_resamples: int = 2000
    mindl_iterations: int = 200
    mindl_restarts: int = 4
    mindl_sample: int = 200
    comparisons: list = field(
        default_factory=lambda: [["Real", "Reverse", "uid_v"], ["Efficient-VO", "Efficient-OV", "uid_v"]]
    )

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: config must be a mapping")
        base = path.parent
        for key in ("treebank", "output"):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        if isinstance(data.get("grammars"), dict):
            data["grammars"] = {
                v: str(p if Path(p).is_absolute() else base / p) for v, p in data["grammars"].items()
            }
        return cls().updated(data)

    def updated(self, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(self)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **values)

    def set_from_string(self, assignment: str) -> "RunConfig":
        """Apply a ``key=value`` override; the value is parsed as YAML."""
        key, sep, raw = assignment.partition("=")
        if not sep:
            raise ConfigurationError(f"override {assignment!r} is not key=value")
        return self.updated({key.strip(): yaml.safe_load(raw)})

    def validate(self, need_treebank: bool = False) -> None:
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigurationError(f"unknown variants {bad}; choose from {', '.join(VARIANTS)}")
        if len(set(self.variants)) != len(self.variants):
            raise ConfigurationError("duplicate variants")
        if len(self.split_ratios) != 3 or any(r <= 0 for r in self.split_ratios) \
                or abs(sum(self.split_ratios) - 1) > 1e-9:
            raise ConfigurationError(f"split_ratios must be three positive numbers summing to 1: {self.split_ratios}")
        if self.eval_split not in SPLITS:
            raise ConfigurationError(f"eval_split must be one of {SPLITS}")
        if need_treebank:
            if not self.treebank:
                raise ConfigurationError("no treebank configured")
            if not Path(self.treebank).is_file():
                raise ConfigurationError(f"treebank {self.treebank} does not exist")
        for v, p in self.grammars.items():
            if v not in VARIANTS:
                raise ConfigurationError(f"grammar file given for unknown variant {v!r}")
            if not Path(p).is_file():
                raise ConfigurationError(f"weight file for {v} not found: {p}")
        if not self.uid_k > 1:
            raise ConfigurationError("uid_k must be > 1")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @property
    def out(self) -> Path:
        return Path(self.output)

    def metric_config(self) -> MetricConfig:
        return MetricConfig(k=self.uid_k, filter=self.uid_filter, ci=self.uid_ci,
                            resamples=self.uid_resamples, seed=self.seed)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """``manifest.json`` in the run directory: config echo plus checksums of every stage artifact."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"artifacts": {}, "stages": {}}

    def rel(self, p) -> str:
        p = Path(p)
        try:
            return p.resolve().relative_to(self.run_dir.resolve()).as_posix()
        except ValueError:
            return str(p.resolve())

    def record(self, stage: str, cfg: RunConfig, inputs: Iterable, outputs: Iterable, extra: dict | None = None):
        entry = {
            "config_hash": cfg.hash,
            "inputs": {self.rel(p): sha256_file(p) for p in inputs},
            "outputs": sorted(self.rel(p) for p in outputs),
        }
        if extra:
            entry["info"] = extra
        self.data["stages"][stage] = entry
        for p in outputs:
            self.data["artifacts"][self.rel(p)] = {"sha256": sha256_file(p), "stage": stage}
        if stage == "transform":
            self.data["config"] = cfg.as_dict()
            self.data["config_hash"] = cfg.hash
        self.save()

    def require(self, paths: Iterable, hint: str) -> None:
        for p in paths:
            p = Path(p)
            if not p.exists():
                raise MissingArtifactError(f"missing {p}; run `{hint}` first")
            art = self.data["artifacts"].get(self.rel(p))
            if art is None:
                raise StaleArtifactError(f"{p} is not recorded in {self.path}; re-run `{art_stage(hint)}`")
            if sha256_file(p) != art["sha256"]:
                raise StaleArtifactError(f"{p} changed since stage {art['stage']!r} wrote it; re-run `{art['stage']}`")

    def save(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
        self.path.write_text(text, encoding="utf-8")


def art_stage(hint: str) -> str:
    return hint.split()[0]


def _corpus_path(cfg: RunConfig, variant: str, split: str) -> Path:
    return cfg.out / "corpus" / variant / f"{split}.jsonl"


def _model_path(cfg: RunConfig, variant: str) -> Path:
    return cfg.out / "models" / f"{variant}.bin"


def _surprisal_path(cfg: RunConfig, variant: str) -> Path:
    return cfg.out / "surprisal" / f"{variant}.tsv"


def _comment(cfg: RunConfig, **extra) -> str:
    parts = [f"config_hash={cfg.hash}", f"seed={cfg.seed}"] + [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts)


# ---------------------------------------------------------------------------
# transform


def _doc_stream(cfg: RunConfig, stats: dict | None = None):
    """Yield (split index, punctuation-stripped trees) for every admitted document."""
    budgets = [WordBudget(cfg.train_budget), WordBudget(cfg.eval_budget), WordBudget(cfg.eval_budget)]
    with open(cfg.treebank, "rb") as f:
        trees = parse_conllu(f, strict=cfg.strict, sentences_per_doc=cfg.sentences_per_doc, stats=stats)
        for doc in iter_documents(trees):
            if all(b.full for b in budgets):
                break
            stripped = [t for t in map(prepare, doc) if t is not None]
            if not stripped:
                continue
            s = assign_split(stripped[0].doc_id, cfg.split_ratios, cfg.seed)
            if budgets[s].admit(sum(len(t) for t in stripped)):
                yield s, stripped


def _resolve_variants(cfg: RunConfig) -> dict[str, Variant]:
    """Build every configured variant; Sort-Freq and optimized Min-DL-Opt are completed after the first pass."""
    variants: dict[str, Variant] = {}
    for v in cfg.variants:
        if v in WEIGHT_FILE_VARIANTS:
            path = cfg.grammars.get(v)
            if not path:
                raise ConfigurationError(f"variant {v} needs a weight file (config key grammars.{v})")
            variants[v] = Variant(v, grammar=load_grammar(path, name=v))
        elif v.startswith("Random"):
            variants[v] = Variant(v, grammar=make_random_grammar(int(v[len("Random"):])))
        elif v == "Min-DL-Opt" and cfg.grammars.get(v):
            variants[v] = Variant(v, grammar=load_grammar(cfg.grammars[v], name=v))
        else:
            variants[v] = Variant(v)
    return variants


def cmd_transform(cfg: RunConfig) -> dict:
    cfg.validate(need_treebank=True)
    variants = _resolve_variants(cfg)
    promote = frozenset(cfg.promote)
    need_freq = any(v in variants for v in ("Sort-Freq", "Sort-Freq-Rev"))
    need_sample = "Min-DL-Opt" in variants and variants["Min-DL-Opt"].grammar is None
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    info: dict[str, Any] = {}

    # first pass: frequency table from the Real training split and the Min-DL-Opt tree sample
    freq = FreqTable()
    sample = []
    if need_freq or need_sample:
        real = Variant("Real")
        for s, trees in _doc_stream(cfg):
            if s != 0:
                continue
            if need_freq:
                freq.counts.update(
                    w for t in trees for w in order_words(t, real, promote)[:-1]
                )
            if need_sample and len(sample) < cfg.mindl_sample:
                sample.extend(promote_function_heads(t, promote) for t in trees[: cfg.mindl_sample - len(sample)])
        if need_freq:
            freq_path = out / "freq.tsv"
            freq.write(freq_path, comment=_comment(cfg))
            outputs.append(freq_path)
            for v in ("Sort-Freq", "Sort-Freq-Rev"):
                if v in variants:
                    variants[v] = Variant(v, freq=freq.counts)
        if need_sample:
            if not sample:
                raise ConfigurationError("Min-DL-Opt needs training trees but the train split is empty")
            labels = sorted(set(UD_RELATIONS) | {tok.deprel for t in sample for tok in t.tokens if tok.head})
            g = optimize_min_dl_grammar(sample, seed=cfg.seed, iterations=cfg.mindl_iterations,
                                        restarts=cfg.mindl_restarts, labels=labels)
            variants["Min-DL-Opt"] = Variant("Min-DL-Opt", grammar=g)
    for v in variants.values():
        v.check()

    grammar_dir = out / "grammars"
    for name, v in variants.items():
        if v.grammar is not None:
            grammar_dir.mkdir(exist_ok=True)
            p = grammar_dir / f"{name}.tsv"
            save_grammar(v.grammar, p, comment=_comment(cfg, variant=name))
            outputs.append(p)

    # second pass: one JSONL file per variant and split
    handles = {}
    try:
        for name in variants:
            (out / "corpus" / name).mkdir(parents=True, exist_ok=True)
            for si, split in enumerate(SPLITS):
                p = _corpus_path(cfg, name, split)
                fh = open(p, "w", encoding="utf-8", newline="\n")
                meta = {"config_hash": cfg.hash, "language": cfg.language, "variant": name,
                        "split": split, "seed": cfg.seed, "promote": sorted(promote)}
                fh.write(json.dumps({"__meta__": meta}, sort_keys=True, separators=(",", ":")) + "\n")
                handles[(name, si)] = fh
                outputs.append(p)
        stats: dict = {}
        counts = {split: {"documents": 0, "sentences": 0, "words": 0} for split in SPLITS}
        for s, trees in _doc_stream(cfg, stats):
            c = counts[SPLITS[s]]
            c["documents"] += 1
            c["sentences"] += len(trees)
            c["words"] += sum(len(t) for t in trees)
            promoted = [promote_function_heads(t, promote) for t in trees]
            for name, v in variants.items():
                fh = handles[(name, s)]
                for t, pt in zip(trees, promoted):
                    words = order_words(t, v, promote, promoted=pt)
                    fh.write(record_to_json(SentenceRecord(t.doc_id, t.sent_idx, tuple(words))) + "\n")
    finally:
        for fh in handles.values():
            fh.close()
    info["splits"] = counts
    info["parse"] = stats
    info["doc_boundaries"] = "fallback" if stats.get("doc_fallback") else "newdoc"
    inputs = [cfg.treebank] + [cfg.grammars[v] for v in cfg.grammars if v in variants]
    Manifest(out).record("transform", cfg, inputs, outputs, info)
    return info


def cmd_freq(input_path, out_path) -> FreqTable:
    table = build_freq_table(read_records(input_path))
    table.write(out_path)
    return table


# ---------------------------------------------------------------------------
# language modelling


def cmd_train(cfg: RunConfig) -> list[Path]:
    cfg.validate()
    man = Manifest(cfg.out)
    written = []
    for v in cfg.variants:
        src = _corpus_path(cfg, v, "train")
        man.require([src], "transform")
        model = train_ngram(RecordFile(src), n=cfg.lm_order, smoothing=cfg.lm_smoothing, alpha=cfg.lm_alpha,
                            discount=cfg.lm_discount, unk_threshold=cfg.lm_unk_threshold)
        model.meta = {"config_hash": cfg.hash, "variant": v, "language": cfg.language}
        dest = _model_path(cfg, v)
        dest.parent.mkdir(parents=True, exist_ok=True)
        model.save(dest)
        man.record(f"train:{v}", cfg, [src], [dest])
        written.append(dest)
    return written


def cmd_score(cfg: RunConfig) -> list[Path]:
    cfg.validate()
    man = Manifest(cfg.out)
    written = []
    for v in cfg.variants:
        model_path, corpus = _model_path(cfg, v), _corpus_path(cfg, v, cfg.eval_split)
        man.require([model_path], "train")
        man.require([corpus], "transform")
        model = NGramModel.load(model_path)
        records = list(read_records(corpus))
        dest = _surprisal_path(cfg, v)
        dest.parent.mkdir(parents=True, exist_ok=True)
        export_surprisals(zip(records, score(model, records)), dest,
                          header_comment=_comment(cfg, variant=v, split=cfg.eval_split))
        man.record(f"score:{v}", cfg, [model_path, corpus], [dest])
        written.append(dest)
    return written


def cmd_import(cfg: RunConfig, variant: str, source) -> Path:
    """Sum an external sub-word surprisal file to words and store it as the variant's surprisals."""
    cfg.validate()
    man = Manifest(cfg.out)
    corpus = _corpus_path(cfg, variant, cfg.eval_split)
    man.require([corpus], "transform")
    records = list(read_records(corpus))
    srecs = list(import_external_surprisals(source, corpus=records))
    dest = _surprisal_path(cfg, variant)
    dest.parent.mkdir(parents=True, exist_ok=True)
    export_surprisals(zip(records, srecs), dest, header_comment=_comment(cfg, variant=variant, source="import"))
    man.record(f"score:{variant}", cfg, [corpus, source], [dest], {"imported_from": str(source)})
    return dest


# ---------------------------------------------------------------------------
# metrics and analysis


def cmd_uid(cfg: RunConfig) -> list[analysis.RunRecord]:
    cfg.validate()
    man = Manifest(cfg.out)
    mcfg = cfg.metric_config()
    rows, runs = [], []
    inputs = []
    for v in cfg.variants:
        spath, corpus = _surprisal_path(cfg, v), _corpus_path(cfg, v, cfg.eval_split)
        man.require([spath], "score")
        man.require([corpus], "transform")
        inputs += [spath, corpus]
        srecs = list(import_external_surprisals(spath, corpus=read_records(corpus)))
        if mcfg.filter == "document-initial":
            srecs = [r for r in srecs if r.sent_idx == 0]
        ests = {}
        for m in METRICS:
            est = language_uid(srecs, m, mcfg)
            ests[m] = est.estimate
            rows.append({"language": cfg.language, "variant": v, "metric": m, "estimate": repr(est.estimate),
                         "ci_low": repr(est.ci_low), "ci_high": repr(est.ci_high),
                         "n_sentences": est.n_sentences, "filter": est.filter})
        for gran in ("word", "sentence"):
            ms = mean_surprisal(srecs, gran)
            rows.append({"language": cfg.language, "variant": v, "metric": f"mean_surprisal_{gran}",
                         "estimate": repr(ms), "ci_low": repr(ms), "ci_high": repr(ms),
                         "n_sentences": len(srecs), "filter": mcfg.filter})
            if gran == "word":
                ests["mean_surprisal"] = ms
        runs.append(analysis.RunRecord(cfg.language, v, cfg.dataset_size, cfg.seed, ests["mean_surprisal"],
                                       ests["uid_v"], ests["uid_lv"], ests["uid_p"]))
    metrics_path, runs_path = cfg.out / "metrics.csv", cfg.out / "runs.csv"
    comment = _comment(cfg, mean_surprisal="per-word")
    write_metric_rows(rows, metrics_path, comment=comment)
    analysis.write_run_records(runs, runs_path, comment=comment)
    man.record("uid", cfg, inputs, [metrics_path, runs_path])
    return runs


def _load_runs(cfg: RunConfig, run_files) -> list[analysis.RunRecord]:
    files = list(run_files) or [cfg.out / "runs.csv"]
    records = []
    for p in files:
        if not Path(p).exists():
            raise MissingArtifactError(f"missing {p}; run `uid` first")
        records += analysis.read_run_records(p)
    seen = set()
    for r in records:
        if r.key in seen:
            raise ValueError(f"duplicate run {r.key} across run files")
        seen.add(r.key)
    return records


def cmd_regress(cfg: RunConfig, run_files=()) -> dict:
    records = _load_runs(cfg, run_files)
    results = analysis.regress_by_language(records, reference="Real")
    cfg.out.mkdir(parents=True, exist_ok=True)
    dest = cfg.out / "coefficients.csv"
    analysis.write_coefficients(results, dest, comment=_comment(cfg, reference="Real", mean_surprisal="per-word"))
    return results


def cmd_report(cfg: RunConfig, run_files=()) -> analysis.VariantReport:
    records = _load_runs(cfg, run_files)
    comps = [tuple(c) for c in cfg.comparisons]
    rep = analysis.variant_report(records, comps, config=cfg.metric_config())
    cfg.out.mkdir(parents=True, exist_ok=True)
    analysis.write_report(rep, cfg.out / "report.csv", comment=_comment(cfg))
    analysis.write_comparisons(rep, cfg.out / "comparisons.csv", comment=_comment(cfg))
    return rep


def cmd_validate(cfg: RunConfig) -> list[tuple[str, int, str]]:
    """Validate every tree as read and again after punctuation stripping and head promotion."""
    if not cfg.treebank or not Path(cfg.treebank).is_file():
        raise ConfigurationError(f"treebank {cfg.treebank} does not exist")
    problems = []
    with open(cfg.treebank, "rb") as f:
        for t in parse_conllu(f, strict=cfg.strict, sentences_per_doc=cfg.sentences_per_doc):
            where = f"{t.doc_id}/{t.sent_idx}"
            report = validate_tree(t)
            problems += [(where, v.token, f"{v.kind}: {v.message}") for v in report]
            if report:
                continue
            s = prepare(t)
            if s is None:
                continue
            for stage, tree in (("strip_punct", s), ("promote", promote_function_heads(s, cfg.promote))):
                problems += [(where, v.token, f"after {stage}: {v.kind}: {v.message}") for v in validate_tree(tree)]
    return problems
