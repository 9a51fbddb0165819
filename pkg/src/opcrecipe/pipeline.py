"""End-to-end pipeline: dataset generation/ingestion, baseline OPC, RL
training, labeling, tree training, recipe emission/application, ratio
reporting, and run-directory persistence with manifests."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import annotator as anno
from . import features as feat
from . import litho, metrics, opc, recipes, svg
from .geometry import (
    FragmentPolicy,
    GeometryError,
    SynthParams,
    layout_to_text,
    parse_layout,
    place_control_points,
    synth_clip,
)
from .rl import PolicyCheckpoint, PpoConfig
from .rl import ppo as rl_ppo


class ValidationError(ValueError):
    pass


class PrerequisiteError(ValidationError):
    def __init__(self, artifact, producer):
        super().__init__(f"missing {artifact}; run `opcrecipe {producer}` first")


VARIANTS = ("opc", "opc+rl", "opc+llm")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    run_dir: str = "runs/latest"
    cache_dir: str = ""
    n_clips: int = 20
    c_classes: int = 4
    variant: str = "opc"
    workers: int = 1
    mode: str = "deterministic"
    tree_holdout_clips: int = 5
    litho: litho.LithoConfig = field(default_factory=litho.LithoConfig)
    opc: opc.OpcConfig = field(default_factory=opc.OpcConfig)
    metrics: metrics.MetricsConfig = field(default_factory=metrics.MetricsConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    tree: recipes.TreeParams = field(default_factory=recipes.TreeParams)
    annotator: anno.AnnotatorConfig = field(default_factory=anno.AnnotatorConfig)
    synth: SynthParams = field(default_factory=SynthParams)

    def validate(self) -> "RunConfig":
        problems = []
        if self.n_clips < 1:
            problems.append("n_clips must be >= 1")
        if self.c_classes < 1:
            problems.append("c_classes must be >= 1")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if self.mode not in ("deterministic", "remote", "remote-with-fallback"):
            problems.append("mode must be deterministic|remote|remote-with-fallback")
        if self.ppo.c_classes != self.c_classes:
            problems.append("ppo.c_classes must match the top-level C")
        for name, sub in (("litho", self.litho), ("opc", self.opc),
                          ("metrics", self.metrics), ("ppo", self.ppo),
                          ("tree", self.tree), ("synth", self.synth)):
            try:
                sub.validate()
            except Exception as exc:
                problems.append(f"{name}: {exc}")
        if self.mode != "deterministic":
            try:
                replace(self.annotator, mode=self.mode).validate()
            except Exception as exc:
                problems.append(f"annotator: {exc}")
        if problems:
            raise ValidationError("; ".join(problems))
        return self


def _merge(dc, overrides: dict):
    return replace(dc, **overrides) if overrides else dc


def config_from_dict(obj: dict) -> RunConfig:
    obj = dict(obj)
    sub = {}
    opc_over = dict(obj.pop("opc", {}))
    if "fragment_policy" in opc_over:
        opc_over["fragment_policy"] = FragmentPolicy(**opc_over["fragment_policy"])
    sub["opc"] = _merge(opc.OpcConfig(), opc_over)
    met_over = dict(obj.pop("metrics", {}))
    if "weights" in met_over:
        met_over["weights"] = metrics.LossWeights(**met_over["weights"])
    sub["metrics"] = _merge(metrics.MetricsConfig(), met_over)
    ppo_over = dict(obj.pop("ppo", {}))
    if "hidden" in ppo_over:
        ppo_over["hidden"] = tuple(ppo_over["hidden"])
    sub["ppo"] = _merge(PpoConfig(), ppo_over)
    sub["litho"] = _merge(litho.LithoConfig(), obj.pop("litho", {}))
    sub["tree"] = _merge(recipes.TreeParams(), obj.pop("tree", {}))
    sub["annotator"] = _merge(anno.AnnotatorConfig(), obj.pop("annotator", {}))
    sub["synth"] = _merge(SynthParams(), obj.pop("synth", {}))
    cfg = RunConfig(**obj, **sub)
    if "c_classes" not in ppo_over:
        cfg = replace(cfg, ppo=replace(cfg.ppo, c_classes=cfg.c_classes))
    if "seed" not in ppo_over:
        cfg = replace(cfg, ppo=replace(cfg.ppo, seed=cfg.seed))
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def config_to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["ppo"]["hidden"] = list(cfg.ppo.hidden)
    return d


# ---------------------------------------------------------------------------
# Run directory and manifests
# ---------------------------------------------------------------------------


def run_paths(cfg: RunConfig) -> dict:
    root = Path(cfg.run_dir)
    return {name: root / name for name in
            ("layouts", "corrected", "metrics", "checkpoints", "movements",
             "labels", "trees", "recipes", "svg", "manifests")} | {"root": root}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(cfg: RunConfig, command: str, inputs, outputs):
    paths = run_paths(cfg)
    paths["manifests"].mkdir(parents=True, exist_ok=True)
    root = paths["root"]
    cfg_hash = hashlib.sha256(
        json.dumps(config_to_dict(cfg), sort_keys=True).encode()).hexdigest()
    manifest = {
        "command": command,
        "config_sha256": cfg_hash,
        "inputs": {str(Path(p).relative_to(root)): _sha256(Path(p)) for p in sorted(map(str, inputs))},
        "outputs": {str(Path(p).relative_to(root)): _sha256(Path(p)) for p in sorted(map(str, outputs))},
        "version": 1,
    }
    out = paths["manifests"] / f"{command}.json"
    out.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return out


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(str(path), producer)
    return path


def load_clips(cfg: RunConfig) -> list:
    layout_dir = run_paths(cfg)["layouts"]
    _require(layout_dir, "gen")
    files = sorted(layout_dir.glob("*.txt"))
    if not files:
        raise PrerequisiteError(f"{layout_dir}/*.txt", "gen")
    return [parse_layout(f.read_text(encoding="utf-8")) for f in files]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig) -> list:
    paths = run_paths(cfg)
    paths["layouts"].mkdir(parents=True, exist_ok=True)
    outputs = []
    for i in range(cfg.n_clips):
        clip = synth_clip(cfg.seed + i, cfg.synth)
        clip = replace(clip, id=f"clip_{i:03d}")
        out = paths["layouts"] / f"clip_{i:03d}.txt"
        out.write_text(layout_to_text(clip), encoding="utf-8")
        outputs.append(out)
    write_manifest(cfg, "gen", [], outputs)
    return outputs


def cmd_ingest(cfg: RunConfig, files) -> list:
    paths = run_paths(cfg)
    paths["layouts"].mkdir(parents=True, exist_ok=True)
    outputs = []
    for f in files:
        clip = parse_layout(Path(f).read_text(encoding="utf-8"))
        out = paths["layouts"] / f"{clip.id}.txt"
        out.write_text(layout_to_text(clip), encoding="utf-8")
        outputs.append(out)
    write_manifest(cfg, "ingest", [], outputs)
    return outputs


def _variant_slug(variant: str) -> str:
    return variant.replace("+", "_")


def _eval_clip(args):
    clip, provider, cfg = args
    placed = place_control_points(clip, cfg.opc.fragment_policy)
    adjusted = provider(placed)
    result = opc.run_opc(adjusted, cfg.litho, cfg.opc, cfg.metrics)
    return clip.id, result


def _eval_variant(cfg: RunConfig, variant: str, provider, command: str,
                  inputs=()) -> Path:
    """Run the engine over every clip with recipe-adjusted points and write
    the per-clip metrics CSV plus corrected layouts."""
    clips = load_clips(cfg)
    paths = run_paths(cfg)
    slug = _variant_slug(variant)
    corrected_dir = paths["corrected"] / slug
    corrected_dir.mkdir(parents=True, exist_ok=True)
    paths["metrics"].mkdir(parents=True, exist_ok=True)

    work = [(clip, provider(clip), cfg) for clip in clips]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_eval_clip, work))
    else:
        results = [_eval_clip(w) for w in work]
    results.sort(key=lambda r: r[0])

    rows = [",".join(metrics.METRICS_CSV_COLUMNS)]
    outputs = []
    for clip, (clip_id, result) in zip(clips, results):
        runtime = None if cfg.mode == "deterministic" else result.runtime_ms
        rows.append(metrics.metrics_csv_row(clip_id, variant, result.loss,
                                            result.epe_report, result.pv_band, runtime))
        corrected = replace(clip, id=clip_id, polygons=result.polygons)
        out = corrected_dir / f"{clip_id}.txt"
        out.write_text(layout_to_text(corrected), encoding="utf-8")
        outputs.append(out)
    csv_path = paths["metrics"] / f"{slug}.csv"
    csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    outputs.append(csv_path)
    write_manifest(cfg, command, inputs, outputs)
    return csv_path


def cmd_opc(cfg: RunConfig) -> Path:
    return _eval_variant(cfg, "opc", lambda clip: (lambda placed: placed), "opc")


def cmd_rl_train(cfg: RunConfig, progress=None) -> Path:
    clips = load_clips(cfg)
    paths = run_paths(cfg)
    paths["checkpoints"].mkdir(parents=True, exist_ok=True)
    paths["movements"].mkdir(parents=True, exist_ok=True)
    ckpt = rl_ppo.train(clips, cfg.ppo, cfg.litho, cfg.opc, cfg.metrics, progress)
    ckpt_path = paths["checkpoints"] / "policy.json"
    ckpt.save(ckpt_path)
    trace_path = paths["checkpoints"] / "reward_trace.csv"
    trace_path.write_text(
        "update,mean_reward\n" +
        "".join(f"{i},{r!r}\n" for i, r in enumerate(ckpt.reward_trace)),
        encoding="utf-8")
    moves = rl_ppo.extract_movements(ckpt, clips, cfg.litho, cfg.opc, cfg.metrics)
    move_path = paths["movements"] / "movements.jsonl"
    with open(move_path, "w", encoding="utf-8") as fh:
        for clip in clips:
            for rec in moves[clip.id]:
                obj = {"clip": clip.id}
                obj.update(rec.to_json())
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
    write_manifest(cfg, "rl-train", [], [ckpt_path, trace_path, move_path])
    return ckpt_path


def load_movements(cfg: RunConfig) -> dict:
    path = _require(run_paths(cfg)["movements"] / "movements.jsonl", "rl-train")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            out.setdefault(obj["clip"], []).append(feat.MovementRecord.from_json(obj))
    return out


def cmd_annotate(cfg: RunConfig) -> list:
    """Label every control point and join stage-1 classes as ground truth."""
    clips = load_clips(cfg)
    movements = load_movements(cfg)
    paths = run_paths(cfg)
    paths["labels"].mkdir(parents=True, exist_ok=True)
    a_cfg = replace(cfg.annotator, mode=cfg.mode, cache_dir=cfg.cache_dir)
    client = anno.AnnotatorClient(a_cfg)
    pool = feat.builtin_pool()
    outputs = []
    for clip in clips:
        placed = place_control_points(clip, cfg.opc.fragment_policy)
        recs = {r.point_id: r for r in movements.get(clip.id, [])}
        labeled = client.annotate_clip(placed, pool)
        by_kind = {"EPE": [], "FRAG": []}
        for (vec, _prov), pt in zip(labeled, placed.points):
            cls = recs[pt.id].movement_class if pt.id in recs else 0
            by_kind[pt.kind.value].append(feat.label_record(vec, cls))
        for kind, records in by_kind.items():
            out = paths["labels"] / f"{clip.id}.{kind.lower()}.jsonl"
            with open(out, "w", encoding="utf-8") as fh:
                for rec in records:
                    fh.write(json.dumps(rec) + "\n")
            outputs.append(out)
    write_manifest(cfg, "annotate", [], outputs)
    return outputs


def _load_labels(cfg: RunConfig, clip_ids, kind: str):
    paths = run_paths(cfg)
    vectors, classes = [], []
    for cid in clip_ids:
        path = _require(paths["labels"] / f"{cid}.{kind.lower()}.jsonl", "annotate")
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                vec, cls = feat.parse_label_record(json.loads(line))
                vectors.append(vec)
                classes.append(cls)
    return vectors, classes


def cmd_tree(cfg: RunConfig) -> dict:
    """Train per-kind trees; report holdout precision/recall/F1, then refit on
    the full dataset for deployment."""
    clips = load_clips(cfg)
    ids = [c.id for c in clips]
    split = max(1, len(ids) - cfg.tree_holdout_clips)
    train_ids, hold_ids = ids[:split], ids[split:]
    paths = run_paths(cfg)
    paths["trees"].mkdir(parents=True, exist_ok=True)
    pool = feat.builtin_pool()
    names = tuple(feat.TYPE_FEATURES) + tuple(pool.names())
    report = {}
    outputs = []
    for kind in ("EPE", "FRAG"):
        tr_vecs, tr_cls = _load_labels(cfg, train_ids, kind)
        tree_holdout = recipes.train_tree(tr_vecs, tr_cls, cfg.tree, kind,
                                          feature_names=names, c_classes=cfg.c_classes)
        entry = {"train_points": len(tr_vecs)}
        if hold_ids:
            ho_vecs, ho_cls = _load_labels(cfg, hold_ids, kind)
            entry["holdout"] = recipes.evaluate(tree_holdout, ho_vecs, ho_cls).to_json()
            entry["holdout_points"] = len(ho_vecs)
        all_vecs, all_cls = _load_labels(cfg, ids, kind)
        tree_full = recipes.train_tree(all_vecs, all_cls, cfg.tree, kind,
                                       feature_names=names, c_classes=cfg.c_classes)
        entry["training_fit"] = recipes.evaluate(tree_full, all_vecs, all_cls).to_json()
        imp = recipes.feature_importance(tree_full)
        entry["importance"] = {k: imp[k] for k in sorted(imp, key=imp.get, reverse=True)}
        tree_path = paths["trees"] / f"{kind.lower()}.json"
        tree_path.write_text(tree_full.to_json(), encoding="utf-8")
        outputs.append(tree_path)
        report[kind] = entry
    report_path = paths["trees"] / "report.json"
    report_path.write_text(json.dumps(report, indent=1, sort_keys=True), encoding="utf-8")
    imp_path = paths["trees"] / "importance.csv"
    with open(imp_path, "w", encoding="utf-8") as fh:
        fh.write("kind,feature,importance\n")
        for kind in ("EPE", "FRAG"):
            for name, value in report[kind]["importance"].items():
                fh.write(f"{kind},{name},{value!r}\n")
    outputs += [report_path, imp_path]
    write_manifest(cfg, "tree", [], outputs)
    return report


def load_tree(cfg: RunConfig, kind: str) -> recipes.DecisionTree:
    path = _require(run_paths(cfg)["trees"] / f"{kind.lower()}.json", "tree")
    return recipes.DecisionTree.from_json(path.read_text(encoding="utf-8"))


def cmd_emit(cfg: RunConfig) -> Path:
    paths = run_paths(cfg)
    paths["recipes"].mkdir(parents=True, exist_ok=True)
    rules = []
    for kind in ("EPE", "FRAG"):
        rules.extend(recipes.emit_rules(load_tree(cfg, kind)))
    rules_path = paths["recipes"] / "rules.jsonl"
    rules_path.write_text(recipes.emit_jsonl(rules), encoding="utf-8")
    script_path = paths["recipes"] / "downstream.txt"
    script_path.write_text(recipes.emit_downstream(rules, cfg.c_classes),
                           encoding="utf-8")
    write_manifest(cfg, "emit", [], [rules_path, script_path])
    return rules_path


def cmd_apply(cfg: RunConfig, variant: str = None) -> Path:
    """Recipe-adjusted OPC run; never touches the policy network."""
    variant = variant or cfg.variant
    if variant == "opc+rl":
        movements = load_movements(cfg)

        def provider(clip):
            recs = movements.get(clip.id, [])
            return lambda placed: opc.apply_movement_records(placed, recs, cfg.c_classes)

    elif variant == "opc+llm":
        rules_path = _require(run_paths(cfg)["recipes"] / "rules.jsonl", "emit")
        rules = recipes.parse_jsonl(rules_path.read_text(encoding="utf-8"))
        pool = feat.builtin_pool()

        def provider(clip):
            return lambda placed: opc.apply_recipe_points(placed, rules, pool,
                                                          cfg.c_classes)

    elif variant == "opc":
        def provider(clip):
            return lambda placed: placed
    else:
        raise ValidationError(f"unknown variant {variant!r}")
    return _eval_variant(cfg, variant, provider, f"apply-{_variant_slug(variant)}")


AGG_METRICS = ("pvb", "epe_n", "epe_d", "l2", "loss_total")


def read_metrics_csv(path: Path) -> dict:
    """Mean per metric over the per-clip rows."""
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    return {m: float(np.mean([float(r[m]) for r in rows])) for m in AGG_METRICS}


def cmd_report(cfg: RunConfig) -> Path:
    paths = run_paths(cfg)
    base_path = _require(paths["metrics"] / "opc.csv", "opc")
    baseline = read_metrics_csv(base_path)
    variants = {}
    for variant in ("opc+llm", "opc+rl"):
        p = paths["metrics"] / f"{_variant_slug(variant)}.csv"
        if p.exists():
            variants[variant] = read_metrics_csv(p)
    table = metrics.ratio_table(baseline, variants)
    display = {"pvb": "PVBand", "epe_n": "EPE N", "epe_d": "EPE D",
               "l2": "L2", "loss_total": "Loss"}
    lines = ["metric,opc," + ",".join(variants) + ",ratios"]
    stdout = []
    for row in table:
        ratios = " / ".join(["1.00"] + [c[2] for c in row.variants])
        values = ",".join(f"{c[1]!r}" for c in row.variants)
        lines.append(f"{display[row.metric]},{row.baseline!r},{values},{ratios}")
        stdout.append(f"{display[row.metric]:8s} {ratios}")
    out = paths["metrics"] / "report.csv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(cfg, "report", [base_path], [out])
    return out, "\n".join(stdout)


def cmd_svg(cfg: RunConfig, variant: str = "opc") -> list:
    clips = load_clips(cfg)
    paths = run_paths(cfg)
    paths["svg"].mkdir(parents=True, exist_ok=True)
    slug = _variant_slug(variant)
    outputs = []
    for clip in clips:
        placed = place_control_points(clip, cfg.opc.fragment_policy)
        corrected = paths["corrected"] / slug / f"{clip.id}.txt"
        aerial = band = None
        if corrected.exists():
            mask_clip = parse_layout(corrected.read_text(encoding="utf-8"))
            from .geometry import rasterize_coverage

            cov = rasterize_coverage(mask_clip.polygons, clip.width_nm,
                                     clip.height_nm, cfg.litho.pixel_nm)
            window = litho.process_corners(cov, cfg.litho)
            aerial = window.aerial_nominal
            band = window.z_max != window.z_min
        out = paths["svg"] / f"{clip.id}.{slug}.svg"
        svg.write_overlay_svg(out, placed, aerial, cfg.litho, band)
        outputs.append(out)
    write_manifest(cfg, "svg", [], outputs)
    return outputs
