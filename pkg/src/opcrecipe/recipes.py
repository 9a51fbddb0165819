"""CART trees over binary point features, importance-driven self-improvement,
and recipe emission as jsonl rules plus a downstream-tool script.

Trees split on boolean features by Gini impurity with deterministic
tie-breaking (lowest feature name wins).  One rule is emitted per leaf, so the
rule set is mutually exclusive and exhaustive and reproduces the tree exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 12
    min_samples_leaf: int = 2
    min_samples_split: int = 4

    def validate(self):
        if self.max_depth < 1 or self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise TreeError("invalid tree parameters")
        return self


@dataclass
class TreeNode:
    feature: str = None          # internal nodes only
    true_branch: "TreeNode" = None
    false_branch: "TreeNode" = None
    klass: int = None            # leaves only
    n_samples: int = 0
    histogram: dict = field(default_factory=dict)  # class -> count at this node
    gini: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_json(self) -> dict:
        if self.is_leaf:
            return {"class": self.klass, "n": self.n_samples,
                    "hist": {str(k): v for k, v in sorted(self.histogram.items())}}
        return {"feature": self.feature,
                "true": self.true_branch.to_json(),
                "false": self.false_branch.to_json(),
                "n": self.n_samples}

    @staticmethod
    def from_json(obj: dict) -> "TreeNode":
        if "feature" in obj:
            return TreeNode(feature=obj["feature"],
                            true_branch=TreeNode.from_json(obj["true"]),
                            false_branch=TreeNode.from_json(obj["false"]),
                            n_samples=obj["n"])
        return TreeNode(klass=obj["class"], n_samples=obj["n"],
                        histogram={int(k): v for k, v in obj.get("hist", {}).items()})


@dataclass
class DecisionTree:
    root: TreeNode
    feature_names: tuple
    kind: str                    # "EPE" | "FRAG"
    params: TreeParams
    c_classes: int

    def to_json(self) -> str:
        return json.dumps({"version": 1, "kind": self.kind,
                           "c_classes": self.c_classes,
                           "features": list(self.feature_names),
                           "params": {"max_depth": self.params.max_depth,
                                      "min_samples_leaf": self.params.min_samples_leaf,
                                      "min_samples_split": self.params.min_samples_split},
                           "root": self.root.to_json()}, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DecisionTree":
        obj = json.loads(text)
        return DecisionTree(TreeNode.from_json(obj["root"]), tuple(obj["features"]),
                            obj["kind"], TreeParams(**obj["params"]), obj["c_classes"])


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _majority(classes, values) -> int:
    """Most frequent class; ties break toward the smaller class value."""
    best = None
    best_count = -1
    for c in sorted(set(values)):
        k = int(np.sum(values == c))
        if k > best_count:
            best, best_count = c, k
    return int(best)


def train_tree(vectors, classes, params: TreeParams, kind: str,
               feature_names=None, c_classes: int = 4) -> DecisionTree:
    """Greedy CART on boolean feature dicts (or rows) with Gini impurity.

    ``vectors`` may be FeatureVector objects (expanded with the type tag
    one-hots), plain dicts, or boolean rows matching feature_names.
    """
    params.validate()
    if len(vectors) == 0:
        raise TreeError("empty training set")
    if feature_names is None:
        first = vectors[0]
        mapping = first.expanded() if hasattr(first, "expanded") else first
        feature_names = tuple(mapping.keys())
    x = _as_matrix(vectors, feature_names)
    y = np.asarray(classes, dtype=np.int64)
    if len(x) != len(y):
        raise TreeError(f"{len(x)} vectors vs {len(y)} classes")

    order = tuple(sorted(range(len(feature_names)), key=lambda i: feature_names[i]))

    def build(idx, depth):
        yv = y[idx]
        hist = {int(c): int(np.sum(yv == c)) for c in sorted(set(yv.tolist()))}
        counts = np.array(list(hist.values()), dtype=np.float64)
        node_gini = _gini(counts)
        leaf = TreeNode(klass=_majority(None, yv), n_samples=len(idx),
                        histogram=hist, gini=node_gini)
        if depth >= params.max_depth or len(idx) < params.min_samples_split \
                or len(hist) == 1:
            return leaf
        best = None  # (decrease, feature_idx, mask)
        for fi in order:  # lexicographic order; strict improvement = stable ties
            col = x[idx, fi]
            n_true = int(col.sum())
            n_false = len(idx) - n_true
            if n_true < params.min_samples_leaf or n_false < params.min_samples_leaf:
                continue
            yt = yv[col]
            yf = yv[~col]
            gt = _gini(np.bincount(yt - yt.min())) if len(yt) else 0.0
            gf = _gini(np.bincount(yf - yf.min())) if len(yf) else 0.0
            child = (n_true * gt + n_false * gf) / len(idx)
            decrease = node_gini - child
            if decrease > 1e-12 and (best is None or decrease > best[0] + 1e-12):
                best = (decrease, fi, col)
        if best is None:
            return leaf
        _, fi, col = best
        t = build(idx[col], depth + 1)
        f = build(idx[~col], depth + 1)
        return TreeNode(feature=feature_names[fi], true_branch=t, false_branch=f,
                        n_samples=len(idx), histogram=hist, gini=node_gini)

    root = build(np.arange(len(y)), 0)
    return DecisionTree(root, tuple(feature_names), kind, params, c_classes)


def _as_matrix(vectors, feature_names) -> np.ndarray:
    rows = []
    for v in vectors:
        if hasattr(v, "expanded"):
            v = v.expanded()
        if isinstance(v, dict):
            rows.append([bool(v.get(n, False)) for n in feature_names])
        else:
            rows.append([bool(b) for b in v])
    return np.asarray(rows, dtype=bool)


def predict(tree: DecisionTree, vector) -> int:
    if hasattr(vector, "expanded"):
        vector = vector.expanded()
    node = tree.root
    while not node.is_leaf:
        value = vector[node.feature] if isinstance(vector, dict) \
            else vector[tree.feature_names.index(node.feature)]
        node = node.true_branch if value else node.false_branch
    return node.klass


def predict_batch(tree: DecisionTree, vectors) -> np.ndarray:
    return np.array([predict(tree, v) for v in vectors], dtype=np.int64)


def feature_importance(tree: DecisionTree) -> dict:
    """Weighted Gini decrease per feature, normalized to sum 1 (all zeros when
    the tree never split); unused features are present with value 0."""
    raw = {name: 0.0 for name in tree.feature_names}
    total = tree.root.n_samples

    def walk(node):
        if node.is_leaf:
            return
        nt, nf = node.true_branch.n_samples, node.false_branch.n_samples
        child = (nt * node.true_branch.gini + nf * node.false_branch.gini) / node.n_samples
        raw[node.feature] += (node.n_samples / total) * (node.gini - child)
        walk(node.true_branch)
        walk(node.false_branch)

    _annotate_gini(tree.root)
    walk(tree.root)
    s = sum(raw.values())
    if s > 0:
        return {k: v / s for k, v in raw.items()}
    return raw


def _annotate_gini(node: TreeNode):
    counts = np.array(list(node.histogram.values()), dtype=np.float64)
    if counts.size:
        node.gini = _gini(counts)
    if not node.is_leaf:
        _annotate_gini(node.true_branch)
        _annotate_gini(node.false_branch)


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainReport:
    classes: tuple               # ground-truth classes present, ascending
    precision: dict
    recall: dict
    f1: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    confusion: dict              # (true, predicted) -> count

    def to_json(self) -> dict:
        return {"classes": list(self.classes),
                "precision": {str(k): v for k, v in self.precision.items()},
                "recall": {str(k): v for k, v in self.recall.items()},
                "f1": {str(k): v for k, v in self.f1.items()},
                "macro_precision": self.macro_precision,
                "macro_recall": self.macro_recall,
                "macro_f1": self.macro_f1,
                "accuracy": self.accuracy,
                "confusion": {f"{t}|{p}": c for (t, p), c in sorted(self.confusion.items())}}


def evaluate(tree: DecisionTree, vectors, classes) -> TrainReport:
    """Macro averages run over the classes present in the ground truth; a
    class never predicted contributes precision 0 (the 0-convention)."""
    y = np.asarray(classes, dtype=np.int64)
    pred = predict_batch(tree, vectors)
    present = tuple(sorted(set(y.tolist())))
    confusion = {}
    for t, p in zip(y.tolist(), pred.tolist()):
        confusion[(t, p)] = confusion.get((t, p), 0) + 1
    precision, recall, f1 = {}, {}, {}
    for c in present:
        tp = confusion.get((c, c), 0)
        fp = sum(v for (t, p), v in confusion.items() if p == c and t != c)
        fn = sum(v for (t, p), v in confusion.items() if t == c and p != c)
        precision[c] = tp / (tp + fp) if tp + fp else 0.0
        recall[c] = tp / (tp + fn) if tp + fn else 0.0
        f1[c] = (2 * precision[c] * recall[c] / (precision[c] + recall[c])
                 if precision[c] + recall[c] else 0.0)
    n = len(present)
    return TrainReport(present, precision, recall, f1,
                       sum(precision.values()) / n, sum(recall.values()) / n,
                       sum(f1.values()) / n, float(np.mean(pred == y)), confusion)


# ---------------------------------------------------------------------------
# Importance-based self-improvement
# ---------------------------------------------------------------------------


@dataclass
class ImproveRound:
    dropped: list
    added: list
    accuracy: float


def self_improve(x_columns: dict, classes, rounds: int, replacement_source,
                 params: TreeParams, kind: str = "EPE", c_classes: int = 4,
                 eval_split: float = 0.25, seed: int = 0):
    """Iterated train/drop/replace over a labeled dataset.

    ``x_columns`` maps feature name -> list of bools.  Each round trains a
    tree, removes every feature with importance exactly 0, asks
    ``replacement_source(k)`` for k replacement (name, column) pairs, and
    retrains; stops early when nothing has zero importance or replacements
    run out.  Returns (feature names, final tree, audit log).
    """
    names = list(x_columns.keys())
    cols = {k: list(v) for k, v in x_columns.items()}
    y = np.asarray(classes, dtype=np.int64)
    n = len(y)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_eval = max(1, int(n * eval_split))
    eval_idx, train_idx = perm[:n_eval], perm[n_eval:]
    audit = []
    tree = None
    for _ in range(rounds):
        rows_train = [_row_of(cols, names, i) for i in train_idx]
        rows_eval = [_row_of(cols, names, i) for i in eval_idx]
        tree = train_tree(rows_train, y[train_idx], params, kind,
                          feature_names=tuple(names), c_classes=c_classes)
        imp = feature_importance(tree)
        acc = evaluate(tree, rows_eval, y[eval_idx]).accuracy
        dropped = [f for f in names if imp[f] == 0.0]
        if not dropped:
            audit.append(ImproveRound([], [], acc))
            break
        replacements = replacement_source(len(dropped))
        added = []
        for f in dropped:
            names.remove(f)
            del cols[f]
        for name, column in replacements:
            if name in cols:
                continue
            names.append(name)
            cols[name] = list(column)
            added.append(name)
        audit.append(ImproveRound(dropped, added, acc))
        if not added:
            break
    # final fit after the last pool change
    rows_train = [_row_of(cols, names, i) for i in train_idx]
    rows_eval = [_row_of(cols, names, i) for i in eval_idx]
    tree = train_tree(rows_train, y[train_idx], params, kind,
                      feature_names=tuple(names), c_classes=c_classes)
    audit.append(ImproveRound([], [], evaluate(tree, rows_eval, y[eval_idx]).accuracy))
    return list(names), tree, audit


def _row_of(cols, names, i):
    return {f: cols[f][i] for f in names}


# ---------------------------------------------------------------------------
# Rules: tree paths -> jsonl -> downstream script
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecipeRule:
    condition: tuple   # literals: "feature" or "not feature", root-to-leaf order
    type: str          # "EPE" | "FRAG"
    klass: int

    def to_json_obj(self) -> dict:
        return {"condition": list(self.condition), "type": self.type, "class": self.klass}


class RuleError(ValueError):
    pass


def emit_rules(tree: DecisionTree) -> list:
    """One rule per leaf; false branches render as "not <feature>"."""
    rules = []

    def walk(node, path):
        if node.is_leaf:
            rules.append(RecipeRule(tuple(path), tree.kind, node.klass))
            return
        walk(node.true_branch, path + [node.feature])
        walk(node.false_branch, path + [f"not {node.feature}"])

    walk(tree.root, [])
    return rules


def emit_jsonl(rules) -> str:
    lines = [json.dumps(r.to_json_obj(), separators=(", ", ": ")) for r in rules]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_jsonl(text: str) -> list:
    rules = []
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            rules.append(RecipeRule(tuple(obj["condition"]), obj["type"], int(obj["class"])))
        except (json.JSONDecodeError, KeyError) as exc:
            raise RuleError(f"line {ln}: {exc}") from exc
    return rules


def _match(condition, vector: dict) -> bool:
    for lit in condition:
        if lit.startswith("not "):
            if vector.get(lit[4:], False):
                return False
        elif not vector.get(lit, False):
            return False
    return True


def apply_rules(rules, vector) -> int:
    """Tree-path semantics: rules from one tree are mutually exclusive and
    exhaustive, so exactly one matches; defaults to class 0 with no rules."""
    if hasattr(vector, "expanded"):
        vector = vector.expanded()
    matches = [r for r in rules if _match(r.condition, vector)]
    if not rules:
        return 0
    if len(matches) != 1:
        raise RuleError(f"{len(matches)} rules matched; expected exactly 1")
    return matches[0].klass


# ---------------------------------------------------------------------------
# Downstream-tool script emission
# ---------------------------------------------------------------------------

_EMITTABLE = True


def _tag_names():
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    for ch in letters:
        yield ch
    i = 1
    while True:
        for ch in letters:
            yield f"{ch}{i}"
        i += 1


def _fmt_um(offset_nm: float) -> str:
    return f"{abs(offset_nm) / 1000.0:.3f}"


def emit_downstream(rules, c_classes: int = 4, header: str = "opc recipe") -> str:
    """Tag-definition plus action statements, one per line.

    Each distinct condition set becomes one NEWTAG statement; FRAG rules emit
    fragment statements with lengths in micrometres, EPE rules emit retarget
    statements with signed shifts.
    """
    from .features import class_to_offset

    lines = [f"# {header}"]
    tags = {}
    names = _tag_names()
    for rule in rules:
        for lit in rule.condition:
            token = lit[4:] if lit.startswith("not ") else lit
            if not token.replace("_", "").isalnum():
                raise RuleError(f"cannot map literal {lit!r} to a tag token")
        key = rule.condition
        if key not in tags:
            tag = next(names)
            tags[key] = tag
            tokens = " ".join(lit.replace("not ", "not_") for lit in rule.condition)
            lines.append(f"NEWTAG edge {tag} {tokens}".rstrip())
    for rule in rules:
        tag = tags[rule.condition]
        offset = class_to_offset(rule.klass, c_classes)
        if rule.type == "FRAG":
            stmt = f"fragment_corner {tag} convex concave mid_length {_fmt_um(offset)}"
            if offset < 0:
                stmt += " inward"
        else:
            sign = "-" if offset < 0 else ""
            stmt = f"retarget_epe {tag} shift {sign}{_fmt_um(offset)}"
        lines.append(stmt)
    return "\n".join(lines) + "\n"
