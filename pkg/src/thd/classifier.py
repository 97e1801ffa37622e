"""Semi-supervised classification on a THD tree built over train and test
rows together; labels only ever enter through the votes."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, Group, analysis_matrix
from .engine import OUTLIER, ThdParams, ThdTree, run_thd, trace_point_path
from .geometry import scaled_points


@dataclass(frozen=True)
class Prediction:
    row: int
    label: str | None
    confidence: float
    leaf: str
    abstain: bool
    outlier: bool
    voters: tuple[int, ...] = ()


@dataclass
class ClassifierModel:
    tree: ThdTree
    train_labels: dict[int, str]
    test_rows: tuple[int, ...]
    k_votes: int
    metric: str

    def __post_init__(self):
        self._points: dict[str, tuple[dict[int, int], np.ndarray]] = {}
        counts = Counter(self.train_labels.values())
        # globally more frequent first, then alphabetical
        self.label_rank = {lab: i for i, (lab, _) in enumerate(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))}

    def _node_points(self, node_id: str):
        if node_id not in self._points:
            node = self.tree.node(node_id)
            mat = analysis_matrix(self.tree.dataset, node.group)
            pos = {r: i for i, r in enumerate(mat.rows)}
            self._points[node_id] = (pos, scaled_points(mat.values, self.metric))
        return self._points[node_id]

    def predict_row(self, row: int) -> Prediction:
        path = trace_point_path(self.tree, row)
        node = self.tree.node(path.last)
        net = node.network
        own = net.row_to_nodes.get(row, ())
        candidates = {r for k in own for r in net.nodes[k].rows if r in self.train_labels and r != row}
        if len(candidates) < self.k_votes:
            for k in own:
                for nb in net.neighbors(k):
                    candidates.update(r for r in net.nodes[nb].rows if r in self.train_labels and r != row)
        outlier = path.terminal == OUTLIER
        if not candidates:
            return Prediction(row, None, 0.0, path.last, True, outlier)
        pos, points = self._node_points(path.last)
        cand = np.array(sorted(candidates), dtype=np.int64)
        diff = points[[pos[r] for r in cand]] - points[pos[row]]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        # lexsort: last key is primary; ties in distance go to the smaller row id
        order = np.lexsort((cand, dist))[: self.k_votes]
        voters = cand[order]
        votes = Counter(self.train_labels[int(r)] for r in voters)
        best = max(votes.values())
        winner = min((lab for lab, v in votes.items() if v == best), key=lambda lab: self.label_rank[lab])
        return Prediction(row, winner, best / len(voters), path.last, False, outlier, tuple(int(r) for r in voters))


def fit_predict(
    dataset: Dataset,
    train_rows: Sequence[int],
    test_rows: Sequence[int],
    params: ThdParams | None = None,
    k_votes: int = 5,
    threads: int = 1,
) -> tuple[ClassifierModel, list[Prediction]]:
    """Build a THD over the union of train and test rows, then label each
    test row by a vote of its nearest labelled rows in the network it ends in.

    Voters are the train rows sharing a network node with the test row,
    widened to the immediate neighbor nodes when fewer than ``k_votes``
    are found; the ``k_votes`` nearest under the tree's metric vote.  Ties go
    to the globally more frequent training label.  Rows with no reachable
    voter abstain.

    The tree is built on a copy of ``dataset`` with the label column removed,
    and must cover exactly the train and test rows.
    """
    params = params or ThdParams()
    train = Group(train_rows)
    test = Group(test_rows)
    if len(train) == 0:
        raise ValueError("no training rows")
    if set(train.rows) & set(test.rows):
        raise ValueError("train and test rows overlap")
    if len(train) + len(test) != dataset.n_rows:
        raise ValueError("train and test rows must cover the dataset")
    labels = dataset.label_values(train.array())
    if any(lab is None for lab in labels):
        raise ValueError("every training row needs a label")
    structure = dataset.take(np.arange(dataset.n_rows), drop_label=True)
    tree = run_thd(structure, params, threads)
    model = ClassifierModel(
        tree=tree,
        train_labels={int(r): str(lab) for r, lab in zip(train.rows, labels)},
        test_rows=test.rows,
        k_votes=k_votes,
        metric=params.metric,
    )
    return model, [model.predict_row(r) for r in test.rows]


def evaluate(predictions: Sequence[Prediction], truth: Mapping[int, str]) -> dict:
    """Accuracy (abstentions count as errors), abstain rate, and per-class
    precision/recall from the confusion counts."""
    if not predictions:
        raise ValueError("no predictions")
    classes = sorted(set(truth[p.row] for p in predictions) | {p.label for p in predictions if p.label is not None})
    confusion = {t: {p: 0 for p in classes + ["abstain"]} for t in classes}
    for p in predictions:
        confusion[truth[p.row]][p.label if not p.abstain else "abstain"] += 1
    total = len(predictions)
    correct = sum(confusion[c][c] for c in classes)
    per_class = {}
    for c in classes:
        predicted = sum(confusion[t][c] for t in classes)
        actual = sum(confusion[c].values())
        per_class[c] = {
            "precision": confusion[c][c] / predicted if predicted else 0.0,
            "recall": confusion[c][c] / actual if actual else 0.0,
            "support": actual,
        }
    return {
        "accuracy": correct / total,
        "abstain_rate": sum(p.abstain for p in predictions) / total,
        "per_class": per_class,
        "confusion": confusion,
    }


def predictions_csv(predictions: Sequence[Prediction]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["row_id", "label", "confidence", "leaf", "abstain", "outlier"])
    for p in predictions:
        writer.writerow(
            [p.row, "" if p.label is None else p.label, f"{p.confidence:.6g}", p.leaf, int(p.abstain), int(p.outlier)]
        )
    return out.getvalue()
