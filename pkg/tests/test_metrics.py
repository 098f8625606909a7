import json

import numpy as np

from sgenrich.metrics import METRICS, MetricReport, PredictionRecord, compute_metrics, oracle_evaluate


def _record(**kw):
    base = dict(object_pred=2, object_target=2, edge_probs=np.array([[0, 0.9], [0.2, 0]]),
                gt_adjacency=np.array([[0, 1], [0, 0]]))
    base.update(kw)
    return PredictionRecord(**base)


def test_metrics_without_support_are_absent():
    report = compute_metrics([_record()])
    assert report.objs_acc == 1.0
    assert report.avail_edges_acc == 1.0 and report.not_avail_edges_acc == 1.0
    assert report.avail_preds_acc is None and report.scene_class_acc is None
    assert report.support["avail_preds_acc"] == 0
    assert "avail_preds_acc" not in report.to_dict()["metrics"]
    rows = {line[:22].strip(): line for line in report.table().splitlines()}
    assert rows["Avail Preds Acc"].split()[-2] == "-"
    assert rows["Objs Acc"].split()[-2] == "100.00"


def test_empty_input_gives_empty_report():
    report = compute_metrics([])
    assert report.values == {}
    assert report.metric_sum() == 0.0


def test_predicates_and_scene_are_counted():
    r = _record(selected=[(0, 1), (1, 0)], predicates=[4, 1], gt_predicates=[{4, 5}, set()], scene=(3, 3))
    report = compute_metrics([r, _record(object_pred=3, scene=(1, 2))], characterizer="toy")
    assert report.avail_preds_acc == 1.0 and report.not_avail_preds_acc == 1.0
    assert report.objs_acc == 0.5 and report.scene_class_acc == 0.5
    assert report == oracle_evaluate([r, _record(object_pred=3, scene=(1, 2))], characterizer="toy")
    assert report.metric_sum(include_scene=True) == report.metric_sum() + 0.5
    assert json.loads(report.to_json())["characterizer"] == "toy"


def test_report_attribute_errors():
    report = MetricReport({}, {})
    assert all(getattr(report, m) is None for m in METRICS)
    try:
        report.nonsense
    except AttributeError:
        pass
    else:
        raise AssertionError("expected AttributeError")
