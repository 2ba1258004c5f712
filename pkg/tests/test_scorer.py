import pytest

from mmevents.errors import UnknownSetting
from mmevents.pipeline import EventRecord
from mmevents.scorer import (
    PRF,
    classify_ar_errors,
    classify_em_errors,
    evaluate,
    match_events,
    overgen_stats,
    render_report,
    score_ar,
    score_em,
    span_profile,
    span_relation,
)


def ev(etype, trigger="", text=(), image=(), conf=None):
    return EventRecord(
        event_type=etype, trigger=trigger,
        text_arguments=[tuple(a) for a in text],
        image_arguments=[(r, list(b)) for r, b in image],
        confidence={"event": conf} if conf is not None else None,
    )


def test_prf_zero_division_conventions():
    assert PRF.from_counts(0, 0, 0) == PRF(0.0, 0.0, 0.0, 0, 0, 0)
    assert PRF.from_counts(0, 5, 0).precision == 0.0
    assert PRF.from_counts(2, 4, 8) == PRF(0.5, 0.25, pytest.approx(1 / 3), 2, 4, 8)


def test_unknown_setting_raises():
    with pytest.raises(UnknownSetting):
        score_em({}, {}, "audio")


def test_match_events_greedy_one_to_one():
    preds = [ev("Conflict:Attack", "bombed"), ev("Conflict:Attack", "bombed")]
    golds = [ev("Conflict:Attack", "bombed")]
    assert match_events(preds, golds, "textual") == [(0, 0)]


def test_match_events_confidence_order():
    preds = [ev("Conflict:Attack", "struck", conf=0.3),
             ev("Conflict:Attack", "bombed", conf=0.9)]
    golds = [ev("Conflict:Attack", "bombed")]
    # higher-confidence prediction is matched first
    assert match_events(preds, golds, "textual") == [(1, 0)]


def test_match_events_trigger_normalized():
    preds = [ev("Conflict:Attack", "Bombed,")]
    golds = [ev("Conflict:Attack", "bombed")]
    assert match_events(preds, golds, "textual") == [(0, 0)]


def test_visual_setting_ignores_trigger():
    preds = [ev("Conflict:Attack", "anything")]
    golds = [ev("Conflict:Attack", "")]
    assert match_events(preds, golds, "visual") == [(0, 0)]
    assert match_events(preds, golds, "multimedia") == []


def test_argument_matching_text_and_image():
    preds = {"d": [ev("Conflict:Attack", "bombed",
                      text=[("Attacker", "the rebels")],
                      image=[("Target", [0, 0, 100, 50])])]}
    golds = {"d": [ev("Conflict:Attack", "bombed",
                      text=[("Attacker", "The rebels")],
                      image=[("Target", [0, 0, 100, 100])])]}
    ar = score_ar(preds, golds, "multimedia")
    # text matches by normalized equality; IoU exactly 0.5 counts as a match
    assert ar.matched == 2 and ar.predicted == 2 and ar.gold == 2
    assert ar.f1 == 1.0


def test_ar_errors_decision_order():
    golds = {"d": [ev("Conflict:Attack", "bombed",
                      text=[("Attacker", "rebels"), ("Place", "Aleppo")],
                      image=[("Target", [0, 0, 100, 100])])]}
    preds = {"d": [ev("Conflict:Attack", "bombed",
                      text=[("Target", "rebels"),      # right span, wrong role
                            ("Place", "the city"),     # right role, wrong span
                            ("Instrument", "knife")],  # no such gold arg at all
                      image=[("Target", [500, 500, 600, 600]),  # no overlapping box
                             ("Attacker", [0, 0, 100, 95])]),   # box hits a Target
                   ev("Life:Die", "died", text=[("Victim", "men")])]}
    errs = classify_ar_errors(preds, golds, "multimedia")
    assert errs["role_misassignment"] == 2
    assert errs["span_mismatch"] == 1
    assert errs["spurious"] == 1
    assert errs["localization_error"] == 1
    assert errs["no_gold_event_type"] == 1
    assert errs["total"] == 6


def test_em_errors():
    golds = {"d": [ev("Conflict:Attack", "bombed"), ev("Life:Die", "died")]}
    preds = {"d": [ev("Conflict:Attack", "struck", conf=0.9),
                   ev("Contact:Meet", "met", conf=0.8)]}
    errs = classify_em_errors(preds, golds, "textual")
    assert errs == {"spurious_type": 1, "trigger_mismatch": 1, "missing": 2}
    # trigger mismatches cannot exist in the visual setting
    errs_v = classify_em_errors(preds, golds, "visual")
    assert errs_v["trigger_mismatch"] == 0


@pytest.mark.parametrize("pred,gold,rel", [
    ("the convoy", None, "No-gold"),
    ("The convoy", "the convoy", "Exact"),
    ("convoy", "the convoy", "Contained-by"),
    ("the big convoy", "big", "Contains"),
    ("the convoy", "convoy route", "Overlap"),
    ("tanks", "the convoy", "None"),
])
def test_span_relation(pred, gold, rel):
    assert span_relation(pred, gold) == rel


def test_span_profile_picks_best_relation():
    golds = {"d": [ev("Conflict:Attack", "x", text=[("Attacker", "rebels"),
                                                    ("Place", "the town of Aleppo")])]}
    preds = {"d": [ev("Conflict:Attack", "x", text=[("Attacker", "rebels"),
                                                    ("Place", "Aleppo")]),
                   ev("Life:Die", "y", text=[("Victim", "men")])]}
    profile = span_profile(preds, golds)
    assert profile["Exact"] == 1
    assert profile["Contained-by"] == 1
    assert profile["No-gold"] == 1


def test_overgen_stats():
    out = overgen_stats(2771, 1000, 1659)
    assert out["overgen"] == pytest.approx(2771 / 1659)
    assert round(out["overgen"], 2) == 1.67
    assert overgen_stats(5, 0, 0)["overgen"] is None


def test_evaluate_report_shape_and_render():
    preds = {"d": [ev("Conflict:Attack", "bombed", text=[("Attacker", "rebels")], conf=0.9)]}
    golds = {"d": [ev("Conflict:Attack", "bombed", text=[("Attacker", "rebels")])]}
    report = evaluate(preds, golds, "textual")
    assert report["em"]["f1"] == 1.0
    assert report["ar"]["f1"] == 1.0
    assert report["ar_errors"]["total"] == 0
    text = render_report(report)
    assert "setting: textual" in text
    assert "F1=1.000" in text
