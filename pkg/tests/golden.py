"""Canonical binding set for golden-render checks."""

from __future__ import annotations

from pathlib import Path

from nexus.prompts import TEMPLATE_IDS, load_template, render

RENDERED_DIR = Path(__file__).parent / "fixtures" / "rendered"

CANONICAL_BINDINGS = {
    "target_name": "Weekly Activity Count",
    "ts_features": (
        "- Count: 24 points from 2024-01-01 to 2024-06-10\n"
        "- Mean: 104.2500 | Std: 3.1200 | Min: 98.0000 | Max: 110.0000\n"
        "- Last value: 107.5000\n"
        "- Trend slope (per step): 0.2500\n"
        "- Strongest autocorrelation lag: 4 steps\n"
        "- Recent 4-step change: 1.5000"
    ),
    "domain": "Test Region",
    "history_str": (
        "Date/Timestamp: 2024-06-03\nValue: 99.5\nTextual Content: Quiet week.\n\n"
        "Date/Timestamp: 2024-06-10\nValue: 100.0\nTextual Content: Promotion lifted demand."
    ),
    "horizon": "4",
    "frequency": "weekly",
    "future_dates": "2024-06-17, 2024-06-24, 2024-07-01, 2024-07-08",
    "macro_reasoning_str": (
        "Reasoning: Slow climb continues.\n"
        "Forecasted Values: [101.0000, 102.0000, 103.0000, 104.0000]"
    ),
    "micro_reasoning_str": (
        "Step 1 | Date: 2024-06-17 | Movement: Up | Value: 101.0000\n"
        "  Drivers: Momentum carryover."
    ),
    "guidelines_section": (
        "**Review Guidelines (learned from past errors):**\n"
        "Anchor each step to the most recent observed level.\n"
    ),
    "event_predictions_section": "",
    "last_date": "2024-06-10",
    "start_date": "2024-01-01",
    "history_values_str": (
        "Date: 2024-06-03 | Value: 99.5\nDate: 2024-06-10 | Value: 100.0"
    ),
    "history_text_str": "(no event intelligence available)",
    "value_predictor_prompt": "(the synthesizer prompt used on this fold)",
    "agent_reasoning": "Blended both outlooks with equal weight.",
    "agent_values": "[101.0000, 102.0000]",
    "agent_error": "0.0815",
    "macro_mape": "0.0850",
    "micro_mape": "0.0790",
    "actual_events_summary": "Date: 2024-06-17 | Supply disruption cut availability.",
    "actual_values": "[99.0000, 98.5000]",
    "ground_truth_events": "Date: 2024-06-17 | Supply disruption cut availability.",
    "model_a_reasoning": "Model A links the disruption to a two-step dip.",
    "model_a_predicted_values": "[101.0000, 102.0000]",
    "model_b_reasoning": "Model B extrapolates the recent trend.",
    "model_b_predicted_values": "[100.0000, 100.0000]",
}


def canonical_render(template_id: str):
    tpl = load_template(template_id)
    bindings = {name: CANONICAL_BINDINGS[name] for name in tpl.placeholders}
    return render(template_id, bindings)


def write_golden_renders() -> None:
    RENDERED_DIR.mkdir(parents=True, exist_ok=True)
    for tid in TEMPLATE_IDS:
        pair = canonical_render(tid)
        (RENDERED_DIR / f"{tid}.system.txt").write_text(pair.system, encoding="utf-8")
        (RENDERED_DIR / f"{tid}.user.txt").write_text(pair.user, encoding="utf-8")


if __name__ == "__main__":
    write_golden_renders()
    print(f"wrote golden renders to {RENDERED_DIR}")
