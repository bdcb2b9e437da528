"""Deterministic report serialization (JSON and human-readable text)."""

from __future__ import annotations

import json

from . import __version__
from . import expr as ex


def emit_report(problem_name, results):
    """Stable-key JSON document for one invocation."""
    doc = {
        "problem": problem_name,
        "engine_version": __version__,
        "results": results,
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def emit_pretty(problem_name, results):
    lines = [f"problem: {problem_name}", f"engine: psym {__version__}"]
    for res in results:
        head = f"[{res['task']}]"
        for key in ("field", "map", "ansatz"):
            if key in res:
                head += f" {key}={res[key]}"
        lines.append(head)
        if "error" in res:
            lines.append(f"  error: {res['error']}")
            continue
        if "status" in res:
            line = f"  status: {res['status']}"
            if res.get("order") is not None:
                line += f" (order {res['order']})"
            lines.append(line)
        for step in res.get("chain", ()):
            lines.append(f"  step {step['r']}: {step['restricted']}")
            for sc in step.get("side_conditions", ()):
                lines.append(f"    side: {sc}")
        for sc in res.get("side_conditions", ()):
            lines.append(f"  side: {sc}")
        for key in ("expressions", "equations", "components"):
            for item in res.get(key, ()):
                if isinstance(item, dict):
                    parts = ", ".join(f"{k}={v}" for k, v in item.items())
                    lines.append(f"  {key[:-1]}: {parts}")
                else:
                    lines.append(f"  {key[:-1]}: {item}")
        if "verdicts" in res:
            for k, v in res["verdicts"].items():
                lines.append(f"  {k}: {v}")
        if "max_residual" in res:
            lines.append(f"  max residual: {res['max_residual']:.3e}")
        for exp in res.get("expectations", ()):
            mark = "ok" if exp["ok"] else "MISMATCH"
            lines.append(f"  expect {exp['text']}: {mark}")
    return "\n".join(lines) + "\n"


def chain_result_dict(result):
    """ChainResult -> report fragment."""
    steps = []
    for st in result.steps:
        conditions = [sc.describe() for sc in result.side_conditions
                      if sc.origin == st.r]
        steps.append({
            "r": st.r,
            "raw": _print_components(st.raw),
            "restricted": _print_components(st.restricted),
            "side_conditions": conditions,
        })
    out = {
        "status": result.status,
        "order": result.order,
        "chain": steps,
        "side_conditions": [sc.describe() for sc in result.side_conditions],
    }
    if result.inconsistent_at is not None:
        out["inconsistent_at"] = result.inconsistent_at
    return out


def _print_components(components):
    if isinstance(components, ex.Expr):
        return ex.to_str(components)
    if len(components) == 1:
        return ex.to_str(components[0])
    return [ex.to_str(c) for c in components]
