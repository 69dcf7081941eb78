"""
Markdown report tables for sweep and TTA results, rendered with jinja2.
"""

from typing import Any, Dict, Sequence

from jinja2 import Environment, StrictUndefined

_env = Environment(undefined=StrictUndefined, trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
_env.filters["deg"] = lambda v: "n/a" if v is None else f"{v:.2f}"

SWEEP_TEMPLATE = _env.from_string("""\
| Encoding | Activation | Loss | E_deg | ± | max error |
|---|---|---|---:|---:|---:|
{% for row in rows %}
| {{ row.encoding }} | {{ row.activation }} | {{ row.loss }} | {{ "**" if row.best }}{{ row.mean | deg }}{{ "**" if row.best }} | {{ row.std | deg }} | {{ row.max_error_bound | deg }} |
{% endfor %}
{% if failures %}

Failed runs:
{% for f in failures %}
- {{ f.label }} fold {{ f.fold }}: diverged at epoch {{ f.epoch }}
{% endfor %}
{% endif %}
""")

TTA_TEMPLATE = _env.from_string("""\
| Predictions | E_deg | ± | max error |
|---|---:|---:|---:|
{% for row in rows %}
| {{ "original" if row.n == 1 else "original + %d rotated" % (row.n - 1) }} | {{ row.mean | deg }} | {{ row.std | deg }} | {{ row.max_error_bound | deg }} |
{% endfor %}
""")


def render_sweep_table(rows: Sequence[Dict[str, Any]]) -> str:
    """Encoding | Activation | Loss | E_deg | ± | max error, best mean in bold"""
    failures = [dict(f, label=f"{r['encoding']}/{r['activation']}/{r['loss']}")
                for r in rows for f in r.get("failures", [])]
    return SWEEP_TEMPLATE.render(rows=rows, failures=failures)


def render_tta_table(rows: Sequence[Dict[str, Any]]) -> str:
    return TTA_TEMPLATE.render(rows=rows)
