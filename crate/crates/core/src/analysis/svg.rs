//! Self-contained SVG figures. No external fonts, scripts or stylesheets;
//! undefined values are drawn with an inline hatch pattern.

use std::fmt::Write as _;

use super::{normalized_score, BandTable, BestLayerHistogram, HeatmapMatrix, LayerCurve};
use crate::model::{MetricKind, RANDOM_SOURCE_NAME};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";
const HATCH_DEFS: &str = "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" \
patternUnits=\"userSpaceOnUse\" patternTransform=\"rotate(45)\">\
<rect width=\"6\" height=\"6\" fill=\"#ffffff\"/>\
<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#888888\" stroke-width=\"2\"/>\
</pattern></defs>\n";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn open(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
viewBox=\"0 0 {width} {height}\">\n{HATCH_DEFS}\
<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    )
}

fn text(out: &mut String, class: &str, x: f64, y: f64, anchor: &str, body: &str) {
    let _ = writeln!(
        out,
        "<text class=\"{class}\" x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" {FONT}>{}</text>",
        escape(body)
    );
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

/// White to dark blue.
fn sequential(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    format!("#{:02x}{:02x}{:02x}", lerp(247, 8, t), lerp(251, 48, t), lerp(255, 107, t))
}

/// Blue for rank 0 through to red for the last rank.
fn diverging(rank: usize, n: usize) -> String {
    let t = if n <= 1 { 0.0 } else { rank as f64 / (n - 1) as f64 };
    format!("#{:02x}{:02x}{:02x}", lerp(33, 203, t), lerp(102, 24, t), lerp(172, 29, t))
}

/// Maps data values onto a vertical pixel range with readable ticks.
struct Scale {
    lo: f64,
    hi: f64,
    top: f64,
    bottom: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, kind: Option<MetricKind>, top: f64, bottom: f64) -> Self {
        let (mut lo, mut hi): (f64, f64) = match kind {
            Some(MetricKind::Auc) => (0.5, 1.0),
            _ => (0.0, 1.0),
        };
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        lo = (lo * 10.0).floor() / 10.0;
        hi = (hi * 10.0).ceil() / 10.0;
        if hi - lo < 1e-9 {
            hi = lo + 1.0;
        }
        Self { lo, hi, top, bottom }
    }

    fn y(&self, v: f64) -> f64 {
        self.bottom - (v - self.lo) / (self.hi - self.lo) * (self.bottom - self.top)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
    }
}

fn y_axis(out: &mut String, scale: &Scale, x: f64, label: &str) {
    let _ = writeln!(
        out,
        "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#333333\"/>",
        scale.top, scale.bottom
    );
    for t in scale.ticks() {
        let y = scale.y(t);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x:.1}\" y2=\"{y:.1}\" stroke=\"#333333\"/>",
            x - 4.0
        );
        text(out, "tick-label", x - 6.0, y + 4.0, "end", &format!("{t:.2}"));
    }
    let mid = (scale.top + scale.bottom) / 2.0;
    let _ = writeln!(
        out,
        "<text class=\"axis-title\" x=\"{:.1}\" y=\"{mid:.1}\" text-anchor=\"middle\" {FONT} \
transform=\"rotate(-90 {:.1} {mid:.1})\">{}</text>",
        x - 38.0,
        x - 38.0,
        escape(label)
    );
}

fn metric_label(kind: Option<MetricKind>) -> &'static str {
    match kind {
        Some(MetricKind::Auc) => "AUC",
        Some(MetricKind::R2) => "R²",
        None => "score",
    }
}

/// Draws one curve panel whose plotting box is `(x0, y0)`–`(x1, y1)`.
fn curve_panel(out: &mut String, c: &LayerCurve, x0: f64, y0: f64, x1: f64, y1: f64) {
    let extra = [c.raw_value, c.prediction];
    let scale = Scale::new(
        c.points.iter().filter_map(|p| p.1).chain(extra.iter().flatten().copied()),
        Some(c.metric_kind),
        y0,
        y1,
    );
    y_axis(out, &scale, x0, metric_label(Some(c.metric_kind)));
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y1:.1}\" x2=\"{x1:.1}\" y2=\"{y1:.1}\" stroke=\"#333333\"/>"
    );
    // The last slot holds the raw-value and prediction baselines.
    let slots = c.points.len() + 1;
    let step = (x1 - x0) / slots as f64;
    let x_at = |i: usize| x0 + step * (i as f64 + 0.5);

    let mut segment: Vec<(f64, f64)> = Vec::new();
    let flush = |out: &mut String, seg: &mut Vec<(f64, f64)>| {
        if seg.len() > 1 {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            let _ = writeln!(
                out,
                "<polyline class=\"curve\" points=\"{}\" fill=\"none\" stroke=\"#08306b\" stroke-width=\"2\"/>",
                pts.join(" ")
            );
        }
        seg.clear();
    };
    for (i, (layer, v)) in c.points.iter().enumerate() {
        let x = x_at(i);
        match v {
            Some(v) => segment.push((x, scale.y(*v))),
            None => {
                flush(out, &mut segment);
                let _ = writeln!(
                    out,
                    "<rect class=\"undefined\" x=\"{:.1}\" y=\"{:.1}\" width=\"8\" height=\"8\" fill=\"url(#hatch)\" stroke=\"#888888\"/>",
                    x - 4.0,
                    y1 - 8.0
                );
            }
        }
        text(out, "tick-label", x, y1 + 14.0, "middle", &layer.to_string());
    }
    flush(out, &mut segment);
    for (i, (_, v)) in c.points.iter().enumerate() {
        if let Some(v) = v {
            let _ = writeln!(
                out,
                "<circle class=\"marker\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#08306b\"/>",
                x_at(i),
                scale.y(*v)
            );
        }
    }
    let bx = x_at(c.points.len());
    for (v, colour, name) in [(c.raw_value, "#cb181d", "raw"), (c.prediction, "#fd8d3c", "pred")] {
        if let Some(v) = v {
            let _ = writeln!(
                out,
                "<circle class=\"baseline\" cx=\"{bx:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{colour}\"><title>{name}</title></circle>",
                scale.y(v)
            );
        }
    }
    text(out, "tick-label", bx, y1 + 14.0, "middle", "base");
}

pub fn render_curve(curve: &LayerCurve) -> String {
    let (w, h) = (420.0, 300.0);
    let mut out = open(w, h);
    text(
        &mut out,
        "title",
        w / 2.0,
        18.0,
        "middle",
        &format!("{} → {}", curve.source, curve.target),
    );
    curve_panel(&mut out, curve, 70.0, 34.0, w - 20.0, h - 40.0);
    text(&mut out, "axis-title", (70.0 + w - 20.0) / 2.0, h - 8.0, "middle", "layer");
    out.push_str("</svg>\n");
    out
}

/// Small multiples: one row per target, one column per source.
pub fn render_curve_grid(curves: &[LayerCurve]) -> String {
    let mut sources: Vec<&str> = curves.iter().map(|c| c.source.as_str()).collect();
    let mut targets: Vec<&str> = curves.iter().map(|c| c.target.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    targets.sort_unstable();
    targets.dedup();
    let (pw, ph) = (240.0, 180.0);
    let (left, top) = (120.0, 40.0);
    let w = left + pw * sources.len().max(1) as f64 + 10.0;
    let h = top + ph * targets.len().max(1) as f64 + 10.0;
    let mut out = open(w, h);
    for (j, s) in sources.iter().enumerate() {
        text(&mut out, "axis-label", left + pw * (j as f64 + 0.5), 24.0, "middle", s);
    }
    for (i, t) in targets.iter().enumerate() {
        text(&mut out, "axis-label", 8.0, top + ph * (i as f64 + 0.5), "start", t);
    }
    for c in curves {
        let j = sources.iter().position(|s| *s == c.source).unwrap_or(0) as f64;
        let i = targets.iter().position(|t| *t == c.target).unwrap_or(0) as f64;
        let x0 = left + pw * j + 50.0;
        let y0 = top + ph * i + 10.0;
        curve_panel(&mut out, c, x0, y0, x0 + pw - 60.0, y0 + ph - 40.0);
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_histogram(hist: &BestLayerHistogram) -> String {
    let n = hist.counts.len().max(1);
    let (left, right, top, bottom) = (70.0, 20.0, 34.0, 40.0);
    let w = left + right + (36.0 * n as f64).max(240.0);
    let h = 300.0;
    let mut out = open(w, h);
    text(
        &mut out,
        "title",
        w / 2.0,
        18.0,
        "middle",
        &format!("best layer over {} pairs ({} excluded)", hist.total(), hist.excluded),
    );
    let max = hist.counts.values().copied().max().unwrap_or(0).max(1) as f64;
    let scale = Scale {
        lo: 0.0,
        hi: max,
        top,
        bottom: h - bottom,
    };
    y_axis(&mut out, &scale, left, "pairs");
    let step = (w - left - right) / n as f64;
    for (i, (layer, count)) in hist.counts.iter().enumerate() {
        let x = left + step * i as f64;
        let y = scale.y(*count as f64);
        let _ = writeln!(
            out,
            "<rect class=\"bar\" x=\"{:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#2171b5\"/>",
            x + step * 0.1,
            step * 0.8,
            (h - bottom) - y
        );
        text(&mut out, "tick-label", x + step / 2.0, h - bottom + 14.0, "middle", &layer.to_string());
    }
    text(&mut out, "axis-title", (left + w - right) / 2.0, h - 8.0, "middle", "layer");
    out.push_str("</svg>\n");
    out
}

pub fn render_bands(table: &BandTable) -> String {
    let (left, right, top, bottom) = (70.0, 160.0, 34.0, 40.0);
    let n = table.layers.len().max(1);
    let w = left + right + (40.0 * n as f64).max(260.0);
    let h = 320.0;
    let mut out = open(w, h);
    text(&mut out, "title", (left + w - right) / 2.0, 18.0, "middle", &format!("target: {}", table.target));
    let scale = Scale::new(
        table.rows.iter().flat_map(|r| r.values.iter().flatten().copied()),
        table.metric_kind,
        top,
        h - bottom,
    );
    y_axis(&mut out, &scale, left, metric_label(table.metric_kind));
    let step = (w - left - right) / n as f64;
    let x_at = |i: usize| left + step * (i as f64 + 0.5);
    for (i, layer) in table.layers.iter().enumerate() {
        text(&mut out, "tick-label", x_at(i), h - bottom + 14.0, "middle", &layer.to_string());
    }
    let ranked = table.rows.iter().filter(|r| r.self_rank.is_some()).count();
    for (k, row) in table.rows.iter().enumerate() {
        let colour = row
            .self_rank
            .map(|r| diverging(r, ranked))
            .unwrap_or_else(|| "#969696".into());
        let dash = if row.same_task { " stroke-dasharray=\"6 3\"" } else { "" };
        let pts: Vec<String> = row
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| format!("{:.1},{:.1}", x_at(i), scale.y(v))))
            .collect();
        if pts.len() > 1 {
            let _ = writeln!(
                out,
                "<polyline class=\"band\" points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"{dash}/>",
                pts.join(" ")
            );
        }
        for (i, v) in row.values.iter().enumerate() {
            if let Some(v) = v {
                let _ = writeln!(
                    out,
                    "<circle class=\"marker\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{colour}\"/>",
                    x_at(i),
                    scale.y(*v)
                );
            }
        }
        let ly = top + 14.0 * k as f64;
        let lx = w - right + 10.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{colour}\" stroke-width=\"2\"{dash}/>",
            lx + 18.0
        );
        text(&mut out, "legend", lx + 22.0, ly + 4.0, "start", &row.source);
    }
    text(&mut out, "axis-title", (left + w - right) / 2.0, h - 8.0, "middle", "layer");
    out.push_str("</svg>\n");
    out
}

pub fn render_heatmap(m: &HeatmapMatrix) -> String {
    let cell = 28.0;
    let longest = |names: &[String]| names.iter().map(|s| s.chars().count()).max().unwrap_or(0) as f64;
    let left = 16.0 + 7.0 * longest(&m.rows);
    let top = 40.0 + 7.0 * longest(&m.columns);
    let w = left + cell * m.columns.len() as f64 + 20.0;
    let h = top + cell * m.rows.len() as f64 + 60.0;
    let mut out = open(w.max(320.0), h);
    text(
        &mut out,
        "title",
        8.0,
        16.0,
        "start",
        &format!(
            "layer {}: rows are targets, columns are sources (ordered by {})",
            m.layer_id, m.anchor_source
        ),
    );
    for (j, col) in m.columns.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let y = top - 6.0;
        let weight = if col == RANDOM_SOURCE_NAME { " font-weight=\"bold\"" } else { "" };
        let _ = writeln!(
            out,
            "<text class=\"axis-label\" x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"start\" {FONT}{weight} \
transform=\"rotate(-60 {x:.1} {y:.1})\">{}</text>",
            escape(col)
        );
    }
    for (i, row) in m.rows.iter().enumerate() {
        let y = top + cell * i as f64;
        text(&mut out, "axis-label", left - 6.0, y + cell / 2.0 + 4.0, "end", row);
        for (j, v) in m.values[i].iter().enumerate() {
            let fill = match v {
                Some(v) => sequential(normalized_score(m.row_kinds[i], *v)),
                None => "url(#hatch)".into(),
            };
            let title = v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into());
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" \
fill=\"{fill}\" stroke=\"#ffffff\"><title>{}</title></rect>",
                left + cell * j as f64,
                escape(&format!("{row} from {}: {title}", m.columns[j]))
            );
        }
    }
    let ly = top + cell * m.rows.len() as f64 + 16.0;
    for k in 0..10 {
        let _ = writeln!(
            out,
            "<rect class=\"legend-swatch\" x=\"{:.1}\" y=\"{ly:.1}\" width=\"16\" height=\"10\" fill=\"{}\"/>",
            left + 16.0 * k as f64,
            sequential((k as f64 + 0.5) / 10.0)
        );
    }
    text(
        &mut out,
        "legend",
        left,
        ly + 26.0,
        "start",
        "colour: 2·AUC−1 for binary rows, R² for continuous rows, clamped to [0, 1]",
    );
    out.push_str("</svg>\n");
    out
}
