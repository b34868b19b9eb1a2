//! Static SVG charts written by hand.
//!
//! Embedding plots draw inside a group whose transform maps data
//! coordinates to the canvas, so every marker and arrow carries the raw
//! embedding coordinates as its attributes.


use crate::error::{Error, Result};
use crate::harness::{ConfusionMatrix, RunRecord, TaskTransition};
use crate::report::compare::CompareTable;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn colour(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.body.push_str(s.as_ref());
        self.body.push('\n');
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, content: &str) {
        self.line(format!(
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="{size}" font-family="sans-serif">{}</text>"#,
            escape(content)
        ));
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn polygon_points(cx: f64, cy: f64, radii: &[f64], turn: f64) -> String {
    let n = radii.len();
    radii
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a = turn + std::f64::consts::TAU * i as f64 / n as f64;
            format!("{},{}", cx + r * a.sin(), cy + r * a.cos())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One SVG per drift-compensation step of a run with a 2-D embedding,
/// named `embedding_task<k>.svg` with 1-based `k`.
///
/// Each shows the first task's test embeddings under the network after the
/// step, the stored prototypes before compensation (circles), the
/// compensated prototypes (triangles), the mean test embedding per class
/// (stars) and a dotted arrow from each stored prototype to its compensated
/// position.
pub fn embedding_svgs(record: &RunRecord) -> Result<Vec<(String, String)>> {
    if record.embedding_dim != 2 {
        return Err(Error::InvalidArgument(format!(
            "embedding plots need a 2-D embedding, this run has {} dimensions",
            record.embedding_dim
        )));
    }
    if record.transitions.is_empty() {
        return Err(Error::MissingData(format!(
            "run `{}` has no drift-compensation steps to plot",
            record.label
        )));
    }
    record
        .transitions
        .iter()
        .map(|tr| Ok((format!("embedding_task{}.svg", tr.task + 1), embedding_svg(record, tr)?)))
        .collect()
}

fn embedding_svg(record: &RunRecord, tr: &TaskTransition) -> Result<String> {
    let points = record.embedding_points.iter().find(|p| p.task == tr.task);
    let mut all: Vec<&[f64]> = Vec::new();
    if let Some(p) = points {
        all.extend(p.points.iter().map(Vec::as_slice));
    }
    for m in &tr.moves {
        all.extend([m.before.as_slice(), m.after.as_slice(), m.true_mean.as_slice()]);
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &all {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
    let centre = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let (size, margin, legend) = (480.0, 40.0, 170.0);
    let scale = size / span;
    let px = |r: f64| r / scale;

    let mut svg = Svg::new(size + 2.0 * margin + legend, size + 2.0 * margin);
    svg.text(
        margin + size / 2.0,
        margin / 2.0 + 6.0,
        "middle",
        16.0,
        &format!("{}: drift compensation after task {}", record.label, tr.task + 1),
    );
    svg.line(format!(
        r##"<rect x="{margin}" y="{margin}" width="{size}" height="{size}" fill="none" stroke="#999"/>"##
    ));
    svg.line(format!(
        r#"<g class="data" transform="translate({tx} {ty}) scale({scale} {neg})">"#,
        tx = margin + size / 2.0 - scale * centre[0],
        ty = margin + size / 2.0 + scale * centre[1],
        neg = -scale
    ));
    if let Some(p) = points {
        for (pt, &c) in p.points.iter().zip(&p.labels) {
            svg.line(format!(
                r#"<circle class="point" data-class="{c}" cx="{}" cy="{}" r="{}" fill="{}" fill-opacity="0.45"/>"#,
                pt[0],
                pt[1],
                px(2.0),
                colour(c)
            ));
        }
    }
    for m in &tr.moves {
        let c = colour(m.class);
        svg.line(format!(
            r#"<line class="drift" data-class="{}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="1.5" stroke-dasharray="2 3" vector-effect="non-scaling-stroke"/>"#,
            m.class, m.before[0], m.before[1], m.after[0], m.after[1]
        ));
        svg.line(format!(
            r#"<circle class="prototype" data-class="{}" cx="{}" cy="{}" r="{}" fill="{c}" stroke="black" vector-effect="non-scaling-stroke"/>"#,
            m.class,
            m.before[0],
            m.before[1],
            px(6.0)
        ));
        svg.line(format!(
            r#"<polygon class="compensated" data-class="{}" data-x="{}" data-y="{}" points="{}" fill="{c}" stroke="black" vector-effect="non-scaling-stroke"/>"#,
            m.class,
            m.after[0],
            m.after[1],
            polygon_points(m.after[0], m.after[1], &[px(8.0); 3], 0.0)
        ));
        let star: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { px(9.0) } else { px(4.0) }).collect();
        svg.line(format!(
            r#"<polygon class="true-mean" data-class="{}" data-x="{}" data-y="{}" points="{}" fill="{c}" stroke="black" vector-effect="non-scaling-stroke"/>"#,
            m.class,
            m.true_mean[0],
            m.true_mean[1],
            polygon_points(m.true_mean[0], m.true_mean[1], &star, 0.0)
        ));
    }
    svg.line("</g>");

    let lx = size + 2.0 * margin;
    let entries = [
        "circle: stored prototype",
        "triangle: compensated",
        "star: true class mean",
        "dotted: estimated drift",
    ];
    for (i, e) in entries.iter().enumerate() {
        svg.text(lx, margin + 16.0 + 18.0 * i as f64, "start", 12.0, e);
    }
    for (i, m) in tr.moves.iter().enumerate() {
        let y = margin + 110.0 + 18.0 * i as f64;
        svg.line(format!(r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, colour(m.class)));
        let name = record.class_names.get(m.class).map_or(m.class.to_string(), Clone::clone);
        svg.text(lx + 16.0, y, "start", 12.0, &format!("class {name}"));
    }
    Ok(svg.finish())
}

/// Average incremental accuracy against task index, one series per method
/// (mean over seeds).
pub fn curves_svg(table: &CompareTable) -> String {
    let (w, h, margin, legend) = (560.0, 360.0, 50.0, 170.0);
    let n = table.n_tasks.max(1);
    let x = |k: usize| margin + if n == 1 { w / 2.0 } else { w * (k - 1) as f64 / (n - 1) as f64 };
    let y = |a: f64| margin + h * (1.0 - a);
    let mut svg = Svg::new(w + 2.0 * margin + legend, h + 2.0 * margin);
    svg.text(margin + w / 2.0, margin / 2.0 + 6.0, "middle", 16.0, "Average incremental accuracy");
    svg.line(format!(
        r##"<rect x="{margin}" y="{margin}" width="{w}" height="{h}" fill="none" stroke="#999"/>"##
    ));
    for tick in 0..=5 {
        let a = tick as f64 / 5.0;
        svg.line(format!(
            r##"<line x1="{margin}" x2="{}" y1="{yy:.2}" y2="{yy:.2}" stroke="#ddd"/>"##,
            margin + w,
            yy = y(a)
        ));
        svg.text(margin - 6.0, y(a) + 4.0, "end", 11.0, &format!("{:.0}", 100.0 * a));
    }
    for k in 1..=n {
        svg.text(x(k), margin + h + 18.0, "middle", 11.0, &k.to_string());
    }
    svg.text(margin + w / 2.0, margin + h + 38.0, "middle", 12.0, "task");
    for (i, row) in table.rows.iter().enumerate() {
        let c = colour(i);
        let pts: Vec<(usize, f64)> = row
            .cells
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|s| (k + 1, s.mean)))
            .collect();
        let coords = pts
            .iter()
            .map(|&(k, a)| format!("{:.2},{:.2}", x(k), y(a)))
            .collect::<Vec<_>>()
            .join(" ");
        svg.line(format!(
            r#"<g class="series" data-label="{}">"#,
            escape(&row.label)
        ));
        svg.line(format!(r#"<polyline points="{coords}" fill="none" stroke="{c}" stroke-width="2"/>"#));
        for &(k, a) in &pts {
            svg.line(format!(
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{c}" data-task="{k}" data-value="{a}"/>"#,
                x(k),
                y(a)
            ));
        }
        svg.line("</g>");
        let ly = margin + 14.0 + 18.0 * i as f64;
        let lx = w + 2.0 * margin;
        svg.line(format!(r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{c}"/>"#, ly - 9.0));
        svg.text(lx + 16.0, ly, "start", 12.0, &row.label);
    }
    svg.finish()
}

/// Heatmap of one confusion matrix; rows are true classes, columns
/// predictions, shading is the row-normalised count.
pub fn confusion_svg(cm: &ConfusionMatrix, class_names: &[String], title: &str) -> String {
    let n = cm.classes.len().max(1);
    let cell = (360.0 / n as f64).clamp(14.0, 48.0);
    let margin = 70.0;
    let side = cell * n as f64;
    let mut svg = Svg::new(side + 2.0 * margin, side + 2.0 * margin);
    svg.text(margin + side / 2.0, 24.0, "middle", 15.0, title);
    svg.text(margin + side / 2.0, margin + side + 40.0, "middle", 12.0, "predicted");
    svg.text(20.0, margin + side / 2.0, "middle", 12.0, "true");
    let name = |c: usize| class_names.get(c).map_or(c.to_string(), Clone::clone);
    for (i, row) in cm.counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, &count) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            svg.line(format!(
                r#"<rect class="cell" data-row="{i}" data-col="{j}" data-count="{count}" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({shade},{shade},255)" stroke="white"/>"#,
                margin + cell * j as f64,
                margin + cell * i as f64
            ));
        }
        svg.text(margin - 6.0, margin + cell * (i as f64 + 0.6), "end", 11.0, &name(cm.classes[i]));
        svg.text(margin + cell * (i as f64 + 0.5), margin + side + 16.0, "middle", 11.0, &name(cm.classes[i]));
    }
    svg.finish()
}

/// One heatmap per evaluated task, named `confusion_task<k>.svg`.
pub fn confusion_svgs(record: &RunRecord) -> Result<Vec<(String, String)>> {
    let out: Vec<(String, String)> = record
        .confusion
        .iter()
        .enumerate()
        .filter_map(|(t, cm)| cm.as_ref().map(|cm| (t, cm)))
        .map(|(t, cm)| {
            let title = format!("{}: after task {}", record.label, t + 1);
            (format!("confusion_task{}.svg", t + 1), confusion_svg(cm, &record.class_names, &title))
        })
        .collect();
    if out.is_empty() {
        return Err(Error::MissingData(format!("run `{}` has no confusion matrices", record.label)));
    }
    Ok(out)
}
