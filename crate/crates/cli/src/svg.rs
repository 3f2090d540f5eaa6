//! Standalone SVG plots of switching regions and values.

use std::fmt::Write as _;

use poswitch::beliefgrid::SimplexLattice;
use poswitch::bellman::{Horizon, ValueSurface};
use poswitch::strategy::{Action, StrategyTable};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn open(width: f64, height: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Axes box for x in `[x0, x1]`, y in `[0, 1]` or `[y0, y1]`, with tick labels.
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x.1 - self.x.0).max(f64::MIN_POSITIVE);
        self.left + (x - self.x.0) / span * self.width
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y.1 - self.y.0).max(f64::MIN_POSITIVE);
        self.top + self.height - (y - self.y.0) / span * self.height
    }

    fn draw(&self, s: &mut String, xlabel: &str, ylabel: &str, title: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(s, r#"<text x="{xp:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, t + h + 16.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, l - 4.0, yp + 4.0);
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            l + w / 2.0,
            t + h + 34.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            t + h / 2.0,
            t + h / 2.0,
            escape(ylabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            l + w / 2.0,
            t - 10.0,
            escape(title)
        );
    }
}

fn polyline(s: &mut String, pts: &[(f64, f64)], stroke: &str) {
    if pts.is_empty() {
        return;
    }
    let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#, p.join(" "));
}

/// Region plot: boundary polylines in the `(tau, pi_1)` plane for two states,
/// per-policy ternary shading of the top layer for three. `None` otherwise.
pub fn regions(table: &StrategyTable<f64>) -> Option<String> {
    match table.lattice().dim() {
        2 => Some(regions_two(table)),
        3 => Some(regions_ternary(table)),
        _ => None,
    }
}

fn regions_two(table: &StrategyTable<f64>) -> String {
    let model = table.model();
    let labels = model.policies();
    let state = &model.states()[0];
    let na = model.n_policies();
    let (finite, t_max) = match table.horizon() {
        Horizon::Finite(t) => (true, t),
        Horizon::Infinite => (false, 1.0),
    };
    let mut s = open(W + 140.0, H);
    let frame = Frame {
        left: MARGIN + 10.0,
        top: 30.0,
        width: W - MARGIN - 20.0,
        height: H - 80.0,
        x: (0.0, t_max),
        y: (0.0, 1.0),
    };
    let xlabel = if finite { "remaining horizon tau" } else { "stationary (infinite horizon)" };
    frame.draw(&mut s, xlabel, &format!("P({state})"), "switching regions");
    let mut legend = 0;
    for a in 0..na {
        for b in (0..na).filter(|&b| b != a) {
            let curve = table.boundary_curve(a, b);
            if curve.iter().all(|c| c.interval.is_none()) {
                continue;
            }
            let col = color(b + a * na);
            if finite {
                // one filled band per run of non-empty layers
                let mut run: Vec<(f64, f64, f64)> = Vec::new();
                let flush = |run: &mut Vec<(f64, f64, f64)>, s: &mut String| {
                    if run.is_empty() {
                        return;
                    }
                    let mut pts: Vec<(f64, f64)> = run.iter().map(|&(t, _, hi)| (frame.px(t), frame.py(hi))).collect();
                    pts.extend(run.iter().rev().map(|&(t, lo, _)| (frame.px(t), frame.py(lo))));
                    let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        r#"<polygon points="{}" fill="{col}" fill-opacity="0.15" stroke="none"/>"#,
                        p.join(" ")
                    );
                    let upper: Vec<(f64, f64)> = run.iter().map(|&(t, _, hi)| (frame.px(t), frame.py(hi))).collect();
                    let lower: Vec<(f64, f64)> = run.iter().map(|&(t, lo, _)| (frame.px(t), frame.py(lo))).collect();
                    polyline(s, &upper, col);
                    polyline(s, &lower, col);
                    run.clear();
                };
                for c in &curve {
                    match c.interval {
                        Some((lo, hi)) => run.push((c.tau, lo, hi)),
                        None => flush(&mut run, &mut s),
                    }
                }
                flush(&mut run, &mut s);
            } else if let Some((lo, hi)) = curve[0].interval {
                let x = frame.px(0.5 * t_max);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{col}" stroke-width="8"/>"#,
                    frame.py(lo),
                    frame.py(hi)
                );
            }
            let ly = 40.0 + 18.0 * legend as f64;
            let _ = writeln!(s, r#"<rect x="{}" y="{:.1}" width="12" height="12" fill="{col}"/>"#, W + 4.0, ly - 10.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly:.1}">{} to {}</text>"#,
                W + 20.0,
                escape(&labels[a]),
                escape(&labels[b])
            );
            legend += 1;
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Ternary layout: first state bottom-left, second bottom-right, third on top.
fn ternary(pi: &[f64], ox: f64, oy: f64, side: f64) -> (f64, f64) {
    let h = side * 3f64.sqrt() / 2.0;
    let x = ox + side * (pi[1] + 0.5 * pi[2]);
    let y = oy + h * (1.0 - pi[2]);
    (x, y)
}

fn triangle(s: &mut String, ox: f64, oy: f64, side: f64, states: &[String]) {
    let a = ternary(&[1.0, 0.0, 0.0], ox, oy, side);
    let b = ternary(&[0.0, 1.0, 0.0], ox, oy, side);
    let c = ternary(&[0.0, 0.0, 1.0], ox, oy, side);
    let _ = writeln!(
        s,
        r#"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="none" stroke="black"/>"#,
        a.0, a.1, b.0, b.1, c.0, c.1
    );
    let _ =
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, a.0, a.1 + 16.0, escape(&states[0]));
    let _ =
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, b.0, b.1 + 16.0, escape(&states[1]));
    let _ =
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, c.0, c.1 - 6.0, escape(&states[2]));
}

fn node_radius(lat: &SimplexLattice<f64>, side: f64) -> f64 {
    (side / lat.resolution().max(1) as f64 * 0.55).max(0.8)
}

fn regions_ternary(table: &StrategyTable<f64>) -> String {
    let model = table.model();
    let lat = table.lattice();
    let labels = model.policies();
    let na = model.n_policies();
    let side = 260.0;
    let panel = side + 40.0;
    let width = panel * na as f64 + 20.0;
    let mut s = open(width, side + 140.0);
    let top = table.n_layers() - 1;
    let title = match table.horizon() {
        Horizon::Finite(t) => format!("switching regions, tau = {t}"),
        Horizon::Infinite => "switching regions, infinite horizon".to_string(),
    };
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle">{}</text>"#, width / 2.0, escape(&title));
    let r = node_radius(lat, side);
    for a in 0..na {
        let ox = 20.0 + panel * a as f64;
        let oy = 50.0;
        for node in 0..lat.len() {
            let fill = match table.action(top, node, a) {
                Action::Continue => "#e8e8e8",
                Action::Switch(b) => color(b),
            };
            let (x, y) = ternary(lat.node(node), ox, oy, side);
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="{r:.2}" fill="{fill}"/>"#);
        }
        triangle(&mut s, ox, oy, side, model.states());
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">current policy {}</text>"#,
            ox + side / 2.0,
            oy + side * 0.87 + 36.0,
            escape(&labels[a])
        );
    }
    let ly = side + 120.0;
    for b in 0..na {
        let x = 20.0 + 140.0 * b as f64;
        let _ = writeln!(s, r#"<rect x="{x}" y="{:.1}" width="12" height="12" fill="{}"/>"#, ly - 10.0, color(b));
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.1}">switch to {}</text>"#, x + 16.0, escape(&labels[b]));
    }
    s.push_str("</svg>\n");
    s
}

/// Value plot of the top layer: one curve per policy for two states,
/// per-policy ternary shading for three. `None` otherwise.
pub fn values(surface: &ValueSurface<f64>) -> Option<String> {
    match surface.lattice().dim() {
        2 => Some(values_two(surface)),
        3 => Some(values_ternary(surface)),
        _ => None,
    }
}

fn top_label(surface: &ValueSurface<f64>) -> String {
    match surface.horizon() {
        Horizon::Finite(t) => format!("value U at tau = {t}"),
        Horizon::Infinite => "value V (infinite horizon)".to_string(),
    }
}

fn values_two(surface: &ValueSurface<f64>) -> String {
    let model = surface.model();
    let lat = surface.lattice();
    let top = surface.top();
    let na = model.n_policies();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in top.values() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let mut s = open(W + 140.0, H);
    let frame = Frame {
        left: MARGIN + 10.0,
        top: 30.0,
        width: W - MARGIN - 20.0,
        height: H - 80.0,
        x: (0.0, 1.0),
        y: (lo, hi),
    };
    frame.draw(&mut s, &format!("P({})", model.states()[0]), "value", &top_label(surface));
    let mut nodes: Vec<usize> = (0..lat.len()).collect();
    nodes.sort_by(|&a, &b| lat.node(a)[0].total_cmp(&lat.node(b)[0]));
    for a in 0..na {
        let pts: Vec<(f64, f64)> = nodes.iter().map(|&n| (frame.px(lat.node(n)[0]), frame.py(top.at(n, a)))).collect();
        polyline(&mut s, &pts, color(a));
        let ly = 40.0 + 18.0 * a as f64;
        let _ =
            writeln!(s, r#"<rect x="{}" y="{:.1}" width="12" height="12" fill="{}"/>"#, W + 4.0, ly - 10.0, color(a));
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.1}">policy {}</text>"#, W + 20.0, escape(&model.policies()[a]));
    }
    s.push_str("</svg>\n");
    s
}

/// Blue (low) to yellow (high).
fn ramp(f: f64) -> String {
    let f = f.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * f) as u8;
    let g = (60.0 + 160.0 * f) as u8;
    let b = (160.0 - 130.0 * f) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn values_ternary(surface: &ValueSurface<f64>) -> String {
    let model = surface.model();
    let lat = surface.lattice();
    let top = surface.top();
    let na = model.n_policies();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in top.values() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-12);
    let side = 260.0;
    let panel = side + 40.0;
    let width = panel * na as f64 + 20.0;
    let mut s = open(width, side + 140.0);
    let title = format!("{} (range {lo:.4} to {hi:.4})", top_label(surface));
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle">{}</text>"#, width / 2.0, escape(&title));
    let r = node_radius(lat, side);
    for a in 0..na {
        let ox = 20.0 + panel * a as f64;
        let oy = 50.0;
        for node in 0..lat.len() {
            let (x, y) = ternary(lat.node(node), ox, oy, side);
            let fill = ramp((top.at(node, a) - lo) / span);
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="{r:.2}" fill="{fill}"/>"#);
        }
        triangle(&mut s, ox, oy, side, model.states());
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">policy {}</text>"#,
            ox + side / 2.0,
            oy + side * 0.87 + 36.0,
            escape(&model.policies()[a])
        );
    }
    s.push_str("</svg>\n");
    s
}
