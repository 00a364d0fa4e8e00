//! Minimal SVG writer with fixed number formatting.

use std::fmt::Write;

pub const RAMP_LOW: [u8; 3] = [0x1E, 0x88, 0xE5];
pub const RAMP_HIGH: [u8; 3] = [0xFF, 0x0D, 0x57];
pub const MISSING_COLOR: &str = "#BBBBBB";
pub const INK: &str = "#333333";
pub const GRID: &str = "#E6E6E6";
pub const BAR_COLOR: &str = "#1E88E5";
pub const FONT: &str = "Helvetica, Arial, sans-serif";

/// Linear blend of the two ramp endpoints at `t` in `[0, 1]`.
pub fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let c: Vec<u8> = RAMP_LOW
        .iter()
        .zip(RAMP_HIGH)
        .map(|(a, b)| (f64::from(*a) + (f64::from(b) - f64::from(*a)) * t).round() as u8)
        .collect();
    format!("#{:02X}{:02X}{:02X}", c[0], c[1], c[2])
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Coordinates are written with two decimals.
pub fn num(v: f64) -> String {
    let r = format!("{v:.2}");
    if r == "-0.00" {
        "0.00".into()
    } else {
        r
    }
}

/// "Nice" tick positions (steps of 1, 2 or 5 times a power of ten) covering
/// `[lo, hi]` with about `target` intervals.
pub fn ticks(lo: f64, hi: f64, target: usize) -> (Vec<f64>, usize) {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return (vec![lo], 0);
    }
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub d0: f64,
    pub d1: f64,
    pub r0: f64,
    pub r1: f64,
}

impl Scale {
    /// Maps `[min, max]` of `values` (padded by 5%) onto `[r0, r1]`.
    pub fn fit(values: impl IntoIterator<Item = f64>, r0: f64, r1: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo <= 0.0 {
            (lo, hi) = (lo - 1.0, hi + 1.0);
        }
        let pad = (hi - lo) * 0.05;
        Scale {
            d0: lo - pad,
            d1: hi + pad,
            r0,
            r1,
        }
    }

    pub fn map(&self, v: f64) -> f64 {
        self.r0 + (v - self.d0) / (self.d1 - self.d0) * (self.r1 - self.r0)
    }
}

pub struct Svg {
    pub width: f64,
    pub height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: u32, height: u32) -> Self {
        Svg {
            width: f64::from(width),
            height: f64::from(height),
            body: String::new(),
        }
    }

    pub fn raw(&mut self, s: &str) {
        self.body.push_str(s);
        self.body.push('\n');
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="1"/>"#,
            num(x1),
            num(y1),
            num(x2),
            num(y2)
        );
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="{size}" fill="{INK}">{}</text>"#,
            num(x),
            num(y),
            escape(s)
        );
    }

    pub fn vtext(&mut self, x: f64, y: f64, size: u32, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="{size}" fill="{INK}" transform="rotate(-90 {} {})">{}</text>"#,
            num(x),
            num(y),
            num(x),
            num(y),
            escape(s)
        );
    }

    pub fn point(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle class="pt" cx="{}" cy="{}" r="{}" fill="{fill}" fill-opacity="0.8"/>"#,
            num(x),
            num(y),
            num(r)
        );
    }

    pub fn bar(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            num(x),
            num(y),
            num(w.max(0.0)),
            num(h.max(0.0))
        );
    }

    /// Axis lines, ticks and labels for the plot area `[x0, y0, x1, y1]`
    /// (pixel coordinates, `y0` at the top).
    pub fn axes(&mut self, xs: &Scale, ys: &Scale, area: [f64; 4], xlabel: &str, ylabel: &str) {
        self.x_axis(xs, area, xlabel);
        let [x0, y0, x1, y1] = area;
        let (yt, yd) = ticks(ys.d0, ys.d1, 6);
        for t in yt {
            let py = ys.map(t);
            self.line(x0, py, x1, py, GRID, "grid");
            self.line(x0 - 4.0, py, x0, py, INK, "tick");
            self.text(x0 - 6.0, py + 3.0, "end", 10, &format!("{t:.yd$}"));
        }
        self.line(x0, y0, x0, y1, INK, "axis");
        self.vtext(x0 - 42.0, (y0 + y1) / 2.0, 12, ylabel);
    }

    pub fn x_axis(&mut self, xs: &Scale, area: [f64; 4], xlabel: &str) {
        let [x0, y0, x1, y1] = area;
        let (xt, xd) = ticks(xs.d0, xs.d1, 6);
        for t in xt {
            let px = xs.map(t);
            self.line(px, y0, px, y1, GRID, "grid");
            self.line(px, y1, px, y1 + 4.0, INK, "tick");
            self.text(px, y1 + 16.0, "middle", 10, &format!("{t:.xd$}"));
        }
        self.line(x0, y1, x1, y1, INK, "axis");
        self.text((x0 + x1) / 2.0, y1 + 34.0, "middle", 12, xlabel);
    }

    /// Vertical color bar for the feature-value ramp at the right edge.
    pub fn ramp_legend(&mut self, x: f64, y0: f64, y1: f64, label: &str) {
        let _ = writeln!(
            self.body,
            r##"<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"##,
            ramp(0.0),
            ramp(1.0)
        );
        let _ = writeln!(
            self.body,
            r#"<rect class="legend" x="{}" y="{}" width="8" height="{}" fill="url(#ramp)"/>"#,
            num(x),
            num(y0),
            num(y1 - y0)
        );
        self.text(x + 12.0, y0 + 8.0, "start", 10, "high");
        self.text(x + 12.0, y1, "start", 10, "low");
        self.vtext(x + 30.0, (y0 + y1) / 2.0, 11, label);
    }

    pub fn finish(self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="{FONT}">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(out, "<title>{}</title>", escape(title));
        let _ = writeln!(
            out,
            r##"<rect x="0" y="0" width="{}" height="{}" fill="#FFFFFF"/>"##,
            self.width, self.height
        );
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#1E88E5");
        assert_eq!(ramp(1.0), "#FF0D57");
        assert_eq!(ramp(f64::NAN), ramp(0.5));
    }

    #[test]
    fn nice_ticks() {
        assert_eq!(ticks(0.0, 10.0, 5), (vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0], 0));
        let (t, d) = ticks(-0.13, 0.41, 6);
        assert_eq!(d, 1);
        assert_eq!(t.len(), 6);
        assert_eq!(t.first().copied(), Some(-0.1));
        let (t, _) = ticks(-0.13, 0.41, 5);
        assert_eq!(t.first().copied(), Some(0.0));
        assert_eq!(ticks(3.0, 3.0, 5).0, vec![3.0]);
    }

    #[test]
    fn scale_handles_constant_input() {
        let s = Scale::fit([2.0, 2.0], 0.0, 100.0);
        assert!((s.map(2.0) - 50.0).abs() < 1e-9);
    }
}
