//! Deterministic number formatting and small SVG helpers shared by all
//! artifact writers.

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use std::fmt::Write;

/// 17 significant digits, scientific notation. Round-trips every f64.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        // normalise negative zero so reruns stay byte-identical
        return format!("{:.16e}", 0.0);
    }
    format!("{x:.16e}")
}

/// Pretty JSON with every float written by [`num`].
pub fn json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("artifact serializes");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

struct FixedFloats<'a>(PrettyFormatter<'a>);

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(num(value).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        w.write_all(num(value as f64).as_bytes())
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn csv_row(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

/// A static SVG drawing of chart-space polylines inside the chart box.
pub struct Svg {
    lo: [f64; 2],
    hi: [f64; 2],
    size: f64,
    body: String,
}

impl Svg {
    pub fn new(lo: [f64; 2], hi: [f64; 2], size: f64) -> Self {
        Svg {
            lo,
            hi,
            size,
            body: String::new(),
        }
    }

    fn map(&self, q: [f64; 2]) -> (f64, f64) {
        let x = (q[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.size;
        let y = (1.0 - (q[1] - self.lo[1]) / (self.hi[1] - self.lo[1])) * self.size;
        (x, y)
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str) {
        if pts.len() < 2 {
            return;
        }
        let mut s = String::new();
        for p in pts {
            let (x, y) = self.map(*p);
            let _ = write!(s, "{x:.3},{y:.3} ");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{stroke}" stroke-width="1" points="{}"/>"#,
            s.trim_end()
        );
    }

    pub fn text(&mut self, q: [f64; 2], label: &str) {
        let (x, y) = self.map(q);
        let _ = writeln!(self.body, r#"<text x="{x:.3}" y="{y:.3}" font-size="10">{label}</text>"#);
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{w:.3}" height="{h:.3}" fill="{fill}"/>"#
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n<rect width=\"{s}\" height=\"{s}\" fill=\"white\" stroke=\"black\"/>\n{}</svg>\n",
            self.body,
            s = self.size
        )
    }
}

/// Splits a path on a periodic chart wherever it wraps, reducing each
/// piece into the fundamental domain.
pub fn wrap_segments(pts: &[[f64; 2]], lo: [f64; 2], period: [Option<f64>; 2]) -> Vec<Vec<[f64; 2]>> {
    let reduce = |q: [f64; 2]| {
        let mut r = q;
        for i in 0..2 {
            if let Some(p) = period[i] {
                r[i] = lo[i] + (q[i] - lo[i]).rem_euclid(p);
            }
        }
        r
    };
    let mut out: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut cur: Vec<[f64; 2]> = Vec::new();
    let mut last_cell = [i64::MIN; 2];
    for q in pts {
        let cell = [0, 1].map(|i| period[i].map(|p| ((q[i] - lo[i]) / p).floor() as i64).unwrap_or(0));
        if cell != last_cell && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        last_cell = cell;
        cur.push(reduce(*q));
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::f64::consts::PI] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(-0.0), num(0.0));
    }

    #[test]
    fn json_floats_fixed() {
        #[derive(Serialize)]
        struct S {
            x: f64,
            n: usize,
            v: Vec<f64>,
        }
        let s = json(&S { x: 0.1, n: 3, v: vec![1.0, -0.0] });
        assert!(s.contains("\"x\": 1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"n\": 3"));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
        assert_eq!(back["v"][1].as_f64(), Some(0.0));
    }

    #[test]
    fn wrapping_splits_paths() {
        let pts = [[0.8, 0.5], [0.9, 0.5], [1.1, 0.5], [1.2, 0.5]];
        let segs = wrap_segments(&pts, [0.0, 0.0], [Some(1.0), Some(1.0)]);
        assert_eq!(segs.len(), 2);
        assert!((segs[1][0][0] - 0.1).abs() < 1e-12);
    }
}
