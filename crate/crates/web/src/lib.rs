//! Browser demo bindings. Every entry point takes the `[metric]` table of a
//! run configuration as TOML text, so the page can switch families without
//! a dedicated API per family.

use finsler_reeb::app::{self, Task};
use finsler_reeb::config::{parse_str, RunConfig};
use finsler_reeb::flow::{self, FlowOptions, UnitCotangentState};
use finsler_reeb::metric::V2;
use std::f64::consts::PI;
use wasm_bindgen::prelude::*;

fn config(metric_toml: &str) -> Result<RunConfig, JsError> {
    parse_str(metric_toml).map_err(|e| JsError::new(&e.to_string()))
}

fn js(e: finsler_reeb::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Chart rectangle `[lo1, lo2, hi1, hi2]`.
#[wasm_bindgen]
pub fn chart_bounds(metric_toml: &str) -> Result<Vec<f64>, JsError> {
    let m = config(metric_toml)?.build_metric().map_err(js)?;
    let c = m.atlas.chart();
    Ok(vec![c.lo[0], c.lo[1], c.hi[0], c.hi[1]])
}

/// Unit circle of the norm and of its dual at `q`, interleaved as
/// `x0, y0, x1, y1, ...`: the first `n` points lie on `{F = 1}`, the next
/// `n` are their Legendre images on `{F* = 1}`.
#[wasm_bindgen]
pub fn indicatrix(metric_toml: &str, q1: f64, q2: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let m = config(metric_toml)?.build_metric().map_err(js)?;
    let q = [q1, q2];
    let mut unit = Vec::with_capacity(2 * n);
    let mut dual = Vec::with_capacity(2 * n);
    for k in 0..n {
        let t = 2.0 * PI * k as f64 / n as f64;
        let d = V2::new(t.cos(), t.sin());
        let v = d / m.eval(q, d).map_err(js)?;
        let p = m.legendre(q, v).map_err(js)?;
        unit.extend([v.x, v.y]);
        dual.extend([p.x, p.y]);
    }
    unit.extend(dual);
    Ok(unit)
}

/// Chart polyline `x0, y0, x1, y1, ...` of the Reeb trajectory leaving `q`
/// in the direction `v`. Coordinates are not wrapped.
#[wasm_bindgen]
pub fn trajectory(metric_toml: &str, q1: f64, q2: f64, v1: f64, v2: f64, duration: f64) -> Result<Vec<f64>, JsError> {
    let cfg = config(metric_toml)?;
    let m = cfg.build_metric().map_err(js)?;
    let s = UnitCotangentState::from_tangent(&m, [q1, q2], [v1, v2]).map_err(js)?;
    let opts = FlowOptions {
        ode: cfg.ode(),
        samples: 400,
    };
    let traj = flow::integrate(&m, &s, duration, &opts).map_err(js)?;
    Ok(traj.samples.iter().flat_map(|(_, s)| s.q).collect())
}

/// Classified closed-orbit catalog as JSON, the same document the command
/// line tool writes to `catalog.json`.
#[wasm_bindgen]
pub fn classify_orbits(metric_toml: &str) -> Result<String, JsError> {
    let cfg = config(metric_toml)?;
    let out = app::run(&cfg, Task::OrbitsClassify).map_err(js)?;
    Ok(out.artifact("catalog.json").unwrap_or_default().to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    const KATOK: &str = "[metric]\nfamily = \"katok\"\nrho = 0.5\n";

    #[test]
    fn euclidean_indicatrix_is_self_dual() {
        let pts = indicatrix("[metric]\nfamily = \"euclidean_torus\"\n", 0.2, 0.3, 16).unwrap();
        assert_eq!(pts.len(), 64);
        for k in 0..16 {
            assert!((pts[2 * k] - pts[32 + 2 * k]).abs() < 1e-12);
            assert!((pts[2 * k].hypot(pts[2 * k + 1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_line_on_flat_torus() {
        let pts = trajectory("[metric]\nfamily = \"euclidean_torus\"\n", 0.0, 0.0, 3.0, 4.0, 5.0).unwrap();
        let n = pts.len();
        assert!((pts[n - 2] - 3.0).abs() < 1e-9 && (pts[n - 1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn katok_catalog_has_both_equator_directions() {
        let json = classify_orbits(KATOK).unwrap();
        assert!(json.contains("\"period\": 4.18879020478"));
        assert!(json.contains("\"period\": 1.25663706143"));
        assert_eq!(chart_bounds(KATOK).unwrap().len(), 4);
    }
}
