//! Polar overlay plot of a predicted trace against its ground truth,
//! written as a standalone SVG.
//!
//! Ground truth draws in blue underneath, the prediction in orange on top.
//! Radial grid rings are labeled in hundredths of a millimetre (a ring at
//! 20 mm reads "2000"). Output bytes are a pure function of the two traces:
//! fixed canvas, fixed number formatting, no timestamps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::EvalError;
use crate::trace::{RadialTrace, TraceError};

const CANVAS: f64 = 640.0;
const CENTER: f64 = CANVAS / 2.0;
const PLOT_RADIUS_PX: f64 = 270.0;
const TRUTH_COLOR: &str = "#1f77b4";
const PRED_COLOR: &str = "#ff7f0e";

/// Ring spacing: the smallest nice step that covers the data in ≤ 5 rings.
fn ring_step_mm(r_max: f64) -> f64 {
    for step in [1.0, 2.0, 5.0, 10.0, 20.0, 50.0] {
        if r_max / step <= 5.0 {
            return step;
        }
    }
    50.0
}

fn path_data(trace: &RadialTrace, px_per_mm: f64) -> String {
    let mut d = String::with_capacity(trace.radii_mm().len() * 16);
    for (i, &r) in trace.radii_mm().iter().enumerate() {
        let theta = trace.angle_of(i);
        let x = CENTER + r * theta.cos() * px_per_mm;
        let y = CENTER - r * theta.sin() * px_per_mm;
        let _ = write!(d, "{}{x:.2} {y:.2}", if i == 0 { "M " } else { " L " });
    }
    d.push_str(" Z");
    d
}

/// Renders the overlay SVG for one prediction/truth pair. Both traces must
/// describe the same eye in the same angular frame.
pub fn plot_trace(pred: &RadialTrace, truth: &RadialTrace, path: &Path) -> Result<(), EvalError> {
    if pred.eye() != truth.eye() {
        return Err(EvalError::Trace(TraceError::EyeMismatch));
    }
    if pred.angle0_rad() != truth.angle0_rad() {
        return Err(EvalError::Trace(TraceError::AngleMismatch {
            a: pred.angle0_rad(),
            b: truth.angle0_rad(),
        }));
    }

    let r_max = pred
        .radii_mm()
        .iter()
        .chain(truth.radii_mm())
        .fold(0.0f64, |acc, &r| acc.max(r));
    let step = ring_step_mm(r_max);
    let n_rings = (r_max / step).ceil().max(1.0) as usize;
    let r_axis = step * n_rings as f64;
    let px_per_mm = PLOT_RADIUS_PX / r_axis;

    let mut svg = String::with_capacity(32 * 1024);
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS:.0}\" height=\"{CANVAS:.0}\" viewBox=\"0 0 {CANVAS:.0} {CANVAS:.0}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{CANVAS:.0}\" height=\"{CANVAS:.0}\" fill=\"white\"/>");

    // radial grid: rings with labels in hundredths of a mm, plus 30° spokes
    for k in 1..=n_rings {
        let r_px = step * k as f64 * px_per_mm;
        let _ = writeln!(
            svg,
            "<circle cx=\"{CENTER:.2}\" cy=\"{CENTER:.2}\" r=\"{r_px:.2}\" fill=\"none\" stroke=\"#cccccc\" stroke-width=\"1\"/>"
        );
        let label = (step * k as f64 * 100.0).round() as i64;
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#888888\">{label}</text>",
            CENTER + 4.0,
            CENTER - r_px - 4.0
        );
    }
    for s in 0..12 {
        let a = std::f64::consts::TAU * s as f64 / 12.0;
        let x = CENTER + PLOT_RADIUS_PX * a.cos();
        let y = CENTER - PLOT_RADIUS_PX * a.sin();
        let _ = writeln!(
            svg,
            "<line x1=\"{CENTER:.2}\" y1=\"{CENTER:.2}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#eeeeee\" stroke-width=\"1\"/>"
        );
    }

    let _ = writeln!(
        svg,
        "<path id=\"truth\" d=\"{}\" fill=\"none\" stroke=\"{TRUTH_COLOR}\" stroke-width=\"1.5\"/>",
        path_data(truth, px_per_mm)
    );
    let _ = writeln!(
        svg,
        "<path id=\"pred\" d=\"{}\" fill=\"none\" stroke=\"{PRED_COLOR}\" stroke-width=\"1.5\"/>",
        path_data(pred, px_per_mm)
    );

    // legend and scale note
    let _ = writeln!(
        svg,
        "<line x1=\"16\" y1=\"20\" x2=\"44\" y2=\"20\" stroke=\"{TRUTH_COLOR}\" stroke-width=\"2\"/>\
         <text x=\"50\" y=\"24\" font-family=\"sans-serif\" font-size=\"13\">ground truth</text>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"16\" y1=\"40\" x2=\"44\" y2=\"40\" stroke=\"{PRED_COLOR}\" stroke-width=\"2\"/>\
         <text x=\"50\" y=\"44\" font-family=\"sans-serif\" font-size=\"13\">prediction</text>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#555555\">radial grid labels in hundredths of a millimetre ({} {})</text>",
        CANVAS - 16.0,
        truth.eye().as_str(),
        "eye"
    );
    svg.push_str("</svg>\n");

    fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Eye, PointFlag, TRACE_POINTS};
    use nalgebra::Vector2;

    fn trace_of(radii: Vec<f64>) -> RadialTrace {
        RadialTrace::new(
            radii,
            0.0,
            Vector2::zeros(),
            Eye::Right,
            vec![PointFlag::Measured; TRACE_POINTS],
        )
        .unwrap()
    }

    fn extract_path(svg: &str, id: &str) -> Vec<(f64, f64)> {
        let tag = format!("id=\"{id}\" d=\"");
        let start = svg.find(&tag).expect("path present") + tag.len();
        let end = svg[start..].find('"').unwrap() + start;
        let d = &svg[start..end];
        let body = d.strip_prefix("M ").unwrap().strip_suffix(" Z").unwrap();
        body.split(" L ")
            .map(|pair| {
                let (x, y) = pair.split_once(' ').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn coincident_inputs_draw_two_identical_closed_curves() {
        let radii: Vec<f64> = (0..TRACE_POINTS)
            .map(|i| 20.0 + 2.0 * (std::f64::consts::TAU * i as f64 / 600.0).cos())
            .collect();
        let t = trace_of(radii);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlay.svg");
        plot_trace(&t, &t, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        let truth_pts = extract_path(&svg, "truth");
        let pred_pts = extract_path(&svg, "pred");
        assert_eq!(truth_pts.len(), TRACE_POINTS);
        assert_eq!(truth_pts, pred_pts);
        assert!(svg.contains(TRUTH_COLOR) && svg.contains(PRED_COLOR));
    }

    #[test]
    fn constant_radius_trace_renders_as_a_circle() {
        let t = trace_of(vec![20.0; TRACE_POINTS]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("circle.svg");
        plot_trace(&t, &t, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();

        // 20 mm span → 5 mm rings, outermost at 20 mm → 13.5 px per mm
        let expected_r_px = 20.0 * (PLOT_RADIUS_PX / 20.0);
        for (x, y) in extract_path(&svg, "pred") {
            let r = ((x - CENTER).powi(2) + (y - CENTER).powi(2)).sqrt();
            assert!((r - expected_r_px).abs() < 0.5, "point at radius {r}, want {expected_r_px}");
        }
        // ring labels count hundredths of a millimetre
        for label in [">500<", ">1000<", ">1500<", ">2000<"] {
            assert!(svg.contains(label), "missing ring label {label}");
        }
    }

    #[test]
    fn identical_inputs_give_byte_identical_files() {
        let radii: Vec<f64> =
            (0..TRACE_POINTS).map(|i| 18.0 + (i as f64 / 600.0) * 3.0).collect();
        let t = trace_of(radii.clone());
        let p = trace_of(radii.iter().map(|r| r + 0.4).collect());
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        plot_trace(&p, &t, &a).unwrap();
        plot_trace(&p, &t, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let t = trace_of(vec![20.0; TRACE_POINTS]);
        let other_eye = RadialTrace::new(
            vec![20.0; TRACE_POINTS],
            0.0,
            Vector2::zeros(),
            Eye::Left,
            vec![PointFlag::Measured; TRACE_POINTS],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.svg");
        assert!(plot_trace(&other_eye, &t, &out).is_err());
        let rotated = RadialTrace::new(
            vec![20.0; TRACE_POINTS],
            0.25,
            Vector2::zeros(),
            Eye::Right,
            vec![PointFlag::Measured; TRACE_POINTS],
        )
        .unwrap();
        assert!(plot_trace(&rotated, &t, &out).is_err());
    }
}
