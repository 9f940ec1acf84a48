//! Plain-text trace files.
//!
//! Layout (UTF-8, LF line endings):
//!
//! ```text
//! trace v1
//! eye right
//! angle0_urad 0
//! 2341            <- radius of point 0 in hundredths of a millimetre
//! ...             <- 600 radius lines in total
//! ```
//!
//! Angle 0 points along +x of the frame plane (image right), angles grow
//! counterclockwise as seen from the cameras. Radii are quantized to
//! hundredths of a millimetre; the in-plane center and per-point flags are
//! not part of the interchange format.

use std::path::Path;

use nalgebra::Vector2;

use super::{Eye, PointFlag, RadialTrace, TraceError, TRACE_POINTS};

pub fn format_trace(trace: &RadialTrace) -> String {
    let mut out = String::with_capacity(16 * TRACE_POINTS);
    out.push_str("trace v1\n");
    out.push_str("eye ");
    out.push_str(trace.eye().as_str());
    out.push('\n');
    let urad = (trace.angle0_rad() * 1e6).round() as i64;
    out.push_str(&format!("angle0_urad {urad}\n"));
    for &r in trace.radii_mm() {
        out.push_str(&format!("{}\n", (r * 100.0).round() as i64));
    }
    out
}

pub fn parse_trace(text: &str) -> Result<RadialTrace, TraceError> {
    let err = |line: usize, msg: String| TraceError::ParseError { line, msg };
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    if header != "trace v1" {
        return Err(err(1, format!("expected \"trace v1\", got {header:?}")));
    }
    let (_, eye_line) = lines.next().ok_or_else(|| err(2, "missing eye line".into()))?;
    let eye: Eye = eye_line
        .strip_prefix("eye ")
        .ok_or_else(|| err(2, format!("expected \"eye left|right\", got {eye_line:?}")))?
        .parse()
        .map_err(|e| err(2, e))?;
    let (_, angle_line) = lines.next().ok_or_else(|| err(3, "missing angle line".into()))?;
    let urad: i64 = angle_line
        .strip_prefix("angle0_urad ")
        .ok_or_else(|| err(3, format!("expected \"angle0_urad <int>\", got {angle_line:?}")))?
        .parse()
        .map_err(|_| err(3, format!("bad integer in {angle_line:?}")))?;

    let mut radii = Vec::with_capacity(TRACE_POINTS);
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let hundredths: i64 = line
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("bad radius integer {line:?}")))?;
        if hundredths <= 0 || hundredths >= 10_000 {
            return Err(err(line_no, format!("radius {hundredths} outside (0, 10000) hundredths of mm")));
        }
        radii.push(hundredths as f64 / 100.0);
    }
    if radii.len() != TRACE_POINTS {
        return Err(TraceError::CountMismatch { got: radii.len() });
    }
    RadialTrace::new(
        radii,
        urad as f64 * 1e-6,
        Vector2::zeros(),
        eye,
        vec![PointFlag::Measured; TRACE_POINTS],
    )
}

pub fn write_trace(trace: &RadialTrace, path: &Path) -> Result<(), TraceError> {
    std::fs::write(path, format_trace(trace))?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<RadialTrace, TraceError> {
    parse_trace(&std::fs::read_to_string(path)?)
}
