use std::fmt::Write as _;
use std::path::Path;

use diffreg_core::geometry::{Descriptors, PointCloud, Vec3};

use crate::error::{CliError, Result};

/// ASCII PLY with `x y z` and optional descriptor properties `d0..d{k-1}`.
pub fn to_ply_string(cloud: &PointCloud) -> String {
    let dim = cloud.descriptor_dim().unwrap_or(0);
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).unwrap();
    for axis in ["x", "y", "z"] {
        writeln!(s, "property double {axis}").unwrap();
    }
    for k in 0..dim {
        writeln!(s, "property double d{k}").unwrap();
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        write!(s, "{} {} {}", p.x, p.y, p.z).unwrap();
        if let Some(d) = cloud.descriptors() {
            for v in d.row(i) {
                write!(s, " {v}").unwrap();
            }
        }
        s.push('\n');
    }
    s
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Parses an ASCII PLY. Vertex properties other than `x, y, z, d<k>` are
/// ignored; elements other than `vertex` are skipped.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let bad = |reason: &str| CliError::format(path, reason);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing `ply` magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    loop {
        let line = lines.next().ok_or_else(|| bad("header ends without `end_header`"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", ..] => return Err(bad("only ascii PLY is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element"))?
                .properties
                .push(String::new()),
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element"))?
                .properties
                .push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(bad(&format!("unrecognised header line `{line}`"))),
        }
    }
    if !ascii {
        return Err(bad("missing format line"));
    }
    let mut points = Vec::new();
    let mut descriptors = Vec::new();
    let mut dim = 0;
    let mut found = false;
    for element in &elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                lines.next().ok_or_else(|| bad("truncated element data"))?;
            }
            continue;
        }
        found = true;
        let col = |name: &str| element.properties.iter().position(|p| p == name);
        let xyz = [col("x"), col("y"), col("z")];
        let xyz: Vec<usize> = xyz.into_iter().collect::<Option<_>>().ok_or_else(|| bad("vertex lacks x, y or z"))?;
        let desc: Vec<usize> = (0..).map_while(|k| col(&format!("d{k}"))).collect();
        dim = desc.len();
        for _ in 0..element.count {
            let line = lines.next().ok_or_else(|| bad("truncated vertex data"))?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("non-numeric vertex value"))?;
            if values.len() != element.properties.len() {
                return Err(bad("vertex row has the wrong number of values"));
            }
            points.push(Vec3::new(values[xyz[0]], values[xyz[1]], values[xyz[2]]));
            descriptors.extend(desc.iter().map(|&c| values[c]));
        }
    }
    if !found {
        return Err(bad("no vertex element"));
    }
    let cloud = PointCloud::new(points)?;
    if dim == 0 {
        return Ok(cloud);
    }
    Ok(cloud.with_descriptors(Descriptors::from_flat(dim, descriptors)?)?)
}

/// Whitespace-delimited `x y z` rows; further columns become descriptors.
/// Blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut descriptors = Vec::new();
    let mut width = None;
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::format(path, format!("non-numeric value in `{line}`")))?;
        if values.len() < 3 || width.is_some_and(|w| w != values.len()) {
            return Err(CliError::format(path, "rows must share a width of at least 3"));
        }
        width = Some(values.len());
        points.push(Vec3::new(values[0], values[1], values[2]));
        descriptors.extend_from_slice(&values[3..]);
    }
    let cloud = PointCloud::new(points)?;
    match width {
        Some(w) if w > 3 => Ok(cloud.with_descriptors(Descriptors::from_flat(w - 3, descriptors)?)?),
        _ => Ok(cloud),
    }
}

pub fn to_xyz_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        write!(s, "{} {} {}", p.x, p.y, p.z).unwrap();
        if let Some(d) = cloud.descriptors() {
            for v in d.row(i) {
                write!(s, " {v}").unwrap();
            }
        }
        s.push('\n');
    }
    s
}

/// Reads a cloud as PLY or XYZ depending on the file extension.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = super::read_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") | Some("txt") => parse_xyz(&text, path),
        _ => parse_ply(&text, path),
    }
}
