//! Point clouds: loading from XYZ and ASCII PLY text, validation, and isotropic
//! normalization into the unit cube.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Color assigned to points whose source carries no color channels.
pub const DEFAULT_GRAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub xyz: [f64; 3],
    pub rgb: [f64; 3],
}

impl Point {
    pub fn new(xyz: [f64; 3], rgb: [f64; 3]) -> Self {
        Self { xyz, rgb }
    }

    pub fn gray(xyz: [f64; 3]) -> Self {
        Self::new(xyz, [DEFAULT_GRAY; 3])
    }

    /// The six channels in flattening order: x, y, z, r, g, b.
    pub fn channels(&self) -> [f64; 6] {
        let [x, y, z] = self.xyz;
        let [r, g, b] = self.rgb;
        [x, y, z, r, g, b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl AxisBounds {
    /// Tight axis-aligned box around `points`. `None` for an empty slice.
    pub fn of(points: &[Point]) -> Option<Self> {
        let first = points.first()?;
        let mut bounds = AxisBounds {
            min: first.xyz,
            max: first.xyz,
        };
        for p in &points[1..] {
            for a in 0..3 {
                bounds.min[a] = bounds.min[a].min(p.xyz[a]);
                bounds.max[a] = bounds.max[a].max(p.xyz[a]);
            }
        }
        Some(bounds)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn longest_extent(&self) -> f64 {
        (0..3).map(|a| self.extent(a)).fold(0.0, f64::max)
    }
}

/// An in-memory point cloud. Construction validates that the cloud is non-empty,
/// every coordinate is finite and every color channel lies in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    pub source_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, source_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        for (i, p) in points.iter().enumerate() {
            if !p.xyz.iter().chain(&p.rgb).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            if !p.rgb.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(Error::ColorOutOfRange(i));
            }
        }
        Ok(Self {
            points,
            source_id: source_id.into(),
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> AxisBounds {
        AxisBounds::of(&self.points).expect("point cloud is never empty")
    }

    /// Maps coordinates by `(p - min) / s` with `s` the longest axis extent, so the
    /// longest axis spans exactly [0, 1] and aspect ratio is kept. A cloud whose
    /// points all coincide collapses onto the cube center.
    pub fn normalize(&self) -> PointCloud {
        let bounds = self.bounds();
        let scale = bounds.longest_extent();
        let points = self
            .points
            .iter()
            .map(|p| {
                let xyz = if scale > 0.0 {
                    [0, 1, 2].map(|a| (p.xyz[a] - bounds.min[a]) / scale)
                } else {
                    [0.5; 3]
                };
                Point::new(xyz, p.rgb)
            })
            .collect();
        PointCloud {
            points,
            source_id: self.source_id.clone(),
        }
    }

    pub fn is_normalized(&self) -> bool {
        let b = self.bounds();
        let in_unit = b.min.iter().chain(&b.max).all(|v| (0.0..=1.0).contains(v));
        let touches = (0..3).any(|a| b.min[a] == 0.0 && b.max[a] == 1.0);
        let collapsed = b.min == [0.5; 3] && b.max == [0.5; 3];
        in_unit && (touches || collapsed)
    }
}

/// Loads XYZ or ASCII PLY, picking the parser from the file header.
pub fn load(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    if text.starts_with("ply") {
        parse_ply_ascii(&text, source_id(path))
    } else {
        parse_xyz(&text, source_id(path))
    }
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_xyz(&read_text(path)?, source_id(path))
}

pub fn load_ply_ascii(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_ply_ascii(&read_text(path)?, source_id(path))
}

fn source_id(path: &Path) -> String {
    path.display().to_string()
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Binary PLY bodies are not UTF-8; report the format, not an encoding error.
    if bytes.starts_with(b"ply") {
        if let Some(line) = bytes.split(|&b| b == b'\n').find(|l| l.starts_with(b"format")) {
            let line = String::from_utf8_lossy(line);
            if !line.split_whitespace().any(|t| t == "ascii") {
                return Err(Error::UnsupportedFormat(format!("PLY {}", line.trim())));
            }
        }
    }
    String::from_utf8(bytes).map_err(|_| Error::UnsupportedFormat("input is not UTF-8 text".into()))
}

/// One point per line, 3 or 6 whitespace-separated numbers. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_xyz(text: &str, source_id: impl Into<String>) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        let point = match values[..] {
            [x, y, z] => Point::gray([x, y, z]),
            [x, y, z, r, g, b] => Point::new([x, y, z], [r, g, b]),
            _ => {
                return Err(Error::parse(
                    line_no,
                    format!("expected 3 or 6 columns, found {}", values.len()),
                ))
            }
        };
        check_point(&point, line_no)?;
        points.push(point);
    }
    PointCloud::new(points, source_id)
}

fn check_point(p: &Point, line_no: usize) -> Result<()> {
    if !p.xyz.iter().chain(&p.rgb).all(|v| v.is_finite()) {
        return Err(Error::parse(line_no, "non-finite value"));
    }
    if !p.rgb.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::parse(line_no, "color channel outside [0, 1]"));
    }
    Ok(())
}

/// Writes six columns per point. Values use the shortest representation that parses
/// back to the same `f64`, so `parse_xyz` recovers the cloud exactly.
pub fn write_xyz(cloud: &PointCloud, mut out: impl Write) -> std::io::Result<()> {
    for p in cloud.points() {
        let [x, y, z, r, g, b] = p.channels();
        writeln!(out, "{x} {y} {z} {r} {g} {b}")?;
    }
    Ok(())
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

#[derive(Debug)]
struct PlyProperty {
    name: String,
    integer: bool,
    list: bool,
}

fn ply_type_is_integer(ty: &str) -> Option<bool> {
    match ty {
        "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8" | "int16"
        | "uint16" | "int32" | "uint32" => Some(true),
        "float" | "double" | "float32" | "float64" => Some(false),
        _ => None,
    }
}

pub fn parse_ply_ascii(text: &str, source_id: impl Into<String>) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(1, "missing 'ply' magic")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(0, "header ended without end_header"))?;
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                if *fmt != "ascii" {
                    return Err(Error::UnsupportedFormat(format!("PLY format {fmt}")));
                }
                saw_format = true;
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(line_no, "bad element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _count_ty, item_ty, name] => {
                let integer = ply_type_is_integer(item_ty)
                    .ok_or_else(|| Error::parse(line_no, format!("unknown type {item_ty}")))?;
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line_no, "property before element"))?;
                element.properties.push(PlyProperty {
                    name: name.to_string(),
                    integer,
                    list: true,
                });
            }
            ["property", ty, name] => {
                let integer = ply_type_is_integer(ty)
                    .ok_or_else(|| Error::parse(line_no, format!("unknown type {ty}")))?;
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line_no, "property before element"))?;
                element.properties.push(PlyProperty {
                    name: name.to_string(),
                    integer,
                    list: false,
                });
            }
            _ => return Err(Error::parse(line_no, format!("unrecognized header line '{line}'"))),
        }
    }
    if !saw_format {
        return Err(Error::parse(0, "header has no format line"));
    }

    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(0, "no vertex element"))?;
    let column = |name: &str| {
        elements[vertex]
            .properties
            .iter()
            .position(|p| p.name == name && !p.list)
    };
    let (Some(cx), Some(cy), Some(cz)) = (column("x"), column("y"), column("z")) else {
        return Err(Error::parse(0, "vertex element lacks x, y, z"));
    };
    if elements[vertex].properties.iter().any(|p| p.list) {
        return Err(Error::UnsupportedFormat("list property on vertex element".into()));
    }
    let color = match (column("red"), column("green"), column("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err(Error::parse(0, "partial color properties")),
    };

    let mut points = Vec::with_capacity(elements[vertex].count);
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    for (e_idx, element) in elements.iter().enumerate() {
        for _ in 0..element.count {
            let (line_no, line) = body.next().ok_or_else(|| {
                Error::parse(
                    0,
                    format!("element '{}' declares {} entries but body ended", element.name, element.count),
                )
            })?;
            if e_idx != vertex {
                continue;
            }
            let values = line
                .split_ascii_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(line_no, e.to_string()))?;
            if values.len() != element.properties.len() {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} values, found {}", element.properties.len(), values.len()),
                ));
            }
            let rgb = match color {
                Some(cols) => cols.map(|c| {
                    if element.properties[c].integer {
                        values[c] / 255.0
                    } else {
                        values[c]
                    }
                }),
                None => [DEFAULT_GRAY; 3],
            };
            let point = Point::new([values[cx], values[cy], values[cz]], rgb);
            check_point(&point, line_no)?;
            points.push(point);
        }
    }
    if let Some((line_no, _)) = body.next() {
        return Err(Error::parse(line_no, "body has more lines than the header declares"));
    }
    PointCloud::new(points, source_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xyz(text: &str) -> Result<PointCloud> {
        parse_xyz(text, "test")
    }

    #[test]
    fn xyz_three_columns_get_gray() {
        let c = xyz("0 0 0\n1 1 1\n").unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.points().iter().all(|p| p.rgb == [0.5; 3]));
        assert_eq!(c.points()[1].xyz, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn xyz_six_columns_map_color() {
        let c = xyz("0 0 0 1 0 0").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.points()[0].rgb, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn xyz_wrong_column_count() {
        assert!(matches!(xyz("0 0"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(xyz("# c\n0 0 0\n1 2 3 4"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn xyz_comments_tabs_and_empty() {
        let c = xyz("# header\n\n0\t0  0\n").unwrap();
        assert_eq!(c.len(), 1);
        assert!(matches!(xyz("# nothing\n\n"), Err(Error::EmptyCloud)));
    }

    #[test]
    fn xyz_rejects_nan_and_bad_color() {
        assert!(matches!(xyz("nan 0 0"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(xyz("0 0 0 2 0 0"), Err(Error::Parse { line: 1, .. })));
    }

    const PLY_RED: &str = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n\
property float y\nproperty float z\nproperty uchar red\nproperty uchar green\n\
property uchar blue\nend_header\n0 0 0 255 0 0\n";

    #[test]
    fn ply_uchar_color_scaled() {
        let c = parse_ply_ascii(PLY_RED, "t").unwrap();
        assert_eq!(c.points()[0].rgb, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn ply_count_mismatch() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
property float z\nend_header\n0 0 0\n1 1 1\n";
        assert!(matches!(parse_ply_ascii(text, "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn ply_without_color_is_gray() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n\
property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";
        let c = parse_ply_ascii(text, "t").unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.points().iter().all(|p| p.rgb == [0.5; 3]));
    }

    #[test]
    fn ply_skips_face_element() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
0 0 0\n1 0 0\n2 0 1\n";
        assert_eq!(parse_ply_ascii(text, "t").unwrap().len(), 2);
    }

    #[test]
    fn ply_binary_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        assert!(matches!(parse_ply_ascii(text, "t"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn ply_binary_file_rejected_before_utf8_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n\
property float x\nproperty float y\nproperty float z\nend_header\n"
            .to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, 0x80, 0x81, 0, 0, 0, 0, 0, 0, 0, 0]);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn normalize_scales_by_longest_axis() {
        let c = xyz("0 0 0\n2 1 1\n").unwrap().normalize();
        assert_eq!(c.points()[0].xyz, [0.0, 0.0, 0.0]);
        assert_eq!(c.points()[1].xyz, [1.0, 0.5, 0.5]);
        assert!(c.is_normalized());
    }

    #[test]
    fn normalize_coincident_goes_to_center() {
        let c = xyz("7 7 7\n7 7 7 0.1 0.2 0.3").unwrap().normalize();
        assert!(c.points().iter().all(|p| p.xyz == [0.5; 3]));
        assert_eq!(c.points()[1].rgb, [0.1, 0.2, 0.3]);
        assert!(c.is_normalized());
    }

    #[test]
    fn normalize_unit_cloud_unchanged() {
        // Every axis minimum at 0 and x spanning [0, 1].
        let c = xyz("0 0.25 0.5\n1 0.75 0\n0.5 0 0.5").unwrap();
        assert_eq!(c.normalize(), c);
        // Any per-axis minimum above 0 is shifted down.
        let lifted = xyz("0 0.25 0.5\n1 0.75 0.5").unwrap().normalize();
        assert_eq!(lifted.points()[0].xyz, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load("/definitely/not/here.xyz"), Err(Error::Io { .. })));
    }
}
