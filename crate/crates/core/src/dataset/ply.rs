//! ASCII PLY with per-vertex position and class colour.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::ColorMap;
use crate::error::{Error, Result};
use crate::geom::SemanticCloud;

/// Writes `cloud` with each vertex coloured by its most likely class.
/// Coordinates are written as doubles in shortest round-trip form.
pub fn write_ply(cloud: &SemanticCloud, out: &mut impl Write, colors: &ColorMap) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {axis}")?;
    }
    for channel in ["red", "green", "blue"] {
        writeln!(out, "property uchar {channel}")?;
    }
    writeln!(out, "end_header")?;
    for (p, label) in cloud.positions().iter().zip(cloud.labels()) {
        let [r, g, b] = colors.color(label);
        writeln!(out, "{} {} {} {r} {g} {b}", p[0], p[1], p[2])?;
    }
    Ok(())
}

pub fn export_ply(cloud: &SemanticCloud, path: &Path, colors: &ColorMap) -> Result<()> {
    if colors.len() < cloud.class_count() {
        return Err(Error::invalid(format!(
            "colour map has {} entries for {} classes",
            colors.len(),
            cloud.class_count()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_ply(cloud, &mut out, colors)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads an ASCII PLY with `x y z red green blue` vertex properties (any
/// order, other properties ignored) and maps colours back to classes.
pub fn read_ply(path: &Path, colors: &ColorMap) -> Result<SemanticCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, colors).map_err(|m| Error::format(path, m))
}

fn parse_ply(text: &str, colors: &ColorMap) -> std::result::Result<SemanticCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply signature".into());
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or("header not terminated")?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] if *fmt != "ascii" => return Err(format!("unsupported format {fmt}")),
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| format!("bad vertex count {n}"))?);
                }
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            _ => {}
        }
    }
    let count = count.ok_or("no vertex element")?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| format!("missing vertex property {name}"))
    };
    let idx = [col("x")?, col("y")?, col("z")?, col("red")?, col("green")?, col("blue")?];
    let mut positions = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let line = lines.next().ok_or_else(|| format!("expected {count} vertices, found {k}"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != props.len() {
            return Err(format!("vertex {k}: expected {} fields", props.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            fields[i].parse().map_err(|_| format!("vertex {k}: bad number {}", fields[i]))
        };
        let byte = |i: usize| -> std::result::Result<u8, String> {
            fields[i].parse().map_err(|_| format!("vertex {k}: bad colour {}", fields[i]))
        };
        positions.push([num(idx[0])?, num(idx[1])?, num(idx[2])?]);
        let rgb = [byte(idx[3])?, byte(idx[4])?, byte(idx[5])?];
        labels.push(
            colors
                .class_of(rgb)
                .ok_or_else(|| format!("vertex {k}: colour {rgb:?} is not in the class map"))?,
        );
    }
    SemanticCloud::from_labels(colors.len(), positions, &labels).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::colormap::SYNTH_CAR;

    #[test]
    fn car_vertex_line() {
        let cloud = SemanticCloud::from_labels(6, vec![[1.5, -2.0, 0.25]], &[SYNTH_CAR]).unwrap();
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf, &ColorMap::synthetic()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 1\n"));
        assert!(text.trim_end().ends_with("1.5 -2 0.25 100 150 245"));
    }

    #[test]
    fn empty_cloud_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ply");
        export_ply(&SemanticCloud::empty(6).unwrap(), &path, &ColorMap::synthetic()).unwrap();
        let back = read_ply(&path, &ColorMap::synthetic()).unwrap();
        assert!(back.is_empty());
        assert!(std::fs::read_to_string(&path).unwrap().contains("element vertex 0"));
    }

    #[test]
    fn unknown_colour_is_a_format_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
                    end_header\n0 0 0 1 2 3\n";
        assert!(parse_ply(text, &ColorMap::synthetic()).unwrap_err().contains("colour"));
    }
}
