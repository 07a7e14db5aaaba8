//! OTB-style sequence layout: `<root>/<sequence>/img/*.png|jpg`, a
//! `groundtruth_rect.txt` box file and an optional `attributes.txt`.
//!
//! Box files hold one `x,y,w,h` line per frame with 1-based coordinates,
//! comma-, tab- or space-separated. In memory boxes are 0-based.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const DETECTOR_FILE: &str = "detector_rect.txt";
pub const ATTRIBUTES_FILE: &str = "attributes.txt";
pub const IMAGE_DIR: &str = "img";

fn parse_box_line(line: &str) -> std::result::Result<BoundingBox, String> {
    let vals: Vec<f64> = line
        .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if vals.len() != 4 {
        return Err(format!("expected 4 values, found {}", vals.len()));
    }
    BoundingBox::new(vals[0] - 1.0, vals[1] - 1.0, vals[2], vals[3]).map_err(|e| e.to_string())
}

/// Reads every box line (converted to 0-based).
pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_box_line(l).map_err(|msg| Error::parse(path, format!("line {}: {msg}", i + 1))))
        .collect()
}

/// Reads the first box line only.
pub fn read_first_box(path: impl AsRef<Path>) -> Result<BoundingBox> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::parse(path, "no box lines"))?;
    parse_box_line(line).map_err(|msg| Error::parse(path, format!("line 1: {msg}")))
}

fn format_coord(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

/// Writes boxes as 1-based `x,y,w,h` lines. Integral values are written
/// without decimals.
pub fn write_boxes(path: impl AsRef<Path>, boxes: &[BoundingBox]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_coord(b.x + 1.0),
            format_coord(b.y + 1.0),
            format_coord(b.w),
            format_coord(b.h)
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Challenge tags from `attributes.txt`, empty when the file is absent.
pub fn read_attributes(seq_dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = seq_dir.as_ref().join(ATTRIBUTES_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .split(|c: char| c == ',' || c.is_whitespace())
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_uppercase)
        .collect())
}

/// Sorted frame image paths under `<seq_dir>/img`.
pub fn list_frames(seq_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = seq_dir.as_ref().join(IMAGE_DIR);
    let mut frames: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                .unwrap_or(false)
        })
        .collect();
    frames.sort();
    Ok(frames)
}

/// Sequence directories directly under `root` that contain an `img` folder.
pub fn list_sequences(root: impl AsRef<Path>) -> Result<Vec<(String, PathBuf)>> {
    let root = root.as_ref();
    let mut seqs: Vec<(String, PathBuf)> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(IMAGE_DIR).is_dir())
        .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
        .collect();
    seqs.sort();
    Ok(seqs)
}

/// File name for frame `index` (0-based) in the `%06d` scheme starting at 1.
pub fn frame_file_name(index: usize) -> String {
    format!("{:06}.png", index + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_separators_and_converts_to_zero_based() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.txt");
        fs::write(&p, "11,21,30,40\n5\t6\t7\t8\n\n1 1 2.5 3\n").unwrap();
        let boxes = read_boxes(&p).unwrap();
        assert_eq!(boxes[0].as_array(), [10., 20., 30., 40.]);
        assert_eq!(boxes[1].as_array(), [4., 5., 7., 8.]);
        assert_eq!(boxes[2].as_array(), [0., 0., 2.5, 3.]);
        assert_eq!(read_first_box(&p).unwrap(), boxes[0]);
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        let boxes = vec![
            BoundingBox::new(10., 20., 30., 40.).unwrap(),
            BoundingBox::new(1.25, 2.5, 3.125, 4.0).unwrap(),
        ];
        write_boxes(&p, &boxes).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().next(), Some("11,21,30,40"));
        assert_eq!(read_boxes(&p).unwrap(), boxes);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.txt");
        fs::write(&p, "1,1,5,5\n1,1,five,5\n").unwrap();
        let err = read_boxes(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        fs::write(&p, "1,1,0,5\n").unwrap();
        assert!(read_boxes(&p).is_err());
    }

    #[test]
    fn attributes_are_optional() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_attributes(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join(ATTRIBUTES_FILE), "SV, occ,MB\n").unwrap();
        assert_eq!(read_attributes(dir.path()).unwrap(), vec!["SV", "OCC", "MB"]);
    }
}
