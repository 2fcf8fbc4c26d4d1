//! YOLO-seg label files: one instance per line, `<class> <x1> <y1> ... <xn> <yn>`
//! in unit coordinates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::FormatError;
use crate::geometry::{Point, Polygon};

pub const LABEL_EXTENSION: &str = "txt";

/// Fractional digits written per coordinate.
pub const COORD_DIGITS: usize = 6;

/// One labelled instance; polygon vertices are in unit coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub class_id: u32,
    pub polygon: Polygon,
    pub score: Option<f64>,
}

impl InstanceAnnotation {
    pub fn new(class_id: u32, polygon: Polygon, score: Option<f64>) -> Result<Self, FormatError> {
        for v in polygon.vertices() {
            for value in [v.x, v.y] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(FormatError::OutOfRange { value });
                }
            }
        }
        if let Some(s) = score {
            if !(0.0..=1.0).contains(&s) {
                return Err(FormatError::OutOfRange { value: s });
            }
        }
        Ok(Self {
            class_id,
            polygon,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelFile {
    pub image_id: String,
    pub annotations: Vec<InstanceAnnotation>,
}

pub fn parse_label_line(line: &str) -> Result<InstanceAnnotation, FormatError> {
    let mut tokens = line.split_whitespace();
    let class_token = tokens.next().ok_or_else(|| FormatError::MalformedLine {
        reason: "empty line".into(),
    })?;
    let class_id: u32 = class_token.parse().map_err(|_| FormatError::Parse {
        token: class_token.to_string(),
    })?;
    let coords = tokens
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FormatError::Parse { token: t.to_string() })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if coords.len() % 2 != 0 {
        return Err(FormatError::MalformedLine {
            reason: format!("odd number of coordinates ({})", coords.len()),
        });
    }
    if coords.len() < 6 {
        return Err(FormatError::MalformedLine {
            reason: format!("need at least 3 vertices, got {}", coords.len() / 2),
        });
    }
    if let Some(&value) = coords.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(FormatError::OutOfRange { value });
    }
    let polygon = Polygon::new(coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
        .expect("vertex count and finiteness checked above");
    Ok(InstanceAnnotation {
        class_id,
        polygon,
        score: None,
    })
}

pub fn format_label_line(a: &InstanceAnnotation) -> String {
    let mut line = a.class_id.to_string();
    for v in a.polygon.vertices() {
        // `+ 0.0` keeps a negative zero from printing as "-0.000000".
        write!(line, " {:.*} {:.*}", COORD_DIGITS, v.x + 0.0, COORD_DIGITS, v.y + 0.0).unwrap();
    }
    line
}

/// Render a label file. An empty annotation list renders as an empty string.
pub fn write_label_file(lf: &LabelFile) -> String {
    let mut out = String::new();
    for a in &lf.annotations {
        out.push_str(&format_label_line(a));
        out.push('\n');
    }
    out
}

pub fn parse_label_file(image_id: &str, text: &str) -> Result<LabelFile, FormatError> {
    let annotations = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_label_line(l).map_err(|e| FormatError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(LabelFile {
        image_id: image_id.to_string(),
        annotations,
    })
}

pub fn label_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.{LABEL_EXTENSION}"))
}

pub fn read_label_file(path: &Path) -> Result<LabelFile, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| FormatError::Document {
            path: path.to_path_buf(),
            message: "label file name is not valid UTF-8".into(),
        })?;
    parse_label_file(stem, &text).map_err(|e| e.in_file(path))
}

pub fn save_label_file(dir: &Path, lf: &LabelFile) -> Result<PathBuf, FormatError> {
    let path = label_path(dir, &lf.image_id);
    fs::write(&path, write_label_file(lf)).map_err(|e| FormatError::io(&path, e))?;
    Ok(path)
}

/// Every `*.txt` label file in `dir`, keyed by image stem.
pub fn read_label_dir(dir: &Path) -> Result<BTreeMap<String, LabelFile>, FormatError> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| FormatError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| FormatError::io(dir, e))?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) == Some(LABEL_EXTENSION) {
            let lf = read_label_file(&path)?;
            out.insert(lf.image_id.clone(), lf);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_triangle() {
        let a = parse_label_line("0 0.1 0.1 0.4 0.1 0.25 0.4").unwrap();
        assert_eq!(a.class_id, 0);
        let v: Vec<(f64, f64)> = a.polygon.vertices().iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(v, vec![(0.1, 0.1), (0.4, 0.1), (0.25, 0.4)]);
        assert_eq!(a.score, None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            parse_label_line("0 0.1 0.1 0.4"),
            Err(FormatError::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_label_line("0 0.1 0.1 0.4 0.1"),
            Err(FormatError::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_label_line("0 0.1 0.1 1.4 0.1 0.2 0.2"),
            Err(FormatError::OutOfRange { .. })
        ));
        assert!(matches!(
            parse_label_line("0 0.1 x 0.4 0.1 0.2 0.2"),
            Err(FormatError::Parse { .. })
        ));
        assert!(matches!(
            parse_label_line("a 0.1 0.1 0.4 0.1 0.2 0.2"),
            Err(FormatError::Parse { .. })
        ));
        assert!(matches!(
            parse_label_line("0 0.1 nan 0.4 0.1 0.2 0.2"),
            Err(FormatError::Parse { .. })
        ));
    }

    #[test]
    fn writes_six_digit_lines() {
        let third = 1.0 / 3.0;
        let poly = Polygon::from_coords([(third, third), (2.0 * third, third), (0.5, 2.0 * third)]).unwrap();
        let lf = LabelFile {
            image_id: "img".into(),
            annotations: vec![InstanceAnnotation::new(0, poly, None).unwrap()],
        };
        assert_eq!(
            write_label_file(&lf),
            "0 0.333333 0.333333 0.666667 0.333333 0.500000 0.666667\n"
        );
        assert_eq!(write_label_file(&LabelFile::default()), "");
    }

    #[test]
    fn emitted_lines_roundtrip_verbatim() {
        let line = "3 0.000000 1.000000 0.123457 0.999999 0.500000 0.000001";
        assert_eq!(format_label_line(&parse_label_line(line).unwrap()), line);
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let err = parse_label_file("x", "0 0.1 0.1 0.2 0.1 0.2 0.2\n\n0 0.1\n").unwrap_err();
        assert!(matches!(err, FormatError::AtLine { line: 3, .. }), "{err}");
    }
}
