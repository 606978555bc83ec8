//! The `contourset v1` text format.
//!
//! ```text
//! contourset v1
//! contour outline 4
//! 0 0
//! 1 0
//! 1 1
//! 0 1
//! ```
//!
//! Each `contour` line carries an optional label and the point count and is
//! followed by that many `x y` lines. Blank lines and lines starting with
//! `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::contour::{resample_uniform_arclength, Contour};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub const HEADER: &str = "contourset v1";

/// Fewest points a stored contour may have.
pub const MIN_FILE_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledContour {
    pub label: Option<String>,
    pub points: Vec<Vec2>,
}

impl LabeledContour {
    pub fn new(label: Option<&str>, points: Vec<Vec2>) -> Self {
        Self { label: label.map(str::to_owned), points }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContourFile {
    pub contours: Vec<LabeledContour>,
}

impl ContourFile {
    pub fn new(contours: Vec<LabeledContour>) -> Self {
        Self { contours }
    }

    pub fn from_contours<'a>(contours: impl IntoIterator<Item = &'a Contour>, label: Option<&str>) -> Self {
        Self { contours: contours.into_iter().map(|c| LabeledContour::new(label, c.points().to_vec())).collect() }
    }

    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    /// Every contour resampled to `m` points equally spaced in arc length.
    pub fn resampled(&self, m: usize) -> Result<Vec<Contour>> {
        self.contours
            .iter()
            .enumerate()
            .map(|(k, c)| resample_uniform_arclength(&c.points, m).map_err(|e| e.in_contour(k)))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let bad = |line: usize, message: String| Error::Parse { line, message };

        match lines.next() {
            Some((_, l)) if l.split_whitespace().collect::<Vec<_>>() == ["contourset", "v1"] => {}
            Some((n, l)) => return Err(bad(n, format!("expected `{HEADER}`, found `{l}`"))),
            None => return Err(bad(0, format!("empty input, expected `{HEADER}`"))),
        }

        let mut contours = Vec::new();
        while let Some((n, line)) = lines.next() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (label, count) = match fields.as_slice() {
                ["contour", count] => (None, *count),
                ["contour", label, count] => (Some(*label), *count),
                _ => return Err(bad(n, format!("expected `contour [label] <count>`, found `{line}`"))),
            };
            let count: usize = count.parse().map_err(|_| bad(n, format!("invalid point count `{count}`")))?;
            if count < MIN_FILE_POINTS {
                return Err(bad(n, format!("contour needs at least {MIN_FILE_POINTS} points, got {count}")));
            }
            let mut points = Vec::with_capacity(count);
            for _ in 0..count {
                let (pn, pl) = lines.next().ok_or_else(|| bad(n, format!("contour ends after {} of {count} points", points.len())))?;
                let xy: Vec<&str> = pl.split_whitespace().collect();
                let [x, y] = xy.as_slice() else {
                    return Err(bad(pn, format!("expected `x y`, found `{pl}`")));
                };
                let parse = |s: &str| -> Result<f64> {
                    let v: f64 = s.parse().map_err(|_| bad(pn, format!("invalid coordinate `{s}`")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(bad(pn, format!("non-finite coordinate `{s}`")))
                    }
                };
                points.push(Vec2::new(parse(x)?, parse(y)?));
            }
            contours.push(LabeledContour { label: label.map(str::to_owned), points });
        }
        Ok(Self { contours })
    }

    /// Text form with 17 significant digits per coordinate.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for c in &self.contours {
            match &c.label {
                Some(l) => writeln!(out, "contour {l} {}", c.points.len()),
                None => writeln!(out, "contour {}", c.points.len()),
            }
            .expect("writing to a string");
            for p in &c.points {
                writeln!(out, "{:.16e} {:.16e}", p.x, p.y).expect("writing to a string");
            }
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_labels_comments_and_blank_lines() {
        let text = "# made by hand\ncontourset v1\n\ncontour a 3\n0 0\n1 0\n0.5 1\ncontour 3\n0 0\n-1 0\n0 -1e0\n";
        let f = ContourFile::parse(text).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.contours[0].label.as_deref(), Some("a"));
        assert_eq!(f.contours[1].label, None);
        assert_eq!(f.contours[1].points[2], Vec2::new(0.0, -1.0));
    }

    #[test]
    fn reports_the_offending_line() {
        let cases = [
            ("", 0),
            ("contourset v2\n", 1),
            ("contourset v1\ncontour a b c\n", 2),
            ("contourset v1\ncontour 2\n0 0\n1 1\n", 2),
            ("contourset v1\ncontour 3\n0 0\n1 1\n", 2),
            ("contourset v1\ncontour 3\n0 0\n1 x\n2 2\n", 4),
            ("contourset v1\ncontour 3\n0 0\n1 NaN\n2 2\n", 4),
            ("contourset v1\ncontour 3\n0 0 0\n1 1\n2 2\n", 3),
        ];
        for (text, line) in cases {
            match ContourFile::parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.txt");
        let f = ContourFile::new(vec![LabeledContour::new(Some("mean"), vec![Vec2::new(0.1, 0.2), Vec2::new(1.0 / 3.0, 2.0), Vec2::new(-5.0, 1e-300)])]);
        f.write(&path).unwrap();
        assert_eq!(ContourFile::read(&path).unwrap(), f);
        assert!(matches!(ContourFile::read(dir.path().join("missing")), Err(Error::Io(_))));
    }

    proptest! {
        #[test]
        fn text_form_is_lossless(
            sets in prop::collection::vec(
                (prop::option::of("[a-z][a-z0-9_]{0,8}"), prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 3..20)),
                0..4,
            )
        ) {
            let f = ContourFile::new(
                sets.iter()
                    .map(|(l, pts)| LabeledContour::new(l.as_deref(), pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect()))
                    .collect(),
            );
            let back = ContourFile::parse(&f.to_text()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
