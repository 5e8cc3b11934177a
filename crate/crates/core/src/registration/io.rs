//! Plain-text `key = value` transform files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces every coefficient bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use super::{AffineTransform, BSplineTransform, RegistrationError};

#[derive(Debug, Error)]
pub enum TransformTextError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("transform type is `{found}`, expected `{expected}`")]
    Kind { found: String, expected: &'static str },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Invalid(#[from] RegistrationError),
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, TransformTextError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(TransformTextError::Syntax { line: i + 1 })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, TransformTextError> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| TransformTextError::Missing(key.to_string()))
}

fn numbers<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    count: usize,
) -> Result<Vec<T>, TransformTextError> {
    let raw = get(map, key)?;
    let parsed: Result<Vec<T>, _> = raw.split_whitespace().map(str::parse).collect();
    let values = parsed.map_err(|_| TransformTextError::Value {
        key: key.to_string(),
        reason: format!("cannot parse `{raw}`"),
    })?;
    if values.len() != count {
        return Err(TransformTextError::Value {
            key: key.to_string(),
            reason: format!("expected {count} values, got {}", values.len()),
        });
    }
    Ok(values)
}

fn check_kind(map: &BTreeMap<String, String>, expected: &'static str) -> Result<(), TransformTextError> {
    let found = get(map, "type")?;
    if found != expected {
        return Err(TransformTextError::Kind {
            found: found.to_string(),
            expected,
        });
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), TransformTextError> {
    fs::write(path, text).map_err(|source| TransformTextError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, TransformTextError> {
    fs::read_to_string(path).map_err(|source| TransformTextError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl AffineTransform {
    pub fn to_text(&self) -> String {
        let m = self.matrix();
        let rows = (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)]));
        format!(
            "type = affine\nmatrix = {}\ntranslation = {}\n",
            join(rows),
            join(self.translation().iter().copied())
        )
    }

    pub fn from_text(text: &str) -> Result<Self, TransformTextError> {
        let map = parse_pairs(text)?;
        check_kind(&map, "affine")?;
        let m: Vec<f64> = numbers(&map, "matrix", 9)?;
        let t: Vec<f64> = numbers(&map, "translation", 3)?;
        Ok(Self::new(Matrix3::from_row_slice(&m), Vector3::from_column_slice(&t))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TransformTextError> {
        write_text(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransformTextError> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

impl BSplineTransform {
    /// One `c.<index> = x y z` line per control point, x-fastest.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let dd = self.domain_dims();
        let cd = self.control_dims();
        let _ = writeln!(out, "type = bspline");
        let _ = writeln!(out, "domain_dims = {} {} {}", dd[0], dd[1], dd[2]);
        let _ = writeln!(out, "control_spacing = {}", join(self.control_spacing()));
        let _ = writeln!(out, "control_dims = {} {} {}", cd[0], cd[1], cd[2]);
        for (i, c) in self.coefficients().iter().enumerate() {
            let _ = writeln!(out, "c.{i} = {}", join(*c));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TransformTextError> {
        let map = parse_pairs(text)?;
        check_kind(&map, "bspline")?;
        let dd: Vec<usize> = numbers(&map, "domain_dims", 3)?;
        let sp: Vec<f64> = numbers(&map, "control_spacing", 3)?;
        let domain = [dd[0], dd[1], dd[2]];
        let spacing = [sp[0], sp[1], sp[2]];
        let shape = Self::zeros(domain, spacing)?;
        let cd: Vec<usize> = numbers(&map, "control_dims", 3)?;
        if cd != shape.control_dims() {
            return Err(TransformTextError::Value {
                key: "control_dims".into(),
                reason: format!("inconsistent with domain: expected {:?}", shape.control_dims()),
            });
        }
        let coefficients = (0..shape.num_control_points())
            .map(|i| {
                let v: Vec<f64> = numbers(&map, &format!("c.{i}"), 3)?;
                Ok([v[0], v[1], v[2]])
            })
            .collect::<Result<Vec<_>, TransformTextError>>()?;
        Ok(Self::from_coefficients(domain, spacing, coefficients)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TransformTextError> {
        write_text(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransformTextError> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_text_round_trip_is_exact() {
        let t = AffineTransform::new(
            Matrix3::new(1.1, 1.0 / 3.0, 0.0, -2e-17, 0.9, 0.1, 0.0, 0.0, 1.0),
            Vector3::new(0.1 + 0.2, -3.0, 1e300),
        )
        .unwrap();
        let text = t.to_text();
        assert!(text.starts_with("type = affine\n"));
        assert_eq!(AffineTransform::from_text(&text).unwrap(), t);
    }

    #[test]
    fn bspline_text_round_trip_is_exact() {
        let mut t = BSplineTransform::zeros([9, 8, 7], [4.0, 4.0, 3.5]).unwrap();
        for (i, c) in t.coefficients_mut().iter_mut().enumerate() {
            *c = [i as f64 / 7.0, -(i as f64).sqrt(), 1.0 / (i as f64 + 3.0)];
        }
        let back = BSplineTransform::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(matches!(
            AffineTransform::from_text("type = bspline\n"),
            Err(TransformTextError::Kind { .. })
        ));
        assert!(matches!(
            AffineTransform::from_text("type = affine\nmatrix 1 2 3\n"),
            Err(TransformTextError::Syntax { line: 2 })
        ));
        assert!(matches!(
            AffineTransform::from_text("type = affine\nmatrix = 1 0 0 0 1 0 0 0 1\n"),
            Err(TransformTextError::Missing(_))
        ));
        assert!(matches!(
            AffineTransform::from_text("type = affine\nmatrix = 0 0 0 0 1 0 0 0 1\ntranslation = 0 0 0\n"),
            Err(TransformTextError::Invalid(RegistrationError::SingularMatrix(_)))
        ));
    }
}
