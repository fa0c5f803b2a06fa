//! Plain-text prototype files: one class per line, `name v1 v2 ... vn`.
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::HashSet;

use hyperhead::head::{HeadMode, PrototypeBank, DEFAULT_TEMPERATURE};
use hyperhead::lorentz::{exp_map_origin, log_map_origin, HyperboloidPoint};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct TextPrototypes {
    pub names: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn parse(text: &str) -> Result<TextPrototypes, CliError> {
    let mut names = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let name = fields.next().expect("non-empty line has a field");
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::input(format!("line {}: '{f}' is not a finite number", lineno + 1)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.is_empty() {
            return Err(CliError::input(format!("line {}: class '{name}' has no coordinates", lineno + 1)));
        }
        if let Some(first) = vectors.first() {
            if first.len() != values.len() {
                return Err(CliError::input(format!(
                    "line {}: ragged row, expected {} values but found {}",
                    lineno + 1,
                    first.len(),
                    values.len()
                )));
            }
        }
        if !seen.insert(name.to_string()) {
            return Err(CliError::input(format!("line {}: duplicate class name '{name}'", lineno + 1)));
        }
        names.push(name.to_string());
        vectors.push(values);
    }
    if names.len() < 2 {
        return Err(CliError::input(format!("need at least 2 classes, found {}", names.len())));
    }
    Ok(TextPrototypes { names, vectors })
}

/// Builds a bank from parsed vectors.
///
/// Hyperbolic banks are frozen. Vectors are tangent coordinates at the origin
/// unless `already_hyperbolic`, in which case they must be points on the
/// hyperboloid.
pub fn to_bank(
    parsed: TextPrototypes,
    mode: HeadMode,
    already_hyperbolic: bool,
    delta: f64,
) -> Result<PrototypeBank, CliError> {
    let bank = match mode {
        HeadMode::Hyperbolic => {
            let points = parsed
                .vectors
                .into_iter()
                .map(|v| {
                    if already_hyperbolic {
                        HyperboloidPoint::new(v)
                    } else {
                        exp_map_origin(&v)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            PrototypeBank::hyperbolic(parsed.names, points, true, delta)?
        }
        _ if already_hyperbolic => {
            return Err(CliError::input("--already-hyperbolic only applies to hyperbolic banks"));
        }
        _ => PrototypeBank::euclidean(mode, parsed.names, parsed.vectors, DEFAULT_TEMPERATURE)?,
    };
    Ok(bank)
}

/// Renders a bank as text. Hyperbolic rows are written as full hyperboloid
/// coordinates, or as tangent coordinates at the origin with `tangent`.
pub fn render(bank: &PrototypeBank, tangent: bool) -> String {
    let mut out = String::new();
    for (c, name) in bank.class_names().iter().enumerate() {
        let row = match (bank.mode(), tangent) {
            (HeadMode::Hyperbolic, true) => log_map_origin(&bank.prototype(c).expect("hyperbolic row")),
            _ => bank.rows()[c].clone(),
        };
        out.push_str(name);
        for v in row {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn antipodal_pair_has_d_min_two() {
        let parsed = parse("a 1 0\nb -1 0\n").unwrap();
        let bank = to_bank(parsed, HeadMode::Hyperbolic, false, 1.4).unwrap();
        assert!((bank.d_min() - 2.0).abs() < 1e-12);
        assert!(bank.is_frozen());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse("only 1 2\n").is_err());
        assert!(parse("a 1 2\na 3 4\n").is_err());
        assert!(parse("a 1 2\nb 3\n").is_err());
        assert!(parse("a 1 x\nb 3 4\n").is_err());
        assert!(parse("a\nb 3 4\n").is_err());
        assert!(parse("a nan 1\nb 3 4\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let parsed = parse("# header\n\na 1 2\n  b 3 4  \n").unwrap();
        assert_eq!(parsed.names, vec!["a", "b"]);
        assert_eq!(parsed.vectors[1], vec![3.0, 4.0]);
    }

    #[test]
    fn export_then_import_is_identical() {
        let parsed = parse("a 0.3 -1.2 0.5\nb 2 0.1 -0.7\nc -0.4 0.4 0.9\n").unwrap();
        let bank = to_bank(parsed, HeadMode::Hyperbolic, false, 1.4).unwrap();
        let again = to_bank(parse(&render(&bank, false)).unwrap(), HeadMode::Hyperbolic, true, 1.4).unwrap();
        assert_eq!(again, bank);
    }
}
