//! Tradeoff CSV files.

use std::fmt::Write as _;
use std::path::Path;

use pan_core::attack::TradeoffPoint;
use pan_core::{PanError, Result};

pub const HEADER: &str = "method,lambda1,lambda2,lambda3,utility,p1,p2,log_p2,score";

/// One CSV line without the trailing newline. An absent p1 is an empty
/// field.
pub fn row(p: &TradeoffPoint) -> String {
    let p1 = p.p1.map_or(String::new(), |v| v.to_string());
    format!(
        "{},{},{},{},{},{},{},{},{}",
        p.method, p.lambda[0], p.lambda[1], p.lambda[2], p.u, p1, p.p2, p.log_p2, p.score
    )
}

pub fn to_csv(points: &[TradeoffPoint]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{}", row(p));
    }
    s
}

/// Parses a file written by [`to_csv`]. Score and log_p2 are read back as
/// stored, not recomputed.
pub fn parse_csv(text: &str) -> Result<Vec<TradeoffPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(PanError::Config("tradeoff CSV header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(PanError::Config(format!(
                    "CSV line {}: expected 9 fields, got {}",
                    i + 2,
                    f.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| PanError::Config(format!("CSV line {}: bad number `{s}`", i + 2)))
            };
            Ok(TradeoffPoint {
                method: f[0].to_string(),
                lambda: [num(f[1])?, num(f[2])?, num(f[3])?],
                u: num(f[4])?,
                p1: if f[5].is_empty() {
                    None
                } else {
                    Some(num(f[5])?)
                },
                p2: num(f[6])?,
                log_p2: num(f[7])?,
                score: num(f[8])?,
            })
        })
        .collect()
}

pub fn write_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    std::fs::write(path, to_csv(points))?;
    Ok(())
}

/// Widens an `f32` through its shortest decimal form, so `0.3f32` becomes
/// `0.3` rather than `0.30000001192092896`.
pub fn widen(v: f32) -> f64 {
    v.to_string().parse().expect("f32 display parses as f64")
}

#[cfg(test)]
mod tests {
    use super::*;
    use pan_core::attack::ScoreSign;

    #[test]
    fn header_and_empty_p1() {
        let p = TradeoffPoint::new(
            "dnn",
            [0.3, 0.7, 0.0],
            91.5,
            None,
            0.0,
            [0.4, 0.3, 0.3],
            ScoreSign::Plus,
        );
        let csv = to_csv(std::slice::from_ref(&p));
        assert_eq!(csv, format!("{HEADER}\ndnn,0.3,0.7,0,91.5,,0,0,36.6\n"));
        assert_eq!(parse_csv(&csv).unwrap(), vec![p]);
    }

    #[test]
    fn widen_uses_short_form() {
        assert_eq!(widen(0.3), 0.3);
        assert_eq!(widen(0.1).to_string(), "0.1");
    }
}
