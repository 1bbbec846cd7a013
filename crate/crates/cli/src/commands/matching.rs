use std::path::Path;

use boxrefine::matching::{hungarian, CostMatrix};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct MatchOutput {
    pub pairs: Vec<[usize; 2]>,
    pub total_cost: f64,
}

/// Parses a header-less CSV of finite costs; rows are predictions.
pub fn parse_costs(text: &str) -> Result<CostMatrix, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Parse(format!("cost matrix: {e}")))?;
        let mut row = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Parse(format!("cost matrix row {r}, column {c}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(CliError::Parse(format!("cost matrix row {r}, column {c}: cost must be finite")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(CostMatrix::from_rows(&rows)?)
}

pub fn match_costs(text: &str) -> Result<MatchOutput, CliError> {
    let a = hungarian(&parse_costs(text)?);
    Ok(MatchOutput { pairs: a.pairs.iter().map(|&(p, g)| [p, g]).collect(), total_cost: a.total_cost })
}

pub fn match_file(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let out = match_costs(&text)?;
    Ok(serde_json::to_string(&out).expect("assignment serializes") + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let m = match_costs("1,2\n2,1").unwrap();
        assert_eq!(m.pairs, vec![[0, 0], [1, 1]]);
        assert_eq!(m.total_cost, 2.0);
        let m = match_costs("7").unwrap();
        assert_eq!((m.pairs, m.total_cost), (vec![[0, 0]], 7.0));
        assert!(matches!(match_costs("1,x"), Err(CliError::Parse(_))));
        assert!(matches!(match_costs("1,2\n3"), Err(CliError::Parse(_))));
        assert!(matches!(match_costs("1,inf"), Err(CliError::Parse(_))));
    }

    #[test]
    fn rectangular_and_empty() {
        let m = match_costs("5, 1, 9\n2, 8, 0.5").unwrap();
        assert_eq!(m.pairs, vec![[0, 1], [1, 2]]);
        assert_eq!(m.total_cost, 1.5);
        let m = match_costs("").unwrap();
        assert!(m.pairs.is_empty() && m.total_cost == 0.0);
    }
}
