//! Versioned plain-text serialization of factor models.
//!
//! ```text
//! FANOPT-RISKMODEL 1
//! <N> <K> <kind>
//! <xi2_1> ... <xi2_N>
//! <Omega row 1>
//! ...
//! <phi row 1>
//! ...
//! ```
//! Lines starting with `#` are ignored. Numbers use the shortest decimal
//! form that round-trips exactly.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::FactorModel;
use crate::error::{Error, Result};

const MAGIC: &str = "FANOPT-RISKMODEL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskModelKind {
    Factor,
    Statistical,
    Diagonal,
}

impl fmt::Display for RiskModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskModelKind::Factor => "factor",
            RiskModelKind::Statistical => "statistical",
            RiskModelKind::Diagonal => "diagonal",
        })
    }
}

impl FromStr for RiskModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factor" => Ok(RiskModelKind::Factor),
            "statistical" => Ok(RiskModelKind::Statistical),
            "diagonal" => Ok(RiskModelKind::Diagonal),
            other => Err(Error::Parse(format!("unknown risk model kind {other:?}"))),
        }
    }
}

fn write_row<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    let parts: Vec<String> = values.map(|x| x.to_string()).collect();
    writeln!(w, "{}", parts.join(" "))?;
    Ok(())
}

pub fn write_risk_model<W: Write>(
    mut w: W,
    model: &FactorModel,
    kind: RiskModelKind,
    comment: Option<&str>,
) -> Result<()> {
    writeln!(w, "{MAGIC} {VERSION}")?;
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let (n, k) = (model.xi2().len(), model.k());
    writeln!(w, "{n} {k} {kind}")?;
    write_row(&mut w, model.xi2().iter().cloned())?;
    // with K = 0 there are no loading or factor rows at all
    if k > 0 {
        for i in 0..n {
            write_row(&mut w, model.loadings().row(i).iter().cloned())?;
        }
    }
    for a in 0..k {
        write_row(&mut w, model.factor_cov().row(a).iter().cloned())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_risk_model<R: BufRead>(r: R) -> Result<(FactorModel, RiskModelKind)> {
    let mut lines = Vec::new();
    for line in r.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push(trimmed.to_string());
    }
    let mut it = lines.into_iter();
    let header = it.next().ok_or_else(|| Error::Parse("empty risk model file".into()))?;
    let mut hp = header.split_whitespace();
    if hp.next() != Some(MAGIC) {
        return Err(Error::Parse("missing risk model header".into()));
    }
    let version: u32 = parse_token(hp.next(), "version")?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported risk model version {version}")));
    }
    let dims = it.next().ok_or_else(|| Error::Parse("missing dimension line".into()))?;
    let mut dp = dims.split_whitespace();
    let n: usize = parse_token(dp.next(), "N")?;
    let k: usize = parse_token(dp.next(), "K")?;
    let kind: RiskModelKind = dp.next().ok_or_else(|| Error::Parse("missing kind".into()))?.parse()?;

    let mut row = |len: usize, what: &str| -> Result<Vec<f64>> {
        let line = it.next().ok_or_else(|| Error::Parse(format!("missing {what} line")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {t:?} in {what}"))))
            .collect::<Result<_>>()?;
        if vals.len() != len {
            return Err(Error::Parse(format!("{what} has {} values, expected {len}", vals.len())));
        }
        Ok(vals)
    };
    let xi2 = DVector::from_vec(row(n, "specific variance")?);
    let mut omega = DMatrix::zeros(n, k);
    for i in (0..n).filter(|_| k > 0) {
        let r = row(k, "loadings")?;
        for a in 0..k {
            omega[(i, a)] = r[a];
        }
    }
    let mut phi = DMatrix::zeros(k, k);
    for a in 0..k {
        let r = row(k, "factor covariance")?;
        for b in 0..k {
            phi[(a, b)] = r[b];
        }
    }
    Ok((FactorModel::new(xi2, omega, phi)?, kind))
}

fn parse_token<T: FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse(format!("cannot read {what}")))
}
