//! Text serialization of passage laws.
//!
//! Columns `n,prob,log_prob`, one row per represented point, then footer
//! rows `tail_mass`, `tail_cert_N0` and `tail_cert_rho` (value columns left
//! empty when there is no certificate).

use super::{AtomicDist, LawRepr, PassageLaw, TailCert};
use crate::error::{Error, Result};
use crate::logspace::{fmt17, parse_f64, NEG_INF};

impl PassageLaw {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,prob,log_prob\n");
        let rows: Box<dyn Iterator<Item = (u64, f64)>> = match &self.repr {
            LawRepr::Dense(v) => Box::new(v.iter().enumerate().map(|(k, lp)| (k as u64 + 1, *lp))),
            LawRepr::Sparse(d) => Box::new(d.iter()),
        };
        for (n, lp) in rows {
            out.push_str(&format!("{n},{},{}\n", fmt17(lp.exp()), fmt17(lp)));
        }
        out.push_str(&format!(
            "tail_mass,{},{}\n",
            fmt17(self.log_tail_mass.exp()),
            fmt17(self.log_tail_mass)
        ));
        match self.tail_cert {
            Some(c) => {
                out.push_str(&format!("tail_cert_N0,{},\n", c.n0));
                out.push_str(&format!("tail_cert_rho,{},\n", fmt17(c.rho)));
                out.push_str(&format!("tail_cert_period,{},\n", c.period));
            }
            None => out.push_str("tail_cert_N0,,\ntail_cert_rho,,\ntail_cert_period,,\n"),
        }
        out
    }

    /// Reads [`PassageLaw::to_csv`] output. Contiguous `n = 1..H` rows give
    /// a dense law, anything else a sparse one.
    pub fn from_csv(s: &str) -> Result<Self> {
        let bad = |line: &str| Error::Parse(format!("malformed law CSV line `{line}`"));
        let mut points = Vec::new();
        let mut tail = None;
        let mut n0 = None;
        let mut rho = None;
        let mut period = None;
        for line in s.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(line));
            }
            match cols[0] {
                "tail_mass" => tail = Some(parse_f64(cols[2]).ok_or_else(|| bad(line))?),
                "tail_cert_N0" if cols[1].is_empty() => {}
                "tail_cert_rho" if cols[1].is_empty() => {}
                "tail_cert_period" if cols[1].is_empty() => {}
                "tail_cert_period" => period = Some(cols[1].parse::<u64>().map_err(|_| bad(line))?),
                "tail_cert_N0" => n0 = Some(cols[1].parse::<u64>().map_err(|_| bad(line))?),
                "tail_cert_rho" => rho = Some(parse_f64(cols[1]).ok_or_else(|| bad(line))?),
                n => {
                    let n: u64 = n.parse().map_err(|_| bad(line))?;
                    points.push((n, parse_f64(cols[2]).ok_or_else(|| bad(line))?));
                }
            }
        }
        let tail = tail.ok_or_else(|| Error::Parse("missing tail_mass row".into()))?;
        let cert = match (n0, rho) {
            // a missing period row means a one-step certificate
            (Some(n0), Some(rho)) => Some(TailCert {
                n0,
                rho,
                period: period.unwrap_or(1),
            }),
            (None, None) => None,
            _ => return Err(Error::Parse("incomplete tail certificate".into())),
        };
        let contiguous = points
            .iter()
            .enumerate()
            .all(|(k, &(n, _))| n == k as u64 + 1);
        if contiguous && !points.is_empty() {
            PassageLaw::dense(points.into_iter().map(|p| p.1).collect(), tail, cert)
        } else {
            let (atoms, lps): (Vec<u64>, Vec<f64>) =
                points.into_iter().filter(|p| p.1 > NEG_INF).unzip();
            let mut law: PassageLaw = AtomicDist::new(atoms, lps, tail)?.into();
            law.tail_cert = cert;
            Ok(law)
        }
    }
}
