//! Text form of a [`DualSolution`]:
//!
//! ```text
//! dual 1
//! states <S> actions <A> costs <K>
//! loss <value>
//! diagnostics iterations=<n> grad_norm=<g> converged=<bool> lambda_at_cap=<bool>
//! nu <S values>
//! lambda <K values>
//! mu <value | none>
//! w
//! <S lines of A values>
//! ```

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::dual::{Diagnostics, DualSolution};
use crate::cmdp::format::fmt_real;
use crate::error::{parse_err, Result};

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(" ")
}

pub fn write_dual(sol: &DualSolution) -> String {
    let mut out = String::new();
    let d = &sol.diagnostics;
    let _ = writeln!(out, "dual 1");
    let _ = writeln!(
        out,
        "states {} actions {} costs {}",
        sol.w.nrows(),
        sol.w.ncols(),
        sol.lambda.len()
    );
    let _ = writeln!(out, "loss {}", fmt_real(sol.loss_value));
    let _ = writeln!(
        out,
        "diagnostics iterations={} grad_norm={} converged={} lambda_at_cap={}",
        d.iterations,
        fmt_real(d.grad_norm),
        d.converged,
        d.lambda_at_cap
    );
    let _ = writeln!(out, "nu {}", join(&sol.nu));
    let _ = writeln!(out, "lambda {}", join(&sol.lambda));
    match sol.mu {
        Some(mu) => {
            let _ = writeln!(out, "mu {}", fmt_real(mu));
        }
        None => out.push_str("mu none\n"),
    }
    out.push_str("w\n");
    for s in 0..sol.w.nrows() {
        let row: Vec<f64> = sol.w.row(s).iter().copied().collect();
        let _ = writeln!(out, "{}", join(&row));
    }
    out
}

pub fn read_dual(text: &str) -> Result<DualSolution> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let mut it = lines.into_iter();
    let mut next = |word: &str| -> Result<(usize, Vec<String>)> {
        let (no, line) = it.next().ok_or_else(|| parse_err(0, "unexpected end of input"))?;
        let mut parts = line.split_whitespace();
        if !word.is_empty() && parts.next() != Some(word) {
            return Err(parse_err(no, format!("expected `{word}`")));
        }
        Ok((no, parts.map(str::to_string).collect()))
    };
    let reals = |no: usize, v: &[String]| -> Result<Vec<f64>> {
        v.iter()
            .map(|t| t.parse().map_err(|_| parse_err(no, format!("bad number `{t}`"))))
            .collect()
    };
    let (no, v) = next("dual")?;
    if v.first().map(String::as_str) != Some("1") {
        return Err(parse_err(no, "unsupported version"));
    }
    let (no, dims) = next("states")?;
    let int = |s: Option<&String>| -> Result<usize> {
        s.and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(no, "bad dimensions"))
    };
    let (n, na, k) = (int(dims.first())?, int(dims.get(2))?, int(dims.get(4))?);
    let (no, loss) = next("loss")?;
    let loss_value = *reals(no, &loss)?.first().ok_or_else(|| parse_err(no, "missing loss"))?;
    let (no, diag) = next("diagnostics")?;
    let field = |key: &str| -> Result<String> {
        diag.iter()
            .find_map(|kv| kv.strip_prefix(&format!("{key}=")).map(str::to_string))
            .ok_or_else(|| parse_err(no, format!("missing `{key}`")))
    };
    let diagnostics = Diagnostics {
        iterations: field("iterations")?.parse().map_err(|_| parse_err(no, "bad iterations"))?,
        grad_norm: field("grad_norm")?.parse().map_err(|_| parse_err(no, "bad grad_norm"))?,
        converged: field("converged")?.parse().map_err(|_| parse_err(no, "bad converged"))?,
        lambda_at_cap: field("lambda_at_cap")?
            .parse()
            .map_err(|_| parse_err(no, "bad lambda_at_cap"))?,
    };
    let (no, nu) = next("nu")?;
    let nu = reals(no, &nu)?;
    let (no2, lambda) = next("lambda")?;
    let lambda = reals(no2, &lambda)?;
    if nu.len() != n || lambda.len() != k {
        return Err(parse_err(no, "dual variable lengths do not match the header"));
    }
    let (no, mu) = next("mu")?;
    let mu = match mu.first().map(String::as_str) {
        Some("none") => None,
        _ => Some(*reals(no, &mu)?.first().ok_or_else(|| parse_err(no, "missing mu"))?),
    };
    next("w")?;
    let mut w = DMatrix::zeros(n, na);
    for s in 0..n {
        let (no, row) = next("")?;
        let row = reals(no, &row)?;
        if row.len() != na {
            return Err(parse_err(no, "weight row has the wrong length"));
        }
        for (a, v) in row.into_iter().enumerate() {
            w[(s, a)] = v;
        }
    }
    Ok(DualSolution {
        nu,
        lambda,
        mu,
        w,
        loss_value,
        diagnostics,
    })
}
