//! Line-oriented text format for [`Cmdp`].
//!
//! ```text
//! cmdp 1
//! states <S> actions <A> costs <K>
//! discount <gamma>
//! thresholds <c_1> .. <c_K>
//! initial <p0(0)> .. <p0(S-1)>
//! transition
//! <S*A lines, row (s, a) holds T(. | s, a)>
//! reward
//! <S lines of A values>
//! cost <k>
//! <S lines of A values>      (repeated for every k)
//! ```
//!
//! Reals are written with 17 significant digits, so parsing the output
//! reproduces every value bit for bit.  `inf` is accepted for thresholds.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::model::{Cmdp, TabularPolicy};
use crate::error::{parse_err, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_real).collect::<Vec<_>>().join(" ")
}

pub fn write_cmdp(cmdp: &Cmdp) -> String {
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    let mut out = String::new();
    let _ = writeln!(out, "cmdp {FORMAT_VERSION}");
    let _ = writeln!(out, "states {n} actions {na} costs {}", cmdp.num_costs());
    let _ = writeln!(out, "discount {}", fmt_real(cmdp.discount()));
    let _ = writeln!(out, "thresholds {}", join(cmdp.thresholds().iter().copied()));
    let _ = writeln!(out, "initial {}", join(cmdp.initial().iter().copied()));
    out.push_str("transition\n");
    for row in cmdp.transition().chunks(n) {
        let _ = writeln!(out, "{}", join(row.iter().copied()));
    }
    let table = |out: &mut String, m: &DMatrix<f64>| {
        for s in 0..n {
            let _ = writeln!(out, "{}", join(m.row(s).iter().copied()));
        }
    };
    out.push_str("reward\n");
    table(&mut out, cmdp.reward());
    for (k, c) in cmdp.costs().iter().enumerate() {
        let _ = writeln!(out, "cost {k}");
        table(&mut out, c);
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let line = line.trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Ok(line);
            }
        }
        Err(parse_err(self.last + 1, "unexpected end of input"))
    }

    fn keyword(&mut self, word: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(word) {
            return Err(parse_err(self.last, format!("expected `{word}`")));
        }
        Ok(it.collect())
    }

    fn reals(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        parse_reals(line.split_whitespace(), expected, self.last)
    }
}

fn parse_reals<'a>(
    tokens: impl Iterator<Item = &'a str>,
    expected: usize,
    line: usize,
) -> Result<Vec<f64>> {
    let values = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad number `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(parse_err(
            line,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn parse_usize(token: Option<&&str>, line: usize) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(line, "expected a nonnegative integer"))
}

pub fn read_cmdp(text: &str) -> Result<Cmdp> {
    let mut lines = Lines::new(text);
    let version = lines.keyword("cmdp")?;
    if parse_usize(version.first(), lines.last)? != FORMAT_VERSION as usize {
        return Err(parse_err(lines.last, "unsupported format version"));
    }
    let dims = lines.keyword("states")?;
    if dims.len() != 5 || dims[1] != "actions" || dims[3] != "costs" {
        return Err(parse_err(lines.last, "expected `states S actions A costs K`"));
    }
    let n = parse_usize(dims.first(), lines.last)?;
    let na = parse_usize(dims.get(2), lines.last)?;
    let k = parse_usize(dims.get(4), lines.last)?;
    let discount = lines.keyword("discount")?;
    let discount = parse_reals(discount.into_iter(), 1, lines.last)?[0];
    let thresholds = lines.keyword("thresholds")?;
    let thresholds = parse_reals(thresholds.into_iter(), k, lines.last)?;
    let initial = lines.keyword("initial")?;
    let initial = parse_reals(initial.into_iter(), n, lines.last)?;
    lines.keyword("transition")?;
    let mut transition = Vec::with_capacity(n * na * n);
    for _ in 0..n * na {
        transition.extend(lines.reals(n)?);
    }
    let table = |lines: &mut Lines| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(n, na);
        for s in 0..n {
            for (a, v) in lines.reals(na)?.into_iter().enumerate() {
                m[(s, a)] = v;
            }
        }
        Ok(m)
    };
    lines.keyword("reward")?;
    let reward = table(&mut lines)?;
    let mut costs = Vec::with_capacity(k);
    for idx in 0..k {
        let header = lines.keyword("cost")?;
        if parse_usize(header.first(), lines.last)? != idx {
            return Err(parse_err(lines.last, format!("expected `cost {idx}`")));
        }
        costs.push(table(&mut lines)?);
    }
    if let Ok(extra) = lines.next_line() {
        return Err(parse_err(lines.last, format!("trailing content `{extra}`")));
    }
    Cmdp::new(n, na, transition, reward, costs, thresholds, initial, discount)
}

/// `policy 1`, `states S actions A`, then one line of probabilities per state.
pub fn write_policy(policy: &TabularPolicy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "policy {FORMAT_VERSION}");
    let _ = writeln!(out, "states {} actions {}", policy.num_states(), policy.num_actions());
    for s in 0..policy.num_states() {
        let _ = writeln!(out, "{}", join(policy.probs().row(s).iter().copied()));
    }
    out
}

pub fn read_policy(text: &str) -> Result<TabularPolicy> {
    let mut lines = Lines::new(text);
    let version = lines.keyword("policy")?;
    if parse_usize(version.first(), lines.last)? != FORMAT_VERSION as usize {
        return Err(parse_err(lines.last, "unsupported format version"));
    }
    let dims = lines.keyword("states")?;
    if dims.len() != 3 || dims[1] != "actions" {
        return Err(parse_err(lines.last, "expected `states S actions A`"));
    }
    let n = parse_usize(dims.first(), lines.last)?;
    let na = parse_usize(dims.get(2), lines.last)?;
    let mut p = DMatrix::zeros(n, na);
    for s in 0..n {
        for (a, v) in lines.reals(na)?.into_iter().enumerate() {
            p[(s, a)] = v;
        }
    }
    if let Ok(extra) = lines.next_line() {
        return Err(parse_err(lines.last, format!("trailing content `{extra}`")));
    }
    TabularPolicy::new(p)
}
