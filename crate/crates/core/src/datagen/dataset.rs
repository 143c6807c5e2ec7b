use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmdp::format::fmt_real;
use crate::cmdp::{Cmdp, TabularPolicy, GENERATOR_VERSION};
use crate::error::{parse_err, Error, Result};

/// Default episode cap.
pub const MAX_EPISODE_LEN: usize = 50;
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One logged transition `(s0, s, a, r, c, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub episode: usize,
    pub t: usize,
    pub s0: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub c: Vec<f64>,
    pub s_next: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub num_costs: usize,
    pub cmdp_seed: Option<u64>,
    /// Free-form label of the logging policy (no commas or newlines).
    pub policy: String,
    pub max_len: usize,
}

/// Episodes stored contiguously, ordered by episode id and step.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    records: Vec<Record>,
    /// `starts[i]..starts[i + 1]` is episode `i`.
    starts: Vec<usize>,
    pub meta: DatasetMeta,
}

impl TransitionDataset {
    /// Builds a dataset, checking that episodes are contiguous, numbered
    /// `0..n` and internally consistent.
    pub fn new(records: Vec<Record>, meta: DatasetMeta) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let mut starts = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            if rec.c.len() != meta.num_costs {
                return bad(format!("record {i} has {} costs", rec.c.len()));
            }
            let first = i == 0 || records[i - 1].episode != rec.episode;
            if first {
                if rec.episode != starts.len() {
                    return bad(format!("record {i}: episodes must be numbered 0, 1, ..."));
                }
                if rec.t != 0 || rec.s0 != rec.s {
                    return bad(format!("record {i} does not start its episode"));
                }
                starts.push(i);
            } else {
                let prev = &records[i - 1];
                if rec.t != prev.t + 1 || rec.s != prev.s_next || rec.s0 != prev.s0 {
                    return bad(format!("record {i} breaks episode continuity"));
                }
            }
        }
        starts.push(records.len());
        Ok(Self {
            records,
            starts,
            meta,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_episodes(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn num_costs(&self) -> usize {
        self.meta.num_costs
    }

    pub fn episode(&self, i: usize) -> &[Record] {
        &self.records[self.starts[i]..self.starts[i + 1]]
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[Record]> {
        (0..self.num_episodes()).map(|i| self.episode(i))
    }

    /// Dataset made of the given episodes, renumbered in the given order.
    pub fn select(&self, episodes: &[usize], meta: DatasetMeta) -> Result<Self> {
        let mut records = Vec::new();
        for (new_id, &i) in episodes.iter().enumerate() {
            if i >= self.num_episodes() {
                return Err(Error::InvalidArgument(format!("no episode {i}")));
            }
            records.extend(self.episode(i).iter().map(|r| Record {
                episode: new_id,
                ..r.clone()
            }));
        }
        Self::new(records, meta)
    }

    /// Checks that every record's reward, costs and transition agree with
    /// `cmdp`.
    pub fn check_against(&self, cmdp: &Cmdp) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let ok = r.s < cmdp.num_states()
                && r.s_next < cmdp.num_states()
                && r.a < cmdp.num_actions()
                && r.c.len() == cmdp.num_costs()
                && r.r == cmdp.reward()[(r.s, r.a)]
                && r.c.iter().zip(cmdp.costs()).all(|(c, m)| *c == m[(r.s, r.a)])
                && cmdp.transition_row(r.s, r.a)[r.s_next] > 0.0;
            if !ok {
                return Err(Error::InvalidArgument(format!("record {i} disagrees with the model")));
            }
        }
        Ok(())
    }
}

fn sample_index(rng: &mut impl Rng, probs: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass
    last
}

/// Rolls out `n_episodes` episodes of `policy`.  An episode ends after
/// `max_len` steps or right after the first step with nonzero reward.
pub fn sample_trajectories(
    cmdp: &Cmdp,
    policy: &TabularPolicy,
    n_episodes: usize,
    seed: u64,
    max_len: usize,
) -> Result<TransitionDataset> {
    if n_episodes == 0 || max_len == 0 {
        return Err(Error::InvalidArgument("need at least one episode of positive length".into()));
    }
    if policy.num_states() != cmdp.num_states() || policy.num_actions() != cmdp.num_actions() {
        return Err(Error::InvalidPolicy("policy shape does not match the model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for episode in 0..n_episodes {
        let s0 = sample_index(&mut rng, cmdp.initial().iter().copied().enumerate());
        let mut s = s0;
        for t in 0..max_len {
            let a = sample_index(
                &mut rng,
                (0..cmdp.num_actions()).map(|a| (a, policy.prob(s, a))),
            );
            let s_next = sample_index(&mut rng, cmdp.successors(s, a).iter().copied());
            let r = cmdp.reward()[(s, a)];
            records.push(Record {
                episode,
                t,
                s0,
                s,
                a,
                r,
                c: cmdp.costs().iter().map(|c| c[(s, a)]).collect(),
                s_next,
            });
            if r != 0.0 {
                break;
            }
            s = s_next;
        }
    }
    TransitionDataset::new(
        records,
        DatasetMeta {
            num_costs: cmdp.num_costs(),
            cmdp_seed: None,
            policy: String::new(),
            max_len,
        },
    )
}

/// `round(beta * n)` episodes drawn without replacement from `d1`, the rest
/// from `d2`, with `d1`'s episodes first.
pub fn mix_datasets(
    d1: &TransitionDataset,
    d2: &TransitionDataset,
    beta: f64,
    n_episodes: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("mixture fraction {beta} outside [0, 1]")));
    }
    if d1.num_costs() != d2.num_costs() {
        return Err(Error::InvalidArgument("datasets disagree on the number of costs".into()));
    }
    let n1 = (beta * n_episodes as f64).round() as usize;
    let n2 = n_episodes - n1;
    for (want, have) in [(n1, d1.num_episodes()), (n2, d2.num_episodes())] {
        if want > have {
            return Err(Error::InsufficientEpisodes {
                requested: want,
                available: have,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |n: usize, of: usize| {
        let mut idx = rand::seq::index::sample(&mut rng, of, n).into_vec();
        idx.sort_unstable();
        idx
    };
    let first = pick(n1, d1.num_episodes());
    let second = pick(n2, d2.num_episodes());
    let meta = DatasetMeta {
        policy: format!("mix({};{};beta={beta})", d1.meta.policy, d2.meta.policy),
        max_len: d1.meta.max_len.max(d2.meta.max_len),
        cmdp_seed: if d1.meta.cmdp_seed == d2.meta.cmdp_seed {
            d1.meta.cmdp_seed
        } else {
            None
        },
        num_costs: d1.num_costs(),
    };
    let mut records = d1.select(&first, meta.clone())?.records;
    for r in d2.select(&second, meta.clone())?.records {
        records.push(Record {
            episode: r.episode + n1,
            ..r
        });
    }
    TransitionDataset::new(records, meta)
}

/// Serializes a dataset:
///
/// ```text
/// # dataset 1 costs=<K> cmdp_seed=<seed|none> generator=<v> max_len=<L> policy=<label>
/// episode,t,s0,s,a,r,c1,..,cK,s_next
/// <one record per line>
/// ```
pub fn write_dataset(ds: &TransitionDataset) -> String {
    let mut out = String::new();
    let seed = ds
        .meta
        .cmdp_seed
        .map_or_else(|| "none".to_string(), |s| s.to_string());
    let _ = writeln!(
        out,
        "# dataset {DATASET_FORMAT_VERSION} costs={} cmdp_seed={seed} generator={GENERATOR_VERSION} max_len={} policy={}",
        ds.num_costs(),
        ds.meta.max_len,
        ds.meta.policy
    );
    let costs: Vec<String> = (1..=ds.num_costs()).map(|k| format!("c{k}")).collect();
    let _ = writeln!(out, "episode,t,s0,s,a,r,{},s_next", costs.join(","));
    for r in &ds.records {
        let c: Vec<String> = r.c.iter().map(|&x| fmt_real(x)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.episode,
            r.t,
            r.s0,
            r.s,
            r.a,
            fmt_real(r.r),
            c.join(","),
            r.s_next
        );
    }
    out
}

pub fn read_dataset(text: &str) -> Result<TransitionDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#") || fields.next() != Some("dataset") {
        return Err(parse_err(1, "missing `# dataset` header"));
    }
    if fields.next() != Some(&DATASET_FORMAT_VERSION.to_string()[..]) {
        return Err(parse_err(1, "unsupported dataset version"));
    }
    let mut num_costs = None;
    let mut cmdp_seed = None;
    let mut max_len = MAX_EPISODE_LEN;
    let mut policy = String::new();
    // the policy label runs to the end of the line
    let rest: Vec<&str> = fields.collect();
    let mut i = 0;
    while i < rest.len() {
        let (key, value) = rest[i]
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("bad header field `{}`", rest[i])))?;
        let num = |v: &str| v.parse::<u64>().map_err(|_| parse_err(1, format!("bad `{key}`")));
        match key {
            "costs" => num_costs = Some(num(value)? as usize),
            "cmdp_seed" => cmdp_seed = if value == "none" { None } else { Some(num(value)?) },
            "generator" => {
                num(value)?;
            }
            "max_len" => max_len = num(value)? as usize,
            "policy" => {
                policy = std::iter::once(value)
                    .chain(rest[i + 1..].iter().copied())
                    .collect::<Vec<_>>()
                    .join(" ");
                break;
            }
            _ => return Err(parse_err(1, format!("unknown header field `{key}`"))),
        }
        i += 1;
    }
    let num_costs = num_costs.ok_or_else(|| parse_err(1, "header lacks `costs`"))?;
    let (_, columns) = lines.next().ok_or_else(|| parse_err(2, "missing column line"))?;
    if columns.split(',').count() != 7 + num_costs {
        return Err(parse_err(2, "column line does not match the cost count"));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 + num_costs {
            return Err(parse_err(line_no, format!("expected {} fields", 7 + num_costs)));
        }
        let int = |i: usize| {
            cells[i]
                .parse::<usize>()
                .map_err(|_| parse_err(line_no, format!("bad integer `{}`", cells[i])))
        };
        let real = |i: usize| {
            cells[i]
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("bad number `{}`", cells[i])))
        };
        records.push(Record {
            episode: int(0)?,
            t: int(1)?,
            s0: int(2)?,
            s: int(3)?,
            a: int(4)?,
            r: real(5)?,
            c: (0..num_costs).map(|k| real(6 + k)).collect::<Result<_>>()?,
            s_next: int(6 + num_costs)?,
        });
    }
    TransitionDataset::new(
        records,
        DatasetMeta {
            num_costs,
            cmdp_seed,
            policy,
            max_len,
        },
    )
}
