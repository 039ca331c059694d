//! Plain-text problem instances.
//!
//! ```text
//! # data distribution over the points
//! [space]
//! 0.3 0.3 0.35 0.05
//! # one row of losses per hypothesis
//! [losses]
//! 1 0 0 0
//! 1 0 0 1
//! [binary]
//! true
//! [prior]
//! 0.8 0.2
//! [posterior]
//! 0.95 0.05
//! ```
//!
//! `#` starts a comment. Numbers are separated by whitespace or commas.
//! `[space]` and `[losses]` are required; the prior defaults to uniform and
//! the posterior is optional. `[binary]` is a declaration checked against
//! the table.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gibbs::ProbMeasure;
use crate::model::{DataDistribution, LossTable};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub dist: DataDistribution,
    pub table: LossTable,
    pub prior: ProbMeasure,
    pub posterior: Option<ProbMeasure>,
}

const SECTIONS: [&str; 5] = ["space", "losses", "binary", "prior", "posterior"];

struct Section {
    header_line: usize,
    rows: Vec<(usize, String)>,
}

fn parse_numbers(line: usize, text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("'{t}' is not a number")))
        })
        .collect()
}

fn single_row(name: &str, section: &Section) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (line, text) in &section.rows {
        values.extend(parse_numbers(*line, text)?);
    }
    if values.is_empty() {
        return Err(Error::parse(section.header_line, format!("[{name}] is empty")));
    }
    Ok(values)
}

fn at_line<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::parse(line, msg),
        other => other,
    })
}

impl Instance {
    pub fn new(
        dist: DataDistribution,
        table: LossTable,
        prior: ProbMeasure,
        posterior: Option<ProbMeasure>,
    ) -> Result<Self> {
        table.check_distribution(&dist)?;
        prior.check_table(&table)?;
        if let Some(q) = &posterior {
            q.check_table(&table)?;
        }
        Ok(Self {
            dist,
            table,
            prior,
            posterior,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Section)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|c| c.strip_suffix(']')) {
                let name = name.trim().to_ascii_lowercase();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(Error::parse(line, format!("unknown section [{name}]")));
                }
                if sections.iter().any(|(n, _)| *n == name) {
                    return Err(Error::parse(line, format!("duplicate section [{name}]")));
                }
                sections.push((
                    name,
                    Section {
                        header_line: line,
                        rows: Vec::new(),
                    },
                ));
                continue;
            }
            match sections.last_mut() {
                Some((_, section)) => section.rows.push((line, content.to_string())),
                None => return Err(Error::parse(line, "data before the first section header")),
            }
        }
        let find = |name: &str| sections.iter().find(|(n, _)| n == name).map(|(_, s)| s);

        let space = find("space").ok_or_else(|| Error::parse(0, "missing [space] section"))?;
        let dist = at_line(space.header_line, DataDistribution::new(single_row("space", space)?))?;

        let losses = find("losses").ok_or_else(|| Error::parse(0, "missing [losses] section"))?;
        let rows = losses
            .rows
            .iter()
            .map(|(line, text)| parse_numbers(*line, text))
            .collect::<Result<Vec<_>>>()?;
        let table = at_line(losses.header_line, LossTable::new(rows))?;

        if let Some(binary) = find("binary") {
            let declared = binary
                .rows
                .iter()
                .map(|(_, t)| t.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let declared = match declared.trim() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => return Err(Error::parse(binary.header_line, format!("[binary] must be true or false, got '{other}'"))),
            };
            if declared && !table.is_binary() {
                return Err(Error::parse(binary.header_line, "declared binary but the loss table has non-{0,1} entries"));
            }
        }

        let prior = match find("prior") {
            Some(s) => at_line(s.header_line, ProbMeasure::new(single_row("prior", s)?))?,
            None => ProbMeasure::uniform(table.hypothesis_count())?,
        };
        let posterior = match find("posterior") {
            Some(s) => Some(at_line(s.header_line, ProbMeasure::new(single_row("posterior", s)?))?),
            None => None,
        };
        at_line(space.header_line, Self::new(dist, table, prior, posterior))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Text form; numbers use the shortest representation that reads back exactly.
    pub fn to_text(&self) -> String {
        fn row(out: &mut String, values: &[f64]) {
            let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            out.push_str(&joined.join(" "));
            out.push('\n');
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {} hypotheses, {} points",
            self.table.hypothesis_count(),
            self.table.point_count()
        );
        out.push_str("[space]\n");
        row(&mut out, self.dist.probs());
        out.push_str("[losses]\n");
        for r in self.table.rows() {
            row(&mut out, r);
        }
        let _ = writeln!(out, "[binary]\n{}", self.table.is_binary());
        out.push_str("[prior]\n");
        row(&mut out, self.prior.weights());
        if let Some(q) = &self.posterior {
            out.push_str("[posterior]\n");
            row(&mut out, q.weights());
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Random instance: point weights and prior weights uniform on `[0.05, 1.05]`
/// before normalization; each hypothesis gets its own error rate in `[0, 0.6]`
/// and, for binary tables, errs on each point with that probability.
/// Non-binary losses are uniform on `[0, 2 * rate]` clipped to `[0, 1]`.
pub fn random_instance(hypotheses: usize, points: usize, binary: bool, seed: u64) -> Result<Instance> {
    if hypotheses == 0 || points == 0 {
        return Err(Error::invalid("need at least one hypothesis and one point"));
    }
    let mut r = rng::stream(seed, 0);
    let dist = DataDistribution::from_weights(&(0..points).map(|_| 0.05 + r.random::<f64>()).collect::<Vec<_>>())?;
    let mut rows = Vec::with_capacity(hypotheses);
    for _ in 0..hypotheses {
        let rate = 0.6 * r.random::<f64>();
        rows.push(
            (0..points)
                .map(|_| {
                    if binary {
                        if r.random::<f64>() < rate { 1.0 } else { 0.0 }
                    } else {
                        (2.0 * rate * r.random::<f64>()).min(1.0)
                    }
                })
                .collect(),
        );
    }
    let table = LossTable::new(rows)?;
    let prior = ProbMeasure::from_weights(&(0..hypotheses).map(|_| 0.05 + r.random::<f64>()).collect::<Vec<_>>())?;
    Instance::new(dist, table, prior, None)
}
