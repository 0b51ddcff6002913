//! Curve files: a `#key=value` preamble followed by `task_id,run_id,step,value` rows.
//!
//! The normalization spec lives in the preamble under the keys `minimize`,
//! `l_hard`, `u_hard`, `l_soft`, `u_soft`. Without them the values are taken
//! to be normalized already. Rows of one run are contiguous with steps
//! `1, 2, 3, ...`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use lcx_core::eval::LearningCurve;
use lcx_core::normalize::NormalizationSpec;

use crate::error::{CliError, Result};

pub const CURVE_HEADER: [&str; 4] = ["task_id", "run_id", "step", "value"];

const SPEC_KEYS: [&str; 5] = ["minimize", "l_hard", "u_hard", "l_soft", "u_soft"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveFile {
    /// Preamble entries other than the spec.
    pub meta: BTreeMap<String, String>,
    pub spec: Option<NormalizationSpec>,
    pub curves: Vec<LearningCurve>,
}

fn bad(lineno: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("curve file line {lineno}: {msg}"))
}

impl CurveFile {
    pub fn new(spec: Option<NormalizationSpec>) -> Self {
        Self { meta: BTreeMap::new(), spec, curves: Vec::new() }
    }

    pub fn push(&mut self, task_id: &str, run_id: &str, values: Vec<f64>) -> Result<()> {
        self.curves.push(LearningCurve::new(task_id, run_id, values, self.spec)?);
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut preamble = BTreeMap::new();
        let mut body = String::new();
        let mut body_start = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if body.is_empty() {
                if let Some(entry) = line.strip_prefix('#') {
                    let (k, v) = entry.split_once('=').ok_or_else(|| bad(i + 1, "preamble line is not #key=value"))?;
                    if preamble.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                        return Err(bad(i + 1, format!("duplicate preamble key `{}`", k.trim())));
                    }
                    continue;
                }
                if line.trim().is_empty() {
                    continue;
                }
                body_start = i;
            }
            body.push_str(&line);
            body.push('\n');
        }

        let spec = if SPEC_KEYS.iter().any(|k| preamble.contains_key(*k)) {
            Some(
                NormalizationSpec::from_lookup(|k| preamble.get(k).map(String::as_str))
                    .map_err(|e| CliError::Io(format!("curve file preamble: {e}")))?,
            )
        } else {
            None
        };
        let meta = preamble.into_iter().filter(|(k, _)| !SPEC_KEYS.contains(&k.as_str())).collect();
        let mut file = Self { meta, spec, curves: Vec::new() };

        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let header = rdr.headers()?.clone();
        if header.iter().map(str::trim).ne(CURVE_HEADER) {
            return Err(bad(body_start + 1, format!("expected header {}", CURVE_HEADER.join(","))));
        }
        let mut current: Option<(String, String, Vec<f64>)> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, record) in rdr.records().enumerate() {
            let lineno = body_start + i + 2;
            let record = record?;
            if record.len() != 4 {
                return Err(bad(lineno, "expected 4 fields"));
            }
            let (task, run) = (record[0].trim(), record[1].trim());
            let step: usize = record[2].trim().parse().map_err(|e| bad(lineno, format!("step: {e}")))?;
            let value: f64 = record[3].trim().parse().map_err(|e| bad(lineno, format!("value: {e}")))?;
            let same = matches!(&current, Some((t, r, _)) if t == task && r == run);
            if !same {
                if let Some((t, r, values)) = current.take() {
                    file.push(&t, &r, values)?;
                }
                if !seen.insert((task.to_string(), run.to_string())) {
                    return Err(bad(lineno, format!("rows of {task}/{run} are not contiguous")));
                }
                current = Some((task.to_string(), run.to_string(), Vec::new()));
            }
            let values = &mut current.as_mut().expect("run started").2;
            if step != values.len() + 1 {
                return Err(bad(lineno, format!("{task}/{run}: expected step {}, got {step}", values.len() + 1)));
            }
            values.push(value);
        }
        if let Some((t, r, values)) = current {
            file.push(&t, &r, values)?;
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut preamble: BTreeMap<&str, String> = self.meta.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        if let Some(spec) = &self.spec {
            preamble.extend(spec.to_pairs());
        }
        for (k, v) in &preamble {
            writeln!(w, "#{k}={v}")?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CURVE_HEADER)?;
        for c in &self.curves {
            for (i, v) in c.values.iter().enumerate() {
                wtr.write_record([c.task_id.as_str(), c.run_id.as_str(), &(i + 1).to_string(), &v.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.write(std::io::BufWriter::new(f))
    }

    /// Replaces each curve's `u_soft` with its first observation, the usual
    /// reference level for loss curves.
    pub fn first_value_as_u_soft(&mut self) -> Result<()> {
        let spec = self.spec.ok_or_else(|| CliError::Config("u_soft_from_first needs a normalization spec".into()))?;
        for c in &mut self.curves {
            let local = NormalizationSpec { u_soft: c.values[0], ..spec };
            local.validate().map_err(|e| CliError::Io(format!("{}: {e}", c.id())))?;
            c.spec = Some(local);
        }
        Ok(())
    }

    /// Task ids in order of first appearance with their curves.
    pub fn tasks(&self) -> Vec<(String, Vec<&LearningCurve>)> {
        let mut out: Vec<(String, Vec<&LearningCurve>)> = Vec::new();
        for c in &self.curves {
            match out.iter_mut().find(|(t, _)| *t == c.task_id) {
                Some((_, v)) => v.push(c),
                None => out.push((c.task_id.clone(), vec![c])),
            }
        }
        out
    }
}
