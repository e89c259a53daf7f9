//! Experiment reports and their CSV/JSON forms.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::fit::Fit;

/// One measured number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub run_id: String,
    pub kappa: f64,
    pub t: f64,
    pub observable: String,
    pub value: f64,
}

/// Acceptance rule applied to a single number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Rule {
    WithinRel { target: f64, rel: f64 },
    WithinAbs { target: f64, abs: f64 },
    AtMost { bound: f64 },
    AtLeast { bound: f64 },
}

impl Rule {
    pub fn holds(&self, value: f64) -> bool {
        match *self {
            Rule::WithinRel { target, rel } => (value - target).abs() <= rel * target.abs(),
            Rule::WithinAbs { target, abs } => (value - target).abs() <= abs,
            Rule::AtMost { bound } => value <= bound,
            Rule::AtLeast { bound } => value >= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub rule: Rule,
    pub pass: bool,
    /// Fit behind the value, when there is one.
    pub fit: Option<Fit>,
}

impl Verdict {
    pub fn new(name: impl Into<String>, value: f64, rule: Rule) -> Self {
        Self {
            name: name.into(),
            value,
            pass: rule.holds(value),
            rule,
            fit: None,
        }
    }

    pub fn from_fit(name: impl Into<String>, fit: Fit, rule: Rule) -> Self {
        let mut v = Self::new(name, fit.slope, rule);
        v.fit = Some(fit);
        v
    }

    /// A boolean check, stored as `1`/`0` against `≥ 1`.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Rule::AtLeast { bound: 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub build: String,
}

impl Provenance {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.experiment.seed,
            build: build_id(),
        }
    }
}

pub fn build_id() -> String {
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    format!("{} {} {profile}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub records: Vec<Record>,
    pub verdicts: Vec<Verdict>,
    /// Set when some runs failed; `failures` says which.
    pub partial: bool,
    pub failures: Vec<String>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            experiment: experiment.into(),
            records: Vec::new(),
            verdicts: Vec::new(),
            partial: false,
            failures: Vec::new(),
            provenance,
        }
    }

    pub fn record(&mut self, run_id: &str, kappa: f64, t: f64, observable: &str, value: f64) {
        self.records.push(Record {
            run_id: run_id.into(),
            kappa,
            t,
            observable: observable.into(),
            value,
        });
    }

    pub fn fail_run(&mut self, run_id: &str, why: impl std::fmt::Display) {
        self.partial = true;
        self.failures.push(format!("{run_id}: {why}"));
    }

    pub fn all_pass(&self) -> bool {
        !self.partial && self.verdicts.iter().all(|v| v.pass)
    }

    /// Re-derives every verdict from its stored number and rule.
    pub fn consistent(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass == v.rule.holds(v.value))
    }

    pub fn series(&self, run_id: &str, observable: &str) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.run_id == run_id && r.observable == observable)
            .map(|r| (r.t, r.value))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Report(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Report(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "run_id,kappa,t,observable,value")?;
        for r in &self.records {
            writeln!(w, "{},{:.16e},{:.16e},{},{:.16e}", r.run_id, r.kappa, r.t, r.observable, r.value)?;
        }
        for v in &self.verdicts {
            writeln!(w, "# verdict {} value={:.16e} pass={}", v.name, v.value, v.pass)?;
        }
        if self.partial {
            for f in &self.failures {
                writeln!(w, "# failed {f}")?;
            }
        }
        let p = &self.provenance;
        writeln!(w, "# provenance config_hash={} seed={} build={}", p.config_hash, p.seed, p.build)?;
        Ok(())
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match format {
            ReportFormat::Csv => self.write_csv(file),
            ReportFormat::Json => {
                let mut file = file;
                // `provenance` is the last field, so it closes the file.
                file.write_all(self.to_json()?.as_bytes())?;
                writeln!(file)?;
                Ok(())
            }
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            let tag = if v.pass { "PASS" } else { "FAIL" };
            s.push_str(&format!("{tag} {} = {:.6e} ({:?})\n", v.name, v.value, v.rule));
        }
        for f in &self.failures {
            s.push_str(&format!("FAIL run {f}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Reads records back from the CSV form, skipping comment lines.
pub fn read_csv_records(text: &str) -> Result<Vec<Record>> {
    let bad = |l: &str| HarnessError::Report(format!("malformed CSV line: {l}"));
    let num = |s: &str, l: &str| s.parse::<f64>().map_err(|_| bad(l));
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            Ok(Record {
                run_id: f[0].into(),
                kappa: num(f[1], l)?,
                t: num(f[2], l)?,
                observable: f[3].into(),
                value: num(f[4], l)?,
            })
        })
        .collect()
}
