//! Evaluation report document: metrics, per-class breakdown, run metadata.

use crate::{CoreError, Result};

/// Current report document schema.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// The three detection metrics at one operating configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricBlock {
    pub auroc: f64,
    pub eer: f64,
    pub apcer_at_bpcer: f64,
}

impl MetricBlock {
    fn validate(&self, context: &str) -> Result<()> {
        for (name, v) in [
            ("auroc", self.auroc),
            ("eer", self.eer),
            ("apcer_at_bpcer", self.apcer_at_bpcer),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::Data(format!(
                    "{context}: {name} {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Metrics for one class paired against the run's normal class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_name: String,
    pub metrics: MetricBlock,
    pub seed: u64,
}

/// Full evaluation output: per-class metrics plus their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub seed: u64,
    pub config_hash: String,
    pub bpcer_level: f64,
    pub per_class: Vec<ClassReport>,
    pub mean: MetricBlock,
}

impl EvaluationReport {
    /// Assembles a report; the mean block is always recomputed from the
    /// per-class entries so the two can never drift apart.
    pub fn from_classes(
        seed: u64,
        config_hash: String,
        bpcer_level: f64,
        per_class: Vec<ClassReport>,
    ) -> Result<EvaluationReport> {
        if per_class.is_empty() {
            return Err(CoreError::EmptyInput("report with no class entries".into()));
        }
        for c in &per_class {
            c.metrics.validate(&c.class_name)?;
            if c.class_name.contains(char::is_whitespace) || c.class_name.is_empty() {
                return Err(CoreError::Data(format!(
                    "class name {:?} must be non-empty without whitespace",
                    c.class_name
                )));
            }
        }
        let n = per_class.len() as f64;
        let mean = MetricBlock {
            auroc: per_class.iter().map(|c| c.metrics.auroc).sum::<f64>() / n,
            eer: per_class.iter().map(|c| c.metrics.eer).sum::<f64>() / n,
            apcer_at_bpcer: per_class
                .iter()
                .map(|c| c.metrics.apcer_at_bpcer)
                .sum::<f64>()
                / n,
        };
        Ok(EvaluationReport {
            seed,
            config_hash,
            bpcer_level,
            per_class,
            mean,
        })
    }

    /// Serializes as the versioned key-value document.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("schema_version {REPORT_SCHEMA_VERSION}\n"));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("config_hash {}\n", self.config_hash));
        out.push_str(&format!("bpcer_level {}\n", self.bpcer_level));
        out.push_str(&format!("classes {}\n", self.per_class.len()));
        for (i, c) in self.per_class.iter().enumerate() {
            out.push_str(&format!("class {i} name {}\n", c.class_name));
            out.push_str(&format!("class {i} seed {}\n", c.seed));
            out.push_str(&format!("class {i} auroc {}\n", c.metrics.auroc));
            out.push_str(&format!("class {i} eer {}\n", c.metrics.eer));
            out.push_str(&format!(
                "class {i} apcer_at_bpcer {}\n",
                c.metrics.apcer_at_bpcer
            ));
        }
        out.push_str(&format!("mean auroc {}\n", self.mean.auroc));
        out.push_str(&format!("mean eer {}\n", self.mean.eer));
        out.push_str(&format!("mean apcer_at_bpcer {}\n", self.mean.apcer_at_bpcer));
        out
    }

    /// Parses a document produced by [`EvaluationReport::to_text`].
    pub fn from_text(text: &str) -> Result<EvaluationReport> {
        let mut fields: Vec<(Vec<&str>, &str)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts: Vec<&str> = line.split_whitespace().collect();
            let value = parts.pop().ok_or_else(|| bad_report("blank line"))?;
            fields.push((parts, value));
        }
        let lookup = |key: &[&str]| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| bad_report(&format!("missing key {}", key.join(" "))))
        };
        let version: u32 = parse(lookup(&["schema_version"])?, "schema_version")?;
        if version != REPORT_SCHEMA_VERSION {
            return Err(bad_report(&format!(
                "unsupported schema version {version} (expected {REPORT_SCHEMA_VERSION})"
            )));
        }
        let seed: u64 = parse(lookup(&["seed"])?, "seed")?;
        let config_hash = lookup(&["config_hash"])?.to_string();
        let bpcer_level: f64 = parse(lookup(&["bpcer_level"])?, "bpcer_level")?;
        let classes: usize = parse(lookup(&["classes"])?, "classes")?;
        let mut per_class = Vec::with_capacity(classes);
        for i in 0..classes {
            let idx = i.to_string();
            per_class.push(ClassReport {
                class_name: lookup(&["class", &idx, "name"])?.to_string(),
                seed: parse(lookup(&["class", &idx, "seed"])?, "class seed")?,
                metrics: MetricBlock {
                    auroc: parse(lookup(&["class", &idx, "auroc"])?, "class auroc")?,
                    eer: parse(lookup(&["class", &idx, "eer"])?, "class eer")?,
                    apcer_at_bpcer: parse(
                        lookup(&["class", &idx, "apcer_at_bpcer"])?,
                        "class apcer",
                    )?,
                },
            });
        }
        let report =
            EvaluationReport::from_classes(seed, config_hash, bpcer_level, per_class)?;
        // The stored mean must agree with the recomputed one.
        let stored = MetricBlock {
            auroc: parse(lookup(&["mean", "auroc"])?, "mean auroc")?,
            eer: parse(lookup(&["mean", "eer"])?, "mean eer")?,
            apcer_at_bpcer: parse(lookup(&["mean", "apcer_at_bpcer"])?, "mean apcer")?,
        };
        for (got, want) in [
            (stored.auroc, report.mean.auroc),
            (stored.eer, report.mean.eer),
            (stored.apcer_at_bpcer, report.mean.apcer_at_bpcer),
        ] {
            if (got - want).abs() > 1e-12 {
                return Err(bad_report("stored mean disagrees with per-class entries"));
            }
        }
        Ok(report)
    }
}

fn bad_report(msg: &str) -> CoreError {
    CoreError::Data(format!("malformed report: {msg}"))
}

fn parse<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| bad_report(&format!("unparseable {what} value {raw:?}")))
}
