//! Checkpoint persistence. A checkpoint is a directory:
//!
//! - `config.txt` — the run configuration (key-value text)
//! - `meta.txt` — normal class, mixture size, channel statistics, and the
//!   fixed inference permutations
//! - `ubranch.params` / `lbranch.params` — binary parameter stores with
//!   exact f64 bit patterns
//! - `calibration.txt` — per-task held-out score tables
//! - `class_stats.txt` — optional per-position response Gaussians
//!
//! Loading rebuilds the models from the config and overwrites their
//! parameters, so a round trip reproduces scores bit for bit.

use super::config::RunConfig;
use super::trainer::{encoder_config, lbranch_config, TrainedModel};
use crate::image::PiecePermutation;
use crate::network::{LBranchModel, ParamStore, UBranchModel};
use crate::scoring::{CalibrationTable, ClassStats, TaskId};
use crate::{CoreError, Result};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use std::fmt::Write as _;
use std::path::Path;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const PARAM_MAGIC: &[u8; 8] = b"MCPARAM1";

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

// --- binary parameter codec ---

fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.extend((store.names().len() as u32).to_le_bytes());
    for name in store.names() {
        let value = store.get(name);
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.push(store.is_buffer(name) as u8);
        out.push(value.ndim() as u8);
        for &d in value.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in value.iter() {
            out.extend(v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| bad("parameter file truncated"))?;
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

fn decode_params(bytes: &[u8]) -> Result<Vec<(String, bool, ArrayD<f64>)>> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(8)? != PARAM_MAGIC {
        return Err(bad("not a parameter file"));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| bad("parameter name is not utf-8"))?
            .to_string();
        let is_buffer = cur.u8()? != 0;
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let b = cur.take(8)?;
            data.push(f64::from_bits(u64::from_le_bytes([
                b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
            ])));
        }
        let value = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| bad(format!("bad parameter shape: {e}")))?;
        entries.push((name, is_buffer, value));
    }
    if cur.at != bytes.len() {
        return Err(bad("trailing bytes in parameter file"));
    }
    Ok(entries)
}

/// Overwrite `store` from decoded entries; the name set, shapes, and
/// buffer flags must match exactly.
fn restore_params(store: &mut ParamStore, entries: Vec<(String, bool, ArrayD<f64>)>) -> Result<()> {
    if entries.len() != store.names().len() {
        return Err(bad(format!(
            "parameter count {} does not match model {}",
            entries.len(),
            store.names().len()
        )));
    }
    for (name, is_buffer, value) in entries {
        if !store.names().iter().any(|n| *n == name) {
            return Err(bad(format!("unexpected parameter {name:?}")));
        }
        if store.is_buffer(&name) != is_buffer {
            return Err(bad(format!("buffer flag mismatch for {name:?}")));
        }
        if store.get(&name).shape() != value.shape() {
            return Err(bad(format!("shape mismatch for {name:?}")));
        }
        store.set(&name, value);
    }
    Ok(())
}

// --- key-value text helpers ---

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    /// Next non-empty line split into whitespace fields.
    fn next_fields(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            if !line.trim().is_empty() {
                return Some((i + 1, line.split_whitespace().collect()));
            }
        }
        None
    }

    /// Expect a line `key v...` and return the values.
    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (lineno, fields) = self
            .next_fields()
            .ok_or_else(|| bad(format!("missing {key:?} line")))?;
        if fields.first() != Some(&key) {
            return Err(bad(format!("line {lineno}: expected {key:?}, got {:?}", fields.first())));
        }
        Ok(fields[1..].to_vec())
    }
}

fn parse_one<T: std::str::FromStr>(fields: &[&str], what: &str) -> Result<T> {
    if fields.len() != 1 {
        return Err(bad(format!("expected one value for {what}")));
    }
    fields[0]
        .parse()
        .map_err(|_| bad(format!("bad value for {what}: {:?}", fields[0])))
}

fn parse_floats(fields: &[&str], what: &str) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.parse().map_err(|_| bad(format!("bad number in {what}: {f:?}"))))
        .collect()
}

// --- per-file codecs ---

fn meta_text(model: &TrainedModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "checkpoint_schema {CHECKPOINT_SCHEMA_VERSION}");
    let _ = writeln!(out, "normal_class {}", model.normal_class);
    let _ = writeln!(out, "k {}", model.k);
    let m = model.channel_mean;
    let s = model.channel_std;
    let _ = writeln!(out, "channel_mean {} {} {}", m[0], m[1], m[2]);
    let _ = writeln!(out, "channel_std {} {} {}", s[0], s[1], s[2]);
    let _ = writeln!(out, "perm_count {}", model.inference_perms.len());
    for perm in &model.inference_perms {
        let joined: Vec<String> = perm.as_slice().iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "perm {}", joined.join(" "));
    }
    out
}

struct Meta {
    normal_class: String,
    k: usize,
    channel_mean: [f64; 3],
    channel_std: [f64; 3],
    perms: Vec<PiecePermutation>,
}

fn parse_meta(text: &str) -> Result<Meta> {
    let mut lines = Lines::new(text);
    let version: u32 = parse_one(&lines.expect("checkpoint_schema")?, "checkpoint_schema")?;
    if version != CHECKPOINT_SCHEMA_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint schema {version} (expected {CHECKPOINT_SCHEMA_VERSION})"
        )));
    }
    let normal_class: String = parse_one(&lines.expect("normal_class")?, "normal_class")?;
    let k: usize = parse_one(&lines.expect("k")?, "k")?;
    let to3 = |v: Vec<f64>, what: &str| -> Result<[f64; 3]> {
        <[f64; 3]>::try_from(v).map_err(|_| bad(format!("{what} needs 3 values")))
    };
    let channel_mean = to3(parse_floats(&lines.expect("channel_mean")?, "channel_mean")?, "channel_mean")?;
    let channel_std = to3(parse_floats(&lines.expect("channel_std")?, "channel_std")?, "channel_std")?;
    let count: usize = parse_one(&lines.expect("perm_count")?, "perm_count")?;
    let mut perms = Vec::with_capacity(count);
    for _ in 0..count {
        let fields = lines.expect("perm")?;
        let mapping = fields
            .iter()
            .map(|f| f.parse().map_err(|_| bad(format!("bad perm entry {f:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        perms.push(PiecePermutation::new(mapping)?);
    }
    Ok(Meta {
        normal_class,
        k,
        channel_mean,
        channel_std,
        perms,
    })
}

fn calibration_text(table: &CalibrationTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "calibration_schema {CHECKPOINT_SCHEMA_VERSION}");
    for task in table.tasks() {
        let values = table.table(task).expect("listed task");
        let _ = writeln!(out, "task {task} {}", values.len());
        for v in values {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

fn parse_calibration(text: &str) -> Result<CalibrationTable> {
    let mut lines = Lines::new(text);
    let version: u32 = parse_one(&lines.expect("calibration_schema")?, "calibration_schema")?;
    if version != CHECKPOINT_SCHEMA_VERSION {
        return Err(bad(format!("unsupported calibration schema {version}")));
    }
    let mut table = CalibrationTable::new();
    while let Some((lineno, fields)) = lines.next_fields() {
        if fields.len() != 3 || fields[0] != "task" {
            return Err(bad(format!("line {lineno}: expected `task <id> <count>`")));
        }
        let task: TaskId = fields[1].parse()?;
        let count: usize = parse_one(&fields[2..], "task count")?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let (lineno, fields) = lines
                .next_fields()
                .ok_or_else(|| bad("calibration file truncated"))?;
            if fields.len() != 1 {
                return Err(bad(format!("line {lineno}: expected one score")));
            }
            values.push(parse_floats(&fields, "calibration score")?[0]);
        }
        table.insert(task, values)?;
    }
    Ok(table)
}

fn class_stats_text(stats: &ClassStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "class_stats_schema {CHECKPOINT_SCHEMA_VERSION}");
    let _ = writeln!(out, "dim {}", stats.dim());
    let labels = stats.labels();
    let _ = writeln!(out, "classes {}", labels.len());
    let fmt_row = |row: &[f64]| {
        row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    };
    for label in labels {
        let g = stats.class(label).expect("listed label");
        let _ = writeln!(out, "class {label} {}", g.count);
        let _ = writeln!(out, "mean {}", fmt_row(g.mean.as_slice().unwrap()));
        for row in g.covariance.rows() {
            let _ = writeln!(out, "cov {}", fmt_row(row.as_slice().unwrap()));
        }
    }
    out
}

fn parse_class_stats(text: &str) -> Result<ClassStats> {
    let mut lines = Lines::new(text);
    let version: u32 = parse_one(&lines.expect("class_stats_schema")?, "class_stats_schema")?;
    if version != CHECKPOINT_SCHEMA_VERSION {
        return Err(bad(format!("unsupported class stats schema {version}")));
    }
    let dim: usize = parse_one(&lines.expect("dim")?, "dim")?;
    let classes: usize = parse_one(&lines.expect("classes")?, "classes")?;
    let mut stats = ClassStats::new(dim)?;
    for _ in 0..classes {
        let header = lines.expect("class")?;
        if header.len() != 2 {
            return Err(bad("expected `class <label> <count>`"));
        }
        let label: usize = parse_one(&header[..1], "class label")?;
        let count: usize = parse_one(&header[1..], "class count")?;
        let mean = Array1::from_vec(parse_floats(&lines.expect("mean")?, "mean")?);
        let mut cov = Array2::zeros((dim, dim));
        for r in 0..dim {
            let row = parse_floats(&lines.expect("cov")?, "cov")?;
            if row.len() != dim {
                return Err(bad(format!("covariance row has {} entries, expected {dim}", row.len())));
            }
            for (c, v) in row.into_iter().enumerate() {
                cov[[r, c]] = v;
            }
        }
        stats.insert_class(label, mean, cov, count)?;
    }
    Ok(stats)
}

// --- directory-level save / load / inspect ---

pub fn save_checkpoint(model: &TrainedModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), model.config.serialize())?;
    std::fs::write(dir.join("meta.txt"), meta_text(model))?;
    std::fs::write(dir.join("ubranch.params"), encode_params(&model.ubranch.params))?;
    if let Some(lbranch) = &model.lbranch {
        std::fs::write(dir.join("lbranch.params"), encode_params(&lbranch.params))?;
    }
    std::fs::write(dir.join("calibration.txt"), calibration_text(&model.calibration))?;
    if let Some(stats) = &model.class_stats {
        std::fs::write(dir.join("class_stats.txt"), class_stats_text(stats))?;
    }
    Ok(())
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel> {
    if !dir.is_dir() {
        return Err(bad(format!("{} is not a checkpoint directory", dir.display())));
    }
    let config = RunConfig::parse(&read_text(dir, "config.txt")?)
        .map_err(|e| bad(format!("config.txt: {e}")))?;
    let meta = parse_meta(&read_text(dir, "meta.txt")?)?;

    let mut ubranch = UBranchModel::new(encoder_config(&config), config.seed);
    let ubytes = std::fs::read(dir.join("ubranch.params"))
        .map_err(|e| bad(format!("cannot read ubranch.params: {e}")))?;
    restore_params(&mut ubranch.params, decode_params(&ubytes)?)?;

    let lbranch = if config.puzzle_only {
        None
    } else {
        let mut model = LBranchModel::new(lbranch_config(meta.k), config.seed.wrapping_add(1));
        let bytes = std::fs::read(dir.join("lbranch.params"))
            .map_err(|e| bad(format!("cannot read lbranch.params: {e}")))?;
        restore_params(&mut model.params, decode_params(&bytes)?)?;
        Some(model)
    };

    let calibration = parse_calibration(&read_text(dir, "calibration.txt")?)?;
    let stats_path = dir.join("class_stats.txt");
    let class_stats = if stats_path.is_file() {
        Some(parse_class_stats(&read_text(dir, "class_stats.txt")?)?)
    } else {
        None
    };

    if meta.perms.iter().any(|p| p.len() != config.n()) {
        return Err(bad("stored permutations do not match the grid size"));
    }
    if meta.perms.len() != config.n_sp {
        return Err(bad(format!(
            "{} stored permutations but config expects {}",
            meta.perms.len(),
            config.n_sp
        )));
    }

    Ok(TrainedModel {
        config,
        normal_class: meta.normal_class,
        k: meta.k,
        channel_mean: meta.channel_mean,
        channel_std: meta.channel_std,
        ubranch,
        lbranch,
        inference_perms: meta.perms,
        calibration,
        class_stats,
        train_log: Vec::new(),
        step_log: Vec::new(),
    })
}

/// Human-readable checkpoint summary (also validates the checkpoint by
/// fully loading it).
pub fn inspect_checkpoint(dir: &Path) -> Result<String> {
    let model = load_checkpoint(dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "normal_class {}", model.normal_class);
    let _ = writeln!(out, "grid {}x{}", model.config.n_h, model.config.n_w);
    let _ = writeln!(out, "k {}", model.k);
    let _ = writeln!(out, "n_sp {}", model.config.n_sp);
    let _ = writeln!(out, "fusion {}", model.config.fusion);
    let _ = writeln!(out, "puzzle_ood {}", model.config.puzzle_ood);
    let _ = writeln!(out, "puzzle_only {}", model.config.puzzle_only);
    let _ = writeln!(out, "ubranch_parameters {}", model.ubranch.params.num_scalars());
    let lcount = model.lbranch.as_ref().map(|l| l.params.num_scalars()).unwrap_or(0);
    let _ = writeln!(out, "lbranch_parameters {lcount}");
    for task in model.calibration.tasks() {
        let len = model.calibration.table(task).map(<[f64]>::len).unwrap_or(0);
        let _ = writeln!(out, "calibration {task} {len}");
    }
    match &model.class_stats {
        Some(s) => {
            let _ = writeln!(out, "class_stats {} classes dim {}", s.labels().len(), s.dim());
        }
        None => {
            let _ = writeln!(out, "class_stats none");
        }
    }
    let _ = writeln!(out, "config_hash {}", model.config.hash());
    Ok(out)
}
