//! CSV inputs of the `score` and `eval` subcommands.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nlscore::ScoreType;

/// Enrollment vectors grouped by class, in order of first appearance.
pub struct EnrollSet {
    pub class_ids: Vec<String>,
    pub samples: Vec<Vec<Vec<f64>>>,
}

/// Test vectors with optional claimed/true class ids.
pub struct TestSet {
    pub test_ids: Vec<String>,
    pub class_ids: Vec<Option<String>>,
    pub vectors: Vec<Vec<f64>>,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
}

fn parse_vector(fields: &csv::StringRecord, skip: usize, path: &Path, line: u64) -> Result<Vec<f64>> {
    fields
        .iter()
        .skip(skip)
        .enumerate()
        .map(|(i, f)| {
            f.parse::<f64>()
                .with_context(|| format!("{}:{line}: column {} is not a number: `{f}`", path.display(), i + skip + 1))
        })
        .collect()
}

/// Reads `class_id,v1,...,vd` rows (with a header row).
pub fn read_enroll(path: &Path, dim: usize) -> Result<EnrollSet> {
    let mut set = EnrollSet { class_ids: Vec::new(), samples: Vec::new() };
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in reader(path)?.records() {
        let row = row.with_context(|| format!("malformed CSV in {}", path.display()))?;
        let line = row.position().map_or(0, |p| p.line());
        let v = parse_vector(&row, 1, path, line)?;
        if v.len() != dim {
            bail!("{}:{line}: expected {dim} values, found {}", path.display(), v.len());
        }
        let id = row[0].to_string();
        let k = *index.entry(id.clone()).or_insert_with(|| {
            set.class_ids.push(id);
            set.samples.push(Vec::new());
            set.samples.len() - 1
        });
        set.samples[k].push(v);
    }
    if set.class_ids.is_empty() {
        bail!("{} has no enrollment rows", path.display());
    }
    Ok(set)
}

/// Reads `test_id,class_id,v1,...,vd` rows; `class_id` may be empty.
pub fn read_tests(path: &Path, dim: usize) -> Result<TestSet> {
    let mut set = TestSet { test_ids: Vec::new(), class_ids: Vec::new(), vectors: Vec::new() };
    for row in reader(path)?.records() {
        let row = row.with_context(|| format!("malformed CSV in {}", path.display()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() < 2 {
            bail!("{}:{line}: expected test_id,class_id,values...", path.display());
        }
        let v = parse_vector(&row, 2, path, line)?;
        if v.len() != dim {
            bail!("{}:{line}: expected {dim} values, found {}", path.display(), v.len());
        }
        set.test_ids.push(row[0].to_string());
        set.class_ids.push(Some(row[1].to_string()).filter(|s| !s.is_empty()));
        set.vectors.push(v);
    }
    if set.vectors.is_empty() {
        bail!("{} has no test rows", path.display());
    }
    Ok(set)
}

/// One row of a scores CSV.
pub struct ScoreRow {
    pub trial_id: String,
    pub score_type: ScoreType,
    pub is_target: bool,
    pub value: f64,
}

/// Reads a `trial_id,score_type,is_target,value` file.
pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let expect = ["trial_id", "score_type", "is_target", "value"];
    if header.iter().ne(expect) {
        bail!("{}: header must be `{}`", path.display(), expect.join(","));
    }
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.with_context(|| format!("malformed CSV in {}", path.display()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            bail!("{}:{line}: expected 4 columns, found {}", path.display(), row.len());
        }
        let score_type: ScoreType = row[1].parse().map_err(|e| anyhow::anyhow!("{}:{line}: {e}", path.display()))?;
        let is_target = match &row[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => bail!("{}:{line}: is_target must be 0 or 1, found `{other}`", path.display()),
        };
        let value: f64 = row[3]
            .parse()
            .with_context(|| format!("{}:{line}: value is not a number: `{}`", path.display(), &row[3]))?;
        rows.push(ScoreRow { trial_id: row[0].to_string(), score_type, is_target, value });
    }
    Ok(rows)
}

/// Test part of a `test:class` trial id (everything before the last colon).
pub fn test_key(trial_id: &str) -> &str {
    trial_id.rsplit_once(':').map_or(trial_id, |(t, _)| t)
}
