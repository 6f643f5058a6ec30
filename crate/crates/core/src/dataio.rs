//! On-disk formats: wide CSV and long JSONL response matrices, item bank
//! JSON, and canonical result bundles.
//!
//! Loading is fail-fast: malformed cells, duplicate ids, and all-missing
//! respondent rows are errors, never silently repaired. Bundles are written
//! as canonical JSON (sorted keys, floats rounded to 6 significant digits)
//! so identical inputs produce byte-identical files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{Convergence, ItemParams};
use crate::error::{Error, Result};
use crate::evaluate::{ComparisonReport, DistStats};
use crate::fpc::AbilityEstimates;

/// Input format for response matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseFormat {
    WideCsv,
    LongJsonl,
}

// ---------------------------------------------------------------------------
// Item bank
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankItem {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_difficulty: Option<f64>,
}

/// Ordered item bank; its order defines column order downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemBank {
    pub items: Vec<BankItem>,
}

impl ItemBank {
    pub fn new(items: Vec<BankItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("item bank has no items"));
        }
        let mut seen = HashSet::new();
        for item in &items {
            if item.item_id.is_empty() {
                return Err(Error::invalid("item bank contains an empty item_id"));
            }
            if !seen.insert(item.item_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate item_id '{}' in item bank",
                    item.item_id
                )));
            }
            if let Some(d) = item.fixed_difficulty {
                if !d.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite fixed_difficulty for item '{}'",
                        item.item_id
                    )));
                }
            }
        }
        Ok(ItemBank { items })
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.item_id.clone()).collect()
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.items.iter().any(|i| i.item_id == item_id)
    }

    /// Fixed difficulties as calibrated item parameters; errors unless every
    /// item carries one.
    pub fn fixed_item_params(&self) -> Result<ItemParams> {
        let mut estimates = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let beta = item.fixed_difficulty.ok_or_else(|| {
                Error::invalid(format!(
                    "fixed-parameter run requires fixed_difficulty on every item; '{}' has none",
                    item.item_id
                ))
            })?;
            estimates.push(crate::calibrate::ItemEstimate {
                item_id: item.item_id.clone(),
                beta,
                se: None,
                status: crate::calibrate::ItemStatus::Ok,
            });
        }
        Ok(ItemParams { items: estimates })
    }
}

pub fn load_item_bank(path: &Path) -> Result<ItemBank> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bank: ItemBank = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::input(path, format!("invalid item bank JSON: {e}")))?;
    ItemBank::new(bank.items).map_err(|e| Error::input(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Response matrix
// ---------------------------------------------------------------------------

/// One respondent: id, source label, and one cell per item column.
/// `None` is a missing response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RespondentRow {
    pub respondent_id: String,
    pub source: String,
    pub cells: Vec<Option<u8>>,
}

/// Persons-by-items dichotomous score matrix with missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    item_ids: Vec<String>,
    rows: Vec<RespondentRow>,
}

impl ResponseMatrix {
    pub fn new(item_ids: Vec<String>, rows: Vec<RespondentRow>) -> Result<Self> {
        if item_ids.is_empty() {
            return Err(Error::invalid("response matrix needs at least one item column"));
        }
        let mut seen_items = HashSet::new();
        for id in &item_ids {
            if id.is_empty() {
                return Err(Error::invalid("empty item_id in response matrix"));
            }
            if !seen_items.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate item column '{id}'")));
            }
        }
        let mut seen_resp = HashSet::new();
        for row in &rows {
            if row.respondent_id.is_empty() {
                return Err(Error::invalid("empty respondent_id"));
            }
            if !seen_resp.insert(row.respondent_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate respondent_id '{}'",
                    row.respondent_id
                )));
            }
            if row.cells.len() != item_ids.len() {
                return Err(Error::invalid(format!(
                    "respondent '{}' has {} cells but there are {} items",
                    row.respondent_id,
                    row.cells.len(),
                    item_ids.len()
                )));
            }
            if row.cells.iter().any(|c| matches!(c, Some(v) if *v > 1)) {
                return Err(Error::invalid(format!(
                    "respondent '{}' has a score outside {{0,1}}",
                    row.respondent_id
                )));
            }
            if row.cells.iter().all(Option::is_none) {
                return Err(Error::invalid(format!(
                    "respondent '{}' has no observed responses",
                    row.respondent_id
                )));
            }
        }
        Ok(ResponseMatrix { item_ids, rows })
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn rows(&self) -> &[RespondentRow] {
        &self.rows
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_respondents(&self) -> usize {
        self.rows.len()
    }

    /// Respondent counts per source label, sorted by label.
    pub fn source_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for row in &self.rows {
            *counts.entry(row.source.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Rows reordered lexicographically by respondent_id.
    pub fn sorted_by_respondent_id(&self) -> ResponseMatrix {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));
        ResponseMatrix {
            item_ids: self.item_ids.clone(),
            rows,
        }
    }

    /// Keep only the listed columns, in the listed order.
    pub fn restrict_columns(&self, keep: &[String]) -> Result<ResponseMatrix> {
        let mut indices = Vec::with_capacity(keep.len());
        for id in keep {
            let idx = self
                .item_ids
                .iter()
                .position(|c| c == id)
                .ok_or_else(|| Error::invalid(format!("item '{id}' not present in matrix")))?;
            indices.push(idx);
        }
        let rows = self
            .rows
            .iter()
            .map(|r| RespondentRow {
                respondent_id: r.respondent_id.clone(),
                source: r.source.clone(),
                cells: indices.iter().map(|&i| r.cells[i]).collect(),
            })
            .collect();
        ResponseMatrix::new(keep.to_vec(), rows)
    }

    /// Row-wise union of two matrices over the same item columns.
    pub fn concat(&self, other: &ResponseMatrix) -> Result<ResponseMatrix> {
        if self.item_ids != other.item_ids {
            return Err(Error::invalid(
                "cannot concatenate matrices with different item columns",
            ));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        ResponseMatrix::new(self.item_ids.clone(), rows)
    }
}

fn parse_wide_cell(token: &str) -> std::result::Result<Option<u8>, String> {
    match token {
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        "" | "NA" => Ok(None),
        other => Err(format!("bad cell value '{other}' (expected 0, 1, NA, or empty)")),
    }
}

fn load_wide_csv(path: &Path, bank: Option<&ItemBank>) -> Result<ResponseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::input(path, format!("cannot open CSV: {e}")))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::input(path, format!("cannot read header: {e}")))?
        .clone();
    if headers.len() < 3 || &headers[0] != "respondent_id" || &headers[1] != "source" {
        return Err(Error::input(
            path,
            "wide CSV header must start with respondent_id,source and at least one item column",
        ));
    }
    let header_items: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    if let Some(bank) = bank {
        for id in &header_items {
            if !bank.contains(id) {
                return Err(Error::input(
                    path,
                    format!("column '{id}' is not in the item bank"),
                ));
            }
        }
    }
    // With a bank, column order follows the bank; otherwise the header.
    let item_ids: Vec<String> = match bank {
        Some(bank) => bank
            .item_ids()
            .into_iter()
            .filter(|id| header_items.contains(id))
            .collect(),
        None => header_items.clone(),
    };
    let col_of: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::input(path, format!("bad CSV record: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let mut cells = vec![None; item_ids.len()];
        for (k, token) in record.iter().skip(2).enumerate() {
            let col = col_of[header_items[k].as_str()];
            cells[col] =
                parse_wide_cell(token).map_err(|msg| Error::parse(path, line, msg))?;
        }
        rows.push(RespondentRow {
            respondent_id: record[0].to_string(),
            source: record[1].to_string(),
            cells,
        });
    }
    let matrix = ResponseMatrix::new(item_ids, rows)
        .map_err(|e| Error::input(path, e.to_string()))?;
    log::info!(
        "loaded {}: {} respondents x {} items",
        path.display(),
        matrix.n_respondents(),
        matrix.n_items()
    );
    Ok(matrix)
}

#[derive(Debug, Serialize, Deserialize)]
struct LongRecord {
    respondent_id: String,
    source: String,
    item_id: String,
    score: u8,
}

fn load_long_jsonl(path: &Path, bank: Option<&ItemBank>) -> Result<ResponseMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<(u64, LongRecord)> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: LongRecord = serde_json::from_str(trimmed)
            .map_err(|e| Error::parse(path, line_no, format!("invalid record: {e}")))?;
        if record.score > 1 {
            return Err(Error::parse(
                path,
                line_no,
                format!("score must be 0 or 1, got {}", record.score),
            ));
        }
        if let Some(bank) = bank {
            if !bank.contains(&record.item_id) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("item '{}' is not in the item bank", record.item_id),
                ));
            }
        }
        records.push((line_no, record));
    }

    // Column order: bank order when supplied, else first appearance.
    let mut item_ids: Vec<String> = Vec::new();
    match bank {
        Some(bank) => {
            let present: HashSet<&str> =
                records.iter().map(|(_, r)| r.item_id.as_str()).collect();
            item_ids = bank
                .item_ids()
                .into_iter()
                .filter(|id| present.contains(id.as_str()))
                .collect();
        }
        None => {
            let mut seen = HashSet::new();
            for (_, r) in &records {
                if seen.insert(r.item_id.as_str()) {
                    item_ids.push(r.item_id.clone());
                }
            }
        }
    }
    let col_of: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut order: Vec<String> = Vec::new();
    let mut by_resp: HashMap<String, RespondentRow> = HashMap::new();
    for (line_no, r) in &records {
        let col = col_of[r.item_id.as_str()];
        if let Some(row) = by_resp.get_mut(&r.respondent_id) {
            if row.source != r.source {
                return Err(Error::parse(
                    path,
                    *line_no,
                    format!(
                        "respondent '{}' has conflicting sources '{}' and '{}'",
                        r.respondent_id, row.source, r.source
                    ),
                ));
            }
            if row.cells[col].is_some() {
                return Err(Error::parse(
                    path,
                    *line_no,
                    format!(
                        "duplicate record for respondent '{}' item '{}'",
                        r.respondent_id, r.item_id
                    ),
                ));
            }
            row.cells[col] = Some(r.score);
        } else {
            let mut cells = vec![None; item_ids.len()];
            cells[col] = Some(r.score);
            order.push(r.respondent_id.clone());
            by_resp.insert(
                r.respondent_id.clone(),
                RespondentRow {
                    respondent_id: r.respondent_id.clone(),
                    source: r.source.clone(),
                    cells,
                },
            );
        }
    }
    let rows: Vec<RespondentRow> = order
        .into_iter()
        .map(|id| by_resp.remove(&id).expect("row recorded"))
        .collect();
    let matrix = ResponseMatrix::new(item_ids, rows)
        .map_err(|e| Error::input(path, e.to_string()))?;
    log::info!(
        "loaded {}: {} respondents x {} items",
        path.display(),
        matrix.n_respondents(),
        matrix.n_items()
    );
    Ok(matrix)
}

/// Load a response matrix, validating against the bank when supplied.
pub fn load_responses(
    path: &Path,
    format: ResponseFormat,
    bank: Option<&ItemBank>,
) -> Result<ResponseMatrix> {
    match format {
        ResponseFormat::WideCsv => load_wide_csv(path, bank),
        ResponseFormat::LongJsonl => load_long_jsonl(path, bank),
    }
}

/// Write the wide CSV form: `respondent_id,source,<items...>`, missing as NA.
pub fn write_wide_csv(
    matrix: &ResponseMatrix,
    path: &Path,
    comment: Option<&str>,
) -> Result<()> {
    let mut out = File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(comment) = comment {
        writeln!(out, "# {comment}").map_err(|e| Error::io(path, e))?;
    }
    let mut header = String::from("respondent_id,source");
    for id in matrix.item_ids() {
        header.push(',');
        header.push_str(id);
    }
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for row in matrix.rows() {
        let mut line = format!("{},{}", row.respondent_id, row.source);
        for cell in &row.cells {
            line.push(',');
            match cell {
                Some(v) => line.push_str(&v.to_string()),
                None => line.push_str("NA"),
            }
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Write the long JSONL form: one record per observed cell.
pub fn write_long_jsonl(
    matrix: &ResponseMatrix,
    path: &Path,
    comment: Option<&str>,
) -> Result<()> {
    let mut out = File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(comment) = comment {
        writeln!(out, "# {comment}").map_err(|e| Error::io(path, e))?;
    }
    for row in matrix.rows() {
        for (col, cell) in row.cells.iter().enumerate() {
            if let Some(score) = cell {
                let record = LongRecord {
                    respondent_id: row.respondent_id.clone(),
                    source: row.source.clone(),
                    item_id: matrix.item_ids()[col].clone(),
                    score: *score,
                };
                let line = serde_json::to_string(&record)
                    .map_err(|e| Error::input(path, e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Result bundle
// ---------------------------------------------------------------------------

/// Latent distribution summary stored in bundles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentSummary {
    pub mean: f64,
    pub sd: f64,
    pub kurtosis: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    /// Input file name -> SHA-256 digest (hex).
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
}

impl Provenance {
    pub fn new() -> Self {
        Provenance {
            inputs: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs.insert(name, sha256_file(path)?);
        Ok(self)
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::new()
    }
}

/// Everything one calibration or scoring run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultBundle {
    pub item_params: ItemParams,
    pub latent: LatentSummary,
    pub ability: Option<AbilityEstimates>,
    pub convergence: Convergence,
    pub seed: Option<u64>,
    pub provenance: Provenance,
}

impl ResultBundle {
    fn check_finite(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("non-finite {what} in result bundle")));
        for item in &self.item_params.items {
            if !item.beta.is_finite() {
                return bad(&format!("beta for '{}'", item.item_id));
            }
            if let Some(se) = item.se {
                if !se.is_finite() {
                    return bad(&format!("se for '{}'", item.item_id));
                }
            }
        }
        for v in [self.latent.mean, self.latent.sd, self.latent.kurtosis] {
            if !v.is_finite() {
                return bad("latent summary value");
            }
        }
        if let Some(ability) = &self.ability {
            for row in &ability.rows {
                let mut values = vec![row.theta_hat, row.se];
                values.extend(row.infit);
                values.extend(row.outfit);
                if values.iter().any(|v| !v.is_finite()) {
                    return bad(&format!("ability value for '{}'", row.respondent_id));
                }
            }
        }
        if !self.convergence.max_param_change.is_finite() {
            return bad("max_param_change");
        }
        Ok(())
    }
}

/// Round to `sig` significant decimal digits.
pub(crate) fn round_sig(x: f64, sig: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exponent = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(sig - 1 - exponent);
    (x * factor).round() / factor
}

fn round_json_floats(value: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let rounded = round_sig(n.as_f64().expect("checked f64"), 6);
                Value::Number(
                    serde_json::Number::from_f64(rounded).expect("finite after rounding"),
                )
            } else {
                Value::Number(n)
            }
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_json_floats).collect()),
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| (k, round_json_floats(v)))
                .collect(),
        ),
        other => other,
    }
}

/// Serialize any value as canonical JSON: sorted keys, floats at 6
/// significant digits, trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value).map_err(|e| Error::invalid(e.to_string()))?;
    let value = round_json_floats(value);
    let mut text =
        serde_json::to_string_pretty(&value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn write_bundle(bundle: &ResultBundle, path: &Path) -> Result<()> {
    bundle.check_finite()?;
    let text = to_canonical_json(bundle)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_bundle(path: &Path) -> Result<ResultBundle> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::input(path, format!("invalid result bundle: {e}")))
}

/// JSON document emitted by the experiment report renderer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReportDoc {
    pub comparison: ComparisonReport,
    pub distributions: Vec<DistStats>,
}

pub fn read_experiment_report(path: &Path) -> Result<ExperimentReportDoc> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::input(path, format!("invalid experiment report: {e}")))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
