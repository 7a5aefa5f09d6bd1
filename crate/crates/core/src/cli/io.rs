//! File formats: JSON Lines datasets and decodes, JSON model checkpoints,
//! truth files, configs and reports.
//!
//! Datasets, truth files and checkpoints write every float with 17
//! significant digits so a reload reproduces the exact bits.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::hmm::BossModel;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Compact JSON with floats as `{:.16e}`.
#[derive(Default)]
struct ExactFloatFormatter;

impl Formatter for ExactFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        CompactFormatter.write_f32(writer, value)
    }
}

/// Serializes with 17 significant digits per float.
pub fn to_exact_json<T: Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloatFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Input(format!("serialization failed: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// One exact-float JSON document per line. An empty slice gives an empty file.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for item in items {
        writeln!(w, "{}", to_exact_json(item)?).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads JSON Lines, skipping blank lines. Parse errors name the line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Pretty JSON with default float formatting, for reports and configs.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("serialization failed: {e}")))?;
    let mut w = create(path)?;
    writeln!(w, "{text}").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_json_exact<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = to_exact_json(value)?;
    let mut w = create(path)?;
    writeln!(w, "{text}").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    version: u32,
    #[serde(flatten)]
    model: &'a BossModel,
}

#[derive(Deserialize)]
struct CheckpointIn {
    version: u32,
    #[serde(flatten)]
    model: BossModel,
}

pub fn model_to_json(model: &BossModel) -> Result<String, CliError> {
    to_exact_json(&CheckpointOut {
        version: CHECKPOINT_VERSION,
        model,
    })
}

pub fn model_from_json(text: &str) -> Result<BossModel, CliError> {
    let doc: CheckpointIn =
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("model checkpoint: {e}")))?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(CliError::Input(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            doc.version
        )));
    }
    doc.model.validate()?;
    Ok(doc.model)
}

pub fn save_model(path: &Path, model: &BossModel) -> Result<(), CliError> {
    let text = model_to_json(model)?;
    let mut w = create(path)?;
    writeln!(w, "{text}").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<BossModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    model_from_json(&text)
}

/// First 16 hex digits of the SHA-256 of a value's compact JSON.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String, CliError> {
    let text = serde_json::to_string(value)
        .map_err(|e| CliError::Input(format!("serialization failed: {e}")))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(hex::encode(digest)[..16].to_string())
}

/// One decoded sequence, as written by `boss decode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    pub id: String,
    pub states: Vec<usize>,
    pub log_prob: f64,
}
