//! Model checkpoint file format.
//!
//! Layout, in order:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `CSEG` |
//! | 1 | format version (currently 1) |
//! | (variable) | one newline-terminated header line (see below) |
//! | 4 x parameter_count | parameters as little-endian `f32`, in build order (per layer: kernel, then bias) |
//! | 8 | FNV-1a 64 checksum of header line + parameter bytes, little-endian |
//!
//! The header line is a canonical space-separated `key=value` record of the
//! architecture plus the tag of the dataset the model was trained on, e.g.
//!
//! ```text
//! num_blocks=5 branch_kernels=1,3,5,9 branch_width=16 final_kernel=5 input_channels=1 dataset=synth-v1
//! ```
//!
//! Keys always appear in that order, so identical models produce identical
//! files. Models trained on one dataset do not transfer to another, which is
//! why the provenance tag is part of the format rather than a sidecar note.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, Model};

const MAGIC: &[u8; 4] = b"CSEG";
const VERSION: u8 = 1;

/// Writes `model` to `path`. The `dataset_tag` names the training data
/// (letters, digits, `-`, `_`, `.`); it comes back from [`load_checkpoint`].
pub fn save_checkpoint(path: &Path, model: &Model<f32>, dataset_tag: &str) -> Result<()> {
    validate_tag(dataset_tag)?;
    let mut payload = header_line(model.config(), dataset_tag).into_bytes();
    for p in model.flatten_parameters() {
        payload.extend_from_slice(&p.to_le_bytes());
    }
    let checksum = fnv1a64(&payload);

    let mut file = fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&[VERSION])?;
    file.write_all(&payload)?;
    file.write_all(&checksum.to_le_bytes())?;
    Ok(())
}

/// Reads a checkpoint back into a model, returning it together with the
/// dataset tag recorded at save time. Fails on bad magic, unknown version,
/// malformed header, truncated parameters, or checksum mismatch.
pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, String)> {
    let bytes = fs::read(path)?;
    let fail = |message: String| Error::FileFormat {
        path: path.to_path_buf(),
        message,
    };

    if bytes.len() < MAGIC.len() + 1 + 8 {
        return Err(fail(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("missing CSEG magic; not a checkpoint file".into()));
    }
    if bytes[4] != VERSION {
        return Err(fail(format!(
            "unsupported format version {} (this build reads {VERSION})",
            bytes[4]
        )));
    }

    let payload = &bytes[5..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(fail(format!(
            "checksum mismatch (stored {stored:016x}, computed {computed:016x}); file is corrupt"
        )));
    }

    let nl = payload
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail("header line is not newline-terminated".into()))?;
    let header = std::str::from_utf8(&payload[..nl])
        .map_err(|_| fail("header line is not valid UTF-8".into()))?;
    let (config, dataset_tag) = parse_header(header).map_err(|m| fail(m))?;

    let param_bytes = &payload[nl + 1..];
    let expected = config.parameter_count() * 4;
    if param_bytes.len() != expected {
        return Err(fail(format!(
            "parameter payload is {} bytes, config {} needs {expected}",
            param_bytes.len(),
            header,
        )));
    }
    let params: Vec<f32> = param_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut model = Model::build(config, 0)?;
    model.load_parameters(&params)?;
    Ok((model, dataset_tag))
}

fn header_line(config: &ArchConfig, dataset_tag: &str) -> String {
    let kernels = config
        .branch_kernels
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "num_blocks={} branch_kernels={kernels} branch_width={} final_kernel={} input_channels={} dataset={dataset_tag}\n",
        config.num_blocks, config.branch_width, config.final_kernel, config.input_channels
    )
}

fn parse_header(header: &str) -> std::result::Result<(ArchConfig, String), String> {
    let mut config = ArchConfig::default();
    let mut dataset = None;
    for field in header.split(' ') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("malformed header field {field:?}"))?;
        let parse_count = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| format!("header field {key}={v:?} is not a count"))
        };
        match key {
            "num_blocks" => config.num_blocks = parse_count(value)?,
            "branch_kernels" => {
                config.branch_kernels = value
                    .split(',')
                    .map(|k| {
                        k.parse::<usize>()
                            .map_err(|_| format!("bad kernel size {k:?} in header"))
                    })
                    .collect::<std::result::Result<_, _>>()?;
            }
            "branch_width" => config.branch_width = parse_count(value)?,
            "final_kernel" => config.final_kernel = parse_count(value)?,
            "input_channels" => config.input_channels = parse_count(value)?,
            "dataset" => dataset = Some(value.to_string()),
            other => return Err(format!("unknown header key {other:?}")),
        }
    }
    let dataset = dataset.ok_or_else(|| "header is missing the dataset tag".to_string())?;
    Ok((config, dataset))
}

fn validate_tag(tag: &str) -> Result<()> {
    let ok = !tag.is_empty()
        && tag
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dataset tag {tag:?} may only contain letters, digits, '-', '_', '.'"
        )))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
