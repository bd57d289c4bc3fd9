//! Persistence for latents and velocity fields.
//!
//! Latent binary format: a 16-byte header (magic `SFLT`, then u32 channels,
//! rows, cols, little-endian) followed by the entries as little-endian f32 in
//! storage order. The human-readable variant is a JSON document with the
//! shape and nested `[channel][row][col]` arrays.
//!
//! Field format: a magic line `SFLD1`, one JSON header line (kind, shapes,
//! widths, activation, scalar parameters), then the f32 parameter payload.
//! Payloads quantize to f32 on write; loading and re-saving any file
//! reproduces it byte for byte.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AffineGaussianParams, CondEntry, ConstantShiftParams, FieldKind, FieldSpec};
use crate::latent::{Latent, Shape};
use crate::mlp::{Activation, DenseLayer, MlpParams};

const LATENT_MAGIC: &[u8; 4] = b"SFLT";
const FIELD_MAGIC: &str = "SFLD1";

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_f32s(bytes: &[u8], count: usize, offset: &mut usize) -> Result<Vec<f64>> {
    let need = count * 4;
    if bytes.len() < *offset + need {
        return Err(Error::Format(format!(
            "payload truncated: need {need} bytes at offset {}, have {}",
            *offset,
            bytes.len().saturating_sub(*offset)
        )));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = *offset + k * 4;
        let arr: [u8; 4] = bytes[start..start + 4].try_into().expect("4 bytes");
        out.push(f32::from_le_bytes(arr) as f64);
    }
    *offset += need;
    Ok(out)
}

/// Encodes a latent into the binary wire format.
pub fn latent_to_bytes(latent: &Latent) -> Vec<u8> {
    let s = latent.shape();
    let mut out = Vec::with_capacity(16 + latent.data().len() * 4);
    out.extend_from_slice(LATENT_MAGIC);
    out.extend_from_slice(&(s.c as u32).to_le_bytes());
    out.extend_from_slice(&(s.h as u32).to_le_bytes());
    out.extend_from_slice(&(s.w as u32).to_le_bytes());
    push_f32s(&mut out, latent.data());
    out
}

/// Decodes a latent from the binary wire format.
pub fn latent_from_bytes(bytes: &[u8]) -> Result<Latent> {
    if bytes.len() < 16 {
        return Err(Error::Format("latent file shorter than its header".into()));
    }
    if &bytes[0..4] != LATENT_MAGIC {
        return Err(Error::Format("bad latent magic, expected SFLT".into()));
    }
    let dim = |i: usize| -> usize {
        u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize
    };
    let shape = Shape::new(dim(4), dim(8), dim(12))?;
    let mut offset = 16;
    let data = read_f32s(bytes, shape.len(), &mut offset)?;
    if offset != bytes.len() {
        return Err(Error::Format(format!(
            "latent file has {} trailing bytes",
            bytes.len() - offset
        )));
    }
    Latent::new(shape, data)
}

pub fn save_latent(latent: &Latent, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&latent_to_bytes(latent))?;
    Ok(())
}

pub fn load_latent(path: impl AsRef<Path>) -> Result<Latent> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    latent_from_bytes(&bytes)
}

#[derive(Serialize, Deserialize)]
struct LatentJson {
    shape: (usize, usize, usize),
    data: Vec<Vec<Vec<f64>>>,
}

/// Human-readable latent: nested numeric arrays in JSON.
pub fn latent_to_json(latent: &Latent) -> String {
    let s = latent.shape();
    let mut data = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut rows = Vec::with_capacity(s.h);
        for h in 0..s.h {
            let mut cols = Vec::with_capacity(s.w);
            for w in 0..s.w {
                cols.push(latent.at(c, h, w));
            }
            rows.push(cols);
        }
        data.push(rows);
    }
    serde_json::to_string_pretty(&LatentJson {
        shape: (s.c, s.h, s.w),
        data,
    })
    .expect("latent json serializes")
}

pub fn latent_from_json(text: &str) -> Result<Latent> {
    let parsed: LatentJson = serde_json::from_str(text).map_err(|e| Error::Parse {
        message: format!("invalid latent json: {e}"),
        raw: text.chars().take(200).collect(),
    })?;
    let shape = Shape::new(parsed.shape.0, parsed.shape.1, parsed.shape.2)?;
    let mut data = Vec::with_capacity(shape.len());
    if parsed.data.len() != shape.c {
        return Err(Error::dimension("latent json channel count mismatch"));
    }
    for rows in &parsed.data {
        if rows.len() != shape.h {
            return Err(Error::dimension("latent json row count mismatch"));
        }
        for cols in rows {
            if cols.len() != shape.w {
                return Err(Error::dimension("latent json col count mismatch"));
            }
            data.extend_from_slice(cols);
        }
    }
    Latent::new(shape, data)
}

pub fn save_latent_json(latent: &Latent, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, latent_to_json(latent))?;
    Ok(())
}

pub fn load_latent_json(path: impl AsRef<Path>) -> Result<Latent> {
    let text = fs::read_to_string(path)?;
    latent_from_json(&text)
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    kind: String,
    input_shape: (usize, usize, usize),
    cond_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_std: Option<f64>,
    param_count: usize,
}

/// Encodes a field as header lines plus the f32 parameter payload.
pub fn field_to_bytes(field: &FieldSpec) -> Vec<u8> {
    let s = field.input_shape;
    let mut payload = Vec::new();
    let header = match &field.kind {
        FieldKind::ConstantShift(p) => {
            push_f32s(&mut payload, p.null_shift.data());
            for e in &p.entries {
                push_f32s(&mut payload, &e.embedding);
                push_f32s(&mut payload, e.value.data());
            }
            FieldHeader {
                kind: "constant_shift".into(),
                input_shape: (s.c, s.h, s.w),
                cond_dim: field.cond_dim,
                hidden: None,
                activation: None,
                entries: Some(p.entries.len()),
                data_std: None,
                noise_std: None,
                param_count: payload.len() / 4,
            }
        }
        FieldKind::AffineGaussian(p) => {
            push_f32s(&mut payload, p.null_data_mean.data());
            push_f32s(&mut payload, p.noise_mean.data());
            for e in &p.entries {
                push_f32s(&mut payload, &e.embedding);
                push_f32s(&mut payload, e.value.data());
            }
            FieldHeader {
                kind: "affine_gaussian".into(),
                input_shape: (s.c, s.h, s.w),
                cond_dim: field.cond_dim,
                hidden: None,
                activation: None,
                entries: Some(p.entries.len()),
                data_std: Some(p.data_std),
                noise_std: Some(p.noise_std),
                param_count: payload.len() / 4,
            }
        }
        FieldKind::Mlp(p) => {
            for layer in &p.layers {
                push_f32s(&mut payload, &layer.weights);
                push_f32s(&mut payload, &layer.biases);
            }
            FieldHeader {
                kind: "mlp".into(),
                input_shape: (s.c, s.h, s.w),
                cond_dim: field.cond_dim,
                hidden: Some(p.hidden_widths()),
                activation: Some(p.activation),
                entries: None,
                data_std: None,
                noise_std: None,
                param_count: payload.len() / 4,
            }
        }
    };
    let mut out = Vec::new();
    out.extend_from_slice(FIELD_MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(
        serde_json::to_string(&header)
            .expect("field header serializes")
            .as_bytes(),
    );
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out
}

/// Decodes a field from the wire format produced by [`field_to_bytes`].
pub fn field_from_bytes(bytes: &[u8]) -> Result<FieldSpec> {
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("field file is missing its magic line".into()))?;
    if &bytes[..first_nl] != FIELD_MAGIC.as_bytes() {
        return Err(Error::Format(format!(
            "bad field magic, expected {FIELD_MAGIC}"
        )));
    }
    let rest = &bytes[first_nl + 1..];
    let second_nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("field file is missing its header line".into()))?;
    let header_text = std::str::from_utf8(&rest[..second_nl])
        .map_err(|_| Error::Format("field header is not UTF-8".into()))?;
    let header: FieldHeader = serde_json::from_str(header_text).map_err(|e| Error::Parse {
        message: format!("invalid field header: {e}"),
        raw: header_text.to_string(),
    })?;
    let payload = &rest[second_nl + 1..];
    if payload.len() != header.param_count * 4 {
        return Err(Error::Format(format!(
            "field payload has {} bytes, header promises {}",
            payload.len(),
            header.param_count * 4
        )));
    }

    let shape = Shape::new(
        header.input_shape.0,
        header.input_shape.1,
        header.input_shape.2,
    )?;
    let latent_len = shape.len();
    let mut offset = 0usize;

    match header.kind.as_str() {
        "constant_shift" => {
            let n = header
                .entries
                .ok_or_else(|| Error::Format("constant_shift header lacks entry count".into()))?;
            let null_shift = Latent::new(shape, read_f32s(payload, latent_len, &mut offset)?)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let embedding = read_f32s(payload, header.cond_dim, &mut offset)?;
                let value = Latent::new(shape, read_f32s(payload, latent_len, &mut offset)?)?;
                entries.push(CondEntry { embedding, value });
            }
            FieldSpec::constant_shift(
                shape,
                header.cond_dim,
                ConstantShiftParams {
                    entries,
                    null_shift,
                },
            )
        }
        "affine_gaussian" => {
            let n = header
                .entries
                .ok_or_else(|| Error::Format("affine_gaussian header lacks entry count".into()))?;
            let data_std = header
                .data_std
                .ok_or_else(|| Error::Format("affine_gaussian header lacks data_std".into()))?;
            let noise_std = header
                .noise_std
                .ok_or_else(|| Error::Format("affine_gaussian header lacks noise_std".into()))?;
            let null_data_mean = Latent::new(shape, read_f32s(payload, latent_len, &mut offset)?)?;
            let noise_mean = Latent::new(shape, read_f32s(payload, latent_len, &mut offset)?)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let embedding = read_f32s(payload, header.cond_dim, &mut offset)?;
                let value = Latent::new(shape, read_f32s(payload, latent_len, &mut offset)?)?;
                entries.push(CondEntry { embedding, value });
            }
            FieldSpec::affine_gaussian(
                shape,
                header.cond_dim,
                AffineGaussianParams {
                    entries,
                    null_data_mean,
                    data_std,
                    noise_mean,
                    noise_std,
                },
            )
        }
        "mlp" => {
            let hidden = header
                .hidden
                .ok_or_else(|| Error::Format("mlp header lacks hidden widths".into()))?;
            let activation = header
                .activation
                .ok_or_else(|| Error::Format("mlp header lacks activation".into()))?;
            let mut dims = vec![latent_len + 1 + header.cond_dim];
            dims.extend_from_slice(&hidden);
            dims.push(latent_len);
            let mut layers = Vec::with_capacity(dims.len() - 1);
            for k in 0..dims.len() - 1 {
                let (in_dim, out_dim) = (dims[k], dims[k + 1]);
                let weights = read_f32s(payload, in_dim * out_dim, &mut offset)?;
                let biases = read_f32s(payload, out_dim, &mut offset)?;
                layers.push(DenseLayer {
                    weights,
                    biases,
                    in_dim,
                    out_dim,
                });
            }
            FieldSpec::mlp(shape, header.cond_dim, MlpParams { layers, activation })
        }
        other => Err(Error::Format(format!("unknown field kind '{other}'"))),
    }
}

pub fn save_field(field: &FieldSpec, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&field_to_bytes(field))?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FieldSpec> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    field_from_bytes(&bytes)
}
