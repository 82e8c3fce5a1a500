//! On-disk face model container.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "FSYMFACE"
//! version      u32      1
//! dims         u32 × 8  vertices, faces, identity, expression, pose,
//!                       joints, appearance, flags (bit 0: albedo present)
//! template     f64[vertices·3]
//! faces        u32[faces·3]
//! identity     f64[identity·vertices·3]
//! expression   f64[expression·vertices·3]
//! pose         f64[pose·vertices·3]
//! joints       f64[joints·3]
//! parents      i32[joints]             (-1 for the root)
//! weights      f64[joints·vertices]
//! left_mask    u8[vertices]            (0/1; must match template x > 1e-6)
//! albedo mean  f64[vertices·3]         (only with flag bit 0)
//! albedo basis f64[appearance·vertices·3]
//! ```
//!
//! Trailing bytes are rejected. A JSON container (an object with
//! `"format": "facesym-face-model"`) is accepted as well; the loader picks
//! the decoder from the first byte.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Albedo, Blendshapes, FaceModel, FaceModelParts, Vec3};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FSYMFACE";
pub const VERSION: u32 = 1;
const JSON_FORMAT: &str = "facesym-face-model";

// Sanity cap on any single dimension to reject garbage headers before allocating.
const MAX_DIM: u32 = 50_000_000;

#[derive(Serialize, Deserialize)]
struct JsonContainer {
    format: String,
    version: u32,
    model: FaceModel,
}

fn fmt_err(e: impl std::fmt::Display) -> Error {
    Error::ModelFormat(e.to_string())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v).map_err(fmt_err)?;
    Ok(v)
}

fn read_vec3s(r: &mut impl Read, n: usize) -> Result<Vec<Vec3>> {
    Ok(read_f64s(r, n * 3)?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn decode_binary(bytes: &[u8]) -> Result<FaceModel> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(fmt_err)?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported container version {version}")));
    }
    let mut dims = [0u32; 8];
    r.read_u32_into::<LittleEndian>(&mut dims).map_err(fmt_err)?;
    if let Some(d) = dims[..7].iter().find(|&&d| d > MAX_DIM) {
        return Err(Error::ModelFormat(format!("implausible dimension {d}")));
    }
    let [n, nf, kid, ke, kp, kj, ka, flags] = dims.map(|d| d as usize);
    let payload = (n * 3 + (kid + ke + kp) * n * 3 + kj * 3 + kj * n) * 8 + nf * 12 + kj * 4 + n;
    let albedo_len = if flags & 1 == 1 { (n * 3 + ka * n * 3) * 8 } else { 0 };
    let header = 8 + 4 + 32;
    if bytes.len() != header + payload + albedo_len {
        return Err(Error::ModelFormat(format!(
            "container is {} bytes, header declares {}",
            bytes.len(),
            header + payload + albedo_len
        )));
    }

    let template = read_vec3s(&mut r, n)?;
    let mut face_idx = vec![0u32; nf * 3];
    r.read_u32_into::<LittleEndian>(&mut face_idx).map_err(fmt_err)?;
    let faces = face_idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let identity = Blendshapes::new(kid, n, read_f64s(&mut r, kid * n * 3)?)?;
    let expression = Blendshapes::new(ke, n, read_f64s(&mut r, ke * n * 3)?)?;
    let pose = Blendshapes::new(kp, n, read_f64s(&mut r, kp * n * 3)?)?;
    let joints = read_vec3s(&mut r, kj)?;
    let mut parents_raw = vec![0i32; kj];
    r.read_i32_into::<LittleEndian>(&mut parents_raw).map_err(fmt_err)?;
    let joint_parents = parents_raw
        .iter()
        .map(|&p| match p {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            p => Err(Error::ModelFormat(format!("bad parent index {p}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let skin_weights = read_f64s(&mut r, kj * n)?;
    let mut mask = vec![0u8; n];
    r.read_exact(&mut mask).map_err(fmt_err)?;
    if mask.iter().any(|&m| m > 1) {
        return Err(Error::ModelFormat("left mask bytes must be 0 or 1".into()));
    }
    let albedo = if flags & 1 == 1 {
        let mean = read_vec3s(&mut r, n)?;
        let basis = Blendshapes::new(ka, n, read_f64s(&mut r, ka * n * 3)?)?;
        Some(Albedo { mean, basis })
    } else {
        None
    };

    let model = FaceModel::new(FaceModelParts {
        template,
        faces,
        identity,
        expression,
        pose,
        joints,
        joint_parents,
        skin_weights,
        albedo,
    })?;
    if model.left_mask().iter().zip(&mask).any(|(&a, &b)| a != (b == 1)) {
        return Err(Error::ModelValidation("stored left mask disagrees with template x > midline rule".into()));
    }
    Ok(model)
}

fn put_f64s(w: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        w.write_f64::<LittleEndian>(*v).unwrap();
    }
}

fn encode_binary(model: &FaceModel) -> Vec<u8> {
    let mut w = Vec::new();
    let n = model.vertex_count();
    w.extend_from_slice(MAGIC);
    w.write_u32::<LittleEndian>(VERSION).unwrap();
    let flags = u32::from(model.albedo().is_some());
    for d in [
        n,
        model.faces().len(),
        model.identity_dim(),
        model.expression_dim(),
        model.pose_dim(),
        model.joints().len(),
        model.appearance_dim(),
    ] {
        w.write_u32::<LittleEndian>(d as u32).unwrap();
    }
    w.write_u32::<LittleEndian>(flags).unwrap();
    put_f64s(&mut w, model.template().as_flattened());
    for f in model.faces().iter().flatten() {
        w.write_u32::<LittleEndian>(*f).unwrap();
    }
    for b in [model.identity_basis(), model.expression_basis(), model.pose_basis()] {
        put_f64s(&mut w, b.as_slice());
    }
    put_f64s(&mut w, model.joints().as_flattened());
    for p in model.joint_parents() {
        w.write_i32::<LittleEndian>(p.map_or(-1, |p| p as i32)).unwrap();
    }
    put_f64s(&mut w, model.skin_weights());
    w.extend(model.left_mask().iter().map(|&m| u8::from(m)));
    if let Some(a) = model.albedo() {
        put_f64s(&mut w, a.mean.as_flattened());
        put_f64s(&mut w, a.basis.as_slice());
    }
    w
}

/// Decode a model from container bytes (binary or JSON) and validate it.
pub fn decode_model(bytes: &[u8]) -> Result<FaceModel> {
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => {
            let c: JsonContainer = serde_json::from_slice(bytes).map_err(fmt_err)?;
            if c.format != JSON_FORMAT || c.version != VERSION {
                return Err(Error::ModelFormat(format!("unsupported JSON container {} v{}", c.format, c.version)));
            }
            c.model.validate()?;
            Ok(c.model)
        }
        _ => decode_binary(bytes),
    }
}

pub fn load_model(path: &Path) -> Result<FaceModel> {
    decode_model(&std::fs::read(path)?)
}

pub fn save_model_binary(model: &FaceModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_binary(model))?;
    Ok(())
}

pub fn save_model_json(model: &FaceModel, path: &Path) -> Result<()> {
    let c = JsonContainer { format: JSON_FORMAT.into(), version: VERSION, model: model.clone() };
    std::fs::write(path, serde_json::to_vec(&c)?)?;
    Ok(())
}
