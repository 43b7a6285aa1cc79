//! Binary container for [`VariationalState`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "BSGS"
//! version    u32      1
//! width      u32
//! height     u32
//! k          u32
//! fields     u32      number of field records
//! repeated per field:
//!   name_len u16, name (UTF-8), count u32, count × f32
//! ```
//!
//! Field order is fixed: `x.mean`, `x.log_variance`, `m.mean`,
//! `m.log_variance`, `z.mean`, `z.log_variance`, `rho.shape`, `rho.rate`,
//! `upsilon.shape`, `upsilon.rate`, `omega.shape`, `omega.rate`, `pi.alpha`,
//! `pi.beta`. Multi-channel fields store channels back to back; `pi.*` store
//! `k` values.

use super::{BetaVector, GammaField, GaussianField, VariationalState};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const STATE_MAGIC: &[u8; 4] = b"BSGS";
pub const STATE_VERSION: u32 = 1;

const FIELD_NAMES: [&str; 14] = [
    "x.mean",
    "x.log_variance",
    "m.mean",
    "m.log_variance",
    "z.mean",
    "z.log_variance",
    "rho.shape",
    "rho.rate",
    "upsilon.shape",
    "upsilon.rate",
    "omega.shape",
    "omega.rate",
    "pi.alpha",
    "pi.beta",
];

pub fn encode_state(state: &VariationalState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    for v in [
        STATE_VERSION,
        state.width() as u32,
        state.height() as u32,
        state.k() as u32,
        FIELD_NAMES.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let grids = |gs: &[ImageGrid]| -> Vec<f64> {
        gs.iter().flat_map(|g| g.data().iter().copied()).collect()
    };
    let payloads: [Vec<f64>; 14] = [
        grids(&state.q_x.mean),
        grids(&state.q_x.log_variance),
        grids(&state.q_m.mean),
        grids(&state.q_m.log_variance),
        grids(&state.q_z.mean),
        grids(&state.q_z.log_variance),
        grids(&state.q_rho.shape),
        grids(&state.q_rho.rate),
        grids(&state.q_upsilon.shape),
        grids(&state.q_upsilon.rate),
        grids(&state.q_omega.shape),
        grids(&state.q_omega.rate),
        state.q_pi.alpha.clone(),
        state.q_pi.beta.clone(),
    ];
    for (name, values) in FIELD_NAMES.iter().zip(payloads) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(fmt_err(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn fmt_err(message: String) -> Error {
    Error::Format {
        context: "state container".into(),
        message,
    }
}

pub fn decode_state(bytes: &[u8]) -> Result<VariationalState> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(4)? != STATE_MAGIC {
        return Err(fmt_err("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != STATE_VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let width = rd.u32()? as usize;
    let height = rd.u32()? as usize;
    let k = rd.u32()? as usize;
    let fields = rd.u32()? as usize;
    if width == 0 || height == 0 || k == 0 {
        return Err(fmt_err(format!("empty dimensions {width}x{height}, k={k}")));
    }
    if fields != FIELD_NAMES.len() {
        return Err(fmt_err(format!("expected {} fields, got {fields}", FIELD_NAMES.len())));
    }
    let d = width * height;
    let mut payloads = Vec::with_capacity(fields);
    for expected in FIELD_NAMES {
        let len = rd.u16()? as usize;
        let name = std::str::from_utf8(rd.take(len)?).map_err(|e| fmt_err(e.to_string()))?;
        if name != expected {
            return Err(fmt_err(format!("expected field {expected}, found {name}")));
        }
        let count = rd.u32()? as usize;
        let want = match name.split('.').next() {
            Some("x" | "m" | "rho" | "upsilon") => d,
            Some("z" | "omega") => d * k,
            _ => k,
        };
        if count != want {
            return Err(fmt_err(format!("{name}: expected {want} values, got {count}")));
        }
        let raw = rd.take(count * 4)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        payloads.push(values);
    }
    if rd.pos != bytes.len() {
        return Err(fmt_err(format!("{} trailing bytes", bytes.len() - rd.pos)));
    }
    let mut it = payloads.into_iter();
    let mut grids = |channels: usize| -> Result<Vec<ImageGrid>> {
        let values = it.next().expect("field count checked");
        values
            .chunks_exact(d)
            .take(channels)
            .map(|c| ImageGrid::new(width, height, c.to_vec()))
            .collect()
    };
    let q_x = GaussianField::new(grids(1)?, grids(1)?)?;
    let q_m = GaussianField::new(grids(1)?, grids(1)?)?;
    let q_z = GaussianField::new(grids(k)?, grids(k)?)?;
    let q_rho = GammaField::new(grids(1)?, grids(1)?)?;
    let q_upsilon = GammaField::new(grids(1)?, grids(1)?)?;
    let q_omega = GammaField::new(grids(k)?, grids(k)?)?;
    let alpha = it.next().expect("pi.alpha");
    let beta = it.next().expect("pi.beta");
    let state = VariationalState {
        q_x,
        q_m,
        q_z,
        q_rho,
        q_upsilon,
        q_omega,
        q_pi: BetaVector::new(alpha, beta)?,
    };
    state.validate()?;
    Ok(state)
}
